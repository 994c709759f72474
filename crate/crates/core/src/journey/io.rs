//! Journey files (one JSON object per line) and CSV label tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::synth::{LabelRow, PatientTruth};
use super::types::PatientJourney;
use crate::error::{Error, Result};

pub fn write_journeys(path: &Path, journeys: &[PatientJourney]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for j in journeys {
        serde_json::to_writer(&mut out, j)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_journeys(path: &Path) -> Result<Vec<PatientJourney>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j = serde_json::from_str(&line).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            record: i + 1,
            message: e.to_string(),
        })?;
        out.push(j);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| Error::Data {
            path: path.to_path_buf(),
            record: i + 1,
            message: e.to_string(),
        })?;
        if row.label > 1 {
            return Err(Error::Data {
                path: path.to_path_buf(),
                record: i + 1,
                message: format!("label {} is not binary", row.label),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// patient id → label for one task.
pub fn labels_for_task(rows: &[LabelRow], task: &str) -> BTreeMap<String, bool> {
    rows.iter()
        .filter(|r| r.task == task)
        .map(|r| (r.patient_id.clone(), r.label == 1))
        .collect()
}

pub fn write_truth(path: &Path, rows: &[PatientTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<PatientTruth>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e: csv::Error| Error::Data {
                path: path.to_path_buf(),
                record: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journey::synth::{generate_cohort, CohortSpec};

    #[test]
    fn journeys_and_labels_survive_files() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = generate_cohort(&CohortSpec::oncology(20, 3)).unwrap();
        let jp = dir.path().join("j.jsonl");
        let lp = dir.path().join("l.csv");
        write_journeys(&jp, &cohort.journeys).unwrap();
        write_labels(&lp, &cohort.labels).unwrap();
        assert_eq!(read_journeys(&jp).unwrap(), cohort.journeys);
        assert_eq!(read_labels(&lp).unwrap(), cohort.labels);
        let header = std::fs::read_to_string(&lp).unwrap();
        assert!(header.starts_with("patient_id,task,label\n"));
    }

    #[test]
    fn bad_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"patient_id\":\"a\",\"visits\":[]}\nnot json\n").unwrap();
        match read_journeys(&p) {
            Err(Error::Data { record, .. }) => assert_eq!(record, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
