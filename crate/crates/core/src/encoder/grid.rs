use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::journey::vocab::PAD;

/// Token channels of a slot grid, in embedding-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Diagnosis,
    Age,
    Segment,
    Position,
    Gender,
    Bmi,
    Smoking,
    Procedure,
    Lab,
}

impl Channel {
    pub const ALL: [Channel; 9] = [
        Channel::Diagnosis,
        Channel::Age,
        Channel::Segment,
        Channel::Position,
        Channel::Gender,
        Channel::Bmi,
        Channel::Smoking,
        Channel::Procedure,
        Channel::Lab,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Diagnosis => "diagnosis",
            Channel::Age => "age",
            Channel::Segment => "segment",
            Channel::Position => "position",
            Channel::Gender => "gender",
            Channel::Bmi => "bmi",
            Channel::Smoking => "smoking",
            Channel::Procedure => "procedure",
            Channel::Lab => "lab",
        }
    }
}

/// Fixed-width multi-channel token layout of one journey.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotGrid {
    pub m: usize,
    pub diag_row: Vec<u32>,
    pub age_row: Vec<u32>,
    pub segment_row: Vec<u32>,
    pub position_row: Vec<u32>,
    pub gender_row: Vec<u32>,
    pub bmi_row: Vec<u32>,
    pub smoking_row: Vec<u32>,
    pub proc_rows: Vec<Vec<u32>>,
    pub lab_rows: Vec<Vec<u32>>,
    pub attention_mask: Vec<bool>,
    /// Index (within the encoded window) of the visit owning each column; `None` at CLS and PAD.
    pub column_visit: Vec<Option<usize>>,
}

/// One row of a grid together with its channel and row index within the channel.
#[derive(Debug, Clone, Copy)]
pub struct GridRow<'a> {
    pub channel: Channel,
    pub row: usize,
    pub tokens: &'a [u32],
}

impl SlotGrid {
    pub fn empty(m: usize, n_proc: usize, n_lab: usize) -> Self {
        Self {
            m,
            diag_row: vec![PAD; m],
            age_row: vec![PAD; m],
            segment_row: vec![PAD; m],
            position_row: vec![PAD; m],
            gender_row: vec![PAD; m],
            bmi_row: vec![PAD; m],
            smoking_row: vec![PAD; m],
            proc_rows: vec![vec![PAD; m]; n_proc],
            lab_rows: vec![vec![PAD; m]; n_lab],
            attention_mask: vec![false; m],
            column_visit: vec![None; m],
        }
    }

    pub fn n_proc(&self) -> usize {
        self.proc_rows.len()
    }

    pub fn n_lab(&self) -> usize {
        self.lab_rows.len()
    }

    /// All channel rows in embedding order: the seven single rows, then procedures, then labs.
    pub fn rows(&self) -> Vec<GridRow<'_>> {
        let single = [
            (Channel::Diagnosis, &self.diag_row),
            (Channel::Age, &self.age_row),
            (Channel::Segment, &self.segment_row),
            (Channel::Position, &self.position_row),
            (Channel::Gender, &self.gender_row),
            (Channel::Bmi, &self.bmi_row),
            (Channel::Smoking, &self.smoking_row),
        ];
        let mut rows: Vec<GridRow<'_>> = single
            .into_iter()
            .map(|(channel, r)| GridRow {
                channel,
                row: 0,
                tokens: r.as_slice(),
            })
            .collect();
        rows.extend(self.proc_rows.iter().enumerate().map(|(row, r)| GridRow {
            channel: Channel::Procedure,
            row,
            tokens: r.as_slice(),
        }));
        rows.extend(self.lab_rows.iter().enumerate().map(|(row, r)| GridRow {
            channel: Channel::Lab,
            row,
            tokens: r.as_slice(),
        }));
        rows
    }

    pub fn row_count(&self) -> usize {
        7 + self.n_proc() + self.n_lab()
    }

    /// Number of leading unmasked columns; PAD only ever forms the tail.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().take_while(|m| **m).count()
    }

    /// Columns holding a real diagnosis (not CLS, SEP or PAD).
    pub fn diagnosis_columns(&self) -> impl Iterator<Item = usize> + '_ {
        use crate::journey::vocab::{CLS, SEP};
        self.diag_row
            .iter()
            .enumerate()
            .filter(|(_, t)| **t != PAD && **t != CLS && **t != SEP)
            .map(|(j, _)| j)
    }

    /// Debug dump: one CSV line per channel row, `channel,row,tok0,tok1,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in self.rows() {
            let _ = write!(out, "{},{}", r.channel.name(), r.row);
            for t in r.tokens {
                let _ = write!(out, ",{t}");
            }
            out.push('\n');
        }
        out
    }
}
