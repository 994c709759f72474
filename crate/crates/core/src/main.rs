fn main() -> std::process::ExitCode {
    exbehrt::cli::run()
}
