use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cagewatch::cli::run_command(std::env::args_os()))
}
