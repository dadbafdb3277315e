use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(zeroshot::cli::run(std::env::args_os()))
}
