use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rcod::cli::run(std::env::args_os()))
}
