use std::process::ExitCode;

fn main() -> ExitCode {
    nilwalk::cli::run(std::env::args_os())
}
