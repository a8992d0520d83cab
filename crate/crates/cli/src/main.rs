use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(magic_cli::run(std::env::args_os()))
}
