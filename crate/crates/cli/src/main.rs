use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(piml_cli::parse_and_dispatch(std::env::args_os()))
}
