use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(snswf_cli::run(std::env::args_os()))
}
