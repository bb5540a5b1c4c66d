use std::process::ExitCode;

fn main() -> ExitCode {
    qpoisson_cli::main_from(std::env::args_os())
}
