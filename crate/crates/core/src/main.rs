use std::process::ExitCode;

fn main() -> ExitCode {
    hybsim::cli::main_with_args(std::env::args_os())
}
