use std::process::ExitCode;

fn main() -> ExitCode {
    ocp_fem::cli::cli_main(std::env::args_os())
}
