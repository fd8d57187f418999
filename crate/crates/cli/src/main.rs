use std::process::ExitCode;

fn main() -> ExitCode {
    ipid_qcd_cli::run(std::env::args_os())
}
