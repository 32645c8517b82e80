use std::io::{stderr, stdout};
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = ngauss_cli::run_from_args(std::env::args_os(), &mut stdout(), &mut stderr());
    ExitCode::from(code as u8)
}
