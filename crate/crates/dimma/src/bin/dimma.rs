use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dimma::cli::run(std::env::args()) as u8)
}
