use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mmesh::cli::run() as u8)
}
