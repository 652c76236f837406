use std::process::ExitCode;

fn main() -> ExitCode {
    match pixcrc::cli::run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pixcrc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
