use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYBRID_DAE_LOG", "warn"))
        .init();
    match hybrid_dae::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(hybrid_dae::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", hybrid_dae::cli::error_json(&e));
            ExitCode::FAILURE
        }
    }
}
