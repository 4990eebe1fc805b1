use std::process::ExitCode;

fn main() -> ExitCode {
    match sampled_sae_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
                return ExitCode::from(clap_err.exit_code() as u8);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
