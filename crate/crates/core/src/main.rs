use std::process::ExitCode;

use clap::Parser;
use pseudolab::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    let result = cli::threads_from_env().and_then(|threads| {
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| pseudolab::Error::Config(e.to_string()))?;
        }
        cli::run(&args)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
