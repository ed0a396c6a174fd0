use std::process::ExitCode;

use clap::Parser;
use tbhiv::cli::{run, Args};
use tbhiv::Error;

fn main() -> ExitCode {
    let outcome = Args::parse().resolve().and_then(|cfg| run(&cfg));
    match outcome {
        Ok(report) => {
            match report.front {
                Some((points, converged)) => {
                    eprintln!("{points} front points ({converged} converged) written to {}", report.out.display())
                }
                None => eprintln!("trajectory written to {}", report.out.display()),
            }
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Usage(_) | Error::Invalid { .. })) => {
            eprintln!("tbhiv: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("tbhiv: {e}");
            ExitCode::FAILURE
        }
    }
}
