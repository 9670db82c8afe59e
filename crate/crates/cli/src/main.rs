use std::process::ExitCode;

use clap::Parser;

mod plan;

use plan::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match plan::run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // machine-readable error record on stderr
            let record = serde_json::json!({
                "status": "error",
                "error": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
