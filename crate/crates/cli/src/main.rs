mod config;
mod report;
mod run;

use std::io::Write;
use std::process::ExitCode;

use config::{Format, RunConfig};
use report::Report;
use run::RunError;

fn main() -> ExitCode {
    let cfg = match RunConfig::try_from_args(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match run::run(&cfg) {
        Ok(o) => o,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(RunError::Domain(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let mut warnings = outcome.warnings;
    if let Some(d) = &outcome.diagnostic {
        if !warnings.contains(d) {
            warnings.push(d.clone());
        }
    }
    match cfg.format() {
        Format::Json => {
            let report = Report::new(cfg.to_string(), outcome.payload, warnings);
            match serde_json::to_string_pretty(&report) {
                Ok(text) => {
                    let _ = writeln!(std::io::stdout().lock(), "{text}");
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
        }
        Format::Csv => {
            let blocks: Vec<String> = outcome.tables.iter().map(|t| t.render()).collect();
            let _ = write!(std::io::stdout().lock(), "{}", blocks.join("\n"));
            for w in &warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    match outcome.diagnostic {
        Some(d) => {
            eprintln!("diagnostic: {d}");
            ExitCode::from(1)
        }
        None => ExitCode::SUCCESS,
    }
}
