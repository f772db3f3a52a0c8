//! Configuration loading, orchestration and artifact export for the
//! `blenderlab` command.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

use std::path::Path;

use serde_json::json;

pub use config::{load_config, parse_config, ExperimentSpec, Subcommand};
pub use error::CliError;
pub use output::{Artifacts, TOOL_VERSION};

/// Run one subcommand into `out`, writing `failure.json` on error.
/// Returns the process exit code.
pub fn execute(spec: &ExperimentSpec, cmd: Subcommand, out: &Path) -> i32 {
    let hash = spec.config_hash();
    let mut art = match Artifacts::new(out, hash.clone()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    match run::run(spec, cmd, &mut art) {
        Ok(o) => {
            println!("{}", json!({ "subcommand": cmd.name(), "summary": o.summary }));
            if o.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            let code = e.exit_code();
            let v = json!({
                "subcommand": cmd.name(),
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            let _ = art.json("failure.json", &v);
            println!("{}", art.stamp(&v));
            code
        }
    }
}

/// Failure JSON for errors raised before a spec exists.
pub fn input_failure(out: &Path, e: &CliError) -> i32 {
    let code = e.exit_code();
    let v = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code });
    if let Ok(mut art) = Artifacts::new(out, String::new()) {
        let _ = art.json("failure.json", &v);
    }
    println!("{v}");
    code
}
