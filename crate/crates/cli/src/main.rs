use std::path::PathBuf;

use blenderlab_cli::{execute, input_failure, load_config, ExperimentSpec, Subcommand};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "blenderlab", version, about = "Return-map, cone, covering and scattering experiments")]
struct Args {
    /// Subcommand; overrides `subcommand` in the config.
    #[arg(value_enum)]
    command: Subcommand,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the config's q list.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<i64>>,
    /// Replace the B values of `bifurcate`.
    #[arg(long = "B", value_delimiter = ',', allow_hyphen_values = true)]
    b: Option<Vec<f64>>,
}

fn main() {
    let args = Args::parse();
    let mut spec = match &args.config {
        Some(p) => match load_config(p) {
            Ok(s) => s,
            Err(e) => {
                let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
                std::process::exit(input_failure(&out, &e));
            }
        },
        None => ExperimentSpec::default(),
    };
    spec.subcommand = Some(args.command);
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(q) = args.q {
        spec.q_list = q;
    }
    if let Some(b) = args.b {
        spec.bifurcate.B = b;
    }
    if let Some(n) = args.threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let out = args
        .out
        .or_else(|| spec.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::process::exit(execute(&spec, args.command, &out));
}
