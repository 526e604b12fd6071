use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use graphflame::experiment::{classify_experiment, load_graph, run_experiment, write_outputs, ExperimentConfig, GraphSpec};
use graphflame::io::read_graph;
use graphflame::spectral::{lambda1_estimate, EigenOptions};

const CONFIG_ERROR: u8 = 1;
const STAGE_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "graphflame", version, about = "Semilinear heat flow and blow-up experiments on weighted graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, or every config listed in a manifest.
    Run {
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// File with one config path per line.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `section.key=value`, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a graph file against the axioms.
    Validate {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Dirichlet λ₁ along a radius ladder, as CSV.
    Spectrum {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        center: String,
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the hypothesis classification for a config.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAPHFLAME_LOG", "error")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config: Some(path), overrides, out, .. } => run_one(&path, &overrides, out.as_deref()),
        Command::Run { manifest: Some(m), overrides, out, jobs, .. } => run_manifest(&m, &overrides, out.as_deref(), jobs),
        Command::Run { .. } => unreachable!("clap requires --config or --manifest"),
        Command::Validate { graph } => validate(&graph),
        Command::Spectrum { graph, center, radii, seed } => spectrum(&graph, &center, &radii, seed),
        Command::Classify { config, overrides } => classify(&config, &overrides),
    };
    ExitCode::from(code)
}

fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, u8> {
    ExperimentConfig::load(path, overrides).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        CONFIG_ERROR
    })
}

fn run_one(path: &Path, overrides: &[String], out: Option<&Path>) -> u8 {
    let cfg = match load(path, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
    execute(&cfg, &dir)
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> u8 {
    let mut report = run_experiment(cfg);
    if let Err(e) = write_outputs(&mut report, dir) {
        eprintln!("{}: cannot write outputs: {e}", dir.display());
        return STAGE_FAILURE;
    }
    match &report.failure {
        Some(f) => {
            eprintln!("{}: stage {} failed: {}", cfg.name, f.stage, f.message);
            STAGE_FAILURE
        }
        None => {
            let outcome = report.detection.as_ref().map(|o| serde_json::to_string(o).unwrap()).unwrap_or_default();
            let verdict = report.classification.as_ref().map(|c| c.verdict.to_string()).unwrap_or_default();
            println!("{}: verdict={verdict} outcome={outcome} -> {}", cfg.name, dir.display());
            0
        }
    }
}

fn run_manifest(manifest: &Path, overrides: &[String], out: Option<&Path>, jobs: usize) -> u8 {
    let text = match std::fs::read_to_string(manifest) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", manifest.display());
            return CONFIG_ERROR;
        }
    };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut configs = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match load(&base.join(line), overrides) {
            Ok(c) => configs.push(c),
            Err(code) => return code,
        }
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("thread pool: {e}");
            return STAGE_FAILURE;
        }
    };
    let codes: Vec<u8> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let dir = match out {
                    Some(o) => o.join(&cfg.name),
                    None => cfg.output_dir(),
                };
                execute(cfg, &dir)
            })
            .collect()
    });
    codes.into_iter().max().unwrap_or(0)
}

fn validate(path: &Path) -> u8 {
    let g = match read_graph(path) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return CONFIG_ERROR;
        }
    };
    let report = g.validate();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if report.is_valid() {
        0
    } else {
        STAGE_FAILURE
    }
}

fn spectrum(path: &Path, center: &str, radii: &[usize], seed: u64) -> u8 {
    let g = match load_graph(&GraphSpec::File(path.to_path_buf())) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("{e}");
            return CONFIG_ERROR;
        }
    };
    let x0 = match g.index_of(center) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("{e}");
            return CONFIG_ERROR;
        }
    };
    match lambda1_estimate(&g, x0, radii, &EigenOptions { seed, ..Default::default() }) {
        Ok(est) => {
            print!("{}", est.trace_csv().render());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            STAGE_FAILURE
        }
    }
}

fn classify(path: &Path, overrides: &[String]) -> u8 {
    let cfg = match load(path, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let report = classify_experiment(&cfg);
    if let Some(f) = &report.failure {
        eprintln!("stage {} failed: {}", f.stage, f.message);
        return STAGE_FAILURE;
    }
    println!("{}", serde_json::to_string_pretty(&report.classification).unwrap());
    0
}
