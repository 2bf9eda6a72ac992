//! `khlab`: run k-Hessian experiments from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use khessian_core::lab::{self, ExperimentConfig, RunOutput};
use khessian_core::profiles::{self, GluedSubsolution};
use khessian_core::{LabError, SymSpec};

#[derive(Parser)]
#[command(name = "khlab", version, about = "k-Hessian ring and exterior-problem laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the pipeline in a config; exit 0 iff every enabled check passes.
    Run {
        config: PathBuf,
        /// overrides `output_dir`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Like `run`, for configs with a list-valued eps, R, t or h.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a profile at points: ubar, mu, radial, psi, glued.
    Profile {
        name: String,
        /// `S_k`-normalized diagonal of A, comma separated
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.4,0.2")]
        a: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 100.0)]
        alpha: f64,
        /// default 100 λ_max(A)
        #[arg(long)]
        r0: Option<f64>,
        /// constant for psi
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        /// inner radius for radial and glued
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,0,0.45")]
        x0: Vec<f64>,
        /// arguments: s values for ubar, ρ for radial, points `x1,x2,...` for psi and glued
        args: Vec<String>,
    },
    /// Print a complete default config.
    PrintDefaults,
}

fn threads() {
    if let Some(n) = std::env::var("LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // only fails if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn execute(config: &PathBuf, out: Option<PathBuf>, sweep: bool) -> Result<bool, LabError> {
    let cfg = ExperimentConfig::load(config)?;
    let result: RunOutput = if sweep { lab::sweep(&cfg)? } else { lab::run(&cfg)? };
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    lab::write_outputs(&dir, &result)?;
    for c in &result.report.checks {
        println!(
            "{} {}: {:.6e} {} {:.6e} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.relation,
            c.bound,
            c.detail
        );
    }
    println!("report written to {}", dir.join("report.json").display());
    Ok(result.report.passed)
}

fn floats(s: &str) -> Result<Vec<f64>, LabError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| LabError::Config(format!("bad number {t:?}: {e}"))))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn profile(name: &str, a: Vec<f64>, k: usize, alpha: f64, r0: Option<f64>, c: f64, eps: f64, x0: &[f64], args: &[String]) -> Result<(), LabError> {
    let spec = SymSpec::normalized(k, &a)?;
    let r0 = r0.unwrap_or_else(|| profiles::default_r0(&spec));
    match name {
        "mu" => println!("{:.17e}", profiles::mu(alpha, &spec, r0)?),
        "ubar" => {
            let p = profiles::UbarProfile::new(&spec, alpha, r0)?;
            for s in args {
                let s = floats(s)?[0];
                println!("{s} {:.17e}", p.value(s)?);
            }
        }
        "radial" => {
            let p = profiles::RadialProfile::new(&spec, eps, alpha)?;
            for s in args {
                let rho = floats(s)?[0];
                println!("{rho} {:.17e}", p.value(rho)?);
            }
        }
        "psi" => {
            for s in args {
                let x = floats(s)?;
                println!("{s} {:.17e}", profiles::psi(&x, &spec, c));
            }
        }
        "glued" => {
            let g = GluedSubsolution::new(&spec, alpha, r0, x0, eps)?;
            let xs: Vec<Vec<f64>> = args.iter().map(|s| floats(s)).collect::<Result<_, _>>()?;
            for (s, v) in args.iter().zip(g.eval_many(&xs)?) {
                println!("{s} {v:.17e}");
            }
        }
        other => return Err(LabError::Config(format!("unknown profile {other:?}; use ubar, mu, radial, psi or glued"))),
    }
    Ok(())
}

fn main() -> ExitCode {
    threads();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, out } => execute(&config, out, false),
        Cmd::Sweep { config, out } => execute(&config, out, true),
        Cmd::Profile { name, a, k, alpha, r0, c, eps, x0, args } => profile(&name, a, k, alpha, r0, c, eps, &x0, &args).map(|_| true),
        Cmd::PrintDefaults => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(true)
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let diag = serde_json::json!({ "error": e.to_string(), "kind": format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or("") });
            eprintln!("{diag}");
            ExitCode::from(2)
        }
    }
}
