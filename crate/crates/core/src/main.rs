use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use towerlab::billiards::{example_catalog, CATALOG_FAMILIES};
use towerlab::runner::{
    billiard_orbit, compare_oracle, fit_rows, fixture_configs, resolve_out_dir, rows_from_csv, run, synth_tower,
    write_envelope, CompareOptions, ExperimentConfig, FitFamily, FitRequest, Functional, Overrides, RunError,
};

#[derive(Parser)]
#[command(name = "towerlab", version, about = "Young-tower and billiard decay experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone, Default)]
struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    functional: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Comma-separated, e.g. `16,32,64`.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u64>>,
    #[arg(long)]
    orbits: Option<u64>,
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a tower and write its schema and summary.
    SynthTower {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace one billiard orbit as `step,s,psi`.
    Billiard {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one functional and write CSV plus a JSON envelope.
    Estimate(RunFlags),
    /// Fit a rate family to an `n,value,stderr,samples` CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, default_value_t = 16)]
        n_min: u64,
        #[arg(long, default_value_t = u64::MAX)]
        n_max: u64,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        bootstrap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo against exact enumeration; the fixture suite without --config.
    OracleCompare {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt_bias: f64,
    },
    /// Predicted rates for billiard families.
    Catalog { family: Option<String> },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum FamilyArg {
    Polynomial,
    Stretched,
}

fn overrides(f: &RunFlags) -> Result<Overrides, RunError> {
    Ok(Overrides {
        seed: f.seed,
        threads: f.threads,
        functional: f.functional.as_deref().map(Functional::parse).transpose()?,
        epsilon: f.epsilon,
        horizon: f.horizon,
        n_list: f.n_list.clone(),
        n_orbits: f.orbits,
        p: f.p,
    })
}

fn load(path: &Path, flags: &RunFlags) -> Result<ExperimentConfig, RunError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&overrides(flags)?);
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| RunError::Io { context: dir.display().to_string(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| RunError::Io { context: path.display().to_string(), source: e })
}

fn execute(cmd: Cmd) -> Result<u8, RunError> {
    match cmd {
        Cmd::SynthTower { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (schema, summary) = synth_tower(&cfg.system)?;
            let dir = resolve_out_dir(out.as_deref());
            write(&dir.join("schema.toml"), &schema)?;
            let json = serde_json::to_string_pretty(&summary).unwrap();
            write(&dir.join("tower.json"), &json)?;
            println!("{json}");
        }
        Cmd::Billiard { config, seed, steps, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let csv = billiard_orbit(&cfg.system, seed, steps)?;
            let path = resolve_out_dir(out.as_deref()).join("orbit.csv");
            write(&path, &csv)?;
            println!("{}", path.display());
        }
        Cmd::Estimate(flags) => {
            let path = flags.config.clone().ok_or_else(|| RunError::ConfigInvalid {
                field: "--config".into(),
                message: "required".into(),
            })?;
            let env = run(&load(&path, &flags)?)?;
            let (csv, json) = write_envelope(&env, &resolve_out_dir(flags.out.as_deref()))?;
            print!("{}", env.csv());
            eprintln!("wrote {} and {}", csv.display(), json.display());
        }
        Cmd::Fit { input, family, n_min, n_max, p, epsilon, omega, seed, bootstrap, out } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| RunError::Io { context: input.display().to_string(), source: e })?;
            let family = match family {
                FamilyArg::Polynomial => FitFamily::Polynomial,
                FamilyArg::Stretched => FitFamily::Stretched,
            };
            let req = FitRequest { family, n_min, n_max, p, epsilon, omega, seed, bootstrap_reps: bootstrap };
            let model = fit_rows(rows_from_csv(&text)?, &req)?;
            let json = model.to_json();
            write(&resolve_out_dir(out.as_deref()).join("fit.json"), &json)?;
            println!("{json}");
        }
        Cmd::OracleCompare { flags, corrupt_bias } => {
            let configs = match &flags.config {
                Some(path) => vec![load(path, &flags)?],
                None => {
                    let mut cs = fixture_configs(100_000, 42);
                    let o = overrides(&flags)?;
                    cs.iter_mut().for_each(|c| c.apply(&Overrides { functional: None, ..o.clone() }));
                    cs
                }
            };
            let mut reports = Vec::new();
            let mut passed = true;
            for cfg in &configs {
                let r = compare_oracle(cfg, CompareOptions { corrupt_bias })?;
                for row in &r.rows {
                    println!(
                        "{:<8} n={:<4} exact={:.6e} mc={:.6e} se={:.3e} z={:+.2}",
                        row.functional, row.n, row.exact, row.estimate, row.stderr, row.z
                    );
                }
                passed &= r.passed;
                reports.push(r);
            }
            let json = serde_json::to_string_pretty(&reports).unwrap();
            write(&resolve_out_dir(flags.out.as_deref()).join("oracle.json"), &json)?;
            println!("{}", if passed { "PASS" } else { "FAIL" });
            return Ok(if passed { 0 } else { 1 });
        }
        Cmd::Catalog { family } => {
            let names: Vec<String> = match family {
                Some(f) => vec![f],
                None => CATALOG_FAMILIES.iter().map(|s| s.replace("(b)", "(3)")).collect(),
            };
            let entries = names
                .iter()
                .map(|n| example_catalog(n).map_err(RunError::from))
                .collect::<Result<Vec<_>, _>>()?;
            println!("{}", serde_json::to_string_pretty(&entries).unwrap());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match execute(Cli::parse().cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
