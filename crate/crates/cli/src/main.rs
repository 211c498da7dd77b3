use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rsym_core::experiment::{self, ExperimentConfig};
use rsym_core::Error;

#[derive(Parser, Debug)]
#[command(name = "rsym", version, about = "Real symmetric zero loci and pencils on Kahler models")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// TOML config; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma separated, e.g. `100,400,1600`.
    #[arg(long, global = true, value_delimiter = ',')]
    k_list: Option<Vec<u32>>,
    /// Points per axis of the real marching grid.
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// k-sweep of a construction: counts, inradii, eta, equidistribution.
    Scaling,
    /// Certifies a real pencil and writes its critical and base tables.
    Pencil,
    /// Runs the property checks of every module.
    Invariants,
    /// Forbidden set and real pick for `z^2 - c`.
    SardDemo {
        #[arg(long, default_value_t = 0.05)]
        c: f64,
    },
    /// Prints the effective config as TOML.
    Config,
}

enum Outcome {
    Pass,
    Fail,
}

fn load_config(cli: &Cli) -> rsym_core::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = &cli.k_list {
        cfg.k_list = k.clone();
    }
    if cli.resolution.is_some() {
        cfg.resolution = cli.resolution;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let out = &cfg.out_dir;
    match &cli.verb {
        Verb::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(Outcome::Pass)
        }
        Verb::Scaling => {
            let study = experiment::run_scaling_study(cfg)?;
            study.write_csv(create(out, "scaling.csv")?)?;
            for r in &study.rows {
                println!(
                    "k = {:>6}  sites = {:>5}  N = {:>5}  N/k^(n/2) = {:.4}  inradius*sqrt(k) = {:.4}  eta = {:.4}  cv = {:.4}",
                    r.k, r.sites, r.n_measured, r.n_over_k, r.min_inradius_sqrt_k, r.eta, r.equi_cv
                );
            }
            println!("slope = {:.4} +- {:.4}", study.slope, study.slope_band);
            Ok(Outcome::Pass)
        }
        Verb::Pencil => {
            let report = experiment::run_pencil_report(cfg)?;
            report.write_summary(create(out, "pencil_summary.txt")?)?;
            report.write_critical_csv(create(out, "pencil_critical.csv")?)?;
            report.write_base_csv(create(out, "pencil_base.csv")?)?;
            report.write_summary(std::io::stdout())?;
            if report.passed() {
                Ok(Outcome::Pass)
            } else {
                let items: Vec<String> = report.failing_items().iter().map(u8::to_string).collect();
                eprintln!("certification failed: item {}", items.join(", "));
                Ok(Outcome::Fail)
            }
        }
        Verb::Invariants => {
            let summary = experiment::run_invariant_suite(cfg)?;
            let json = summary.to_json();
            fs::create_dir_all(out)?;
            fs::write(out.join("invariants.json"), &json)?;
            for c in &summary.checks {
                println!("{} {}::{}  {}", if c.pass { "PASS" } else { "FAIL" }, c.module, c.name, c.detail);
            }
            Ok(if summary.passed() { Outcome::Pass } else { Outcome::Fail })
        }
        Verb::SardDemo { c } => {
            let pick = experiment::run_sard_demo(cfg, *c)?;
            experiment::write_sard_csv(&pick, &cfg.hash(), create(out, "sard_forbidden.csv")?)?;
            println!(
                "w = {:.6}  clearance = {:.3e}  forbidden length = {:.4}  transverse = {} (margin {:.3e})",
                pick.w, pick.clearance, pick.trace.total_length, pick.check.ok, pick.check.margin
            );
            Ok(if pick.check.ok { Outcome::Pass } else { Outcome::Fail })
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) if is_config_error(&e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
