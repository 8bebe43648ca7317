use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde_json::json;

use calsub::harness::{emit_report, load_csv, run_experiment, DataSpec, ExperimentConfig};
use calsub::inference::{confidence_intervals, estimate_variance};
use calsub::model::{generate_physical_data, PhysicalData};
use calsub::subsampler::{brute_force_probs, optimal_probs, pilot_stage, two_step, Criterion};
use calsub::{rng, Error, Result};

#[derive(Parser)]
#[command(name = "calsub", version, about = "Computer-model calibration by optimal Poisson subsampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate on one data set and print the estimate with confidence intervals.
    Calibrate(Common),
    /// Run a replicated simulation study and write report files.
    Simulate(Common),
    /// Write per-point scores and subsampling probabilities for audit.
    Probs(Common),
    /// Compare the threshold rule with a brute-force minimizer on random scores.
    Oracle(OracleArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    criterion: Option<Criterion>,
    /// Expected second-step size; replaces the configured grid.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 8.0)]
    r: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.criterion {
            cfg.criteria = vec![c];
        }
        if let Some(r) = self.r {
            cfg.r_grid = vec![r];
        }
        if self.r0.is_some() {
            cfg.r0 = self.r0;
        }
        if let Some(rho) = self.rho {
            cfg.rho = rho;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        set_threads(cfg.threads)?;
        Ok(cfg)
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_data(cfg: &ExperimentConfig) -> Result<PhysicalData> {
    match &cfg.data {
        DataSpec::Csv {
            path,
            x_columns,
            y_column,
        } => {
            let l = load_csv(path, x_columns, y_column)?;
            if l.skipped > 0 {
                eprintln!("skipped {} malformed rows", l.skipped);
            }
            Ok(l.data)
        }
        DataSpec::Synthetic { .. } => {
            let seed = rng::derive_seed(cfg.seed, &[rng::label("data")]);
            let (gen, n) = cfg.generator(seed)?.expect("synthetic source");
            generate_physical_data(&gen, n)
        }
    }
}

fn write_json(path: &std::path::Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn calibrate(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let em = cfg.build_emulator()?;
    let data = load_data(&cfg)?;
    let sc = cfg.sampling(cfg.criteria[0], cfg.r_grid[0], cfg.seed);
    let out = two_step(&data, &em, &sc)?;
    let cov = match estimate_variance(&out.second, data.n(), &em, out.pilot.as_ref(), &out.estimate, &sc) {
        Ok(mut cov) => {
            cov.ci = confidence_intervals(&cov, cfg.ci_level);
            cov.ci_level = cfg.ci_level;
            Some(cov)
        }
        Err(e) => {
            eprintln!("no confidence intervals: {e}");
            None
        }
    };
    let value = json!({
        "criterion": sc.criterion,
        "r": sc.r,
        "r0": sc.r0_for(em.q(), em.d()),
        "n": data.n(),
        "realized_size": out.fitted.len(),
        "estimate": out.estimate,
        "pilot_theta": out.pilot.as_ref().map(|p| p.theta0.clone()),
        "covariance": cov,
    });
    write_json(&cfg.out_dir.join("calibration.json"), &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn simulate(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let report = run_experiment(&cfg)?;
    let files = emit_report(&report, &cfg.out_dir)?;
    println!("{:<8} {:>8} {:>12} {:>12} {:>10} {:>7}", "crit", "r", "rmse", "rmse_f", "seconds", "failed");
    for c in &report.cells {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!(
            "{:<8} {:>8} {:>12} {:>12} {:>10.4} {:>7}",
            c.criterion.as_str(),
            c.r,
            fmt(c.rmse),
            fmt(c.rmse_f),
            c.mean_seconds,
            c.failed
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn probs(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let em = cfg.build_emulator()?;
    let data = load_data(&cfg)?;
    let criterion = cfg.criteria[0];
    if criterion == Criterion::Uniform {
        return Err(Error::Config("probs needs the mv or mvc criterion".into()));
    }
    let sc = cfg.sampling(criterion, cfg.r_grid[0], cfg.seed);
    let pilot = pilot_stage(&data, &em, &sc)?;
    let n = data.n();
    let scores: Vec<f64> = data.rows().map(|(x, y)| pilot.score(&em, x, y)).collect();
    let exact = optimal_probs(&scores, sc.r).ok();
    if exact.is_none() {
        eprintln!("exact probabilities unavailable: too many zero scores");
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("probs.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = (1..=data.d()).map(|j| format!("x{j}")).collect();
    header.splice(0..0, ["index".to_string()]);
    header.extend(["y", "score", "pi_weighted", "pi_exact"].map(String::from));
    w.write_record(&header)?;
    for (i, (x, y)) in data.rows().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(x.iter().map(|v| format!("{v:.16e}")));
        rec.push(format!("{y:.16e}"));
        rec.push(format!("{:.16e}", scores[i]));
        rec.push(format!("{:.16e}", pilot.prob(&em, x, y, n, sc.r, sc.rho).min(1.0)));
        rec.push(exact.as_ref().map_or(String::new(), |p| format!("{:.16e}", p[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("pilot theta {:?}, psi0 {:.6e}", pilot.theta0, pilot.psi0);
    println!("wrote {}", path.display());
    Ok(())
}

/// Returns whether every trial agreed within the tolerance.
fn oracle(args: &OracleArgs) -> Result<bool> {
    set_threads(args.threads)?;
    let mut worst = 0.0f64;
    for t in 0..args.trials {
        let mut r = rng::substream(args.seed, &[rng::label("oracle"), t as u64]);
        let h: Vec<f64> = (0..args.n)
            .map(|_| (-(1.0 - r.random::<f64>()).ln()).powi(3) + 1e-3)
            .collect();
        let a = optimal_probs(&h, args.r)?;
        let b = brute_force_probs(&h, args.r)?;
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    let ok = worst <= args.tol;
    println!(
        "{} trials, n = {}, r = {}: max |threshold - brute force| = {worst:.3e} ({})",
        args.trials,
        args.n,
        args.r,
        if ok { "agree" } else { "DISAGREE" }
    );
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(a) => calibrate(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Probs(a) => probs(a).map(|_| true),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
