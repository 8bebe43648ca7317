//! Replicated simulation studies.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSpec, ExperimentConfig};
use super::csvio::load_csv;
use crate::calibrator::{fit_ols, OptimOptions};
use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::inference::{confidence_intervals, estimate_variance};
use crate::model::{generate_physical_data, PhysicalData};
use crate::rng;
use crate::subsampler::{two_step, Criterion};

/// One fit of one criterion at one subsample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub criterion: Criterion,
    pub r: f64,
    pub attempts: usize,
    pub theta: Option<Vec<f64>>,
    pub se: Option<Vec<f64>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub realized_size: Option<usize>,
    pub theta_full: Option<Vec<f64>>,
    pub error: Option<String>,
    /// Wall-clock seconds of the two-step run; kept out of the JSON report.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub criterion: Criterion,
    pub r: f64,
    /// Mean squared relative error against `theta_star`.
    pub rmse: Option<f64>,
    /// Mean squared relative error against the full-data estimate.
    pub rmse_f: Option<f64>,
    pub mean_error_norm: Option<f64>,
    pub ci_length: Vec<f64>,
    pub coverage: Option<Vec<f64>>,
    pub mean_realized_size: f64,
    pub completed: usize,
    /// Completed fits whose covariance could be estimated.
    pub with_intervals: usize,
    pub failed: usize,
    #[serde(skip)]
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub r0: f64,
    pub cells: Vec<CellMetrics>,
    pub replications: Vec<ReplicationRecord>,
}

impl MetricsReport {
    pub fn cell(&self, criterion: Criterion, r: f64) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.criterion == criterion && c.r == r)
    }

    pub fn records(&self, criterion: Criterion, r: f64) -> impl Iterator<Item = &ReplicationRecord> {
        self.replications
            .iter()
            .filter(move |rec| rec.criterion == criterion && rec.r == r)
    }
}

fn data_seed(cfg: &ExperimentConfig, t: usize, fixed: bool) -> u64 {
    if fixed {
        rng::derive_seed(cfg.seed, &[rng::label("data")])
    } else {
        rng::derive_seed(cfg.seed, &[rng::label("data"), t as u64])
    }
}

fn run_seed(cfg: &ExperimentConfig, t: usize, c: Criterion, r: f64, attempt: usize) -> u64 {
    rng::derive_seed(
        cfg.seed,
        &[
            rng::label("replication"),
            t as u64,
            rng::label(c.as_str()),
            r.to_bits(),
            attempt as u64,
        ],
    )
}

/// Data and full-data estimate shared by all fits of a replication.
struct Dataset {
    data: PhysicalData,
    theta_full: Option<Vec<f64>>,
}

fn prepare(cfg: &ExperimentConfig, em: &Emulator, seed: u64) -> Result<Dataset> {
    let data = match &cfg.data {
        DataSpec::Csv {
            path,
            x_columns,
            y_column,
        } => load_csv(path, x_columns, y_column)?.data,
        DataSpec::Synthetic { .. } => {
            let (gen, n) = cfg.generator(seed)?.expect("synthetic source");
            generate_physical_data(&gen, n)?
        }
    };
    let theta_full = if cfg.full_fit {
        let opts = OptimOptions {
            seed: rng::derive_seed(seed, &[rng::label("full-fit")]),
            ..cfg.optim.clone()
        };
        Some(fit_ols(&data, em, &opts)?.theta)
    } else {
        None
    };
    Ok(Dataset { data, theta_full })
}

fn run_cell(
    cfg: &ExperimentConfig,
    em: &Emulator,
    ds: &Dataset,
    t: usize,
    criterion: Criterion,
    r: f64,
) -> ReplicationRecord {
    let mut rec = ReplicationRecord {
        replication: t,
        criterion,
        r,
        attempts: 0,
        theta: None,
        se: None,
        sigma: None,
        ci: None,
        realized_size: None,
        theta_full: ds.theta_full.clone(),
        error: None,
        seconds: 0.0,
    };
    let n = ds.data.n();
    for attempt in 0..cfg.max_retries.max(1) {
        rec.attempts = attempt + 1;
        let sc = cfg.sampling(criterion, r, run_seed(cfg, t, criterion, r, attempt));
        let start = Instant::now();
        let outcome = two_step(&ds.data, em, &sc);
        rec.seconds = start.elapsed().as_secs_f64();
        match outcome {
            Ok(out) => {
                match estimate_variance(&out.second, n, em, out.pilot.as_ref(), &out.estimate, &sc) {
                    Ok(cov) => {
                        rec.ci = Some(confidence_intervals(&cov, cfg.ci_level));
                        rec.se = Some(cov.se);
                        rec.sigma = Some(cov.sigma);
                        rec.error = None;
                    }
                    // the estimate stands without intervals
                    Err(e) => rec.error = Some(e.to_string()),
                }
                rec.theta = Some(out.estimate.theta);
                rec.realized_size = Some(out.fitted.len());
                return rec;
            }
            Err(e) => {
                log::warn!("replication {t}, {criterion} r={r}, attempt {}: {e}", attempt + 1);
                rec.error = Some(e.to_string());
            }
        }
    }
    rec
}

fn rel_sq(theta: &[f64], reference: &[f64]) -> f64 {
    theta
        .iter()
        .zip(reference)
        .map(|(a, b)| ((a - b) / b).powi(2))
        .sum()
}

fn aggregate(cfg: &ExperimentConfig, criterion: Criterion, r: f64, recs: &[&ReplicationRecord]) -> CellMetrics {
    let ok: Vec<&ReplicationRecord> = recs.iter().copied().filter(|r| r.theta.is_some()).collect();
    let k = ok.len() as f64;
    let mean = |f: &dyn Fn(&ReplicationRecord) -> f64| {
        if ok.is_empty() {
            None
        } else {
            Some(ok.iter().map(|r| f(r)).sum::<f64>() / k)
        }
    };
    let q = ok.first().map_or(0, |r| r.theta.as_ref().unwrap().len());
    let with_ci: Vec<&ReplicationRecord> = ok.iter().copied().filter(|r| r.ci.is_some()).collect();
    let ci_mean = |f: &dyn Fn(&(f64, f64)) -> f64, j: usize| {
        with_ci.iter().map(|r| f(&r.ci.as_ref().unwrap()[j])).sum::<f64>() / with_ci.len() as f64
    };
    let star = cfg.theta_star.as_deref();
    CellMetrics {
        criterion,
        r,
        rmse: star.and_then(|s| mean(&|rec| rel_sq(rec.theta.as_ref().unwrap(), s))),
        rmse_f: if cfg.full_fit {
            mean(&|rec| rel_sq(rec.theta.as_ref().unwrap(), rec.theta_full.as_ref().unwrap()))
        } else {
            None
        },
        mean_error_norm: star.and_then(|s| {
            mean(&|rec| {
                rec.theta
                    .as_ref()
                    .unwrap()
                    .iter()
                    .zip(s)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
        }),
        ci_length: if with_ci.is_empty() {
            Vec::new()
        } else {
            (0..q).map(|j| ci_mean(&|(lo, hi)| hi - lo, j)).collect()
        },
        coverage: star.filter(|_| !with_ci.is_empty()).map(|s| {
            (0..q)
                .map(|j| ci_mean(&|&(lo, hi)| f64::from(u8::from(lo <= s[j] && s[j] <= hi)), j))
                .collect()
        }),
        with_intervals: with_ci.len(),
        mean_realized_size: mean(&|rec| rec.realized_size.unwrap() as f64).unwrap_or(0.0),
        completed: ok.len(),
        failed: recs.len() - ok.len(),
        mean_seconds: if recs.is_empty() {
            0.0
        } else {
            recs.iter().map(|r| r.seconds).sum::<f64>() / recs.len() as f64
        },
    }
}

/// Runs every replication of every (criterion, r) cell.
///
/// Each replication draws its own data (unless the data are fixed or read
/// from CSV) and each fit its own RNG substream keyed by
/// (replication, criterion, r), so results do not depend on the thread
/// count or on the number of replications.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let em = cfg.build_emulator()?;
    let fixed = match &cfg.data {
        DataSpec::Synthetic { fixed, .. } => *fixed,
        DataSpec::Csv { .. } => true,
    };
    let shared = if fixed {
        Some(prepare(cfg, &em, data_seed(cfg, 0, true))?)
    } else {
        None
    };

    let cells: Vec<(Criterion, f64)> = cfg
        .criteria
        .iter()
        .flat_map(|&c| cfg.r_grid.iter().map(move |&r| (c, r)))
        .collect();

    let run = || -> Result<Vec<Vec<ReplicationRecord>>> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|t| {
                let own;
                let ds = match &shared {
                    Some(ds) => ds,
                    None => {
                        own = prepare(cfg, &em, data_seed(cfg, t, false))?;
                        &own
                    }
                };
                Ok(cells.iter().map(|&(c, r)| run_cell(cfg, &em, ds, t, c, r)).collect())
            })
            .collect()
    };
    let per_rep = match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let mut replications: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();
    replications.sort_by(|a, b| {
        a.criterion
            .cmp(&b.criterion)
            .then(a.r.total_cmp(&b.r))
            .then(a.replication.cmp(&b.replication))
    });
    let metrics = cells
        .iter()
        .map(|&(c, r)| {
            let recs: Vec<&ReplicationRecord> = replications.iter().filter(|x| x.criterion == c && x.r == r).collect();
            aggregate(cfg, c, r, &recs)
        })
        .collect();

    let model = cfg.computer_model()?;
    let n = match &shared {
        Some(ds) => ds.data.n(),
        None => cfg.generator(0)?.map_or(0, |(_, n)| n),
    };
    Ok(MetricsReport {
        config: cfg.clone(),
        n,
        r0: cfg.sampling(Criterion::Mvc, 1.0, 0).r0_for(model.q(), model.d()),
        cells: metrics,
        replications,
    })
}
