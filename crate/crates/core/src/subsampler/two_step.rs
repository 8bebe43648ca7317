//! The pilot stage and the two-step algorithm.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::scores::Metric;
use super::{poisson_sample, uniform_probs, SubsampleSet};
use crate::calibrator::{estimate_j, minimize, Estimate, OptimOptions, WeightedSample};
use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::model::PhysicalData;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Uniform,
    Mv,
    Mvc,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Uniform, Criterion::Mv, Criterion::Mvc];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Uniform => "uniform",
            Criterion::Mv => "mv",
            Criterion::Mvc => "mvc",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "unif" => Ok(Criterion::Uniform),
            "mv" => Ok(Criterion::Mv),
            "mvc" => Ok(Criterion::Mvc),
            _ => Err(Error::Config(format!(
                "unknown criterion `{s}` (expected uniform, mv or mvc)"
            ))),
        }
    }
}

/// Inclusion probability attached to pilot points in the final fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotWeight {
    /// Probability of landing in either stage, `1 − (1 − r₀/n)(1 − π̆ᵂ ∧ 1)`.
    Union,
    /// The pilot draw probability `r₀/n` alone.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub criterion: Criterion,
    /// Expected second-step size; the uniform criterion draws `r0 + r`.
    pub r: f64,
    /// Expected pilot size; `2q + 10d` when unset.
    pub r0: Option<f64>,
    pub rho: f64,
    pub seed: u64,
    pub include_pilot: bool,
    pub pilot_weight: PilotWeight,
    /// Relative ridge added to a singular pilot `J`.
    pub ridge: f64,
    pub optim: OptimOptions,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Mvc,
            r: 100.0,
            r0: None,
            rho: 0.2,
            seed: 0,
            include_pilot: true,
            pilot_weight: PilotWeight::Union,
            ridge: 1e-8,
            optim: OptimOptions::default(),
        }
    }
}

impl SamplingConfig {
    pub fn new(criterion: Criterion, r: f64, seed: u64) -> Self {
        Self {
            criterion,
            r,
            seed,
            ..Default::default()
        }
    }

    pub fn r0_for(&self, q: usize, d: usize) -> f64 {
        self.r0.unwrap_or((2 * q + 10 * d) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} must lie in (0, 1)", self.rho)));
        }
        if !(self.r >= 1.0) {
            return Err(Error::Config(format!("r = {} must be at least 1", self.r)));
        }
        if let Some(r0) = self.r0 {
            if !(r0 >= 1.0) {
                return Err(Error::Config(format!("r0 = {r0} must be at least 1")));
            }
        }
        Ok(())
    }

    fn optim_for(&self, stage: &str) -> OptimOptions {
        OptimOptions {
            seed: rng::derive_seed(self.seed, &[rng::label(stage)]),
            ..self.optim.clone()
        }
    }
}

/// First-stage estimates from a small uniform subsample.
#[derive(Debug, Clone)]
pub struct Pilot {
    pub theta0: Vec<f64>,
    /// Pilot `J̃₀`; computed for the mV criterion only.
    pub j0: Option<DMatrix<f64>>,
    pub psi0: f64,
    pub criterion: Criterion,
    pub metric: Metric,
    pub pilot_set: SubsampleSet,
    pub estimate: Estimate,
    pub r0: f64,
}

impl Pilot {
    /// `|yᵢ − ŷˢ(xᵢ, θ̃₀)|·ψ₀(xᵢ)`.
    pub fn score(&self, em: &Emulator, x: &[f64], y: f64) -> f64 {
        let (v, g) = em.value_grad(x, &self.theta0);
        (y - v).abs() * self.metric.psi(&g)
    }

    /// Practical second-step probability at one point, before clamping.
    pub fn prob(&self, em: &Emulator, x: &[f64], y: f64, n: usize, r: f64, rho: f64) -> f64 {
        weighted_prob(self.score(em, x, y), self.psi0, n, r, rho)
    }
}

/// `(1 − ρ)·r·s/(nΨ₀) + ρ·r/n` for a point with pilot score `s`; uniform
/// when `Ψ₀ = 0`.
pub fn weighted_prob(score: f64, psi0: f64, n: usize, r: f64, rho: f64) -> f64 {
    let n = n as f64;
    if psi0 > 0.0 {
        (1.0 - rho) * r * score / (n * psi0) + rho * r / n
    } else {
        r / n
    }
}

pub fn pilot_stage(data: &PhysicalData, em: &Emulator, cfg: &SamplingConfig) -> Result<Pilot> {
    cfg.validate()?;
    if cfg.criterion == Criterion::Uniform {
        return Err(Error::Config("the uniform criterion has no pilot stage".into()));
    }
    let n = data.n();
    let r0 = cfg.r0_for(em.q(), em.d());
    let p0 = uniform_probs(n, r0);
    let seed = rng::derive_seed(cfg.seed, &[rng::label("pilot")]);
    let pilot_set = poisson_sample(data, |_, _, _| p0, seed)?;
    if pilot_set.is_empty() {
        return Err(Error::Pilot(format!("empty pilot draw (r0 = {r0}, n = {n})")));
    }

    let k = pilot_set.len();
    let unweighted = WeightedSample::new(
        pilot_set.d(),
        pilot_set.x_flat().to_vec(),
        pilot_set.y().to_vec(),
        vec![1.0; k],
        k as f64,
    )?;
    let centre: Vec<f64> = em.theta_box().iter().map(|b| 0.5 * (b.lo + b.hi)).collect();
    let estimate = minimize(&unweighted, em, &centre, &cfg.optim_for("pilot-fit"))
        .map_err(|e| Error::Pilot(e.to_string()))?;
    let theta0 = estimate.theta.clone();

    let (j0, metric) = match cfg.criterion {
        Criterion::Mv => {
            let j0 = estimate_j(&unweighted, em, &theta0);
            let metric = Metric::inverse_j_ridged(&j0, cfg.ridge)?;
            (Some(j0), metric)
        }
        _ => (None, Metric::Euclidean),
    };

    let mut pilot = Pilot {
        theta0,
        j0,
        psi0: 0.0,
        criterion: cfg.criterion,
        metric,
        pilot_set,
        estimate,
        r0,
    };
    pilot.psi0 = pilot
        .pilot_set
        .iter()
        .map(|(_, x, y, _)| pilot.score(em, x, y))
        .sum::<f64>()
        / k as f64;
    if pilot.psi0 == 0.0 {
        log::warn!("all pilot residuals vanish; falling back to uniform probabilities");
    }
    Ok(pilot)
}

#[derive(Debug, Clone)]
pub struct TwoStepOutcome {
    pub estimate: Estimate,
    /// Absent for the uniform criterion.
    pub pilot: Option<Pilot>,
    /// The second-step draw `S_r` (the whole draw for the uniform criterion).
    pub second: SubsampleSet,
    /// The set the final estimate was fitted on.
    pub fitted: SubsampleSet,
}

/// Pilot stage, weighted Poisson draw and the final weighted fit.
///
/// The uniform criterion is a single uniform draw of expected size `r0 + r`.
pub fn two_step(data: &PhysicalData, em: &Emulator, cfg: &SamplingConfig) -> Result<TwoStepOutcome> {
    cfg.validate()?;
    let n = data.n();
    let r0 = cfg.r0_for(em.q(), em.d());
    let centre: Vec<f64> = em.theta_box().iter().map(|b| 0.5 * (b.lo + b.hi)).collect();

    if cfg.criterion == Criterion::Uniform {
        let p = uniform_probs(n, r0 + cfg.r);
        let seed = rng::derive_seed(cfg.seed, &[rng::label("uniform")]);
        let second = poisson_sample(data, |_, _, _| p, seed)?;
        let estimate = fit(&second, n, em, &centre, &cfg.optim_for("final-fit"))?;
        return Ok(TwoStepOutcome {
            estimate,
            pilot: None,
            fitted: second.clone(),
            second,
        });
    }

    let pilot = pilot_stage(data, em, cfg)?;
    let seed = rng::derive_seed(cfg.seed, &[rng::label("second-step")]);
    let second = poisson_sample(
        data,
        |_, x, y| pilot.prob(em, x, y, n, cfg.r, cfg.rho),
        seed,
    )?;

    let fitted = if cfg.include_pilot {
        let p0 = uniform_probs(n, r0);
        let reweighted = match cfg.pilot_weight {
            PilotWeight::Uniform => pilot.pilot_set.clone(),
            PilotWeight::Union => {
                let mut s = SubsampleSet::empty(data.d(), 0.0);
                for (i, x, y, _) in pilot.pilot_set.iter() {
                    let pw = pilot.prob(em, x, y, n, cfg.r, cfg.rho).min(1.0);
                    s.push(i, x, y, 1.0 - (1.0 - p0) * (1.0 - pw))?;
                }
                s
            }
        };
        let second_union = match cfg.pilot_weight {
            PilotWeight::Uniform => second.clone(),
            PilotWeight::Union => second.map_pi(|_, pw| 1.0 - (1.0 - p0) * (1.0 - pw))?,
        };
        second_union.union(&reweighted)
    } else {
        second.clone()
    };

    let estimate = fit(&fitted, n, em, &pilot.theta0, &cfg.optim_for("final-fit"))?;
    Ok(TwoStepOutcome {
        estimate,
        pilot: Some(pilot),
        second,
        fitted,
    })
}

fn fit(
    set: &SubsampleSet,
    n: usize,
    em: &Emulator,
    init: &[f64],
    opts: &OptimOptions,
) -> Result<Estimate> {
    if set.is_empty() {
        return Err(Error::Estimation(
            "empty subsample; resample or enlarge the expected size r".into(),
        ));
    }
    minimize(&WeightedSample::from_subsample(set, n)?, em, init, opts)
}
