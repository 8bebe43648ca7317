//! Poisson subsampling: the sampler itself, optimal scores and probabilities,
//! and the two-step pilot/second-step algorithm.

mod scores;
mod two_step;

pub use scores::{
    brute_force_probs, optimal_probs, point_score, score_mv, score_mvc, score_points, threshold,
    Metric,
};
pub use two_step::{
    pilot_stage, two_step, weighted_prob, Criterion, Pilot, PilotWeight, SamplingConfig,
    TwoStepOutcome,
};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PhysicalData;
use crate::rng;

const CHUNK: usize = 4096;

/// A Poisson subsample: retained points with their inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleSet {
    d: usize,
    index: Vec<usize>,
    x: Vec<f64>,
    y: Vec<f64>,
    pi: Vec<f64>,
    expected_size: f64,
}

impl SubsampleSet {
    pub fn empty(d: usize, expected_size: f64) -> Self {
        Self {
            d,
            index: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
            pi: Vec::new(),
            expected_size,
        }
    }

    /// Appends a point; `pi` must lie in `(0, 1]`.
    pub fn push(&mut self, index: usize, x: &[f64], y: f64, pi: f64) -> Result<()> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::Probability { index, value: pi });
        }
        if x.len() != self.d {
            return Err(Error::Dimension {
                what: "subsample inputs",
                expected: self.d,
                got: x.len(),
            });
        }
        self.index.push(index);
        self.x.extend_from_slice(x);
        self.y.push(y);
        self.pi.push(pi);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn realized_size(&self) -> usize {
        self.len()
    }

    /// `Σ πᵢ` over the population the set was drawn from.
    pub fn expected_size(&self) -> f64 {
        self.expected_size
    }

    pub fn indices(&self) -> &[usize] {
        &self.index
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64], f64, f64)> + '_ {
        (0..self.len()).map(|i| (self.index[i], self.row(i), self.y[i], self.pi[i]))
    }

    /// Union ordered by population index; for indices present in both sets
    /// the entry of `self` is kept.
    pub fn union(&self, other: &SubsampleSet) -> Self {
        let mut entries: Vec<(usize, bool, usize)> = (0..self.len())
            .map(|i| (self.index[i], false, i))
            .chain((0..other.len()).map(|i| (other.index[i], true, i)))
            .collect();
        entries.sort_unstable();
        entries.dedup_by_key(|e| e.0);
        let mut out = Self::empty(self.d, self.expected_size + other.expected_size);
        for (idx, from_other, i) in entries {
            let src = if from_other { other } else { self };
            out.index.push(idx);
            out.x.extend_from_slice(src.row(i));
            out.y.push(src.y[i]);
            out.pi.push(src.pi[i]);
        }
        out
    }

    /// Replaces each stored probability with `f(index, pi)`.
    pub fn map_pi(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        for (k, p) in out.pi.iter_mut().enumerate() {
            let v = f(out.index[k], *p);
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Probability {
                    index: out.index[k],
                    value: v,
                });
            }
            *p = v;
        }
        Ok(out)
    }
}

/// One streaming pass of independent Bernoulli draws.
///
/// `pi_of(i, x, y)` gives point `i`'s inclusion probability; values above 1
/// are clamped and the point is then always kept. Points drawn with
/// probability 0 are never stored. Each chunk of 4096 points owns an RNG
/// substream, so the result is identical for any thread count.
pub fn poisson_sample<F>(data: &PhysicalData, pi_of: F, seed: u64) -> Result<SubsampleSet>
where
    F: Fn(usize, &[f64], f64) -> f64 + Sync,
{
    let n = data.n();
    let d = data.d();
    let chunks: Vec<Result<(SubsampleSet, f64)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(seed, &[rng::label("poisson"), c as u64]);
            let mut part = SubsampleSet::empty(d, 0.0);
            let mut expected = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let x = data.row(i);
                let y = data.y()[i];
                let p = pi_of(i, x, y);
                if !(p >= 0.0) || p.is_infinite() {
                    return Err(Error::Probability { index: i, value: p });
                }
                let p = p.min(1.0);
                expected += p;
                let u: f64 = r.random();
                if u < p {
                    part.push(i, x, y, p)?;
                }
            }
            Ok((part, expected))
        })
        .collect();

    let mut out = SubsampleSet::empty(d, 0.0);
    for c in chunks {
        let (part, expected) = c?;
        out.expected_size += expected;
        out.index.extend(part.index);
        out.x.extend(part.x);
        out.y.extend(part.y);
        out.pi.extend(part.pi);
    }
    Ok(out)
}

/// Constant probability `r/n`, clamped to 1.
pub fn uniform_probs(n: usize, r: f64) -> f64 {
    let p = r / n as f64;
    if p > 1.0 {
        log::warn!("expected size {r} exceeds n = {n}; every point is kept");
    }
    p.min(1.0)
}
