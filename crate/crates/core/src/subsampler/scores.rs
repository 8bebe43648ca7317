//! Optimal-subsampling scores, the order-statistic threshold and the
//! resulting probabilities.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::model::PhysicalData;

/// How the gradient enters a score: the plain norm (mVc) or the norm after
/// applying `J⁻¹` (mV).
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    InverseJ(DMatrix<f64>),
}

impl Metric {
    /// `J⁻¹` from a symmetric `J`, failing when `J` is not positive definite.
    pub fn inverse_j(j: &DMatrix<f64>) -> Result<Self> {
        j.clone()
            .cholesky()
            .map(|c| Metric::InverseJ(c.inverse()))
            .ok_or_else(|| {
                Error::Scoring(
                    "J is not positive definite; use the mVc criterion or a ridge".into(),
                )
            })
    }

    /// As [`Metric::inverse_j`], retrying once with `J + ridge·tr(J)/q·I`.
    pub fn inverse_j_ridged(j: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        if let Ok(m) = Self::inverse_j(j) {
            return Ok(m);
        }
        let q = j.nrows();
        let shift = ridge * j.trace().abs() / q as f64;
        log::warn!("J is singular; adding ridge {shift:e}");
        let jr = j + DMatrix::identity(q, q) * shift;
        Self::inverse_j(&jr).map_err(|_| {
            Error::Scoring("J is singular even after the ridge; use the mVc criterion".into())
        })
    }

    pub fn psi(&self, grad: &DVector<f64>) -> f64 {
        match self {
            Metric::Euclidean => grad.norm(),
            Metric::InverseJ(jinv) => (jinv * grad).norm(),
        }
    }
}

/// mV score `|residual|·‖J⁻¹ grad‖`.
pub fn score_mv(residual: f64, grad: &DVector<f64>, j: &DMatrix<f64>) -> Result<f64> {
    Ok(point_score(residual, grad, &Metric::inverse_j(j)?))
}

/// mVc score `|residual|·‖grad‖`.
pub fn score_mvc(residual: f64, grad: &DVector<f64>) -> f64 {
    residual.abs() * grad.norm()
}

pub fn point_score(residual: f64, grad: &DVector<f64>, metric: &Metric) -> f64 {
    residual.abs() * metric.psi(grad)
}

/// Scores of every data point at `theta`.
pub fn score_points(data: &PhysicalData, em: &Emulator, theta: &[f64], metric: &Metric) -> Vec<f64> {
    (0..data.n())
        .into_par_iter()
        .map(|i| {
            let (v, g) = em.value_grad(data.row(i), theta);
            point_score(data.y()[i] - v, &g, metric)
        })
        .collect()
}

fn check_scores(h: &[f64], r: f64) -> Result<()> {
    let n = h.len();
    if !(r > 0.0 && r < n as f64) {
        return Err(Error::Size(format!("expected size r = {r} must lie in (0, n = {n})")));
    }
    if let Some(i) = h.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Scoring(format!("score {} at index {i} is not a nonnegative number", h[i])));
    }
    Ok(())
}

/// The cap `M` and the number `k` of capped scores.
///
/// `k` is the smallest `s < r` with `(r − s)·h₍ₙ₋ₛ₎ < Σᵢ₌₁ⁿ⁻ˢ h₍ᵢ₎` (ascending
/// order statistics) and `M = Σᵢ₌₁ⁿ⁻ᵏ h₍ᵢ₎ / (r − k)`.
pub fn threshold(h: &[f64], r: f64) -> Result<(f64, usize)> {
    check_scores(h, r)?;
    let n = h.len();
    let mut sorted = h.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in &sorted {
        prefix.push(prefix.last().unwrap() + v);
    }
    let mut s = 0usize;
    while (s as f64) < r && s < n {
        let m = n - s;
        if (r - s as f64) * sorted[m - 1] < prefix[m] {
            return Ok((prefix[m] / (r - s as f64), s));
        }
        s += 1;
    }
    Err(Error::DegenerateScores(format!(
        "too many zero scores for expected size {r}; at most n − r of {n} may vanish"
    )))
}

/// `πᵢ = r·(hᵢ ∧ M) / Σⱼ (hⱼ ∧ M)`.
pub fn optimal_probs(h: &[f64], r: f64) -> Result<Vec<f64>> {
    let (m, _) = threshold(h, r)?;
    let capped: Vec<f64> = h.iter().map(|v| v.min(m)).collect();
    let total: f64 = capped.iter().sum();
    Ok(capped.iter().map(|v| (r * v / total).min(1.0)).collect())
}

/// Minimizes `Σ hᵢ²/πᵢ` subject to `Σ πᵢ = r`, `0 < πᵢ ≤ 1` by pairwise
/// exchange: repeatedly moves mass between the two coordinates that most
/// violate the optimality conditions, solving each pair exactly.
///
/// Slow and independent of [`threshold`]; meant as a check on small inputs.
pub fn brute_force_probs(h: &[f64], r: f64) -> Result<Vec<f64>> {
    check_scores(h, r)?;
    if h.contains(&0.0) {
        return Err(Error::DegenerateScores("brute force needs positive scores".into()));
    }
    let n = h.len();
    let lo = 1e-300;
    let mut pi = vec![r / n as f64; n];
    let grad = |i: usize, p: f64| -(h[i] / p).powi(2);
    for _ in 0..1_000_000 {
        // i can give mass (largest gradient), j can take it (smallest)
        let mut i_best = None;
        let mut j_best = None;
        for k in 0..n {
            let g = grad(k, pi[k]);
            if pi[k] > lo && i_best.is_none_or(|(_, gi)| g > gi) {
                i_best = Some((k, g));
            }
            if pi[k] < 1.0 && j_best.is_none_or(|(_, gj)| g < gj) {
                j_best = Some((k, g));
            }
        }
        let (Some((i, gi)), Some((j, gj))) = (i_best, j_best) else {
            break;
        };
        if i == j || gi - gj <= 1e-15 * gj.abs() {
            break;
        }
        let s = pi[i] + pi[j];
        let a = (s * h[i] / (h[i] + h[j])).clamp((s - 1.0).max(lo), (s - lo).min(1.0));
        if a == pi[i] {
            break;
        }
        pi[i] = a;
        pi[j] = s - a;
    }
    Ok(pi)
}
