//! Uncertainty of subsample estimates: the sandwich covariance, normal
//! confidence intervals and closed-form asymptotic mean squared errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibrator::{wls_hess, Estimate, WeightedSample};
use crate::emulator::Emulator;
use crate::error::{Error, Result};
use crate::subsampler::{weighted_prob, Pilot, SamplingConfig, SubsampleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub theta: Vec<f64>,
    /// Row-major `q×q` covariance.
    pub sigma: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub ci_level: f64,
    pub ci: Vec<(f64, f64)>,
}

impl CovarianceReport {
    pub fn from_matrix(theta: &[f64], sigma: &DMatrix<f64>, level: f64) -> Self {
        let q = theta.len();
        let mut report = Self {
            theta: theta.to_vec(),
            sigma: (0..q).map(|i| sigma.row(i).iter().copied().collect()).collect(),
            se: (0..q).map(|i| sigma[(i, i)].max(0.0).sqrt()).collect(),
            ci_level: level,
            ci: Vec::new(),
        };
        report.ci = confidence_intervals(&report, level);
        report
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let q = self.theta.len();
        DMatrix::from_fn(q, q, |i, j| self.sigma[i][j])
    }
}

/// Symmetrizes and clips negative eigenvalues at zero.
pub fn nearest_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let s = (a + a.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return s;
    }
    log::warn!("clipping negative eigenvalues {:?} of a covariance estimate", eig.eigenvalues);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&m + m.transpose()) * 0.5
}

/// `J⁻¹ V J⁻¹` through two linear solves.
pub fn sandwich(j: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = j.clone().lu();
    let singular = || Error::Inference("J is singular; enlarge the subsample size r".into());
    let x = lu.solve(v).ok_or_else(singular)?;
    let y = lu.solve(&x.transpose()).ok_or_else(singular)?;
    Ok(nearest_psd(&y.transpose()))
}

/// Probabilities `π̆ᵣ ∧ 1` reconstructed from the second-step set alone.
///
/// Scores are evaluated at the pilot estimate with the pilot's gradient
/// metric and normalized by their mean over the set; without a pilot the
/// stored probabilities are used.
pub fn subsample_probs(
    sub: &SubsampleSet,
    n: usize,
    em: &Emulator,
    pilot: Option<&Pilot>,
    cfg: &SamplingConfig,
) -> Vec<f64> {
    let Some(pilot) = pilot else {
        return sub.pi().to_vec();
    };
    let scores: Vec<f64> = sub.iter().map(|(_, x, y, _)| pilot.score(em, x, y)).collect();
    let psi_r = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    scores
        .iter()
        .map(|&s| weighted_prob(s, psi_r, n, cfg.r, cfg.rho).min(1.0))
        .collect()
}

/// Sandwich covariance of a two-step estimate from its second-step set.
pub fn estimate_variance(
    sub: &SubsampleSet,
    n: usize,
    em: &Emulator,
    pilot: Option<&Pilot>,
    theta: &Estimate,
    cfg: &SamplingConfig,
) -> Result<CovarianceReport> {
    if sub.is_empty() {
        return Err(Error::Inference("empty subsample".into()));
    }
    let pi = subsample_probs(sub, n, em, pilot, cfg);
    let weights: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    let sample = WeightedSample::new(
        sub.d(),
        sub.x_flat().to_vec(),
        sub.y().to_vec(),
        weights,
        n as f64,
    )?;
    let t = &theta.theta;
    let j = wls_hess(&sample, em, t);

    let q = t.len();
    let mut v = DMatrix::zeros(q, q);
    for (k, (_, x, y, _)) in sub.iter().enumerate() {
        let (yhat, g): (f64, DVector<f64>) = em.value_grad(x, t);
        let c = (1.0 - pi[k]) / (pi[k] * pi[k]) * (y - yhat).powi(2);
        v += &g * g.transpose() * c;
    }
    v *= 4.0 / (n as f64 * n as f64);

    let sigma = sandwich(&j, &v)?;
    Ok(CovarianceReport::from_matrix(t, &sigma, 0.95))
}

/// `θⱼ ± z·seⱼ` with the standard normal quantile `z = Φ⁻¹((1 + level)/2)`.
pub fn confidence_intervals(report: &CovarianceReport, level: f64) -> Vec<(f64, f64)> {
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    report
        .theta
        .iter()
        .zip(&report.se)
        .map(|(t, s)| (t - z * s, t + z * s))
        .collect()
}

/// Conditional AMSE `(4/n²) Σ (1/πᵢ − 1)·(hᵢᵐⱽ)²` of a single-step estimate
/// drawn with arbitrary probabilities.
pub fn amse_for_probs(h_mv: &[f64], pi: &[f64], n: usize) -> f64 {
    let n = n as f64;
    4.0 / (n * n)
        * h_mv
            .iter()
            .zip(pi)
            .map(|(h, p)| (1.0 / p - 1.0) * h * h)
            .sum::<f64>()
}

/// AMSE of a single-step estimate drawn with probabilities optimal for the
/// scores `h_used`; the `k` points with the largest `h_used` are kept with
/// probability one and drop out of both sums.
pub fn amse_single(h_mv: &[f64], h_used: &[f64], r: f64, k: usize, n: usize) -> f64 {
    let mut order: Vec<usize> = (0..h_used.len()).collect();
    order.sort_by(|&a, &b| h_used[a].total_cmp(&h_used[b]));
    let kept = &order[..order.len() - k];
    let sum_used: f64 = kept.iter().map(|&i| h_used[i]).sum();
    let ratio: f64 = kept.iter().map(|&i| h_mv[i] * h_mv[i] / h_used[i]).sum();
    let sq: f64 = kept.iter().map(|&i| h_mv[i] * h_mv[i]).sum();
    let n = n as f64;
    4.0 / (n * n * (r - k as f64)) * sum_used * ratio - 4.0 / (n * n) * sq
}

/// AMSE of the two-step estimate with mixing weight `rho`; `h_crit` is the
/// score of the criterion used (`h_mv` itself for mV).
pub fn amse_two_step(h_mv: &[f64], h_crit: &[f64], rho: f64, r: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = h_crit.iter().sum::<f64>() / nf;
    let s: f64 = h_mv
        .iter()
        .zip(h_crit)
        .map(|(hm, hc)| hm * hm / ((1.0 - rho) * hc + rho * mean))
        .sum();
    let sq: f64 = h_mv.iter().map(|h| h * h).sum();
    4.0 / (nf * r) * mean * s - 4.0 / (nf * nf) * sq
}
