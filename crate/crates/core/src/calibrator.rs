//! Weighted least-squares calibration.
//!
//! The loss is `l(θ) = (1/n_ref) Σᵢ wᵢ (yᵢ − ŷˢ(xᵢ, θ))²`. With unit weights and
//! `n_ref = n` it is the full-data OLS loss; with `wᵢ = 1/πᵢ` over a Poisson
//! subsample it is the inverse-probability-weighted loss, an unbiased
//! estimate of the full-data loss.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::{random_lhd, Emulator};
use crate::error::{Error, Result};
use crate::model::{check_in_box, PhysicalData};
use crate::optim::{minimize_box, BoxOptions};
use crate::rng;
use crate::subsampler::SubsampleSet;

const PAR_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    n_ref: f64,
}

impl WeightedSample {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>, w: Vec<f64>, n_ref: f64) -> Result<Self> {
        if x.len() != y.len() * d || w.len() != y.len() {
            return Err(Error::Dimension {
                what: "weighted sample entries",
                expected: y.len() * d,
                got: x.len(),
            });
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Estimation(format!("weight {} at index {i} is not positive", w[i])));
        }
        if !(n_ref > 0.0) {
            return Err(Error::Estimation(format!("n_ref must be positive, got {n_ref}")));
        }
        Ok(Self { d, x, y, w, n_ref })
    }

    /// Unit weights normalized by the sample size: the OLS loss.
    pub fn unweighted(data: &PhysicalData) -> Self {
        Self {
            d: data.d(),
            x: data.x_flat().to_vec(),
            y: data.y().to_vec(),
            w: vec![1.0; data.n()],
            n_ref: data.n() as f64,
        }
    }

    /// Weights `1/πᵢ` normalized by the full-data size `n`.
    pub fn from_subsample(sub: &SubsampleSet, n: usize) -> Result<Self> {
        Self::new(
            sub.d(),
            sub.x_flat().to_vec(),
            sub.y().to_vec(),
            sub.pi().iter().map(|p| 1.0 / p).collect(),
            n as f64,
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_ref(&self) -> f64 {
        self.n_ref
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Same points with all weights multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w: self.w.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    /// Fixed-order map-reduce over points; chunks run in parallel for
    /// large samples and are summed in index order.
    fn reduce<T, F, A>(&self, zero: T, map: F, add: A) -> T
    where
        T: Clone + Send + Sync,
        F: Fn(&[f64], f64, f64) -> T + Sync,
        A: Fn(T, T) -> T + Sync,
    {
        let chunk = |range: std::ops::Range<usize>| {
            range.fold(zero.clone(), |acc, i| add(acc, map(self.row(i), self.y[i], self.w[i])))
        };
        let n = self.len();
        if n <= PAR_CHUNK {
            return chunk(0..n);
        }
        let parts: Vec<T> = (0..n.div_ceil(PAR_CHUNK))
            .into_par_iter()
            .map(|c| chunk(c * PAR_CHUNK..((c + 1) * PAR_CHUNK).min(n)))
            .collect();
        parts.into_iter().fold(zero.clone(), &add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimOptions {
    pub gtol: f64,
    pub xtol: f64,
    pub max_iters: usize,
    pub n_starts: usize,
    pub gauss_newton: bool,
    /// Seed of the Latin-hypercube start points.
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-8,
            xtol: 1e-10,
            max_iters: 500,
            n_starts: 5,
            gauss_newton: false,
            seed: 0,
        }
    }
}

pub fn wls_loss(s: &WeightedSample, em: &Emulator, theta: &[f64]) -> f64 {
    s.reduce(
        0.0,
        |x, y, w| {
            let r = y - em.value(x, theta);
            w * r * r
        },
        |a, b| a + b,
    ) / s.n_ref
}

pub fn wls_loss_grad(s: &WeightedSample, em: &Emulator, theta: &[f64]) -> (f64, DVector<f64>) {
    let q = theta.len();
    let (sum, g) = s.reduce(
        (0.0, DVector::zeros(q)),
        |x, y, w| {
            let (v, g) = em.value_grad(x, theta);
            let r = v - y;
            (w * r * r, g * (2.0 * w * r))
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    );
    (sum / s.n_ref, g / s.n_ref)
}

pub fn wls_grad(s: &WeightedSample, em: &Emulator, theta: &[f64]) -> DVector<f64> {
    wls_loss_grad(s, em, theta).1
}

/// `(2/n_ref) Σ wᵢ [∇ŷ ∇ŷᵀ + (ŷ − yᵢ) ∇²ŷ]`, symmetric by construction.
pub fn wls_hess(s: &WeightedSample, em: &Emulator, theta: &[f64]) -> DMatrix<f64> {
    let q = theta.len();
    let h = s.reduce(
        DMatrix::zeros(q, q),
        |x, y, w| {
            let (v, g, h) = em.value_grad_hess(x, theta);
            (&g * g.transpose() + h * (v - y)) * (2.0 * w)
        },
        |a, b| a + b,
    ) / s.n_ref;
    crate::model::symmetrize(h)
}

/// Gauss–Newton part of [`wls_hess`].
pub fn gauss_newton_matrix(s: &WeightedSample, em: &Emulator, theta: &[f64]) -> DMatrix<f64> {
    let q = theta.len();
    s.reduce(
        DMatrix::zeros(q, q),
        |x, _, w| {
            let (_, g) = em.value_grad(x, theta);
            &g * g.transpose() * (2.0 * w)
        },
        |a, b| a + b,
    ) / s.n_ref
}

/// The J-matrix estimator: the loss Hessian at `theta`. The weights and
/// `n_ref` of `s` select between the full-data, pilot and subsample forms.
pub fn estimate_j(s: &WeightedSample, em: &Emulator, theta: &[f64]) -> DMatrix<f64> {
    wls_hess(s, em, theta)
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

/// Multi-start box-constrained quasi-Newton minimization of [`wls_loss`].
///
/// Starts from `theta_init` plus `opts.n_starts` Latin-hypercube points over
/// `Θ` and keeps the lowest loss; losses within `1e-12` are broken by the
/// lexicographically smallest θ.
pub fn minimize(
    s: &WeightedSample,
    em: &Emulator,
    theta_init: &[f64],
    opts: &OptimOptions,
) -> Result<Estimate> {
    if s.is_empty() {
        return Err(Error::Estimation("cannot fit an empty sample".into()));
    }
    let bounds = em.theta_box();
    check_in_box("theta_init", theta_init, bounds)?;
    let q = bounds.len();

    let mut starts = vec![theta_init.to_vec()];
    if opts.n_starts > 0 {
        let mut r = rng::substream(opts.seed, &[rng::label("optim-starts"), q as u64]);
        let lhd = random_lhd(opts.n_starts, q, &mut r).scaled_to(bounds);
        starts.extend(lhd.chunks_exact(q).map(<[f64]>::to_vec));
    }

    let box_opts = BoxOptions {
        gtol: opts.gtol,
        xtol: opts.xtol,
        max_iters: opts.max_iters,
    };
    let fg = |t: &[f64]| wls_loss_grad(s, em, t);
    let gn = |t: &[f64]| gauss_newton_matrix(s, em, t);
    let curvature: Option<&dyn Fn(&[f64]) -> DMatrix<f64>> =
        if opts.gauss_newton { Some(&gn) } else { None };

    let mut best: Option<Estimate> = None;
    let mut any_ok = false;
    for start in &starts {
        let r = minimize_box(fg, start, bounds, &box_opts, curvature);
        any_ok |= r.converged || r.f < r.f_init;
        let est = Estimate {
            theta: r.x,
            loss: r.f,
            converged: r.converged,
            iterations: r.iterations,
            grad_norm: r.grad_norm,
        };
        if !est.loss.is_finite() {
            continue;
        }
        let replace = match &best {
            None => true,
            Some(b) => {
                let tie = (est.loss - b.loss).abs() <= 1e-12 * (1.0 + b.loss.abs());
                if tie {
                    lex_less(&est.theta, &b.theta)
                } else {
                    est.loss < b.loss
                }
            }
        };
        if replace {
            best = Some(est);
        }
    }
    let best = best.ok_or_else(|| Error::Estimation("loss is not finite at any start".into()))?;
    if !any_ok {
        return Err(Error::NonConvergence {
            best: Box::new(best),
        });
    }
    Ok(best)
}

fn box_centre(em: &Emulator) -> Vec<f64> {
    em.theta_box().iter().map(|b| 0.5 * (b.lo + b.hi)).collect()
}

/// Full-data OLS estimate `θ̂`.
pub fn fit_ols(data: &PhysicalData, em: &Emulator, opts: &OptimOptions) -> Result<Estimate> {
    fit_ols_from(data, em, &box_centre(em), opts)
}

pub fn fit_ols_from(
    data: &PhysicalData,
    em: &Emulator,
    theta_init: &[f64],
    opts: &OptimOptions,
) -> Result<Estimate> {
    minimize(&WeightedSample::unweighted(data), em, theta_init, opts)
}

/// Inverse-probability-weighted estimate from a Poisson subsample of a data
/// set of size `n`; the stored probabilities must already be clamped to `(0, 1]`.
pub fn fit_ipwls(
    sub: &SubsampleSet,
    n: usize,
    em: &Emulator,
    opts: &OptimOptions,
) -> Result<Estimate> {
    if sub.is_empty() {
        return Err(Error::Estimation(
            "empty subsample; resample or enlarge the expected size r".into(),
        ));
    }
    minimize(&WeightedSample::from_subsample(sub, n)?, em, &box_centre(em), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::model::{
        generate_physical_data, ComputerModel, DesignSource, Example1, Example2, GenConfig,
        Interval, TrueProcess,
    };

    fn example1() -> (Emulator, Arc<dyn ComputerModel>) {
        let m: Arc<dyn ComputerModel> = Arc::new(Example1::default());
        (Emulator::pass_through(m.clone()), m)
    }

    fn example1_data(n: usize, sigma: f64, seed: u64) -> PhysicalData {
        let (_, m) = example1();
        generate_physical_data(
            &GenConfig {
                truth: TrueProcess::Model {
                    model: m.clone(),
                    theta: vec![0.2, 0.3],
                },
                omega: m.omega().to_vec(),
                sigma,
                seed,
                design: DesignSource::Uniform,
            },
            n,
        )
        .unwrap()
    }

    #[test]
    fn loss_arithmetic() {
        let (em, m) = example1();
        let x = [0.3];
        let t = [0.1, 0.2];
        let y = m.value(&x, &t) + 3.0;
        let s = WeightedSample::new(1, x.to_vec(), vec![y], vec![2.0], 4.0).unwrap();
        assert!((wls_loss(&s, &em, &t) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn zero_residuals_give_zero_loss_and_gradient() {
        let (em, _) = example1();
        let data = example1_data(50, 0.0, 1);
        let s = WeightedSample::unweighted(&data);
        let (l, g) = wls_loss_grad(&s, &em, &[0.2, 0.3]);
        assert!(l.abs() < 1e-24);
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn unit_weights_give_the_ols_loss() {
        let (em, _) = example1();
        let data = example1_data(200, 0.2, 2);
        let t = [0.15, 0.35];
        let direct: f64 = data
            .rows()
            .map(|(x, y)| (y - em.value(x, &t)).powi(2))
            .sum::<f64>()
            / 200.0;
        assert!((wls_loss(&WeightedSample::unweighted(&data), &em, &t) - direct).abs() < 1e-12);
    }

    fn random_weighted(n: usize, seed: u64) -> WeightedSample {
        let data = example1_data(n, 0.3, seed);
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.5).collect();
        WeightedSample::new(1, data.x_flat().to_vec(), data.y().to_vec(), w, 3.0 * n as f64).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_of_loss() {
        let (em, _) = example1();
        let s = random_weighted(300, 3);
        let bounds = em.theta_box().to_vec();
        let mut r = rng::substream(4, &[]);
        use rand::Rng;
        for _ in 0..20 {
            let t: Vec<f64> = bounds.iter().map(|b| b.lo + b.width() * (0.05 + 0.9 * r.random::<f64>())).collect();
            let g = wls_grad(&s, &em, &t);
            let fd = crate::model::fd_grad(|th| wls_loss(&s, &em, th), &t, &bounds);
            assert!((&g - &fd).amax() / g.amax().max(1.0) < 1e-5, "{g} vs {fd}");
            let h = wls_hess(&s, &em, &t);
            let fdh = crate::model::fd_hess_from_grad(|th| wls_grad(&s, &em, th), &t, &bounds);
            assert!((&h - &fdh).amax() / h.amax().max(1.0) < 1e-3);
            assert_eq!(h, h.transpose());
        }
    }

    #[test]
    fn linear_model_hessian_is_gauss_newton() {
        let m: Arc<dyn ComputerModel> = Arc::new(Example2::default());
        let em = Emulator::pass_through(m.clone());
        let data = generate_physical_data(
            &GenConfig {
                truth: TrueProcess::Example2,
                omega: m.omega().to_vec(),
                sigma: 0.1,
                seed: 3,
                design: DesignSource::Uniform,
            },
            100,
        )
        .unwrap();
        let s = WeightedSample::unweighted(&data);
        let t = [0.4, -1.0];
        let h = wls_hess(&s, &em, &t);
        let mut gn = DMatrix::zeros(2, 2);
        for (x, _) in data.rows() {
            let g = m.grad_theta(x, &t).unwrap();
            gn += &g * g.transpose();
        }
        gn *= 2.0 / 100.0;
        assert!((&h - &gn).amax() < 1e-9 * gn.amax());
    }

    #[test]
    fn stationary_start_stays_put() {
        let (em, _) = example1();
        let data = example1_data(500, 0.0, 5);
        let opts = OptimOptions {
            n_starts: 0,
            ..Default::default()
        };
        let e = fit_ols_from(&data, &em, &[0.2, 0.3], &opts).unwrap();
        assert_eq!(e.theta, vec![0.2, 0.3]);
        assert!(e.converged);
    }

    #[test]
    fn full_data_ols_recovers_example1() {
        let (em, _) = example1();
        let data = example1_data(10_000, 0.2, 6);
        let e = fit_ols(&data, &em, &OptimOptions::default()).unwrap();
        let err = ((e.theta[0] - 0.2).powi(2) + (e.theta[1] - 0.3).powi(2)).sqrt();
        assert!(err < 0.01, "{e:?}");
        // first-order condition at the optimum
        let g = wls_grad(&WeightedSample::unweighted(&data), &em, &e.theta);
        assert!(e.converged, "{e:?}");
        assert!(g.norm() <= OptimOptions::default().gtol * (1.0 + e.loss), "{g}");
        let j = estimate_j(&WeightedSample::unweighted(&data), &em, &e.theta);
        assert!(j.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn full_data_ols_recovers_example2() {
        let m: Arc<dyn ComputerModel> = Arc::new(Example2::default());
        let em = Emulator::pass_through(m.clone());
        let data = generate_physical_data(
            &GenConfig {
                truth: TrueProcess::Example2,
                omega: m.omega().to_vec(),
                sigma: 0.1,
                seed: 8,
                design: DesignSource::LatinHypercube,
            },
            10_000,
        )
        .unwrap();
        let e = fit_ols(&data, &em, &OptimOptions::default()).unwrap();
        assert!((e.theta[0] - 0.9134).abs() < 0.01, "{e:?}");
        assert!((e.theta[1] - 0.2839).abs() < 0.01, "{e:?}");
    }

    #[test]
    fn weight_scaling_keeps_the_argmin() {
        let (em, _) = example1();
        let s = random_weighted(400, 9);
        let opts = OptimOptions::default();
        let a = minimize(&s, &em, &[0.1, 0.1], &opts).unwrap();
        let b = minimize(&s.scaled(2.0), &em, &[0.1, 0.1], &opts).unwrap();
        for j in 0..2 {
            assert!((a.theta[j] - b.theta[j]).abs() < 1e-7, "{a:?} {b:?}");
        }
    }

    #[test]
    fn never_worse_than_the_start() {
        let (em, _) = example1();
        let s = random_weighted(200, 10);
        for init in [[0.0, 0.0], [0.25, 0.5], [0.1, 0.45]] {
            let e = minimize(&s, &em, &init, &OptimOptions::default()).unwrap();
            assert!(e.loss <= wls_loss(&s, &em, &init));
            assert!(em.theta_box().iter().zip(&e.theta).all(|(b, v)| b.contains(*v)));
        }
    }

    #[test]
    fn gauss_newton_toggle_finds_the_same_optimum() {
        let (em, _) = example1();
        let s = random_weighted(400, 11);
        let a = minimize(&s, &em, &[0.1, 0.1], &OptimOptions::default()).unwrap();
        let b = minimize(
            &s,
            &em,
            &[0.1, 0.1],
            &OptimOptions {
                gauss_newton: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((a.loss - b.loss).abs() < 1e-9 * (1.0 + a.loss));
    }

    #[test]
    fn empty_subsample_is_an_estimation_error() {
        let (em, _) = example1();
        let empty = SubsampleSet::empty(1, 0.0);
        assert!(matches!(
            fit_ipwls(&empty, 10, &em, &OptimOptions::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(WeightedSample::new(1, vec![0.1], vec![1.0], vec![0.0], 1.0).is_err());
        assert!(WeightedSample::new(1, vec![0.1], vec![1.0], vec![f64::NAN], 1.0).is_err());
        let _ = Interval::new(0.0, 1.0);
    }
}
