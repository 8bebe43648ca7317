//! Gaussian-process emulator with a constant mean and an anisotropic
//! squared-exponential kernel.
//!
//! Inputs are rescaled to the unit cube over `Ω × Θ`. The process variance and
//! the mean are profiled out of the likelihood, so the hyperparameter search
//! runs over the log-lengthscales only. The nugget is relative to the process
//! variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_in_box, Interval};
use crate::optim::{minimize_box, BoxOptions};
use crate::rng;

use super::design::random_lhd;

pub const GP_FORMAT: &str = "calsub.gp";
pub const GP_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct GpOptions {
    pub n_starts: usize,
    pub max_iters: usize,
    pub nugget: f64,
    pub max_nugget: f64,
    /// Lengthscale search range in unit-cube coordinates.
    pub lengthscale_range: (f64, f64),
    pub seed: u64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iters: 200,
            nugget: 1e-8,
            max_nugget: 1e-2,
            lengthscale_range: (0.02, 10.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
}

#[derive(Debug, Clone)]
pub struct GpEmulator {
    d: usize,
    bounds: Vec<Interval>,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    unit: Vec<f64>,
    hyper: GpHyper,
    signal_variance: f64,
    mean: f64,
    weights: DVector<f64>,
}

/// The JSON form of a fitted emulator. The factorization is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpDocument {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub q: usize,
    pub bounds: Vec<Interval>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
    pub mean: f64,
}

struct Profile {
    chol: Cholesky<f64, Dyn>,
    mean: f64,
    signal_variance: f64,
    weights: DVector<f64>,
    nll: f64,
}

fn to_unit(z: &[f64], bounds: &[Interval]) -> Vec<f64> {
    z.iter()
        .zip(bounds.iter().cycle())
        .map(|(v, b)| (v - b.lo) / b.width())
        .collect()
}

fn correlation(unit: &[f64], dims: usize, ls: &[f64]) -> DMatrix<f64> {
    let m = unit.len() / dims;
    let mut r = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..i {
            let s: f64 = (0..dims)
                .map(|l| {
                    let t = (unit[i * dims + l] - unit[j * dims + l]) / ls[l];
                    t * t
                })
                .sum();
            let v = (-0.5 * s).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Profiles mean and variance at fixed lengthscales and nugget.
fn profile(r: &DMatrix<f64>, y: &DVector<f64>, nugget: f64) -> Option<Profile> {
    let m = y.len();
    let mut k = r.clone();
    for i in 0..m {
        k[(i, i)] += nugget;
    }
    let chol = k.cholesky()?;
    let ones = DVector::from_element(m, 1.0);
    let k_inv_1 = chol.solve(&ones);
    let k_inv_y = chol.solve(y);
    let mean = k_inv_y.sum() / k_inv_1.sum();
    let centered = y.map(|v| v - mean);
    let weights = chol.solve(&centered);
    let signal_variance = centered.dot(&weights) / m as f64;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nll = m as f64 * signal_variance.max(f64::MIN_POSITIVE).ln() + log_det;
    Some(Profile {
        chol,
        mean,
        signal_variance,
        weights,
        nll,
    })
}

/// Tries the nugget and escalates it ×10 until the factorization succeeds.
fn profile_escalating(
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    nugget: f64,
    max_nugget: f64,
) -> Option<(Profile, f64)> {
    let mut g = nugget;
    loop {
        if let Some(p) = profile(r, y, g) {
            return Some((p, g));
        }
        if g >= max_nugget {
            return None;
        }
        g = (g * 10.0).min(max_nugget);
    }
}

impl GpEmulator {
    /// Fits hyperparameters by maximizing the profiled marginal likelihood.
    ///
    /// `inputs` holds `m` rows of `(x, θ)` in original units; `bounds` is
    /// `Ω × Θ` and its first `d` entries belong to `x`.
    pub fn fit(
        inputs: &[f64],
        outputs: &[f64],
        d: usize,
        bounds: &[Interval],
        opts: &GpOptions,
    ) -> Result<Self> {
        let dims = bounds.len();
        let m = outputs.len();
        if dims <= d || inputs.len() != m * dims {
            return Err(Error::Dimension {
                what: "GP training inputs",
                expected: m * dims,
                got: inputs.len(),
            });
        }
        if m < dims + 2 {
            return Err(Error::Fit(format!("need at least {} runs, got {m}", dims + 2)));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("training outputs must be finite".into()));
        }
        let unit = to_unit(inputs, bounds);
        let y = DVector::from_column_slice(outputs);

        let (lo, hi) = opts.lengthscale_range;
        let spread = y.max() - y.min();
        let lengthscales = if spread == 0.0 {
            vec![0.5; dims]
        } else {
            let log_box = vec![Interval::new(lo.ln(), hi.ln()); dims];
            let nll = |log_ls: &[f64]| -> (f64, DVector<f64>) {
                nll_and_grad(&unit, dims, &y, log_ls, opts.nugget, opts.max_nugget)
            };
            let mut starts = vec![vec![0.5f64.ln(); dims]];
            let mut r = rng::substream(opts.seed, &[rng::label("gp-starts")]);
            let lhd = random_lhd(opts.n_starts.saturating_sub(1).max(1), dims, &mut r);
            starts.extend(
                lhd.scaled_to(&log_box)
                    .chunks_exact(dims)
                    .take(opts.n_starts.saturating_sub(1))
                    .map(<[f64]>::to_vec),
            );
            let box_opts = BoxOptions {
                gtol: 1e-6,
                xtol: 1e-8,
                max_iters: opts.max_iters,
            };
            let best = starts
                .iter()
                .map(|s| minimize_box(nll, s, &log_box, &box_opts, None))
                .filter(|r| r.f.is_finite())
                .min_by(|a, b| a.f.total_cmp(&b.f))
                .ok_or_else(|| {
                    Error::Fit("likelihood undefined at every start; deduplicate the design".into())
                })?;
            best.x.iter().map(|v| v.exp()).collect()
        };

        let r = correlation(&unit, dims, &lengthscales);
        let (p, nugget) = profile_escalating(&r, &y, opts.nugget, opts.max_nugget).ok_or_else(|| {
            Error::Fit(format!(
                "kernel matrix is not positive definite even with nugget {}; \
                 use a larger nugget or remove duplicated design points",
                opts.max_nugget
            ))
        })?;
        Ok(Self {
            d,
            bounds: bounds.to_vec(),
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            unit,
            hyper: GpHyper {
                lengthscales,
                nugget,
            },
            signal_variance: p.signal_variance,
            mean: p.mean,
            weights: p.weights,
        })
    }

    /// Conditions on `outputs` at fixed hyperparameters; the mean is still
    /// the generalized least-squares estimate, so predictions are linear in
    /// `outputs`.
    pub fn with_hyper(
        inputs: &[f64],
        outputs: &[f64],
        d: usize,
        bounds: &[Interval],
        hyper: &GpHyper,
    ) -> Result<Self> {
        let dims = bounds.len();
        if hyper.lengthscales.len() != dims || inputs.len() != outputs.len() * dims {
            return Err(Error::Dimension {
                what: "GP lengthscales",
                expected: dims,
                got: hyper.lengthscales.len(),
            });
        }
        let unit = to_unit(inputs, bounds);
        let y = DVector::from_column_slice(outputs);
        let r = correlation(&unit, dims, &hyper.lengthscales);
        let p = profile(&r, &y, hyper.nugget).ok_or_else(|| {
            Error::Fit(format!(
                "kernel matrix is not positive definite with nugget {}",
                hyper.nugget
            ))
        })?;
        Ok(Self {
            d,
            bounds: bounds.to_vec(),
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            unit,
            hyper: hyper.clone(),
            signal_variance: p.signal_variance,
            mean: p.mean,
            weights: p.weights,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.bounds.len() - self.d
    }

    pub fn m(&self) -> usize {
        self.outputs.len()
    }

    pub fn omega(&self) -> &[Interval] {
        &self.bounds[..self.d]
    }

    pub fn theta_box(&self) -> &[Interval] {
        &self.bounds[self.d..]
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn training_inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn training_outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn check_domain(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        check_in_box("x", x, self.omega())?;
        check_in_box("theta", theta, self.theta_box())
    }

    fn unit_of(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        x.iter()
            .chain(theta)
            .zip(&self.bounds)
            .map(|(v, b)| (v - b.lo) / b.width())
            .collect()
    }

    /// Posterior mean; `O(m)` per call.
    pub fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        let u = self.unit_of(x, theta);
        let dims = self.bounds.len();
        let ls = &self.hyper.lengthscales;
        self.mean
            + self
                .unit
                .chunks_exact(dims)
                .zip(self.weights.iter())
                .map(|(row, w)| {
                    let s: f64 = (0..dims).map(|l| ((u[l] - row[l]) / ls[l]).powi(2)).sum();
                    w * (-0.5 * s).exp()
                })
                .sum::<f64>()
    }

    /// Posterior mean with its first and (optionally) second θ-derivatives.
    pub fn value_derivs(
        &self,
        x: &[f64],
        theta: &[f64],
        with_hess: bool,
    ) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let u = self.unit_of(x, theta);
        let dims = self.bounds.len();
        let d = self.d;
        let q = dims - d;
        let ls = &self.hyper.lengthscales;
        // chain-rule factor from unit coordinates back to θ units
        let scale: Vec<f64> = (0..q)
            .map(|a| 1.0 / (ls[d + a] * ls[d + a] * self.bounds[d + a].width()))
            .collect();
        let mut value = self.mean;
        let mut grad = DVector::zeros(q);
        let mut hess = with_hess.then(|| DMatrix::zeros(q, q));
        let mut delta = vec![0.0; q];
        for (row, w) in self.unit.chunks_exact(dims).zip(self.weights.iter()) {
            let s: f64 = (0..dims).map(|l| ((u[l] - row[l]) / ls[l]).powi(2)).sum();
            let k = w * (-0.5 * s).exp();
            value += k;
            for a in 0..q {
                delta[a] = (u[d + a] - row[d + a]) * scale[a];
                grad[a] -= k * delta[a];
            }
            if let Some(h) = hess.as_mut() {
                for a in 0..q {
                    for b in 0..=a {
                        let mut v = delta[a] * delta[b];
                        if a == b {
                            v -= scale[a] / self.bounds[d + a].width();
                        }
                        h[(a, b)] += k * v;
                    }
                }
            }
        }
        if let Some(h) = hess.as_mut() {
            for a in 0..q {
                for b in 0..a {
                    h[(b, a)] = h[(a, b)];
                }
            }
        }
        (value, grad, hess)
    }

    pub fn to_document(&self) -> GpDocument {
        let dims = self.bounds.len();
        GpDocument {
            format: GP_FORMAT.to_string(),
            version: GP_VERSION,
            d: self.d,
            q: self.q(),
            bounds: self.bounds.clone(),
            inputs: self.inputs.chunks_exact(dims).map(<[f64]>::to_vec).collect(),
            outputs: self.outputs.clone(),
            lengthscales: self.hyper.lengthscales.clone(),
            signal_variance: self.signal_variance,
            nugget: self.hyper.nugget,
            mean: self.mean,
        }
    }

    pub fn from_document(doc: &GpDocument) -> Result<Self> {
        if doc.format != GP_FORMAT || doc.version != GP_VERSION {
            return Err(Error::Config(format!(
                "unsupported emulator document {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.bounds.len() != doc.d + doc.q {
            return Err(Error::Dimension {
                what: "emulator bounds",
                expected: doc.d + doc.q,
                got: doc.bounds.len(),
            });
        }
        let inputs: Vec<f64> = doc.inputs.iter().flatten().copied().collect();
        let hyper = GpHyper {
            lengthscales: doc.lengthscales.clone(),
            nugget: doc.nugget,
        };
        Self::with_hyper(&inputs, &doc.outputs, doc.d, &doc.bounds, &hyper)
    }
}

/// Profiled negative log-likelihood and its gradient in log-lengthscales.
fn nll_and_grad(
    unit: &[f64],
    dims: usize,
    y: &DVector<f64>,
    log_ls: &[f64],
    nugget: f64,
    max_nugget: f64,
) -> (f64, DVector<f64>) {
    let ls: Vec<f64> = log_ls.iter().map(|v| v.exp()).collect();
    let r = correlation(unit, dims, &ls);
    let Some((p, _)) = profile_escalating(&r, y, nugget, max_nugget) else {
        return (f64::INFINITY, DVector::zeros(dims));
    };
    let m = y.len();
    let k_inv = p.chol.inverse();
    let tau2 = p.signal_variance.max(f64::MIN_POSITIVE);
    let beta = &p.weights;
    let grad = DVector::from_iterator(
        dims,
        (0..dims).map(|l| {
            let mut trace = 0.0;
            let mut quad = 0.0;
            for i in 0..m {
                for j in 0..i {
                    let t = (unit[i * dims + l] - unit[j * dims + l]) / ls[l];
                    let dk = r[(i, j)] * t * t;
                    trace += 2.0 * k_inv[(i, j)] * dk;
                    quad += 2.0 * beta[i] * beta[j] * dk;
                }
            }
            trace - quad / tau2
        }),
    );
    (p.nll, grad)
}
