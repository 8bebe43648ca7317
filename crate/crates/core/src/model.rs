//! Computer models, the built-in test models and synthetic physical data.
//!
//! A [`ComputerModel`] is a deterministic map `(x, θ) -> ℝ` over a box `Ω × Θ`.
//! Derivatives in `θ` come from the model when it provides them and from
//! finite differences otherwise.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

pub(crate) fn check_in_box(what: &'static str, v: &[f64], bounds: &[Interval]) -> Result<()> {
    if v.len() != bounds.len() {
        return Err(Error::Dimension {
            what,
            expected: bounds.len(),
            got: v.len(),
        });
    }
    for (index, (&value, b)) in v.iter().zip(bounds).enumerate() {
        if !b.contains(value) {
            return Err(Error::Domain {
                what,
                index,
                value,
                lo: b.lo,
                hi: b.hi,
            });
        }
    }
    Ok(())
}

/// A deterministic simulator `yˢ(x, θ)`.
///
/// Implementors supply [`value`](ComputerModel::value) and may override the
/// analytic derivative hooks. The checked entry points [`evaluate`],
/// [`grad_theta`] and [`hess_theta`] validate the domain first.
///
/// [`evaluate`]: ComputerModel::evaluate
/// [`grad_theta`]: ComputerModel::grad_theta
/// [`hess_theta`]: ComputerModel::hess_theta
pub trait ComputerModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn omega(&self) -> &[Interval];
    fn theta_box(&self) -> &[Interval];

    /// Unchecked evaluation; callers guarantee `x ∈ Ω` and `θ ∈ Θ`.
    fn value(&self, x: &[f64], theta: &[f64]) -> f64;

    fn analytic_grad(&self, _x: &[f64], _theta: &[f64]) -> Option<DVector<f64>> {
        None
    }

    fn analytic_hess(&self, _x: &[f64], _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn d(&self) -> usize {
        self.omega().len()
    }

    fn q(&self) -> usize {
        self.theta_box().len()
    }

    fn check_domain(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        check_in_box("x", x, self.omega())?;
        check_in_box("theta", theta, self.theta_box())
    }

    fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_domain(x, theta)?;
        Ok(self.value(x, theta))
    }

    fn grad_theta(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        self.check_domain(x, theta)?;
        Ok(self.grad_unchecked(x, theta))
    }

    fn hess_theta(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x, theta)?;
        Ok(self.hess_unchecked(x, theta))
    }

    fn grad_unchecked(&self, x: &[f64], theta: &[f64]) -> DVector<f64> {
        self.analytic_grad(x, theta)
            .unwrap_or_else(|| fd_grad(|t| self.value(x, t), theta, self.theta_box()))
    }

    fn hess_unchecked(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        if let Some(h) = self.analytic_hess(x, theta) {
            return symmetrize(h);
        }
        if self.analytic_grad(x, theta).is_some() {
            fd_hess_from_grad(
                |t| self.analytic_grad(x, t).expect("analytic gradient"),
                theta,
                self.theta_box(),
            )
        } else {
            fd_hess(|t| self.value(x, t), theta, self.theta_box())
        }
    }
}

pub(crate) fn symmetrize(h: DMatrix<f64>) -> DMatrix<f64> {
    let t = h.transpose();
    (h + t) * 0.5
}

fn step_for(theta_j: f64, scale: f64) -> f64 {
    scale * theta_j.abs().max(1.0)
}

/// Forward/backward offsets for coordinate `j`, switching to one-sided
/// differences when a central stencil would leave the box.
fn stencil(theta_j: f64, h: f64, b: Option<&Interval>) -> (f64, f64) {
    match b {
        Some(b) if theta_j + h > b.hi => (0.0, -h),
        Some(b) if theta_j - h < b.lo => (h, 0.0),
        _ => (h, -h),
    }
}

/// Central-difference gradient with steps `ε^{1/3}·max(1, |θⱼ|)`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64], bounds: &[Interval]) -> DVector<f64> {
    let scale = f64::EPSILON.cbrt();
    let mut t = theta.to_vec();
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|j| {
            let h = step_for(theta[j], scale);
            let (up, down) = stencil(theta[j], h, bounds.get(j));
            t[j] = theta[j] + up;
            let fu = f(&t);
            t[j] = theta[j] + down;
            let fd = f(&t);
            t[j] = theta[j];
            (fu - fd) / (up - down)
        }),
    )
}

/// Second differences of function values with steps `ε^{1/4}·max(1, |θⱼ|)`.
pub fn fd_hess(f: impl Fn(&[f64]) -> f64, theta: &[f64], bounds: &[Interval]) -> DMatrix<f64> {
    let q = theta.len();
    let scale = f64::EPSILON.sqrt().sqrt();
    let h: Vec<f64> = theta.iter().map(|&v| step_for(v, scale)).collect();
    // keep the stencil inside the box by shifting its centre
    let centre: Vec<f64> = theta
        .iter()
        .zip(&h)
        .enumerate()
        .map(|(j, (&v, &hj))| match bounds.get(j) {
            Some(b) if b.width() > 2.0 * hj => v.clamp(b.lo + hj, b.hi - hj),
            _ => v,
        })
        .collect();
    let f0 = f(&centre);
    let mut t = centre.clone();
    let mut out = DMatrix::zeros(q, q);
    for j in 0..q {
        t[j] = centre[j] + h[j];
        let fp = f(&t);
        t[j] = centre[j] - h[j];
        let fm = f(&t);
        t[j] = centre[j];
        out[(j, j)] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
        for k in 0..j {
            let mut eval = |sj: f64, sk: f64| {
                t[j] = centre[j] + sj * h[j];
                t[k] = centre[k] + sk * h[k];
                let v = f(&t);
                t[j] = centre[j];
                t[k] = centre[k];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[j] * h[k]);
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    out
}

/// Central differences of an analytic gradient, symmetrized.
pub fn fd_hess_from_grad(
    g: impl Fn(&[f64]) -> DVector<f64>,
    theta: &[f64],
    bounds: &[Interval],
) -> DMatrix<f64> {
    let q = theta.len();
    let scale = f64::EPSILON.cbrt();
    let mut t = theta.to_vec();
    let mut out = DMatrix::zeros(q, q);
    for j in 0..q {
        let h = step_for(theta[j], scale);
        let (up, down) = stencil(theta[j], h, bounds.get(j));
        t[j] = theta[j] + up;
        let gu = g(&t);
        t[j] = theta[j] + down;
        let gd = g(&t);
        t[j] = theta[j];
        out.set_column(j, &((gu - gd) / (up - down)));
    }
    symmetrize(out)
}

/// `yˢ(x, θ) = 7 sin²(2πθ₁ − π) + 2(2πθ₂ − π)² sin(2πx − π)` on
/// `x ∈ [0, 1]`, `θ ∈ [0, 0.25] × [0, 0.5]`.
#[derive(Debug, Clone)]
pub struct Example1 {
    omega: [Interval; 1],
    theta_box: [Interval; 2],
}

impl Default for Example1 {
    fn default() -> Self {
        Self {
            omega: [Interval::new(0.0, 1.0)],
            theta_box: [Interval::new(0.0, 0.25), Interval::new(0.0, 0.5)],
        }
    }
}

impl ComputerModel for Example1 {
    fn name(&self) -> &str {
        "example1"
    }

    fn omega(&self) -> &[Interval] {
        &self.omega
    }

    fn theta_box(&self) -> &[Interval] {
        &self.theta_box
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        let a = 2.0 * PI * theta[0] - PI;
        let b = 2.0 * PI * theta[1] - PI;
        let s = (2.0 * PI * x[0] - PI).sin();
        7.0 * a.sin().powi(2) + 2.0 * b * b * s
    }

    fn analytic_grad(&self, x: &[f64], theta: &[f64]) -> Option<DVector<f64>> {
        let a = 2.0 * PI * theta[0] - PI;
        let b = 2.0 * PI * theta[1] - PI;
        let s = (2.0 * PI * x[0] - PI).sin();
        Some(DVector::from_vec(vec![
            28.0 * PI * a.sin() * a.cos(),
            8.0 * PI * b * s,
        ]))
    }

    fn analytic_hess(&self, x: &[f64], theta: &[f64]) -> Option<DMatrix<f64>> {
        let a = 2.0 * PI * theta[0] - PI;
        let s = (2.0 * PI * x[0] - PI).sin();
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[56.0 * PI * PI * (2.0 * a).cos(), 0.0, 0.0, 16.0 * PI * PI * s],
        ))
    }
}

/// The true process behind [`Example2`], on `x ∈ [0, 1]⁴`.
///
/// The leading term `x₁/2·[√(1 + (x₁ + x₃²)x₄/x₁²) − 1]` is evaluated as
/// `[√(x₁² + (x₁ + x₃²)x₄) − x₁]/2`, which is the same for `x₁ > 0` and stays
/// finite at `x₁ = 0`.
pub fn example2_truth(x: &[f64]) -> f64 {
    let (x1, x3, x4) = (x[0], x[2], x[3]);
    let lead = ((x1 * x1 + (x1 + x3 * x3) * x4).sqrt() - x1) / 2.0;
    lead + (x1 + 3.0 * x4) * (1.0 + x3.sin()).exp()
}

/// `yˢ(x, θ) = (θ₁ + sin(x₁)/10)·ζ(x) + θ₂(−2x₁ + x₂² + x₃²) + 0.5`, linear in θ.
#[derive(Debug, Clone)]
pub struct Example2 {
    omega: [Interval; 4],
    theta_box: [Interval; 2],
}

impl Default for Example2 {
    fn default() -> Self {
        Self {
            omega: [Interval::new(0.0, 1.0); 4],
            theta_box: [Interval::new(-5.0, 5.0); 2],
        }
    }
}

impl Example2 {
    fn basis(x: &[f64]) -> (f64, f64) {
        (example2_truth(x), -2.0 * x[0] + x[1] * x[1] + x[2] * x[2])
    }
}

impl ComputerModel for Example2 {
    fn name(&self) -> &str {
        "example2"
    }

    fn omega(&self) -> &[Interval] {
        &self.omega
    }

    fn theta_box(&self) -> &[Interval] {
        &self.theta_box
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        let (zeta, u) = Self::basis(x);
        (theta[0] + x[0].sin() / 10.0) * zeta + theta[1] * u + 0.5
    }

    fn analytic_grad(&self, x: &[f64], _theta: &[f64]) -> Option<DVector<f64>> {
        let (zeta, u) = Self::basis(x);
        Some(DVector::from_vec(vec![zeta, u]))
    }

    fn analytic_hess(&self, _x: &[f64], _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 2))
    }
}

/// Dual-regime modified Greenshields speed-density model.
///
/// `θ = (k_bp, u_f, v_f, v₀, k_jam, α)`; the input is the carriageway density
/// `k`. Speed is `u_f` below the breakpoint and
/// `v₀ + (v_f − v₀)(1 − k/k_jam)^α` at or above it. The model is flat in
/// `k_bp` away from the kink, so the analytic derivative in that coordinate
/// is zero.
#[derive(Debug, Clone)]
pub struct Greenshields {
    omega: [Interval; 1],
    theta_box: [Interval; 6],
}

impl Default for Greenshields {
    fn default() -> Self {
        Self {
            omega: [Interval::new(0.0, 180.0)],
            theta_box: [
                Interval::new(0.0, 20.0),
                Interval::new(100.0, 120.0),
                Interval::new(150.0, 220.0),
                Interval::new(0.0, 10.0),
                Interval::new(200.0, 250.0),
                Interval::new(0.0, 10.0),
            ],
        }
    }
}

impl Greenshields {
    pub const K_BP: usize = 0;
    pub const U_F: usize = 1;
    pub const V_F: usize = 2;
    pub const V_0: usize = 3;
    pub const K_JAM: usize = 4;
    pub const ALPHA: usize = 5;

    fn free_flow(k: f64, theta: &[f64]) -> bool {
        k < theta[Self::K_BP]
    }
}

impl ComputerModel for Greenshields {
    fn name(&self) -> &str {
        "greenshields"
    }

    fn omega(&self) -> &[Interval] {
        &self.omega
    }

    fn theta_box(&self) -> &[Interval] {
        &self.theta_box
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        let k = x[0];
        if Self::free_flow(k, theta) {
            return theta[Self::U_F];
        }
        let s = 1.0 - k / theta[Self::K_JAM];
        theta[Self::V_0] + (theta[Self::V_F] - theta[Self::V_0]) * s.powf(theta[Self::ALPHA])
    }

    fn analytic_grad(&self, x: &[f64], theta: &[f64]) -> Option<DVector<f64>> {
        let k = x[0];
        let mut g = DVector::zeros(6);
        if Self::free_flow(k, theta) {
            g[Self::U_F] = 1.0;
            return Some(g);
        }
        let (kjam, alpha) = (theta[Self::K_JAM], theta[Self::ALPHA]);
        let c = theta[Self::V_F] - theta[Self::V_0];
        let s = 1.0 - k / kjam;
        let p = s.powf(alpha);
        g[Self::V_F] = p;
        g[Self::V_0] = 1.0 - p;
        g[Self::K_JAM] = c * alpha * s.powf(alpha - 1.0) * k / (kjam * kjam);
        g[Self::ALPHA] = c * p * s.ln();
        Some(g)
    }

    fn analytic_hess(&self, x: &[f64], theta: &[f64]) -> Option<DMatrix<f64>> {
        let k = x[0];
        let mut h = DMatrix::zeros(6, 6);
        if Self::free_flow(k, theta) {
            return Some(h);
        }
        let (kjam, alpha) = (theta[Self::K_JAM], theta[Self::ALPHA]);
        let c = theta[Self::V_F] - theta[Self::V_0];
        let s = 1.0 - k / kjam;
        let ln_s = s.ln();
        let p = s.powf(alpha);
        let ds = k / (kjam * kjam);
        let p_k = alpha * s.powf(alpha - 1.0) * ds;
        let p_a = p * ln_s;

        let mut put = |i: usize, j: usize, v: f64| {
            h[(i, j)] = v;
            h[(j, i)] = v;
        };
        put(Self::V_F, Self::K_JAM, p_k);
        put(Self::V_F, Self::ALPHA, p_a);
        put(Self::V_0, Self::K_JAM, -p_k);
        put(Self::V_0, Self::ALPHA, -p_a);
        let p_kk = alpha * (alpha - 1.0) * s.powf(alpha - 2.0) * ds * ds
            - 2.0 * alpha * s.powf(alpha - 1.0) * k / (kjam * kjam * kjam);
        put(Self::K_JAM, Self::K_JAM, c * p_kk);
        put(
            Self::K_JAM,
            Self::ALPHA,
            c * s.powf(alpha - 1.0) * ds * (1.0 + alpha * ln_s),
        );
        put(Self::ALPHA, Self::ALPHA, c * p * ln_s * ln_s);
        Some(h)
    }
}

/// Looks up a built-in model by its string id.
pub fn builtin(id: &str) -> Result<Arc<dyn ComputerModel>> {
    match id {
        "example1" => Ok(Arc::new(Example1::default())),
        "example2" => Ok(Arc::new(Example2::default())),
        "greenshields" => Ok(Arc::new(Greenshields::default())),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub const BUILTIN_IDS: [&str; 3] = ["example1", "example2", "greenshields"];

/// Physical observations: `n` design points in `Ω` (row-major) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalData {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PhysicalData {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Size("physical data needs at least one point".into()));
        }
        if d == 0 || x.len() != y.len() * d {
            return Err(Error::Dimension {
                what: "design entries",
                expected: y.len() * d,
                got: x.len(),
            });
        }
        Ok(Self { d, x, y })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.x.chunks_exact(self.d).zip(self.y.iter().copied())
    }

    /// Checks that every design point lies in `omega`.
    pub fn check_domain(&self, omega: &[Interval]) -> Result<()> {
        self.x
            .chunks_exact(self.d)
            .try_for_each(|row| check_in_box("x", row, omega))
    }
}

/// The unknown physical response `ζ(·)`.
#[derive(Clone)]
pub enum TrueProcess {
    /// `ζ = yˢ(·, θ)` for a given model and parameter.
    Model {
        model: Arc<dyn ComputerModel>,
        theta: Vec<f64>,
    },
    /// The Example 2 surface, see [`example2_truth`].
    Example2,
    Function(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for TrueProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrueProcess::Model { model, theta } => f
                .debug_struct("Model")
                .field("model", &model.name())
                .field("theta", theta)
                .finish(),
            TrueProcess::Example2 => f.write_str("Example2"),
            TrueProcess::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl TrueProcess {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TrueProcess::Model { model, theta } => model.value(x, theta),
            TrueProcess::Example2 => example2_truth(x),
            TrueProcess::Function(f) => f(x),
        }
    }
}

/// Where the design points come from.
#[derive(Debug, Clone, Default)]
pub enum DesignSource {
    /// i.i.d. uniform on `Ω`.
    #[default]
    Uniform,
    /// A random Latin hypercube of size `n` on `Ω`.
    LatinHypercube,
    /// An explicit row-major point list; the first `n` rows are used.
    Points(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub truth: TrueProcess,
    pub omega: Vec<Interval>,
    pub sigma: f64,
    pub seed: u64,
    pub design: DesignSource,
}

/// Draws `n` observations `yᵢ = ζ(xᵢ) + eᵢ`, `eᵢ ~ N(0, σ²)`.
pub fn generate_physical_data(cfg: &GenConfig, n: usize) -> Result<PhysicalData> {
    if n == 0 {
        return Err(Error::Size("n must be at least 1".into()));
    }
    if !(cfg.sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be >= 0, got {}", cfg.sigma)));
    }
    let d = cfg.omega.len();
    let mut design_rng = rng::substream(cfg.seed, &[rng::label("design")]);
    let x: Vec<f64> = match &cfg.design {
        DesignSource::Uniform => (0..n)
            .flat_map(|_| {
                cfg.omega
                    .iter()
                    .map(|b| b.lo + b.width() * design_rng.random::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect(),
        DesignSource::LatinHypercube => {
            crate::emulator::design::random_lhd(n, d, &mut design_rng).scaled_to(&cfg.omega)
        }
        DesignSource::Points(points) => {
            if points.len() < n * d {
                return Err(Error::Size(format!(
                    "explicit design has {} points, {} requested",
                    points.len() / d.max(1),
                    n
                )));
            }
            points[..n * d].to_vec()
        }
    };

    let mut noise_rng = rng::substream(cfg.seed, &[rng::label("noise")]);
    let noise = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let y = x
        .chunks_exact(d)
        .map(|row| {
            let z = cfg.truth.eval(row);
            if cfg.sigma == 0.0 {
                z
            } else {
                z + noise.sample(&mut noise_rng)
            }
        })
        .collect();
    PhysicalData::new(d, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_point(rng: &mut impl Rng, b: &[Interval], margin: f64) -> Vec<f64> {
        b.iter()
            .map(|i| i.lo + i.width() * (margin + (1.0 - 2.0 * margin) * rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn example1_values() {
        let m = Example1::default();
        assert_relative_eq!(m.evaluate(&[0.5], &[0.25, 0.25]).unwrap(), 7.0, epsilon = 1e-12);
        assert_relative_eq!(
            m.evaluate(&[0.75], &[0.0, 0.0]).unwrap(),
            2.0 * PI * PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn example1_gradient_vanishes_in_theta1_at_quarter() {
        let m = Example1::default();
        for x in [0.0, 0.3, 0.9] {
            let g = m.grad_theta(&[x], &[0.25, 0.1]).unwrap();
            assert!(g[0].abs() < 1e-12);
        }
    }

    #[test]
    fn example1_hessian_is_diagonal() {
        let m = Example1::default();
        let h = m.hess_theta(&[0.37], &[0.1, 0.2]).unwrap();
        assert_eq!(h[(0, 1)], 0.0);
        assert_eq!(h[(1, 0)], 0.0);
    }

    #[test]
    fn out_of_domain_names_interval() {
        let m = Example1::default();
        match m.evaluate(&[0.5], &[0.3, 0.1]) {
            Err(Error::Domain { what, index, lo, hi, .. }) => {
                assert_eq!((what, index, lo, hi), ("theta", 0, 0.0, 0.25));
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(matches!(m.evaluate(&[1.5], &[0.1, 0.1]), Err(Error::Domain { what: "x", .. })));
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        for id in BUILTIN_IDS {
            let m = builtin(id).unwrap();
            let mut r = rng::substream(3, &[]);
            let x = random_point(&mut r, m.omega(), 0.0);
            let t = random_point(&mut r, m.theta_box(), 0.0);
            assert_eq!(m.value(&x, &t).to_bits(), m.value(&x, &t).to_bits());
        }
    }

    #[test]
    fn greenshields_free_flow_regime() {
        let m = Greenshields::default();
        let theta = [15.0, 110.0, 180.0, 5.0, 230.0, 3.0];
        for k in [0.5, 5.0, 14.9] {
            assert_eq!(m.evaluate(&[k], &theta).unwrap(), 110.0);
        }
        let mut other = theta;
        other[2] = 150.0;
        other[5] = 9.0;
        assert_eq!(m.evaluate(&[3.0], &other).unwrap(), 110.0);
        // the kink itself takes the congested branch
        let at_kink = m.evaluate(&[15.0], &theta).unwrap();
        let s: f64 = 1.0 - 15.0 / 230.0;
        assert_relative_eq!(at_kink, 5.0 + 175.0 * s.powi(3), epsilon = 1e-12);
    }

    #[test]
    fn example2_stable_form_matches_literal() {
        let mut r = rng::substream(11, &[]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| 0.01 + 0.99 * r.random::<f64>()).collect();
            let (x1, x3, x4) = (x[0], x[2], x[3]);
            let literal = x1 / 2.0 * ((1.0 + (x1 + x3 * x3) * x4 / (x1 * x1)).sqrt() - 1.0)
                + (x1 + 3.0 * x4) * (1.0 + x3.sin()).exp();
            assert_relative_eq!(example2_truth(&x), literal, max_relative = 1e-12);
        }
        assert!(example2_truth(&[0.0, 0.5, 0.5, 0.5]).is_finite());
    }

    #[derive(Debug)]
    struct ConstantInTheta;

    impl ComputerModel for ConstantInTheta {
        fn name(&self) -> &str {
            "constant"
        }
        fn omega(&self) -> &[Interval] {
            &[Interval { lo: 0.0, hi: 1.0 }]
        }
        fn theta_box(&self) -> &[Interval] {
            &[Interval { lo: -1.0, hi: 1.0 }, Interval { lo: -1.0, hi: 1.0 }]
        }
        fn value(&self, x: &[f64], _theta: &[f64]) -> f64 {
            x[0].exp()
        }
    }

    #[derive(Debug)]
    struct LinearInTheta;

    impl ComputerModel for LinearInTheta {
        fn name(&self) -> &str {
            "linear"
        }
        fn omega(&self) -> &[Interval] {
            &[Interval { lo: 0.0, hi: 1.0 }]
        }
        fn theta_box(&self) -> &[Interval] {
            &[Interval { lo: -2.0, hi: 2.0 }, Interval { lo: -2.0, hi: 2.0 }]
        }
        fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
            theta[0] * x[0] + theta[1] * x[0].sin()
        }
    }

    #[test]
    fn finite_difference_fallbacks_on_simple_models() {
        let g = ConstantInTheta.grad_theta(&[0.4], &[0.2, -0.3]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let h = LinearInTheta.hess_theta(&[0.7], &[0.5, 1.0]).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-6), "{h}");
        let g = LinearInTheta.grad_theta(&[0.7], &[0.5, 1.0]).unwrap();
        assert_relative_eq!(g[0], 0.7, max_relative = 1e-8);
        assert_relative_eq!(g[1], 0.7f64.sin(), max_relative = 1e-8);
    }

    #[test]
    fn one_sided_steps_at_the_box_edge() {
        let g = LinearInTheta.grad_theta(&[0.7], &[2.0, -2.0]).unwrap();
        assert_relative_eq!(g[0], 0.7, max_relative = 1e-8);
        assert_relative_eq!(g[1], 0.7f64.sin(), max_relative = 1e-8);
    }

    /// Points for derivative checks, kept away from the Greenshields kink.
    fn derivative_points(m: &dyn ComputerModel, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut r = rng::substream(21, &[rng::label(m.name())]);
        let mut out = Vec::new();
        while out.len() < count {
            let x = random_point(&mut r, m.omega(), 0.0);
            let t = random_point(&mut r, m.theta_box(), 0.05);
            if m.name() == "greenshields" && (x[0] - t[0]).abs() < 0.5 {
                continue;
            }
            out.push((x, t));
        }
        out
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for id in BUILTIN_IDS {
            let m = builtin(id).unwrap();
            for (x, t) in derivative_points(m.as_ref(), 100) {
                let a = m.grad_theta(&x, &t).unwrap();
                let f = fd_grad(|th| m.value(&x, th), &t, m.theta_box());
                let scale = a.amax().max(1.0);
                for j in 0..m.q() {
                    let err = (a[j] - f[j]).abs() / scale;
                    assert!(err < 1e-5, "{id} grad[{j}] at x={x:?} θ={t:?}: {} vs {}", a[j], f[j]);
                }
            }
        }
    }

    #[test]
    fn analytic_hessians_match_finite_differences() {
        for id in BUILTIN_IDS {
            let m = builtin(id).unwrap();
            for (x, t) in derivative_points(m.as_ref(), 100) {
                let a = m.hess_theta(&x, &t).unwrap();
                let f = fd_hess(|th| m.value(&x, th), &t, m.theta_box());
                let scale = a.amax().max(f.amax()).max(1.0);
                let err = (&a - &f).amax() / scale;
                assert!(err < 1e-3, "{id} hess at x={x:?} θ={t:?}: err {err}");
            }
        }
    }


    fn example1_gen(sigma: f64, seed: u64) -> GenConfig {
        GenConfig {
            truth: TrueProcess::Model {
                model: Arc::new(Example1::default()),
                theta: vec![0.2, 0.3],
            },
            omega: Example1::default().omega().to_vec(),
            sigma,
            seed,
            design: DesignSource::Uniform,
        }
    }

    #[test]
    fn noiseless_data_is_exact() {
        let cfg = example1_gen(0.0, 5);
        let data = generate_physical_data(&cfg, 500).unwrap();
        for (x, y) in data.rows() {
            assert_eq!(y, cfg.truth.eval(x));
        }
        data.check_domain(&cfg.omega).unwrap();
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = example1_gen(0.2, 9);
        let a = generate_physical_data(&cfg, 100).unwrap();
        let b = generate_physical_data(&cfg, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_explicit_design_is_rejected() {
        let mut cfg = example1_gen(0.1, 1);
        cfg.design = DesignSource::Points(vec![0.1, 0.2, 0.3]);
        assert!(matches!(generate_physical_data(&cfg, 4), Err(Error::Size(_))));
        assert_eq!(generate_physical_data(&cfg, 3).unwrap().n(), 3);
    }

    #[test]
    fn noise_moments_match_sigma() {
        let sigma = 0.2;
        let n = 1_000_000;
        let cfg = example1_gen(sigma, 17);
        let data = generate_physical_data(&cfg, n).unwrap();
        let e: Vec<f64> = data.rows().map(|(x, y)| y - cfg.truth.eval(x)).collect();
        let mean = e.iter().sum::<f64>() / n as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn example2_loss_minimum_on_dense_grid() {
        // noise-free loss on a fixed Latin-hypercube design
        let m = Example2::default();
        let cfg = GenConfig {
            truth: TrueProcess::Example2,
            omega: m.omega().to_vec(),
            sigma: 0.0,
            seed: 2,
            design: DesignSource::LatinHypercube,
        };
        let data = generate_physical_data(&cfg, 10_000).unwrap();
        let step = 0.005;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=40 {
            for j in 0..=40 {
                let t = [0.8 + step * i as f64, 0.18 + step * j as f64];
                let loss: f64 = data.rows().map(|(x, y)| (y - m.value(x, &t)).powi(2)).sum();
                if loss < best.0 {
                    best = (loss, t[0], t[1]);
                }
            }
        }
        // population optimum of the surface as written is about (0.9134, 0.2839)
        assert!((best.1 - 0.9134).abs() <= 0.01, "{best:?}");
        assert!((best.2 - 0.2839).abs() <= 0.01, "{best:?}");
    }
}
