//! Predictors `ŷˢ(x, θ)` for the simulator: a fitted Gaussian process or the
//! exact model passed straight through.

pub mod design;
pub mod gp;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{ComputerModel, Interval};

pub use design::{maximin_lhd, random_lhd, recommended_runs, Design};
pub use gp::{GpDocument, GpEmulator, GpHyper, GpOptions};

#[derive(Debug, Clone)]
pub enum Emulator {
    Gp(Arc<GpEmulator>),
    PassThrough(Arc<dyn ComputerModel>),
}

impl Emulator {
    pub fn pass_through(model: Arc<dyn ComputerModel>) -> Self {
        Emulator::PassThrough(model)
    }

    /// Runs the simulator on an `m`-point maximin Latin hypercube over
    /// `Ω × Θ` and fits a Gaussian process to the outputs.
    pub fn fit_gp(model: &dyn ComputerModel, m: usize, seed: u64, opts: &GpOptions) -> Result<Self> {
        let d = model.d();
        let bounds: Vec<Interval> = model.omega().iter().chain(model.theta_box()).copied().collect();
        let design = maximin_lhd(m, bounds.len(), seed)?;
        let inputs = design.scaled_to(&bounds);
        let outputs: Vec<f64> = inputs
            .chunks_exact(bounds.len())
            .map(|z| model.value(&z[..d], &z[d..]))
            .collect();
        let gp = GpEmulator::fit(&inputs, &outputs, d, &bounds, opts)?;
        Ok(Emulator::Gp(Arc::new(gp)))
    }

    pub fn d(&self) -> usize {
        match self {
            Emulator::Gp(gp) => gp.d(),
            Emulator::PassThrough(m) => m.d(),
        }
    }

    pub fn q(&self) -> usize {
        match self {
            Emulator::Gp(gp) => gp.q(),
            Emulator::PassThrough(m) => m.q(),
        }
    }

    pub fn omega(&self) -> &[Interval] {
        match self {
            Emulator::Gp(gp) => gp.omega(),
            Emulator::PassThrough(m) => m.omega(),
        }
    }

    pub fn theta_box(&self) -> &[Interval] {
        match self {
            Emulator::Gp(gp) => gp.theta_box(),
            Emulator::PassThrough(m) => m.theta_box(),
        }
    }

    pub fn check_domain(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        match self {
            Emulator::Gp(gp) => gp.check_domain(x, theta),
            Emulator::PassThrough(m) => m.check_domain(x, theta),
        }
    }

    pub fn predict(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_domain(x, theta)?;
        Ok(self.value(x, theta))
    }

    pub fn predict_grad_theta(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        self.check_domain(x, theta)?;
        Ok(self.value_grad(x, theta).1)
    }

    pub fn predict_hess_theta(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x, theta)?;
        Ok(self.value_grad_hess(x, theta).2)
    }

    /// Predictions at every row of `xs` (row-major, `d` columns) for one θ.
    pub fn predict_batch(&self, xs: &[f64], theta: &[f64]) -> Vec<f64> {
        xs.chunks_exact(self.d()).map(|x| self.value(x, theta)).collect()
    }

    /// Unchecked prediction.
    pub fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        match self {
            Emulator::Gp(gp) => gp.value(x, theta),
            Emulator::PassThrough(m) => m.value(x, theta),
        }
    }

    pub fn value_grad(&self, x: &[f64], theta: &[f64]) -> (f64, DVector<f64>) {
        match self {
            Emulator::Gp(gp) => {
                let (v, g, _) = gp.value_derivs(x, theta, false);
                (v, g)
            }
            Emulator::PassThrough(m) => (m.value(x, theta), m.grad_unchecked(x, theta)),
        }
    }

    pub fn value_grad_hess(&self, x: &[f64], theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        match self {
            Emulator::Gp(gp) => {
                let (v, g, h) = gp.value_derivs(x, theta, true);
                (v, g, h.expect("hessian requested"))
            }
            Emulator::PassThrough(m) => (
                m.value(x, theta),
                m.grad_unchecked(x, theta),
                m.hess_unchecked(x, theta),
            ),
        }
    }
}
