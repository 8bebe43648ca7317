//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use calsub::emulator::Emulator;
use calsub::harness::ExperimentConfig;
use calsub::model::{
    generate_physical_data, ComputerModel, DesignSource, Example1, GenConfig, Interval,
    PhysicalData, TrueProcess,
};

pub const EXAMPLE1_THETA: [f64; 2] = [0.2, 0.3];

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&workspace_root().join("configs").join(name)).expect("config")
}

pub fn example1() -> (Emulator, Arc<dyn ComputerModel>) {
    let m: Arc<dyn ComputerModel> = Arc::new(Example1::default());
    (Emulator::pass_through(m.clone()), m)
}

pub fn example1_data(n: usize, sigma: f64, seed: u64) -> PhysicalData {
    let (_, m) = example1();
    generate_physical_data(
        &GenConfig {
            truth: TrueProcess::Model {
                model: m.clone(),
                theta: EXAMPLE1_THETA.to_vec(),
            },
            omega: m.omega().to_vec(),
            sigma,
            seed,
            design: DesignSource::Uniform,
        },
        n,
    )
    .expect("data")
}

pub fn random_in(rng: &mut impl Rng, b: &[Interval], margin: f64) -> Vec<f64> {
    b.iter()
        .map(|i| i.lo + i.width() * (margin + (1.0 - 2.0 * margin) * rng.random::<f64>()))
        .collect()
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1)`.
pub fn vec_rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

pub fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

/// `(4/r)·mean(h)² − (4/n²)Σh²`: the two-step AMSE for mV at `ρ = 0`.
pub fn amse_rho0_closed(h: &[f64], r: f64) -> f64 {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    4.0 / r * mean * mean - 4.0 / (n * n) * h.iter().map(|v| v * v).sum::<f64>()
}

/// `(4/r)·mean(h²) − (4/n²)Σh²`: the two-step AMSE at `ρ = 1`.
pub fn amse_rho1_closed(h: &[f64], r: f64) -> f64 {
    let n = h.len() as f64;
    let sq = h.iter().map(|v| v * v).sum::<f64>();
    4.0 / r * sq / n - 4.0 / (n * n) * sq
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < na && j < nb {
        let v = a[i].min(b[j]);
        while i < na && a[i] <= v {
            i += 1;
        }
        while j < nb && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Sample covariance of the rows of `xs` (divisor `len − 1`).
pub fn sample_cov(xs: &[Vec<f64>]) -> DMatrix<f64> {
    let q = xs[0].len();
    let k = xs.len() as f64;
    let mean: Vec<f64> = (0..q).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / k).collect();
    DMatrix::from_fn(q, q, |a, b| {
        xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (k - 1.0)
    })
}
