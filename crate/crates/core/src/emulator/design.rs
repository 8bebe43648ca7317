//! Latin-hypercube designs on the unit cube with a maximin exchange phase.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Interval;
use crate::rng;

/// `m` points in `[0, 1]^dims`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    dims: usize,
    points: Vec<f64>,
}

impl Design {
    pub fn m(&self) -> usize {
        self.points.len() / self.dims
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn unit_points(&self) -> &[f64] {
        &self.points
    }

    /// Maps the unit-cube points onto `bounds`, row-major.
    pub fn scaled_to(&self, bounds: &[Interval]) -> Vec<f64> {
        self.points
            .chunks_exact(self.dims)
            .flat_map(|row| row.iter().zip(bounds).map(|(u, b)| b.lo + b.width() * u))
            .collect()
    }

    /// Every column has exactly one point in each of the `m` strata.
    pub fn is_latin(&self) -> bool {
        let m = self.m();
        (0..self.dims).all(|c| {
            let mut seen = vec![false; m];
            (0..m).all(|i| {
                let s = ((self.points[i * self.dims + c] * m as f64) as usize).min(m - 1);
                !std::mem::replace(&mut seen[s], true)
            })
        })
    }

    pub fn min_distance(&self) -> f64 {
        let m = self.m();
        let mut best = f64::INFINITY;
        for i in 0..m {
            for j in 0..i {
                best = best.min(sq_dist(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    /// Swaps column entries between random row pairs, keeping a swap only
    /// when it increases the minimum pairwise distance.
    pub fn maximin_exchange(&mut self, rng: &mut impl Rng, proposals_per_column: usize) {
        let m = self.m();
        if m < 3 {
            return;
        }
        let mut current = self.min_distance();
        for c in 0..self.dims {
            for _ in 0..proposals_per_column {
                let a = rng.random_range(0..m);
                let b = rng.random_range(0..m);
                if a == b {
                    continue;
                }
                self.points.swap(a * self.dims + c, b * self.dims + c);
                let candidate = self.min_distance();
                if candidate > current {
                    current = candidate;
                } else {
                    self.points.swap(a * self.dims + c, b * self.dims + c);
                }
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// A jittered random Latin hypercube: one uniform point per stratum per column.
pub fn random_lhd(m: usize, dims: usize, rng: &mut impl Rng) -> Design {
    let mut points = vec![0.0; m * dims];
    let mut perm: Vec<usize> = (0..m).collect();
    for c in 0..dims {
        perm.shuffle(rng);
        for (i, &s) in perm.iter().enumerate() {
            points[i * dims + c] = (s as f64 + rng.random::<f64>()) / m as f64;
        }
    }
    Design { dims, points }
}

/// A maximin Latin hypercube with a budget of `10·m` exchange proposals per column.
pub fn maximin_lhd(m: usize, dims: usize, seed: u64) -> Result<Design> {
    if m < 2 {
        return Err(Error::Size(format!("a Latin hypercube needs m >= 2, got {m}")));
    }
    if dims == 0 {
        return Err(Error::Size("a design needs at least one dimension".into()));
    }
    let mut r = rng::substream(seed, &[rng::label("lhd")]);
    let mut design = random_lhd(m, dims, &mut r);
    design.maximin_exchange(&mut r, 10 * m);
    Ok(design)
}

/// Run count recommended for `d` inputs and `q` parameters, `10(d + q)`.
pub fn recommended_runs(d: usize, q: usize) -> usize {
    10 * (d + q)
}
