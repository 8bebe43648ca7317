//! Box-constrained quasi-Newton minimization.
//!
//! Projected BFGS with an Armijo backtracking search along the projected path.
//! Coordinates pinned at a bound whose gradient pushes outward are frozen for
//! the step. An optional curvature callback replaces the BFGS metric (used for
//! Gauss–Newton steps).

use nalgebra::{DMatrix, DVector};

use crate::model::Interval;

#[derive(Debug, Clone, Copy)]
pub struct BoxOptions {
    /// Stop when the projected gradient norm is at most `gtol·(1 + |f|)`.
    pub gtol: f64,
    /// Stop when the largest coordinate step is at most `xtol`.
    pub xtol: f64,
    pub max_iters: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-8,
            xtol: 1e-10,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_init: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

fn projected_gradient(x: &[f64], g: &DVector<f64>, bounds: &[Interval]) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|j| {
            let b = &bounds[j];
            if (x[j] <= b.lo && g[j] > 0.0) || (x[j] >= b.hi && g[j] < 0.0) {
                0.0
            } else {
                g[j]
            }
        }),
    )
}

fn project(x: &mut [f64], bounds: &[Interval]) {
    for (v, b) in x.iter_mut().zip(bounds) {
        *v = b.clamp(*v);
    }
}

/// Minimizes `fg` (value and gradient) over the box `bounds` from `x0`.
pub fn minimize_box<F>(
    fg: F,
    x0: &[f64],
    bounds: &[Interval],
    opts: &BoxOptions,
    curvature: Option<&dyn Fn(&[f64]) -> DMatrix<f64>>,
) -> BoxResult
where
    F: Fn(&[f64]) -> (f64, DVector<f64>),
{
    let q = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut f, mut g) = fg(&x);
    let f_init = f;
    let mut hinv = DMatrix::<f64>::identity(q, q);
    let mut fresh_metric = true;
    let mut converged = false;
    let mut iterations = 0;
    let mut pg = projected_gradient(&x, &g, bounds);

    while iterations < opts.max_iters {
        if !f.is_finite() {
            break;
        }
        if pg.norm() <= opts.gtol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..q).map(|j| pg[j] != 0.0 || g[j] == 0.0).collect();
        let mut dir = match curvature {
            Some(b) => newton_direction(&b(&x), &g, &free),
            None => None,
        }
        .unwrap_or_else(|| {
            let mut h = hinv.clone();
            for j in 0..q {
                if !free[j] {
                    h.row_mut(j).fill(0.0);
                    h.column_mut(j).fill(0.0);
                }
            }
            -(h * &g)
        });
        if dir.dot(&pg) >= 0.0 {
            hinv = DMatrix::identity(q, q);
            fresh_metric = true;
            dir = -pg.clone();
        }

        // an unscaled steepest-descent step can be wildly off; cap it at
        // a tenth of the box
        let mut t = 1.0;
        if fresh_metric && curvature.is_none() {
            let cap = (0..q)
                .filter(|&j| dir[j] != 0.0)
                .map(|j| 0.1 * bounds[j].width() / dir[j].abs())
                .fold(f64::INFINITY, f64::min);
            if cap.is_finite() {
                t = cap.min(1.0);
            }
        }

        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            project(&mut trial, bounds);
            let step: f64 = trial.iter().zip(&x).zip(g.iter()).map(|((a, b), gj)| (a - b) * gj).sum();
            let (ft, gt) = fg(&trial);
            let armijo = ft <= f + 1e-4 * step.min(0.0);
            // below the rounding noise of f, a shrinking gradient is progress
            let flat = ft <= f + 1e-12 * (1.0 + f.abs())
                && projected_gradient(&trial, &gt, bounds).norm() < pg.norm();
            if ft.is_finite() && (armijo || flat) {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh_metric {
                break;
            }
            hinv = DMatrix::identity(q, q);
            fresh_metric = true;
            continue;
        };

        let s = DVector::from_iterator(q, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = &g_new - &g;
        let max_step = s.amax();
        x = x_new;
        f = f_new;
        g = g_new;
        pg = projected_gradient(&x, &g, bounds);

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh_metric {
                hinv = DMatrix::identity(q, q) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(q, q);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = left * &hinv * right + &s * s.transpose() * rho;
            fresh_metric = false;
        }

        if max_step <= opts.xtol {
            converged = pg.norm() <= opts.gtol * (1.0 + f.abs());
            break;
        }
    }

    let grad_norm = pg.norm();
    BoxResult {
        x,
        f,
        f_init,
        iterations,
        grad_norm,
        converged,
    }
}

fn newton_direction(b: &DMatrix<f64>, g: &DVector<f64>, free: &[bool]) -> Option<DVector<f64>> {
    let idx: Vec<usize> = (0..g.len()).filter(|&j| free[j]).collect();
    if idx.is_empty() {
        return None;
    }
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |a, c| b[(idx[a], idx[c])]);
    let rhs = DVector::from_iterator(k, idx.iter().map(|&j| -g[j]));
    let sol = sub.cholesky()?.solve(&rhs);
    let mut dir = DVector::zeros(g.len());
    for (a, &j) in idx.iter().enumerate() {
        dir[j] = sol[a];
    }
    Some(dir)
}
