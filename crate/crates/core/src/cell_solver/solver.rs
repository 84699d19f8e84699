//! Unconstrained minimizers over the free dofs. Fixed dofs never move
//! because every gradient the callers supply is zero on them.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    ConjugateGradient,
    Lbfgs,
}

impl SolverMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::ConjugateGradient => "cg",
            SolverMethod::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative residual target for conjugate gradients.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// L-BFGS stops when `‖g‖_∞ < grad_tol (1 + |E|)`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cg_tol: 1e-10,
            cg_max_iter: 50_000,
            grad_tol: 1e-8,
            max_iter: 5000,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `H x = -g0` for a symmetric positive semidefinite `H` given as a
/// product. Stops at `‖r‖ ≤ max(tol ‖r0‖, floor)`.
pub(crate) fn conjugate_gradient(
    g0: &[f64],
    mut hess: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    floor: f64,
    opts: &SolverOptions,
) -> Result<Outcome> {
    let n = g0.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = g0.iter().map(|v| -v).collect();
    let r0 = norm(&r);
    let target = (opts.cg_tol * r0).max(floor);
    if r0 <= target {
        return Ok(Outcome { x, iterations: 0, converged: true });
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for k in 1..=opts.cg_max_iter {
        let hp = hess(&p)?;
        let php = dot(&p, &hp);
        if !(php > 0.0) {
            // Direction of zero curvature: nothing left to gain along p.
            return Ok(Outcome { x, iterations: k, converged: rr.sqrt() <= target });
        }
        let alpha = rr / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(Outcome { x, iterations: k, converged: true });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(Outcome {
        x,
        iterations: opts.cg_max_iter,
        converged: false,
    })
}

/// Limited-memory BFGS with Armijo backtracking, started at zero.
pub(crate) fn lbfgs(
    n: usize,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    opts: &SolverOptions,
) -> Result<Outcome> {
    const ARMIJO: f64 = 1e-4;
    let mut x = vec![0.0; n];
    let (mut e, mut g) = eval(&x)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    for k in 0..opts.max_iter {
        if inf_norm(&g) < opts.grad_tol * (1.0 + e.abs()) {
            return Ok(Outcome { x, iterations: k, converged: true });
        }
        let mut dir = two_loop(&g, &s_hist, &y_hist, &rho_hist);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if s_hist.is_empty() { 1.0 / inf_norm(&g).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (et, gt) = eval(&trial)?;
            if et <= e + ARMIJO * step * slope {
                accepted = Some((trial, et, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, en, gn)) = accepted else {
            if s_hist.is_empty() {
                // Steepest descent cannot decrease E: round-off floor reached.
                return Ok(Outcome { x, iterations: k, converged: false });
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * norm(&s) * norm(&y) && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        x = xn;
        e = en;
        g = gn;
    }
    let converged = inf_norm(&g) < opts.grad_tol * (1.0 + e.abs());
    Ok(Outcome {
        x,
        iterations: opts.max_iter,
        converged,
    })
}

fn two_loop(g: &[f64], s: &[Vec<f64>], y: &[Vec<f64>], rho: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let k = s.len();
    let mut alpha = vec![0.0; k];
    for i in (0..k).rev() {
        alpha[i] = rho[i] * dot(&s[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if k > 0 {
        let gamma = dot(&s[k - 1], &y[k - 1]) / dot(&y[k - 1], &y[k - 1]);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
    }
    for i in 0..k {
        let b = rho[i] * dot(&y[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s[i]) {
            *qj += (alpha[i] - b) * sj;
        }
    }
    q.iter().map(|v| -v).collect()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
