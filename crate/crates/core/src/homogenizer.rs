//! Estimates of the homogenized density from finite-`T` cell problems, the
//! patchwork upper bound, rank-one convexity probes and the periodic-cell
//! reference for rational planes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cell_solver::{
    assemble_energy, layer_energies, minimize_cell, minimize_on_grid, CellSolution, GridOptions, SlabGrid,
    SolverOptions,
};
use crate::construction::{
    clamp_extend, patchwork_assemble, plan_patchwork, slice_select, verify_slice_bound, PatchworkPlan,
    SliceBoundReport, SliceSelection,
};
use crate::energy::EnergyDensity;
use crate::error::{invalid, Error, Result};
use crate::geometry::{classify_rationality, pull_back_density, IsometryFrame};
use crate::lattice::AlmostPeriod;
use crate::linalg::Mat;

/// Outcome of one cell problem in a schedule.
#[derive(Clone, Debug)]
pub struct ScheduleRun {
    pub t: f64,
    pub value: Option<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct HomogEstimate {
    pub a: Mat,
    pub schedule: Vec<f64>,
    pub runs: Vec<ScheduleRun>,
    /// Mean of the last `⌈k/3⌉` successful values.
    pub extrapolated: f64,
    /// `max - min` over the last `max(2, ⌈k/3⌉)` successful values.
    pub spread: f64,
    /// True when `spread` exceeds the requested tolerance.
    pub non_cauchy: bool,
    pub grid: GridOptions,
}

impl HomogEstimate {
    /// `(T, g_A(T))` for the successful runs.
    pub fn values(&self) -> Vec<(f64, f64)> {
        self.runs.iter().filter_map(|r| r.value.map(|v| (r.t, v))).collect()
    }

    /// Successive differences `g_A(T_{i+1}) - g_A(T_i)` of successful runs.
    pub fn increments(&self) -> Vec<f64> {
        let v = self.values();
        v.windows(2).map(|w| w[1].1 - w[0].1).collect()
    }

    /// Error budget used by the diagnostics: observed spread plus the
    /// solver tolerance.
    pub fn tolerance(&self) -> f64 {
        self.spread + 1e-8 * (1.0 + self.extrapolated.abs())
    }
}

/// Runs the cell problem for every `T` (concurrently) and aggregates the
/// values in schedule order.
pub fn estimate_fhom(
    a: &Mat,
    f: &EnergyDensity,
    schedule: &[f64],
    grid: &GridOptions,
    solver: &SolverOptions,
    spread_tol: f64,
) -> Result<HomogEstimate> {
    if schedule.len() < 3 {
        return Err(invalid(format!("schedule needs at least 3 values of T, got {}", schedule.len())));
    }
    if schedule.windows(2).any(|w| !(w[0] < w[1])) || !(schedule[0] > 0.0) {
        return Err(invalid("schedule must be positive and strictly increasing"));
    }
    let results: Vec<Result<CellSolution>> = schedule
        .par_iter()
        .map(|&t| minimize_cell(a, t, f, grid, solver))
        .collect();
    let mut runs = Vec::with_capacity(schedule.len());
    let mut first_error = None;
    for (&t, res) in schedule.iter().zip(results) {
        runs.push(match res {
            Ok(sol) => ScheduleRun {
                t,
                value: Some(sol.value),
                iterations: sol.iterations,
                residual_norm: sol.residual_norm,
                converged: sol.converged,
                error: None,
            },
            Err(e) => {
                let msg = e.to_string();
                first_error.get_or_insert(e);
                ScheduleRun {
                    t,
                    value: None,
                    iterations: 0,
                    residual_norm: f64::NAN,
                    converged: false,
                    error: Some(msg),
                }
            }
        });
    }
    let vals: Vec<f64> = runs.iter().filter_map(|r| r.value).collect();
    if vals.len() < 2 {
        return Err(first_error.unwrap_or_else(|| invalid("fewer than two cell problems succeeded")));
    }
    let k = vals.len();
    let tail = k.div_ceil(3);
    let extrapolated = vals[k - tail..].iter().sum::<f64>() / tail as f64;
    let window = &vals[k - tail.max(2)..];
    let spread = window.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - window.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HomogEstimate {
        a: *a,
        schedule: schedule.to_vec(),
        runs,
        extrapolated,
        spread,
        non_cauchy: spread > spread_tol,
        grid: *grid,
    })
}

#[derive(Clone, Debug)]
pub struct PatchworkReport {
    pub plan: PatchworkPlan,
    pub selection: SliceSelection,
    pub slice_bound: SliceBoundReport,
    /// `g_A(T)` used on the right-hand side.
    pub g_t: f64,
    /// Assembled energy of `u_S` on `(0,S)^d`, normalized like `g_A(S)`.
    pub energy_s: f64,
    pub bound: f64,
    pub zero_region_measure: f64,
    pub zero_region_tolerance: f64,
    pub q_s_matches_plan: bool,
    pub passed: bool,
}

/// Right-hand side of the patchwork estimate for `g_A(S)`.
#[allow(clippy::too_many_arguments)]
pub fn patchwork_bound(
    g_t: f64,
    t: f64,
    s: f64,
    l_eta: f64,
    eta: f64,
    delta: f64,
    h: f64,
    a_norm: f64,
    f: &EnergyDensity,
) -> f64 {
    let gr = f.growth();
    let d = f.dim_d() as i32;
    let r = (t / (t + l_eta)).powi(d);
    let log = (delta / eta).ln().abs();
    r * (1.0 + eta / gr.alpha) * (1.0 + 2.0 * gr.beta / (gr.alpha * log)) * (g_t + 1.0 / t)
        + (eta * h + gr.beta * (delta + eta)) * r
        + gr.beta * h * (1.0 - (t / (t + l_eta) - t / s).powi(d)) * (1.0 + a_norm).powf(gr.p)
}

/// Builds `u_S` from a cell solution by the patchwork procedure and checks
/// its energy against [`patchwork_bound`].
pub fn upper_bound_patchwork(
    sol_t: &CellSolution,
    f: &EnergyDensity,
    s: f64,
    eta: f64,
    delta: f64,
    periods: &[AlmostPeriod],
    l_eta: f64,
) -> Result<PatchworkReport> {
    let grid_t = &sol_t.grid;
    let (t, h, m) = (grid_t.size(), grid_t.h(), f.m());
    if !(s > t + l_eta) {
        return Err(invalid(format!("S = {s} must exceed T + L_eta = {}", t + l_eta)));
    }
    let g = layer_energies(&sol_t.u_star, &sol_t.a, f, grid_t)?;
    let selection = slice_select(&g, &grid_t.layers(), h, delta, eta)?;
    let slice_bound = verify_slice_bound(&sol_t.u_star, &sol_t.a, f, &selection, grid_t)?;
    let ext = clamp_extend(&sol_t.u_star, m, grid_t, &selection)?;
    let plan = plan_patchwork(f.dim_d(), h, t, s, l_eta, periods)?;
    let grid_s = SlabGrid::slab(f.dim_d(), s, h, grid_t.n_per_unit(), grid_t.n_y())?;
    let field = patchwork_assemble(&ext, &plan, &grid_s)?;
    let energy_s = assemble_energy(&field.u, &sol_t.a, f, &grid_s)?;
    let bound = patchwork_bound(sol_t.value, t, s, l_eta, eta, delta, h, sol_t.a.norm(), f);
    let q_s_matches_plan = field.matches_plan(&plan);
    Ok(PatchworkReport {
        passed: energy_s <= bound && q_s_matches_plan && plan.q_s_measure <= plan.q_s_bound * (1.0 + 1e-12),
        plan,
        selection,
        slice_bound,
        g_t: sol_t.value,
        energy_s,
        bound,
        zero_region_measure: field.zero_region_measure,
        zero_region_tolerance: field.zero_region_tolerance,
        q_s_matches_plan,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOneOptions {
    pub probes: usize,
    pub seed: u64,
    /// Entries of the base point `A` are drawn from `[-scale, scale]`.
    pub scale: f64,
}

impl Default for RankOneOptions {
    fn default() -> Self {
        RankOneOptions { probes: 50, seed: 0, scale: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct RankOneProbe {
    pub a: Mat,
    pub direction: Mat,
    pub t: f64,
    /// `t f(A + (1-t) D) + (1-t) f(A - t D) + tol - f(A)`.
    pub margin: f64,
}

#[derive(Clone, Debug)]
pub struct RankOneReport {
    pub probes: usize,
    pub violations: usize,
    pub worst: Option<RankOneProbe>,
    pub evaluations: usize,
}

impl RankOneReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn worst_margin(&self) -> f64 {
        self.worst.as_ref().map_or(f64::INFINITY, |p| p.margin)
    }
}

fn mat_key(a: &Mat) -> Vec<u64> {
    a.row_major().iter().map(|v| v.to_bits()).collect()
}

/// Samples rank-one segments and checks the convexity inequality of `fhat`
/// along them. `fhat` returns a value and its error budget; values are
/// cached by `A`.
pub fn rank_one_scan(
    m: usize,
    d: usize,
    opts: &RankOneOptions,
    mut fhat: impl FnMut(&Mat) -> Result<(f64, f64)>,
) -> Result<RankOneReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cache: BTreeMap<Vec<u64>, (f64, f64)> = BTreeMap::new();
    let mut eval = |a: &Mat, cache: &mut BTreeMap<Vec<u64>, (f64, f64)>| -> Result<(f64, f64)> {
        let key = mat_key(a);
        if let Some(v) = cache.get(&key) {
            return Ok(*v);
        }
        let v = fhat(a)?;
        cache.insert(key, v);
        Ok(v)
    };
    let mut violations = 0;
    let mut worst: Option<RankOneProbe> = None;
    for _ in 0..opts.probes {
        let mut a = Mat::zeros(m, d);
        let mut va = vec![0.0; m];
        let mut vb = vec![0.0; d];
        for i in 0..m {
            for j in 0..d {
                a[(i, j)] = rng.gen_range(-opts.scale..=opts.scale);
            }
            va[i] = rng.gen_range(-1.0..=1.0);
        }
        for v in vb.iter_mut() {
            *v = rng.gen_range(-1.0..=1.0);
        }
        let mut dir = Mat::zeros(m, d);
        for i in 0..m {
            for j in 0..d {
                dir[(i, j)] = va[i] * vb[j] * opts.scale;
            }
        }
        let t: f64 = rng.gen_range(0.05..0.95);
        let (f0, tol0) = eval(&a, &mut cache)?;
        let (f1, tol1) = eval(&(a + dir * (1.0 - t)), &mut cache)?;
        let (f2, tol2) = eval(&(a - dir * t), &mut cache)?;
        let tol = tol0 + t * tol1 + (1.0 - t) * tol2;
        let margin = t * f1 + (1.0 - t) * f2 + tol - f0;
        if margin < 0.0 {
            violations += 1;
        }
        if worst.as_ref().is_none_or(|w| margin < w.margin) {
            worst = Some(RankOneProbe { a, direction: dir, t, margin });
        }
    }
    Ok(RankOneReport {
        probes: opts.probes,
        violations,
        worst,
        evaluations: cache.len(),
    })
}

#[derive(Clone, Debug)]
pub struct CommensurateReference {
    pub value: f64,
    /// In-plane period vectors (columns), frame coordinates.
    pub periods: Mat,
    pub generators: Vec<Vec<i64>>,
    pub solution: CellSolution,
}

/// Periodic cell problem on the period cell spanned by lattice vectors in a
/// rational plane. `ftilde` is the unrotated density.
///
/// The generators need not form a basis of the plane lattice; any period
/// cell gives the same homogenized value for these convex densities.
pub fn commensurate_reference(
    ftilde: &EnergyDensity,
    frame: &IsometryFrame,
    a: &Mat,
    grid: &GridOptions,
    solver: &SolverOptions,
    denominator_bound: i64,
) -> Result<CommensurateReference> {
    let d = frame.dim_d();
    let report = classify_rationality(frame, denominator_bound)?;
    if report.lattice_rank < d {
        return Err(invalid(format!(
            "plane lattice has rank {} < d = {d} within bound {denominator_bound}",
            report.lattice_rank
        )));
    }
    let generators: Vec<Vec<i64>> = report.generators[..d].to_vec();
    let mut periods = Mat::zeros(d, d);
    for (j, z) in generators.iter().enumerate() {
        let zf: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        let (tau, _) = frame.to_frame(&zf);
        for i in 0..d {
            periods[(i, j)] = tau[i];
        }
    }
    let f = pull_back_density(ftilde, frame)?;
    let cell = SlabGrid::periodic(&periods, grid.h, grid.n_per_unit, grid.n_y)?;
    let solution = minimize_on_grid(a, &f, cell, solver)?;
    if !solution.value.is_finite() {
        return Err(Error::NonFinite { x: Vec::new(), value: solution.value });
    }
    Ok(CommensurateReference {
        value: solution.value,
        periods,
        generators,
        solution,
    })
}
