//! Finite-`T` cell problems on the slab `(0,T)^d x (-h, h)`.
//!
//! The admissible class clamps the lateral boundary only; the faces
//! `y = ±h` are natural boundaries. `value` is the minimized energy per unit
//! mid-plane volume, an upper bound for the continuum infimum `g_A(T)`.

mod assembly;
mod field;
mod grid;
mod solver;

use serde::{Deserialize, Serialize};

pub use assembly::{
    assemble_energy, assemble_gradient, assemble_scaled_energy, cap_energy, energy_and_gradient, layer_energies,
};
pub(crate) use assembly::max_inplane_gradient;
pub use field::{parse_field, sample_field, write_field, DumpRow, NodalDump};
pub use grid::{LateralBoundary, SlabGrid};
pub use solver::{SolverMethod, SolverOptions};

use crate::energy::EnergyDensity;
use crate::error::{invalid, Error, Result};
use crate::linalg::{norm, Mat};

/// Spatial resolution shared by every cell problem of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOptions {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_n_per_unit")]
    pub n_per_unit: usize,
    #[serde(default = "default_n_y")]
    pub n_y: usize,
}

fn default_h() -> f64 {
    0.5
}

fn default_n_per_unit() -> usize {
    8
}

fn default_n_y() -> usize {
    4
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            h: default_h(),
            n_per_unit: default_n_per_unit(),
            n_y: default_n_y(),
        }
    }
}

/// `build_grid` for a `d`-dimensional mid-plane.
pub fn build_grid(dim_d: usize, t: f64, opts: &GridOptions) -> Result<SlabGrid> {
    SlabGrid::slab(dim_d, t, opts.h, opts.n_per_unit, opts.n_y)
}

#[derive(Clone, Debug)]
pub struct CellSolution {
    pub grid: SlabGrid,
    pub a: Mat,
    pub u_star: Vec<f64>,
    pub value: f64,
    /// Energy of `u = 0`.
    pub zero_competitor: f64,
    pub iterations: usize,
    /// `‖∇E(u*)‖_2` over the free dofs.
    pub residual_norm: f64,
    /// False when the iteration cap was hit; `value` is still an upper bound.
    pub converged: bool,
    pub method: SolverMethod,
}

impl CellSolution {
    pub fn t(&self) -> f64 {
        self.grid.size()
    }

    /// Unnormalized slab energy `2 h T^d value`.
    pub fn slab_energy(&self) -> f64 {
        self.value * 2.0 * self.grid.h() * self.grid.plane_measure()
    }
}

/// Minimizes over the discrete admissible class on `(0,T)^d x (-h, h)`.
pub fn minimize_cell(
    a: &Mat,
    t: f64,
    f: &EnergyDensity,
    grid_opts: &GridOptions,
    solver_opts: &SolverOptions,
) -> Result<CellSolution> {
    let grid = build_grid(f.dim_d(), t, grid_opts)?;
    minimize_on_grid(a, f, grid, solver_opts)
}

/// Minimizes on an arbitrary grid (clamped slab or periodic cell).
pub fn minimize_on_grid(a: &Mat, f: &EnergyDensity, grid: SlabGrid, opts: &SolverOptions) -> Result<CellSolution> {
    let m = f.m();
    let n = grid.n_nodes() * m;
    let zero = vec![0.0; n];
    let (zero_competitor, g0) = energy_and_gradient(&zero, a, f, &grid)?;
    let (outcome, method) = if f.is_quadratic() {
        let scale = assembly::gradient_scale(&zero, a, f, &grid)?;
        let floor = 1e-13 * norm(&scale);
        let a0 = Mat::zeros(a.rows(), a.cols());
        let out = solver::conjugate_gradient(&g0, |p| assemble_gradient(p, &a0, f, &grid), floor, opts)?;
        (out, SolverMethod::ConjugateGradient)
    } else {
        let out = solver::lbfgs(n, |u| energy_and_gradient(u, a, f, &grid), opts)?;
        (out, SolverMethod::Lbfgs)
    };
    let (mut value, grad) = energy_and_gradient(&outcome.x, a, f, &grid)?;
    let mut u_star = outcome.x;
    let mut residual_norm = norm(&grad);
    if value > zero_competitor {
        // Never report worse than the zero competitor.
        value = zero_competitor;
        u_star = zero;
        residual_norm = norm(&g0);
    }
    Ok(CellSolution {
        grid,
        a: *a,
        u_star,
        value,
        zero_competitor,
        iterations: outcome.iterations,
        residual_norm,
        converged: outcome.converged,
        method,
    })
}

/// The grid of `(0,1)^d x (-h, h)` with the same node layout as `grid`.
pub fn unit_image(grid: &SlabGrid) -> Result<SlabGrid> {
    if grid.boundary() != LateralBoundary::Clamped {
        return Err(invalid("unit image is defined for clamped slabs only"));
    }
    SlabGrid::slab(grid.dim_d(), 1.0, grid.h(), grid.intervals()[0], grid.n_y())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RescalingReport {
    pub t: f64,
    /// Energy in cell form on `(0,T)^d`.
    pub cell_form: f64,
    /// Unit-domain form with `ε = 1/T` and field `u / T`.
    pub scaled_form: f64,
    pub relative_difference: f64,
    pub passed: bool,
}

/// Relative tolerance of [`rescaling_check`].
pub const RESCALING_TOL: f64 = 1e-12;

/// Compares the two normalizations of the same discrete state under
/// `x -> x / T`, `u -> u / T`.
pub fn rescaling_check(
    u: &[f64],
    a: &Mat,
    f: &EnergyDensity,
    grid: &SlabGrid,
    unit: &SlabGrid,
) -> Result<RescalingReport> {
    let t = grid.size();
    if grid.boundary() != LateralBoundary::Clamped
        || !grid.same_topology(unit)
        || grid.h() != unit.h()
        || unit.size() != 1.0
    {
        return Err(Error::InvalidInput(
            "rescaling check needs a clamped slab and its unit image with identical node layout".into(),
        ));
    }
    let cell_form = assemble_energy(u, a, f, grid)?;
    let scaled: Vec<f64> = u.iter().map(|v| v / t).collect();
    let scaled_form = assemble_scaled_energy(&scaled, a, f, unit, 1.0 / t)?;
    let denom = cell_form.abs().max(scaled_form.abs()).max(f64::MIN_POSITIVE);
    let relative_difference = (cell_form - scaled_form).abs() / denom;
    Ok(RescalingReport {
        t,
        cell_form,
        scaled_form,
        relative_difference,
        passed: relative_difference <= RESCALING_TOL,
    })
}
