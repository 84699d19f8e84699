//! Executable function surgery for the upper-bound construction.
//!
//! A cell minimizer on `(0,T)^d x (-h, h)` is frozen above and below two
//! well-chosen layers (`clamp_extend`), translated by almost periods
//! (`translate_test_function`) and tiled into a larger slab with zero glue
//! (`patchwork_assemble`). All energies are in the unscaled `T`-form.

use rayon::prelude::*;

use crate::cell_solver::{
    cap_energy, max_inplane_gradient, sample_field, LateralBoundary, SlabGrid,
};
use crate::energy::EnergyDensity;
use crate::error::{invalid, Error, Result};
use crate::lattice::AlmostPeriod;
use crate::linalg::{Mat, MAX_DIM};

/// Layers chosen near the top and bottom faces.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSelection {
    pub h: f64,
    pub delta: f64,
    pub eta: f64,
    pub y_plus: f64,
    pub y_minus: f64,
    /// Node-layer indices of `y_plus` and `y_minus`.
    pub j_plus: usize,
    pub j_minus: usize,
    /// `∫_0^h g`, trapezoid rule.
    pub c: f64,
    /// `∫_{-h}^0 g`.
    pub c_bottom: f64,
    /// `c / ln(δ/η)`.
    pub threshold: f64,
    pub threshold_bottom: f64,
    /// `(h + η - y_plus) g(y_plus)`.
    pub weighted_plus: f64,
    /// `(h + η + y_minus) g(y_minus)`.
    pub weighted_minus: f64,
    /// Every layer meeting the threshold, top window.
    pub qualifying_top: Vec<usize>,
    pub qualifying_bottom: Vec<usize>,
    n_layers: usize,
}

impl SliceSelection {
    /// Smallest and largest qualifying `y` in the top window.
    pub fn qualifying_range(&self, layers: &[f64]) -> Option<(f64, f64)> {
        let ys: Vec<f64> = self.qualifying_top.iter().map(|&j| layers[j]).collect();
        let lo = ys.iter().copied().reduce(f64::min)?;
        let hi = ys.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }
}

fn check_delta_eta(delta: f64, eta: f64) -> Result<()> {
    if !(eta > 0.0 && delta > eta && delta.is_finite()) {
        return Err(invalid(format!("need delta > eta > 0, got delta = {delta}, eta = {eta}")));
    }
    Ok(())
}

/// `∫_lo^hi` of the piecewise-linear interpolant of `(ys, gs)`.
fn trapezoid_between(ys: &[f64], gs: &[f64], lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..ys.len().saturating_sub(1) {
        let (y0, y1) = (ys[k], ys[k + 1]);
        let a = y0.max(lo);
        let b = y1.min(hi);
        if b <= a {
            continue;
        }
        let at = |y: f64| gs[k] + (gs[k + 1] - gs[k]) * (y - y0) / (y1 - y0);
        total += 0.5 * (b - a) * (at(a) + at(b));
    }
    total
}

/// Picks, in each window of width `δ` at the faces, the layer minimizing the
/// weighted slice energy, and checks it against `C / ln(δ/η)`.
///
/// `layers` are the node-layer coordinates (ascending, spanning `[-h, h]`)
/// and `g` the unnormalized slice energies on them.
pub fn slice_select(g: &[f64], layers: &[f64], h: f64, delta: f64, eta: f64) -> Result<SliceSelection> {
    check_layers(g, layers, h)?;
    let c = trapezoid_between(layers, g, 0.0, h);
    let c_bottom = trapezoid_between(layers, g, -h, 0.0);
    slice_select_with_mass(g, layers, h, delta, eta, c, c_bottom)
}

fn check_layers(g: &[f64], layers: &[f64], h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(invalid(format!("need h > 0, got {h}")));
    }
    if g.len() != layers.len() || g.len() < 2 {
        return Err(invalid("slice energies and layers must match and hold at least two layers"));
    }
    if g.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(invalid("slice energies must be finite and nonnegative"));
    }
    if layers.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("layers must be strictly increasing"));
    }
    let tol = 1e-12 * h;
    if (layers[0] + h).abs() > tol || (layers[layers.len() - 1] - h).abs() > tol {
        return Err(invalid("layers must span [-h, h]"));
    }
    Ok(())
}

/// [`slice_select`] with the slice masses `∫_0^h g` and `∫_{-h}^0 g`
/// supplied by the caller, e.g. from a finer integration than the layers.
///
/// With masses taken from the trapezoid rule on the same layers the
/// minimizing layer has always qualified in our experiments; the error
/// path needs a mass the layers under-resolve.
pub fn slice_select_with_mass(
    g: &[f64],
    layers: &[f64],
    h: f64,
    delta: f64,
    eta: f64,
    c: f64,
    c_bottom: f64,
) -> Result<SliceSelection> {
    check_delta_eta(delta, eta)?;
    check_layers(g, layers, h)?;
    if delta > h {
        return Err(invalid(format!("need delta <= h, got delta = {delta}, h = {h}")));
    }
    if !(c >= 0.0 && c_bottom >= 0.0 && c.is_finite() && c_bottom.is_finite()) {
        return Err(invalid("slice masses must be finite and nonnegative"));
    }
    let tol = 1e-12 * h;
    let log = (delta / eta).ln();
    let threshold = c / log;
    let threshold_bottom = c_bottom / log;

    let pick = |lo: f64, hi: f64, weight: &dyn Fn(f64) -> f64, thr: f64| -> Result<(usize, f64, Vec<usize>)> {
        let window: Vec<usize> = (0..layers.len())
            .filter(|&j| layers[j] >= lo - tol && layers[j] <= hi + tol)
            .collect();
        if window.is_empty() {
            return Err(invalid(format!("no grid layer in [{lo}, {hi}]; refine n_y")));
        }
        let weighted = |j: usize| weight(layers[j]) * g[j];
        let best = window
            .iter()
            .copied()
            .min_by(|&a, &b| weighted(a).total_cmp(&weighted(b)).then(a.cmp(&b)))
            .expect("window is non-empty");
        let slack = thr * 1e-12;
        let qualifying: Vec<usize> = window.iter().copied().filter(|&j| weighted(j) <= thr + slack).collect();
        if weighted(best) > thr + slack {
            return Err(Error::NoQualifyingLayer {
                lo,
                hi,
                threshold: thr,
                best: weighted(best),
            });
        }
        Ok((best, weighted(best), qualifying))
    };
    let (j_plus, weighted_plus, qualifying_top) = pick(h - delta, h, &|y| h + eta - y, threshold)?;
    let (j_minus, weighted_minus, qualifying_bottom) = pick(-h, -h + delta, &|y| h + eta + y, threshold_bottom)?;
    Ok(SliceSelection {
        h,
        delta,
        eta,
        y_plus: layers[j_plus],
        y_minus: layers[j_minus],
        j_plus,
        j_minus,
        c,
        c_bottom,
        threshold,
        threshold_bottom,
        weighted_plus,
        weighted_minus,
        qualifying_top,
        qualifying_bottom,
        n_layers: layers.len(),
    })
}

/// A field frozen in `y` outside `[y_minus, y_plus]`, stored on a grid with
/// `pad` extra layers on each side so that it covers `[-h - η, h + η]`.
#[derive(Clone, Debug)]
pub struct ExtendedField {
    pub base: SlabGrid,
    pub grid: SlabGrid,
    pub pad: usize,
    pub m: usize,
    /// Nodal values on `grid`.
    pub values: Vec<f64>,
    base_values: Vec<f64>,
    pub y_plus: f64,
    pub y_minus: f64,
}

impl ExtendedField {
    /// `ũ(x, y)`, or `None` outside the in-plane block.
    pub fn sample(&self, point: &[f64]) -> Option<[f64; MAX_DIM]> {
        let d = self.base.dim_d();
        let mut p = [0.0; MAX_DIM];
        p[..=d].copy_from_slice(&point[..=d]);
        p[d] = p[d].clamp(self.y_minus, self.y_plus);
        sample_field(&self.base, &self.base_values, self.m, &p[..=d])
    }
}

/// Freezes `u` above `y_plus` and below `y_minus`.
pub fn clamp_extend(u: &[f64], m: usize, grid: &SlabGrid, sel: &SliceSelection) -> Result<ExtendedField> {
    if grid.boundary() != LateralBoundary::Clamped {
        return Err(invalid("clamp extension needs a clamped slab"));
    }
    if sel.n_layers != grid.n_y() + 1 || (sel.h - grid.h()).abs() > 1e-12 * grid.h() {
        return Err(invalid("slice selection was made on a different grid"));
    }
    if u.len() != grid.n_nodes() * m {
        return Err(Error::DimensionMismatch("field does not match grid".into()));
    }
    if sel.j_minus > sel.j_plus {
        return Err(invalid("y_minus lies above y_plus"));
    }
    let dy = grid.dy();
    let pad = (sel.eta / dy).ceil().max(1.0) as usize;
    let h_ext = grid.h() + pad as f64 * dy;
    let ext = SlabGrid::slab(grid.dim_d(), grid.size(), h_ext, grid.n_per_unit(), grid.n_y() + 2 * pad)?;
    if ext.intervals() != grid.intervals() {
        return Err(invalid("extended grid changed the in-plane resolution"));
    }
    let np = grid.n_plane_nodes();
    let mut values = vec![0.0; ext.n_nodes() * m];
    for j_ext in 0..=ext.n_y() {
        let j = (j_ext as isize - pad as isize).clamp(sel.j_minus as isize, sel.j_plus as isize) as usize;
        let src = &u[j * np * m..(j + 1) * np * m];
        values[j_ext * np * m..(j_ext + 1) * np * m].copy_from_slice(src);
    }
    let field = ExtendedField {
        base: grid.clone(),
        grid: ext,
        pad,
        m,
        values,
        base_values: u.to_vec(),
        y_plus: sel.y_plus,
        y_minus: sel.y_minus,
    };
    check_extension(&field, u, m, grid)?;
    Ok(field)
}

/// Caps carry no transverse derivative and no in-plane gradient larger
/// than the original field's.
fn check_extension(field: &ExtendedField, u: &[f64], m: usize, grid: &SlabGrid) -> Result<()> {
    let zero = Mat::zeros(m, grid.dim_d());
    let np = grid.n_plane_nodes() * m;
    let orig_max = (0..=grid.n_y())
        .map(|j| max_inplane_gradient(u, &zero, m, grid, j))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    for j in 0..=field.grid.n_y() {
        let g = max_inplane_gradient(&field.values, &zero, m, &field.grid, j)?;
        if g > orig_max * (1.0 + 1e-12) + 1e-300 {
            return Err(invalid(format!("extension raised the in-plane gradient on layer {j}")));
        }
    }
    let j_lo = field.pad + layer_of(grid, field.y_minus);
    let j_hi = field.pad + layer_of(grid, field.y_plus);
    for j in (0..j_lo).chain(j_hi..field.grid.n_y()) {
        let (a, b) = (&field.values[j * np..(j + 1) * np], &field.values[(j + 1) * np..(j + 2) * np]);
        if a != b {
            return Err(invalid(format!("cap element layer {j} has a transverse derivative")));
        }
    }
    Ok(())
}

fn layer_of(grid: &SlabGrid, y: f64) -> usize {
    ((y + grid.h()) / grid.dy()).round() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceBoundReport {
    /// `∫_{y_plus}^{h+η} ∫ f(x, y, (A + ∇_x u(x, y_plus) | 0))`.
    pub top_cap: f64,
    pub bottom_cap: f64,
    /// `β (|D| (δ + η) + C / (α ln(δ/η)))`.
    pub top_bound: f64,
    pub bottom_bound: f64,
    pub passed: bool,
}

impl SliceBoundReport {
    /// Smallest relative slack of the two inequalities.
    pub fn margin(&self) -> f64 {
        let rel = |cap: f64, bound: f64| (bound - cap) / bound.abs().max(f64::MIN_POSITIVE);
        rel(self.top_cap, self.top_bound).min(rel(self.bottom_cap, self.bottom_bound))
    }
}

/// Energy of the flat caps against the slicing bound.
pub fn verify_slice_bound(
    u: &[f64],
    a: &Mat,
    f: &EnergyDensity,
    sel: &SliceSelection,
    grid: &SlabGrid,
) -> Result<SliceBoundReport> {
    if sel.n_layers != grid.n_y() + 1 {
        return Err(invalid("slice selection was made on a different grid"));
    }
    let h = grid.h();
    let top_cap = cap_energy(u, a, f, grid, sel.j_plus, sel.y_plus, h + sel.eta)?;
    let bottom_cap = cap_energy(u, a, f, grid, sel.j_minus, -h - sel.eta, sel.y_minus)?;
    let growth = f.growth();
    let log = (sel.delta / sel.eta).ln().abs();
    let area = grid.plane_measure();
    let bound = |c: f64| growth.beta * (area * (sel.delta + sel.eta) + c / (growth.alpha * log));
    let top_bound = bound(sel.c);
    let bottom_bound = bound(sel.c_bottom);
    Ok(SliceBoundReport {
        top_cap,
        bottom_cap,
        top_bound,
        bottom_bound,
        passed: top_cap <= top_bound && bottom_cap <= bottom_bound,
    })
}

/// `v(x, y) = ũ(x - τ, y - z_τ)` on the nodes of `target`, zero outside
/// the translated block.
pub fn translate_test_function(ext: &ExtendedField, ap: &AlmostPeriod, target: &SlabGrid) -> Result<Vec<f64>> {
    let d = ext.base.dim_d();
    if target.dim_d() != d || ap.tau.len() != d || target.boundary() != LateralBoundary::Clamped {
        return Err(Error::DimensionMismatch("translation target does not match the field".into()));
    }
    let t = ext.base.size();
    let s = target.size();
    let slack = 1e-9 * s;
    if ap.tau.iter().any(|&tau| tau < -slack || tau + t > s + slack) {
        return Err(invalid(format!(
            "translated block at {:?} leaves the target domain (0, {s})^{d}",
            ap.tau
        )));
    }
    if ap.defect > ext.grid.h() - ext.base.h() {
        return Err(invalid("defect exceeds the transverse extension"));
    }
    Ok(place_blocks(ext, &[(ap.tau.clone(), ap.z_tau)], target))
}

fn place_blocks(ext: &ExtendedField, blocks: &[(Vec<f64>, f64)], target: &SlabGrid) -> Vec<f64> {
    let d = ext.base.dim_d();
    let m = ext.m;
    let t = ext.base.size();
    let tol = 1e-12 * t;
    let per_node: Vec<[f64; MAX_DIM]> = (0..target.n_nodes())
        .into_par_iter()
        .map(|node| {
            if target.is_fixed(node) {
                return [0.0; MAX_DIM];
            }
            let x = target.node_coords(node);
            for (tau, z) in blocks {
                let inside = (0..d).all(|k| x[k] - tau[k] >= -tol && x[k] - tau[k] <= t + tol);
                if inside {
                    let mut p = [0.0; MAX_DIM];
                    for k in 0..d {
                        p[k] = (x[k] - tau[k]).clamp(0.0, t);
                    }
                    p[d] = x[d] - z;
                    return ext.sample(&p[..=d]).unwrap_or([0.0; MAX_DIM]);
                }
            }
            [0.0; MAX_DIM]
        })
        .collect();
    let mut out = vec![0.0; target.n_nodes() * m];
    for (node, v) in per_node.iter().enumerate() {
        out[node * m..node * m + m].copy_from_slice(&v[..m]);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    /// Multi-index `ℓ`.
    pub cell: Vec<usize>,
    pub tau: Vec<f64>,
    pub z: f64,
    pub source_lattice_point: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchworkPlan {
    pub dim_d: usize,
    pub h: f64,
    pub t: f64,
    pub s: f64,
    pub l_eta: f64,
    /// `⌊S / (T + L_η)⌋`.
    pub blocks_per_axis: usize,
    pub placements: Vec<Placement>,
    /// `|Q_S| = 2h (S^d - (#blocks) T^d)`.
    pub q_s_measure: f64,
    /// `2h S^d (1 - (T/(T+L_η) - T/S)^d)`.
    pub q_s_bound: f64,
}

/// One block per `ℓ ∈ {0, .., ⌊S/(T+L_η)⌋ - 1}^d`, each translated by the
/// almost period nearest the centre of its window `(T+L_η)ℓ + [0, L_η]^d`.
pub fn plan_patchwork(
    dim_d: usize,
    h: f64,
    t: f64,
    s: f64,
    l_eta: f64,
    periods: &[AlmostPeriod],
) -> Result<PatchworkPlan> {
    if !(t > 0.0 && h > 0.0 && l_eta >= 0.0 && l_eta.is_finite()) {
        return Err(invalid("patchwork needs T > 0, h > 0 and a finite L_eta"));
    }
    if !(s > t + l_eta) {
        return Err(invalid(format!("S = {s} must exceed T + L_eta = {}", t + l_eta)));
    }
    let pitch = t + l_eta;
    let k = (s / pitch).floor() as usize;
    let mut placements = Vec::new();
    let total = k.pow(dim_d as u32);
    for flat in 0..total {
        let cell: Vec<usize> = (0..dim_d).map(|i| (flat / k.pow(i as u32)) % k).collect();
        let lo: Vec<f64> = cell.iter().map(|&l| pitch * l as f64).collect();
        let tol = 1e-12 * pitch;
        let in_window: Vec<AlmostPeriod> = periods
            .iter()
            .filter(|p| {
                p.tau.len() == dim_d
                    && p.tau.iter().zip(&lo).all(|(t, l)| *t >= l - tol && *t <= l + l_eta + tol)
            })
            .cloned()
            .collect();
        let centre: Vec<f64> = lo.iter().map(|l| l + 0.5 * l_eta).collect();
        let chosen = crate::lattice::select_translation(&in_window, &centre)
            .map_err(|_| Error::UncoveredCell { cell: cell.clone() })?;
        placements.push(Placement {
            cell,
            tau: chosen.tau.iter().map(|v| v.max(0.0)).collect(),
            z: chosen.z_tau,
            source_lattice_point: chosen.source_lattice_point.clone(),
        });
    }
    let d = dim_d as i32;
    let plan = PatchworkPlan {
        dim_d,
        h,
        t,
        s,
        l_eta,
        blocks_per_axis: k,
        q_s_measure: 2.0 * h * (s.powi(d) - total as f64 * t.powi(d)),
        q_s_bound: 2.0 * h * s.powi(d) * (1.0 - (t / pitch - t / s).powi(d)),
        placements,
    };
    check_plan(&plan)?;
    Ok(plan)
}

fn check_plan(plan: &PatchworkPlan) -> Result<()> {
    let (t, s) = (plan.t, plan.s);
    let tol = 1e-9 * s;
    for p in &plan.placements {
        if p.tau.iter().any(|&v| v < -tol || v + t > s + tol) {
            return Err(invalid(format!("block {:?} leaves (0, S)^d", p.cell)));
        }
    }
    for (i, p) in plan.placements.iter().enumerate() {
        for q in &plan.placements[i + 1..] {
            let overlap = p.tau.iter().zip(&q.tau).all(|(a, b)| (a - b).abs() < t - tol);
            if overlap {
                return Err(invalid(format!("blocks {:?} and {:?} overlap", p.cell, q.cell)));
            }
        }
    }
    if plan.q_s_measure > plan.q_s_bound * (1.0 + 1e-12) + 1e-12 {
        return Err(invalid(format!(
            "remainder measure {} exceeds its bound {}",
            plan.q_s_measure, plan.q_s_bound
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PatchworkField {
    pub u: Vec<f64>,
    /// Measure of the elements not touching any block.
    pub zero_region_measure: f64,
    /// Allowed gap to the planned `|Q_S|`: one element layer per block face.
    pub zero_region_tolerance: f64,
}

impl PatchworkField {
    pub fn matches_plan(&self, plan: &PatchworkPlan) -> bool {
        (self.zero_region_measure - plan.q_s_measure).abs() <= self.zero_region_tolerance
    }
}

/// `u_S(x, y) = ũ_T(x - τ_ℓ, y - z_ℓ)` on each block, zero elsewhere.
pub fn patchwork_assemble(ext: &ExtendedField, plan: &PatchworkPlan, s_grid: &SlabGrid) -> Result<PatchworkField> {
    let d = plan.dim_d;
    if s_grid.dim_d() != d
        || ext.base.dim_d() != d
        || s_grid.boundary() != LateralBoundary::Clamped
        || (s_grid.size() - plan.s).abs() > 1e-12 * plan.s
        || (ext.base.size() - plan.t).abs() > 1e-12 * plan.t
        || (s_grid.h() - plan.h).abs() > 1e-12 * plan.h
    {
        return Err(invalid("patchwork grids do not match the plan"));
    }
    if plan.placements.iter().any(|p| p.z.abs() > ext.grid.h() - ext.base.h()) {
        return Err(invalid("an almost-period defect exceeds the transverse extension"));
    }
    check_plan(plan)?;
    let blocks: Vec<(Vec<f64>, f64)> = plan.placements.iter().map(|p| (p.tau.clone(), p.z)).collect();
    let u = place_blocks(ext, &blocks, s_grid);

    let dx = s_grid.cell()[(0, 0)];
    let n_plane_el: usize = s_grid.intervals().iter().product();
    let touching = (0..n_plane_el)
        .filter(|&pe| {
            let (p, _) = s_grid.element_indices(pe);
            blocks.iter().any(|(tau, _)| {
                (0..d).all(|k| {
                    let x0 = p[k] as f64 * dx;
                    x0 < tau[k] + plan.t && x0 + dx > tau[k]
                })
            })
        })
        .count();
    let element_measure = dx.powi(d as i32) * 2.0 * plan.h;
    let zero_region_measure = (n_plane_el - touching) as f64 * element_measure;
    let face_layer = (plan.t + 2.0 * dx).powi(d as i32) - plan.t.powi(d as i32);
    Ok(PatchworkField {
        u,
        zero_region_measure,
        zero_region_tolerance: blocks.len() as f64 * 2.0 * plan.h * face_layer * (1.0 + 1e-9),
    })
}
