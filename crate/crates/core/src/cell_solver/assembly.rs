//! Q1 energy and gradient assembly with 2-point Gauss quadrature.
//!
//! The total deformation is `A x + u`; only `u` is stored. Energies are
//! normalized by `2 h |D|`, so a constant integrand assembles to itself.

use rayon::prelude::*;

use super::grid::SlabGrid;
use crate::energy::EnergyDensity;
use crate::error::{Error, Result};
use crate::linalg::{Mat, MAX_DIM};
use crate::reduce::{chunked_sum, pairwise_sum, CHUNK};

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];
const MAX_NODES: usize = 8;

/// Shape data shared by every element of a grid.
pub(crate) struct RefElement {
    nn: usize,
    nq: usize,
    /// Local position `(ξ_0, ξ_1, t)` of each quadrature point.
    local: Vec<[f64; 3]>,
    /// Physical gradients `(∂_x.., ∂_y)`, `q * nn + a`.
    grad: Vec<[f64; MAX_DIM]>,
    /// Quadrature weight times the element volume.
    weight: f64,
    /// Inverse of the in-plane element Jacobian.
    inv: Mat,
}

impl RefElement {
    pub(crate) fn new(grid: &SlabGrid) -> Result<Self> {
        let d = grid.dim_d();
        let nn = grid.nodes_per_element();
        let nq = nn;
        let cell = grid.cell();
        let (inv, det) = match d {
            1 => {
                let c = cell[(0, 0)];
                (Mat::from_row_major(1, 1, &[1.0 / c]).unwrap(), c)
            }
            _ => {
                let (a, b, c, e) = (cell[(0, 0)], cell[(0, 1)], cell[(1, 0)], cell[(1, 1)]);
                let det = a * e - b * c;
                (Mat::from_row_major(2, 2, &[e / det, -b / det, -c / det, a / det]).unwrap(), det)
            }
        };
        if !(det.abs() > 0.0 && det.is_finite()) {
            return Err(Error::InvalidInput("degenerate element".into()));
        }
        let dy = grid.dy();
        let mut local = Vec::with_capacity(nq);
        let mut grad = Vec::with_capacity(nq * nn);
        for q in 0..nq {
            // Quadrature point q uses the same bit layout as the corners.
            let mut coords = [0.0; 3];
            let mut ref_pt = [0.0; MAX_DIM];
            for k in 0..=d {
                ref_pt[k] = GAUSS[(q >> k) & 1];
            }
            coords[..d].copy_from_slice(&ref_pt[..d]);
            coords[2] = ref_pt[d];
            local.push(coords);
            for a in 0..nn {
                let (_, g_ref) = shape(a, &ref_pt, d);
                let mut g = inplane(&inv, &g_ref, d);
                g[d] = g_ref[d] / dy;
                grad.push(g);
            }
        }
        let weight = det.abs() * dy / nq as f64;
        Ok(RefElement { nn, nq, local, grad, weight, inv })
    }
}

/// `∇_x N = J^{-T} ∇_ξ N`.
fn inplane(inv: &Mat, g_ref: &[f64; MAX_DIM], d: usize) -> [f64; MAX_DIM] {
    let mut g = [0.0; MAX_DIM];
    for i in 0..d {
        g[i] = (0..d).map(|k| inv[(k, i)] * g_ref[k]).sum();
    }
    g
}

/// Trilinear (or bilinear) shape function of corner `a` and its reference
/// gradient.
fn shape(a: usize, p: &[f64; MAX_DIM], d: usize) -> (f64, [f64; MAX_DIM]) {
    let mut factors = [0.0; MAX_DIM];
    let mut slopes = [0.0; MAX_DIM];
    for k in 0..=d {
        if (a >> k) & 1 == 1 {
            factors[k] = p[k];
            slopes[k] = 1.0;
        } else {
            factors[k] = 1.0 - p[k];
            slopes[k] = -1.0;
        }
    }
    let v: f64 = factors[..=d].iter().product();
    let mut g = [0.0; MAX_DIM];
    for k in 0..=d {
        g[k] = slopes[k] * (0..=d).filter(|&l| l != k).map(|l| factors[l]).product::<f64>();
    }
    (v, g)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Value,
    Gradient,
    /// Sum of absolute gradient contributions, used as a round-off scale.
    AbsGradient,
}

/// Everything an element evaluation needs.
struct Ctx<'a> {
    grid: &'a SlabGrid,
    re: &'a RefElement,
    f: &'a EnergyDensity,
    a: &'a Mat,
    m: usize,
    d: usize,
    /// Density is evaluated at `(x_scale x, y)`.
    x_scale: f64,
    /// Multiplies `∂_y u` inside the gradient.
    y_scale: f64,
}

impl Ctx<'_> {
    fn element(&self, e: usize, u: &[f64], mode: Mode, out: &mut [f64]) -> Result<f64> {
        let (d, m, re) = (self.d, self.m, self.re);
        let mut nodes = [0usize; MAX_NODES];
        self.grid.element_nodes(e, &mut nodes);
        let mut ul = [[0.0; MAX_DIM]; MAX_NODES];
        for a in 0..re.nn {
            ul[a][..m].copy_from_slice(&u[nodes[a] * m..nodes[a] * m + m]);
        }
        let (p, j) = self.grid.element_indices(e);
        let y0 = self.grid.layer_y(j);
        let dy = self.grid.dy();
        let mut acc = 0.0;
        for q in 0..re.nq {
            let loc = re.local[q];
            let xp = self.grid.plane_point([p[0] as f64 + loc[0], p[1] as f64 + loc[1]]);
            let mut x = [0.0; MAX_DIM];
            for i in 0..d {
                x[i] = xp[i] * self.x_scale;
            }
            x[d] = y0 + loc[2] * dy;
            let gq = &re.grad[q * re.nn..(q + 1) * re.nn];
            let mut g = Mat::zeros(m, d + 1);
            for c in 0..m {
                for i in 0..d {
                    let mut s = self.a[(c, i)];
                    for a in 0..re.nn {
                        s += ul[a][c] * gq[a][i];
                    }
                    g[(c, i)] = s;
                }
                let mut s = 0.0;
                for a in 0..re.nn {
                    s += ul[a][c] * gq[a][d];
                }
                g[(c, d)] = self.y_scale * s;
            }
            let xs = &x[..=d];
            let v = if mode == Mode::Value {
                self.f.eval(xs, &g)
            } else {
                let (v, pk) = self.f.eval_with_grad(xs, &g);
                for a in 0..re.nn {
                    for c in 0..m {
                        let mut s = 0.0;
                        for i in 0..=d {
                            let scale = if i == d { self.y_scale } else { 1.0 };
                            let t = pk[(c, i)] * gq[a][i] * scale;
                            s += if mode == Mode::AbsGradient { t.abs() } else { t };
                        }
                        out[a * m + c] += re.weight * s;
                    }
                }
                v
            };
            if !v.is_finite() {
                return Err(Error::NonFinite { x: xs.to_vec(), value: v });
            }
            acc += v;
        }
        Ok(acc * re.weight)
    }
}

fn check_inputs(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid) -> Result<()> {
    let (d, m) = (grid.dim_d(), f.m());
    if f.dim_d() != d {
        return Err(Error::DimensionMismatch(format!(
            "density has d = {}, grid has d = {d}",
            f.dim_d()
        )));
    }
    if a.shape() != (m, d) {
        return Err(Error::DimensionMismatch(format!(
            "A is {:?}, expected {m}x{d}",
            a.shape()
        )));
    }
    if u.len() != grid.n_nodes() * m {
        return Err(Error::DimensionMismatch(format!(
            "field has {} entries, grid needs {}",
            u.len(),
            grid.n_nodes() * m
        )));
    }
    Ok(())
}

/// Normalization factor `1 / (2 h |D|)`.
fn normalization(grid: &SlabGrid) -> f64 {
    1.0 / (2.0 * grid.h() * grid.plane_measure())
}

fn ctx<'a>(grid: &'a SlabGrid, re: &'a RefElement, f: &'a EnergyDensity, a: &'a Mat) -> Ctx<'a> {
    Ctx {
        grid,
        re,
        f,
        a,
        m: f.m(),
        d: grid.dim_d(),
        x_scale: 1.0,
        y_scale: 1.0,
    }
}

/// `(1 / (2h |D|)) ∫ f(x, y, (A + ∇_x u | ∂_y u))`.
pub fn assemble_energy(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid) -> Result<f64> {
    check_inputs(u, a, f, grid)?;
    let re = RefElement::new(grid)?;
    let c = ctx(grid, &re, f, a);
    let total = chunked_sum(grid.n_elements(), |e| c.element(e, u, Mode::Value, &mut []))?;
    Ok(total * normalization(grid))
}

/// Energy of the unit-domain functional with `ε = eps` on a grid of
/// `(0,1)^d x (-h, h)`: the density is sampled at `x / ε` and the transverse
/// derivative is scaled by `1/ε`.
pub fn assemble_scaled_energy(
    u: &[f64],
    a: &Mat,
    f: &EnergyDensity,
    grid: &SlabGrid,
    eps: f64,
) -> Result<f64> {
    check_inputs(u, a, f, grid)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be > 0, got {eps}")));
    }
    let re = RefElement::new(grid)?;
    let c = Ctx {
        x_scale: 1.0 / eps,
        y_scale: 1.0 / eps,
        ..ctx(grid, &re, f, a)
    };
    let total = chunked_sum(grid.n_elements(), |e| c.element(e, u, Mode::Value, &mut []))?;
    Ok(total * normalization(grid))
}

fn energy_grad_mode(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid, mode: Mode) -> Result<(f64, Vec<f64>)> {
    check_inputs(u, a, f, grid)?;
    let re = RefElement::new(grid)?;
    let c = ctx(grid, &re, f, a);
    let m = c.m;
    let stride = re.nn * m;
    let n_el = grid.n_elements();
    let chunks: Vec<Result<(f64, Vec<f64>)>> = (0..n_el.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let lo = k * CHUNK;
            let hi = (lo + CHUNK).min(n_el);
            let mut local = vec![0.0; (hi - lo) * stride];
            let mut acc = 0.0;
            for e in lo..hi {
                let off = (e - lo) * stride;
                acc += c.element(e, u, mode, &mut local[off..off + stride])?;
            }
            Ok((acc, local))
        })
        .collect();
    let mut partial = Vec::with_capacity(chunks.len());
    let mut grad = vec![0.0; u.len()];
    let mut nodes = [0usize; MAX_NODES];
    for (k, chunk) in chunks.into_iter().enumerate() {
        let (acc, local) = chunk?;
        partial.push(acc);
        for (i, el) in local.chunks(stride).enumerate() {
            grid.element_nodes(k * CHUNK + i, &mut nodes);
            for a in 0..re.nn {
                for comp in 0..m {
                    grad[nodes[a] * m + comp] += el[a * m + comp];
                }
            }
        }
    }
    let norm = normalization(grid);
    for node in 0..grid.n_nodes() {
        let fixed = grid.is_fixed(node);
        for comp in 0..m {
            let g = &mut grad[node * m + comp];
            *g = if fixed { 0.0 } else { *g * norm };
        }
    }
    Ok((pairwise_sum(&partial) * norm, grad))
}

/// Energy and its gradient with respect to the nodal values; entries of
/// fixed nodes are zero.
pub fn energy_and_gradient(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid) -> Result<(f64, Vec<f64>)> {
    energy_grad_mode(u, a, f, grid, Mode::Gradient)
}

pub fn assemble_gradient(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid) -> Result<Vec<f64>> {
    Ok(energy_and_gradient(u, a, f, grid)?.1)
}

/// Per-dof sum of absolute gradient contributions. Cancellation in the
/// gradient cannot resolve values much below `1e-16` times this.
pub(crate) fn gradient_scale(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid) -> Result<Vec<f64>> {
    Ok(energy_grad_mode(u, a, f, grid, Mode::AbsGradient)?.1)
}

/// In-plane quadrature on one node layer: for every in-plane element and
/// Gauss point, the point, its weight and the full gradient
/// `(A + ∇_x u | ∂_y u)`. `∂_y u` averages the one-sided values of the
/// adjacent element layers.
pub(crate) struct LayerSample {
    pub x: [f64; MAX_DIM],
    pub weight: f64,
    pub gradient: Mat,
}

pub(crate) fn layer_samples(u: &[f64], a: &Mat, m: usize, grid: &SlabGrid, layer: usize) -> Result<Vec<LayerSample>> {
    let d = grid.dim_d();
    if layer > grid.n_y() {
        return Err(Error::InvalidInput(format!("layer {layer} outside 0..={}", grid.n_y())));
    }
    if u.len() != grid.n_nodes() * m || a.shape() != (m, d) {
        return Err(Error::DimensionMismatch("field or A does not match grid".into()));
    }
    let re = RefElement::new(grid)?;
    let n_q = 1usize << d;
    // In-plane weight: element weight without the transverse factor.
    let weight = re.weight * re.nq as f64 / grid.dy() / n_q as f64;
    let n_plane_el: usize = grid.intervals().iter().product();
    let mut out = Vec::with_capacity(n_plane_el * n_q);
    let mut nodes = [0usize; MAX_NODES];
    for pe in 0..n_plane_el {
        let (p, _) = grid.element_indices(pe);
        for q in 0..n_q {
            let mut xi = [0.0; MAX_DIM];
            for k in 0..d {
                xi[k] = GAUSS[(q >> k) & 1];
            }
            let mut g = Mat::zeros(m, d + 1);
            let mut sides = 0.0;
            // Element layer below (its face t = 1), then above (face t = 0).
            for (el_layer, t) in [(layer.wrapping_sub(1), 1.0), (layer, 0.0)] {
                if el_layer >= grid.n_y() {
                    continue;
                }
                grid.element_nodes(pe + n_plane_el * el_layer, &mut nodes);
                let mut pt = xi;
                pt[d] = t;
                for corner in 0..re.nn {
                    let (_, gr) = shape(corner, &pt, d);
                    let gx = inplane(&re.inv, &gr, d);
                    for c in 0..m {
                        let uc = u[nodes[corner] * m + c];
                        g[(c, d)] += uc * gr[d] / grid.dy();
                        // In-plane gradient is continuous across the layer.
                        if sides == 0.0 {
                            for i in 0..d {
                                g[(c, i)] += uc * gx[i];
                            }
                        }
                    }
                }
                sides += 1.0;
            }
            for c in 0..m {
                for i in 0..d {
                    g[(c, i)] += a[(c, i)];
                }
                g[(c, d)] /= sides;
            }
            let xp = grid.plane_point([p[0] as f64 + xi[0], p[1] as f64 + xi[1]]);
            let mut x = [0.0; MAX_DIM];
            x[..d].copy_from_slice(&xp[..d]);
            x[d] = grid.layer_y(layer);
            out.push(LayerSample { x, weight, gradient: g });
        }
    }
    Ok(out)
}

/// Unnormalized slice energies `g(y_j) = ∫_D f(x, y_j, ∇(Ax + u))`, one per
/// node layer.
pub fn layer_energies(u: &[f64], a: &Mat, f: &EnergyDensity, grid: &SlabGrid) -> Result<Vec<f64>> {
    check_inputs(u, a, f, grid)?;
    (0..=grid.n_y())
        .map(|j| {
            let samples = layer_samples(u, a, f.m(), grid, j)?;
            let vals: Result<Vec<f64>> = samples
                .iter()
                .map(|s| {
                    let xs = &s.x[..=grid.dim_d()];
                    let v = f.eval(xs, &s.gradient);
                    if v.is_finite() {
                        Ok(s.weight * v)
                    } else {
                        Err(Error::NonFinite { x: xs.to_vec(), value: v })
                    }
                })
                .collect();
            Ok(pairwise_sum(&vals?))
        })
        .collect()
}

/// Unnormalized energy of the flat extension of layer `layer` over
/// `[y_lo, y_hi]`: `∫_{y_lo}^{y_hi} ∫_D f(x, y, (A + ∇_x u(x, y_layer) | 0))`.
/// Uses 4-point Gauss-Legendre on sub-intervals no longer than `dy`.
pub fn cap_energy(
    u: &[f64],
    a: &Mat,
    f: &EnergyDensity,
    grid: &SlabGrid,
    layer: usize,
    y_lo: f64,
    y_hi: f64,
) -> Result<f64> {
    check_inputs(u, a, f, grid)?;
    if !(y_hi >= y_lo) {
        return Err(Error::InvalidInput(format!("empty cap [{y_lo}, {y_hi}]")));
    }
    const GL4: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    let d = grid.dim_d();
    let samples = layer_samples(u, a, f.m(), grid, layer)?;
    let n_sub = ((y_hi - y_lo) / grid.dy()).ceil().max(1.0) as usize;
    let len = (y_hi - y_lo) / n_sub as f64;
    let mut vals = Vec::with_capacity(samples.len() * n_sub * 4);
    for s in &samples {
        let mut g = s.gradient;
        for c in 0..f.m() {
            g[(c, d)] = 0.0;
        }
        for k in 0..n_sub {
            let mid = y_lo + (k as f64 + 0.5) * len;
            for (node, w) in GL4 {
                let mut x = s.x;
                x[d] = mid + 0.5 * len * node;
                let v = f.eval(&x[..=d], &g);
                if !v.is_finite() {
                    return Err(Error::NonFinite { x: x[..=d].to_vec(), value: v });
                }
                vals.push(s.weight * 0.5 * len * w * v);
            }
        }
    }
    Ok(pairwise_sum(&vals))
}

/// Largest per-sample `|A + ∇_x u|` on a layer; used by invariant checks.
pub(crate) fn max_inplane_gradient(u: &[f64], a: &Mat, m: usize, grid: &SlabGrid, layer: usize) -> Result<f64> {
    let d = grid.dim_d();
    let samples = layer_samples(u, a, m, grid, layer)?;
    Ok(samples
        .iter()
        .map(|s| {
            let mut n = 0.0;
            for c in 0..m {
                for i in 0..d {
                    n += s.gradient[(c, i)] * s.gradient[(c, i)];
                }
            }
            n.sqrt()
        })
        .fold(0.0, f64::max))
}
