//! Plain-text nodal field dumps and point sampling of Q1 fields.
//!
//! Dump layout: comment lines start with `#`; one line
//! `# dim=<k> m=<m> nodes=<n>` declares the shape; each data line is
//! `index x_1 .. x_k u_1 .. u_m`, whitespace separated, indices ascending
//! from zero.

use std::fmt::Write as _;

use super::grid::{LateralBoundary, SlabGrid};
use crate::error::{Error, Result};
use crate::linalg::MAX_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct DumpRow {
    pub index: usize,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodalDump {
    /// Number of coordinates per node (`d + 1`).
    pub dim: usize,
    pub m: usize,
    pub rows: Vec<DumpRow>,
}

impl NodalDump {
    /// Flattened node-major values.
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.values.iter().copied()).collect()
    }
}

/// Serializes `u` on `grid`. Floats use the shortest representation that
/// round-trips.
pub fn write_field(grid: &SlabGrid, u: &[f64], m: usize) -> Result<String> {
    if m == 0 || m > MAX_DIM || u.len() != grid.n_nodes() * m {
        return Err(Error::DimensionMismatch(format!(
            "field has {} entries, grid needs {} x {m}",
            u.len(),
            grid.n_nodes()
        )));
    }
    let dim = grid.dim_d() + 1;
    let mut out = String::new();
    out.push_str("# filmhom nodal field\n");
    let _ = writeln!(out, "# dim={dim} m={m} nodes={}", grid.n_nodes());
    for node in 0..grid.n_nodes() {
        let _ = write!(out, "{node}");
        for c in grid.node_coords(node) {
            let _ = write!(out, " {c:e}");
        }
        for v in &u[node * m..node * m + m] {
            let _ = write!(out, " {v:e}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("nodal field line {line}: {msg}"))
}

/// Parses the format produced by [`write_field`].
pub fn parse_field(text: &str) -> Result<NodalDump> {
    let mut shape: Option<(usize, usize, usize)> = None;
    let mut rows = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let ln = ln + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if comment.starts_with("dim=") {
                if shape.is_some() {
                    return Err(parse_err(ln, "duplicate shape line"));
                }
                shape = Some(parse_shape(comment).map_err(|m| parse_err(ln, m))?);
            }
            continue;
        }
        let (dim, m, nodes) = shape.ok_or_else(|| parse_err(ln, "data before the shape line"))?;
        let mut parts = line.split_whitespace();
        let index: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "bad node index"))?;
        if index != rows.len() {
            return Err(parse_err(ln, format!("expected node {}, found {index}", rows.len())));
        }
        if index >= nodes {
            return Err(parse_err(ln, format!("more than the declared {nodes} nodes")));
        }
        let nums: Vec<f64> = parts
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        if nums.len() != dim + m {
            return Err(parse_err(ln, format!("expected {} numbers, found {}", dim + m, nums.len())));
        }
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(ln, "non-finite value"));
        }
        rows.push(DumpRow {
            index,
            coords: nums[..dim].to_vec(),
            values: nums[dim..].to_vec(),
        });
    }
    let (dim, m, nodes) = shape.ok_or_else(|| Error::InvalidInput("nodal field: missing shape line".into()))?;
    if rows.len() != nodes {
        return Err(Error::InvalidInput(format!(
            "nodal field: declared {nodes} nodes, found {}",
            rows.len()
        )));
    }
    Ok(NodalDump { dim, m, rows })
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let mut dim = None;
    let mut m = None;
    let mut nodes = None;
    for tok in s.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("bad shape token `{tok}`"))?;
        let v: usize = v.parse().map_err(|_| format!("bad value in `{tok}`"))?;
        let slot = match k {
            "dim" => &mut dim,
            "m" => &mut m,
            "nodes" => &mut nodes,
            _ => return Err(format!("unknown shape key `{k}`")),
        };
        if slot.replace(v).is_some() {
            return Err(format!("duplicate shape key `{k}`"));
        }
    }
    let (dim, m, nodes) = match (dim, m, nodes) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("shape line needs dim, m and nodes".into()),
    };
    if !(2..=MAX_DIM).contains(&dim) || !(1..=MAX_DIM).contains(&m) {
        return Err(format!("unsupported shape dim={dim} m={m}"));
    }
    Ok((dim, m, nodes))
}

/// Value of the Q1 field at `point = (x, y)` on a clamped slab grid, or
/// `None` outside the slab (with a relative slack of `1e-12`).
pub fn sample_field(grid: &SlabGrid, u: &[f64], m: usize, point: &[f64]) -> Option<[f64; MAX_DIM]> {
    debug_assert_eq!(grid.boundary(), LateralBoundary::Clamped);
    let d = grid.dim_d();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    let slack = 1e-12;
    for k in 0..=d {
        let (s, n) = if k < d {
            (point[k] / grid.cell()[(k, k)], grid.intervals()[k])
        } else {
            ((point[d] + grid.h()) / grid.dy(), grid.n_y())
        };
        if !(s >= -slack * n as f64 && s <= n as f64 * (1.0 + slack)) {
            return None;
        }
        let e = (s.floor().max(0.0) as usize).min(n - 1);
        base[k] = e;
        frac[k] = (s - e as f64).clamp(0.0, 1.0);
    }
    let mut out = [0.0; MAX_DIM];
    for corner in 0..(1usize << (d + 1)) {
        let mut w = 1.0;
        let mut plane = [0usize; 2];
        for k in 0..=d {
            let bit = (corner >> k) & 1;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            if k < d {
                plane[k] = base[k] + bit;
            }
        }
        if w == 0.0 {
            continue;
        }
        let node = grid.node_index(plane, base[d] + ((corner >> d) & 1));
        for c in 0..m {
            out[c] += w * u[node * m + c];
        }
    }
    Some(out)
}
