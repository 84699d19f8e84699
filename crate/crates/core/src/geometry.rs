//! Cutting planes, the isometry onto frame coordinates, and commensurability.
//!
//! A frame for the plane `{x : <x, nu> = 0}` in `R^{d+1}` is an orthogonal
//! matrix `R` whose first `d` columns span the plane and whose last column is
//! the unit normal. Frame coordinates `(x, y)` map to ambient coordinates by
//! `R (x, y)`.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyDensity;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Mat, MAX_DIM};

/// Orthogonality tolerance on `R^T R - I`.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Tolerance used by the heuristic (floating-point) commensurability test.
pub const HEURISTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct IsometryFrame {
    dim_d: usize,
    normal: Vec<f64>,
    basis: Vec<Vec<f64>>,
    matrix_r: Mat,
    /// Primitive integer direction of the normal when the plane was given
    /// with exact rational coordinates.
    integer_normal: Option<Vec<i64>>,
}

impl IsometryFrame {
    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    /// Ambient dimension `d + 1`.
    pub fn ambient_dim(&self) -> usize {
        self.dim_d + 1
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Columns `pi_1, ..., pi_d, nu`.
    pub fn matrix_r(&self) -> &Mat {
        &self.matrix_r
    }

    pub fn integer_normal(&self) -> Option<&[i64]> {
        self.integer_normal.as_deref()
    }

    /// Frame coordinates to ambient coordinates: `R (x, y)`.
    pub fn to_ambient(&self, frame_point: &[f64]) -> Vec<f64> {
        let v = self.matrix_r.apply(frame_point);
        v[..self.ambient_dim()].to_vec()
    }

    /// Ambient coordinates to `(in-plane coordinates, transverse offset)`.
    pub fn to_frame(&self, ambient: &[f64]) -> (Vec<f64>, f64) {
        let v = self.matrix_r.transpose().apply(ambient);
        (v[..self.dim_d].to_vec(), v[self.dim_d])
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.ambient_dim();
        self.matrix_r
            .transpose()
            .matmul(&self.matrix_r)
            .max_abs_diff(&Mat::identity(n))
    }
}

/// Builds the frame for the plane with the given (not necessarily unit)
/// normal.
///
/// The in-plane basis comes from Gram-Schmidt applied to the `d` standard
/// basis vectors least aligned with the normal, taken in index order; ties in
/// alignment go to the lower index. The result depends only on the input.
pub fn build_frame(normal: &[f64]) -> Result<IsometryFrame> {
    let n = normal.len();
    if !(2..=MAX_DIM).contains(&n) {
        return Err(invalid(format!(
            "normal must have 2 or 3 components (d = 1 or 2), got {n}"
        )));
    }
    if normal.iter().any(|v| !v.is_finite()) {
        return Err(invalid("normal has non-finite components"));
    }
    let len = linalg::norm(normal);
    if len == 0.0 || !len.is_finite() {
        return Err(invalid("normal must be a nonzero vector"));
    }
    let nu: Vec<f64> = normal.iter().map(|v| v / len).collect();
    if (linalg::norm(&nu) - 1.0).abs() > 1e-12 {
        return Err(invalid("normal cannot be normalized in floating point"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nu[a].abs().total_cmp(&nu[b].abs()).then(a.cmp(&b)));
    let mut seeds: Vec<usize> = order[..n - 1].to_vec();
    seeds.sort_unstable();

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for &s in &seeds {
        let mut v = vec![0.0; n];
        v[s] = 1.0;
        // Two passes of modified Gram-Schmidt keep R orthogonal to ~1e-16.
        for _ in 0..2 {
            let c = linalg::dot(&v, &nu);
            v.iter_mut().zip(&nu).for_each(|(a, b)| *a -= c * b);
            for q in &basis {
                let c = linalg::dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let l = linalg::norm(&v);
        if l < 1e-8 {
            return Err(invalid("degenerate normal: Gram-Schmidt seed collapsed"));
        }
        v.iter_mut().for_each(|a| *a /= l);
        basis.push(v);
    }

    let mut cols: Vec<&[f64]> = basis.iter().map(|b| b.as_slice()).collect();
    cols.push(&nu);
    let matrix_r = Mat::from_columns(&cols);
    let frame = IsometryFrame {
        dim_d: n - 1,
        normal: nu,
        basis,
        matrix_r,
        integer_normal: None,
    };
    debug_assert!(frame.orthogonality_defect() < ORTHOGONALITY_TOL);
    Ok(frame)
}

/// Builds a frame from an exactly rational normal. The frame remembers the
/// primitive integer direction so that commensurability can be certified.
pub fn build_frame_exact(normal: &[Ratio<i64>]) -> Result<IsometryFrame> {
    let ints = primitive_integer_vector(normal)?;
    let floats: Vec<f64> = ints.iter().map(|&v| v as f64).collect();
    let mut frame = build_frame(&floats)?;
    frame.integer_normal = Some(ints);
    Ok(frame)
}

/// Frame for the line through the origin at angle `theta` (radians) from the
/// first axis, in `R^2`.
pub fn build_frame_from_angle(theta: f64) -> Result<IsometryFrame> {
    if !theta.is_finite() {
        return Err(invalid("angle must be finite"));
    }
    build_frame(&[-theta.sin(), theta.cos()])
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn primitive_integer_vector(v: &[Ratio<i64>]) -> Result<Vec<i64>> {
    if v.iter().all(|r| *r.numer() == 0) {
        return Err(invalid("normal must be a nonzero vector"));
    }
    let mut lcm: i128 = 1;
    for r in v {
        let d = *r.denom() as i128;
        lcm = lcm / gcd(lcm, d) * d;
        if lcm > i64::MAX as i128 {
            return Err(invalid("rational normal denominators overflow"));
        }
    }
    let scaled: Vec<i128> = v
        .iter()
        .map(|r| *r.numer() as i128 * (lcm / *r.denom() as i128))
        .collect();
    let g = scaled.iter().fold(0, |acc, &x| gcd(acc, x));
    scaled
        .iter()
        .map(|&x| i64::try_from(x / g).map_err(|_| invalid("rational normal entries overflow")))
        .collect()
}

/// Parses `"p/q"`, `"p"` or a decimal such as `"-0.125"` into an exact
/// rational.
pub fn parse_rational(text: &str) -> Result<Ratio<i64>> {
    let t = text.trim();
    if t.is_empty() {
        return Err(invalid("empty rational"));
    }
    if let Some((p, q)) = t.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| invalid(format!("bad numerator in {t:?}")))?;
        let q: i64 = q.trim().parse().map_err(|_| invalid(format!("bad denominator in {t:?}")))?;
        if q == 0 {
            return Err(invalid(format!("zero denominator in {t:?}")));
        }
        if p == i64::MIN || q == i64::MIN {
            return Err(invalid(format!("{t:?} is out of range")));
        }
        return Ok(Ratio::new(p, q));
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(invalid(format!("{t:?} is not a rational number")));
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(invalid(format!("{t:?} is not a rational number")));
    }
    if frac_part.len() > 15 {
        return Err(invalid(format!("{t:?} has too many decimal digits")));
    }
    let digits = format!("{int_part}{frac_part}");
    let num: i64 = if digits.is_empty() {
        0
    } else {
        digits
            .parse()
            .map_err(|_| invalid(format!("{t:?} is out of range")))?
    };
    let den = 10i64.pow(frac_part.len() as u32);
    let num = if neg { -num } else { num };
    Ok(Ratio::new(num, den))
}

/// How a cutting plane is given in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlaneSpec {
    Exact(Vec<Ratio<i64>>),
    Float(Vec<f64>),
    /// Angle of the line from the first axis, `d = 1` only.
    Angle(f64),
}

impl PlaneSpec {
    /// Integers and rational strings are exact; any TOML float makes the
    /// whole normal floating point.
    pub fn from_scalars(entries: &[Scalar]) -> Result<PlaneSpec> {
        let exact: Option<Vec<Ratio<i64>>> = entries
            .iter()
            .map(|s| match s {
                Scalar::Int(i) => Some(Ratio::from_integer(*i)),
                Scalar::Text(t) => parse_rational(t).ok(),
                Scalar::Float(_) => None,
            })
            .collect();
        if let Some(e) = exact {
            return Ok(PlaneSpec::Exact(e));
        }
        let floats = entries
            .iter()
            .map(|s| match s {
                Scalar::Int(i) => Ok(*i as f64),
                Scalar::Float(f) => Ok(*f),
                Scalar::Text(t) => match parse_rational(t) {
                    Ok(r) => Ok(*r.numer() as f64 / *r.denom() as f64),
                    Err(_) => t
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| invalid(format!("cannot parse normal entry {t:?}"))),
                },
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(PlaneSpec::Float(floats))
    }

    pub fn build(&self) -> Result<IsometryFrame> {
        match self {
            PlaneSpec::Exact(r) => build_frame_exact(r),
            PlaneSpec::Float(v) => build_frame(v),
            PlaneSpec::Angle(theta) => build_frame_from_angle(*theta),
        }
    }
}

/// Density `f(x, A) = ftilde(R x, A R^T)` in frame coordinates.
///
/// With `u = utilde o phi`, the chain rule gives `grad u = (grad utilde) R`,
/// so the ambient gradient seen by `ftilde` is `A R^T`.
pub fn pull_back_density(ftilde: &EnergyDensity, frame: &IsometryFrame) -> Result<EnergyDensity> {
    if ftilde.dim_d() != frame.dim_d() {
        return Err(Error::DimensionMismatch(format!(
            "density is defined on R^{} but the frame lives in R^{}",
            ftilde.dim_d() + 1,
            frame.ambient_dim()
        )));
    }
    ftilde.with_rotation(*frame.matrix_r())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommensurabilityReport {
    /// Rank `n` of `Pi ∩ Z^{d+1}` as seen within the search bound.
    pub lattice_rank: usize,
    /// Independent lattice vectors in the plane, shortest first.
    pub generators: Vec<Vec<i64>>,
    /// True when decided in exact integer arithmetic.
    pub certified: bool,
    pub denominator_bound: i64,
}

impl CommensurabilityReport {
    pub fn is_incommensurate(&self) -> bool {
        self.lattice_rank == 0
    }
}

/// Searches integer vectors with entries in `[-bound, bound]` lying in the
/// plane and returns a maximal independent set of the shortest ones.
///
/// Exact when the frame came from a rational normal; otherwise
/// `|<z, nu>| < 1e-12 * max(1, |z|_1)` decides membership and the report is
/// flagged uncertified. Cost is `O((2 bound + 1)^d)`.
pub fn classify_rationality(frame: &IsometryFrame, denominator_bound: i64) -> Result<CommensurabilityReport> {
    if denominator_bound < 1 {
        return Err(invalid("denominator_bound must be >= 1"));
    }
    let n = frame.ambient_dim();
    let bound = denominator_bound;
    let exact = frame.integer_normal().map(|v| v.to_vec());
    let nu = frame.normal();

    // Solve for the coordinate with the largest normal component.
    let pivot = (0..n)
        .max_by(|&a, &b| nu[a].abs().total_cmp(&nu[b].abs()).then(b.cmp(&a)))
        .expect("non-empty normal");
    let free: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();

    let mut candidates: Vec<Vec<i64>> = Vec::new();
    let mut z = vec![0i64; n];
    let mut counter = vec![-bound; free.len()];
    loop {
        for (k, &i) in free.iter().enumerate() {
            z[i] = counter[k];
        }
        let zp = match &exact {
            Some(ints) => {
                let s: i128 = free.iter().map(|&i| z[i] as i128 * ints[i] as i128).sum();
                let np = ints[pivot] as i128;
                if s % np == 0 {
                    Some(-s / np)
                } else {
                    None
                }
            }
            None => {
                let s: f64 = free.iter().map(|&i| z[i] as f64 * nu[i]).sum();
                let zp = (-s / nu[pivot]).round();
                if zp.abs() <= bound as f64 {
                    let mut full = z.clone();
                    full[pivot] = zp as i64;
                    let l1: f64 = full.iter().map(|v| v.unsigned_abs() as f64).sum();
                    let ip: f64 = full.iter().zip(nu).map(|(a, b)| *a as f64 * b).sum();
                    (ip.abs() < HEURISTIC_TOL * l1.max(1.0)).then_some(zp as i128)
                } else {
                    None
                }
            }
        };
        if let Some(zp) = zp {
            if zp.abs() <= bound as i128 {
                z[pivot] = zp as i64;
                let first_nonzero = z.iter().find(|&&v| v != 0);
                if let Some(&f) = first_nonzero {
                    if f > 0 {
                        candidates.push(z.clone());
                    }
                }
            }
        }
        // Odometer increment over the free coordinates.
        let mut k = 0;
        loop {
            if k == counter.len() {
                return Ok(finish_report(candidates, exact.is_some(), bound));
            }
            counter[k] += 1;
            if counter[k] <= bound {
                break;
            }
            counter[k] = -bound;
            k += 1;
        }
    }
}

fn finish_report(mut candidates: Vec<Vec<i64>>, certified: bool, bound: i64) -> CommensurabilityReport {
    let norm2 = |v: &Vec<i64>| v.iter().map(|&x| x as i128 * x as i128).sum::<i128>();
    candidates.sort_by(|a, b| norm2(a).cmp(&norm2(b)).then_with(|| a.cmp(b)));
    let mut generators: Vec<Vec<i64>> = Vec::new();
    for c in candidates {
        let mut trial = generators.clone();
        trial.push(c.clone());
        if gram_determinant(&trial) != 0 {
            generators = trial;
        }
    }
    CommensurabilityReport {
        lattice_rank: generators.len(),
        generators,
        certified,
        denominator_bound: bound,
    }
}

/// Determinant of the Gram matrix of up to three integer vectors; nonzero
/// iff the vectors are linearly independent.
fn gram_determinant(vs: &[Vec<i64>]) -> i128 {
    let k = vs.len();
    let g = |i: usize, j: usize| -> i128 {
        vs[i].iter().zip(&vs[j]).map(|(&a, &b)| a as i128 * b as i128).sum()
    };
    match k {
        0 => 1,
        1 => g(0, 0),
        2 => g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0),
        3 => {
            g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
                - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
                + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
        }
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn golden() -> f64 {
        (1.0 + 5f64.sqrt()) / 2.0
    }

    #[test]
    fn axis_plane_gives_identity_frame() {
        let f = build_frame(&[0.0, 1.0]).unwrap();
        assert_eq!(f.basis()[0], vec![1.0, 0.0]);
        assert_eq!(*f.matrix_r(), Mat::identity(2));
    }

    #[test]
    fn golden_frame_basis_matches_hand_gram_schmidt() {
        let g = golden();
        let s = (1.0 + g * g).sqrt();
        let f = build_frame(&[1.0, -g]).unwrap();
        assert!((f.basis()[0][0] - g / s).abs() < 1e-15);
        assert!((f.basis()[0][1] - 1.0 / s).abs() < 1e-15);
        assert!(f.orthogonality_defect() < 1e-12);
    }

    #[test]
    fn diagonal_plane_in_three_dimensions() {
        let f = build_frame(&[1.0, 1.0, 1.0]).unwrap();
        assert!(f.orthogonality_defect() < 1e-12);
        for b in f.basis() {
            assert!(linalg::dot(b, f.normal()).abs() < 1e-15);
        }
        let e3 = f.to_ambient(&[0.0, 0.0, 1.0]);
        for (a, b) in e3.iter().zip(f.normal()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_normal_is_rejected() {
        assert!(build_frame(&[0.0, 0.0]).is_err());
        assert!(build_frame(&[0.0, f64::NAN]).is_err());
        assert!(build_frame(&[1.0]).is_err());
    }

    #[test]
    fn rebuilding_from_returned_normal_is_orthogonal() {
        let f = build_frame(&[0.3, -1.7, 2.2]).unwrap();
        let g = build_frame(f.normal()).unwrap();
        assert!(g.orthogonality_defect() < 1e-12);
        assert_eq!(f, g);
    }

    #[test]
    fn angle_frame_matches_normal_frame() {
        let theta = 0.4f64;
        let f = build_frame_from_angle(theta).unwrap();
        assert!((f.normal()[0] + theta.sin()).abs() < 1e-15);
        assert!((f.normal()[1] - theta.cos()).abs() < 1e-15);
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("3/6").unwrap(), Ratio::new(1, 2));
        assert_eq!(parse_rational("-0.125").unwrap(), Ratio::new(-1, 8));
        assert_eq!(parse_rational("7").unwrap(), Ratio::from_integer(7));
        assert_eq!(parse_rational(".5").unwrap(), Ratio::new(1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("-").is_err());
        assert!(parse_rational("1e3").is_err());
    }

    #[test]
    fn classify_axis_plane() {
        let f = build_frame_exact(&[Ratio::from_integer(0), Ratio::from_integer(1)]).unwrap();
        let r = classify_rationality(&f, 5).unwrap();
        assert_eq!(r.lattice_rank, 1);
        assert_eq!(r.generators, vec![vec![1, 0]]);
        assert!(r.certified);
    }

    #[test]
    fn classify_one_minus_two() {
        let f = build_frame_exact(&[Ratio::from_integer(1), Ratio::from_integer(-2)]).unwrap();
        let r = classify_rationality(&f, 10).unwrap();
        assert_eq!(r.generators, vec![vec![2, 1]]);
        // Heuristic path agrees.
        let h = classify_rationality(&build_frame(&[1.0, -2.0]).unwrap(), 10).unwrap();
        assert_eq!(h.generators, vec![vec![2, 1]]);
        assert!(!h.certified);
    }

    #[test]
    fn golden_plane_is_incommensurate_up_to_ten_thousand() {
        let f = build_frame(&[1.0, -golden()]).unwrap();
        let r = classify_rationality(&f, 10_000).unwrap();
        assert_eq!(r.lattice_rank, 0);
        assert!(r.is_incommensurate());
    }

    #[test]
    fn rational_plane_in_three_dimensions_has_rank_two() {
        let n = [Ratio::from_integer(1), Ratio::from_integer(2), Ratio::from_integer(3)];
        let f = build_frame_exact(&n).unwrap();
        let r = classify_rationality(&f, 4).unwrap();
        assert_eq!(r.lattice_rank, 2);
        for g in &r.generators {
            assert_eq!(g[0] + 2 * g[1] + 3 * g[2], 0);
        }
    }
}
