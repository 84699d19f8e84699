//! Cut-and-project enumeration of almost periods.
//!
//! Lattice points `z ∈ Z^{d+1}` within distance `eta` of the cutting plane
//! project to in-plane translations `tau` under which a periodic medium is
//! nearly invariant. In frame coordinates `z = R (tau, z_tau)`; the transverse
//! part `z_tau` is the defect.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::IsometryFrame;

/// Default cap on the number of lattice candidates an enumeration may visit.
pub const DEFAULT_CANDIDATE_CAP: u64 = 50_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AlmostPeriod {
    /// In-plane translation, frame coordinates.
    pub tau: Vec<f64>,
    /// Transverse shift along the normal.
    pub z_tau: f64,
    /// `|z_tau|`.
    pub defect: f64,
    pub source_lattice_point: Vec<i64>,
}

impl AlmostPeriod {
    pub fn tau_norm(&self) -> f64 {
        self.tau.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// The full frame-coordinate shift `(tau, z_tau)`.
    pub fn shift(&self) -> Vec<f64> {
        self.tau.iter().copied().chain([self.z_tau]).collect()
    }
}

/// Almost periods at level `eta` within an in-plane radius.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodSet {
    pub eta: f64,
    pub radius: f64,
    pub periods: Vec<AlmostPeriod>,
}

/// Axis-aligned box in plane coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Self {
        Region {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    fn farthest_corner_norm(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InclusionReport {
    pub eta: f64,
    /// Every axis-aligned cube of side `l_eta` inside the region contains an
    /// almost period.
    pub l_eta: f64,
    pub region: Region,
    /// Side of the largest empty cube found.
    pub gaps: f64,
    /// Resolution of the certification grid (0 when the sweep is exact).
    pub grid_step: f64,
}

/// All `z ∈ Z^{d+1}` with `|<z, nu>| < eta` and in-plane distance
/// `|z - <z, nu> nu| <= radius`, sorted by `|tau|` and then by source point.
pub fn almost_periods(frame: &IsometryFrame, eta: f64, radius: f64) -> Result<PeriodSet> {
    almost_periods_capped(frame, eta, radius, DEFAULT_CANDIDATE_CAP)
}

pub fn almost_periods_capped(frame: &IsometryFrame, eta: f64, radius: f64, cap: u64) -> Result<PeriodSet> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be > 0, got {eta}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("radius must be > 0, got {radius}")));
    }
    let n = frame.ambient_dim();
    let nu = frame.normal();
    // |z|^2 = |tau|^2 + z_tau^2 < radius^2 + eta^2.
    let bound = (radius * radius + eta * eta).sqrt().floor() as i64;
    // Outer loop runs over every coordinate but the pivot; the pivot range
    // comes from the slab condition.
    let pivot = (0..n)
        .max_by(|&a, &b| nu[a].abs().total_cmp(&nu[b].abs()).then(b.cmp(&a)))
        .expect("non-empty normal");
    let free: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
    let width = 2 * bound as u64 + 1;
    let outer = width.checked_pow(free.len() as u32).unwrap_or(u64::MAX);
    if outer > cap {
        return Err(Error::ResourceLimit(format!(
            "radius {radius} needs {outer} outer candidates (cap {cap}); use a smaller radius"
        )));
    }

    let r2 = radius * radius;
    let np = nu[pivot];
    let mut periods: Vec<AlmostPeriod> = (0..outer)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let mut z = vec![0i64; n];
            let mut rem = idx;
            for &i in &free {
                z[i] = (rem % width) as i64 - bound;
                rem /= width;
            }
            let s: f64 = free.iter().map(|&i| z[i] as f64 * nu[i]).sum();
            // |s + zp * np| < eta  <=>  zp in an open interval of length 2 eta / |np|.
            let (a, b) = ((-eta - s) / np, (eta - s) / np);
            let (lo, hi) = (a.min(b), a.max(b));
            let zlo = (lo.floor() as i64).max(-bound);
            let zhi = (hi.ceil() as i64).min(bound);
            let mut out = Vec::new();
            for zp in zlo..=zhi {
                z[pivot] = zp;
                if let Some(ap) = decompose(frame, &z, eta, r2) {
                    out.push(ap);
                }
            }
            out.into_iter()
        })
        .collect();
    sort_periods(&mut periods);
    Ok(PeriodSet { eta, radius, periods })
}

fn decompose(frame: &IsometryFrame, z: &[i64], eta: f64, r2: f64) -> Option<AlmostPeriod> {
    let zf: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let (tau, z_tau) = frame.to_frame(&zf);
    if z_tau.abs() >= eta {
        return None;
    }
    let t2: f64 = tau.iter().map(|t| t * t).sum();
    if t2 > r2 {
        return None;
    }
    Some(AlmostPeriod {
        tau,
        z_tau,
        defect: z_tau.abs(),
        source_lattice_point: z.to_vec(),
    })
}

fn sort_periods(periods: &mut [AlmostPeriod]) {
    periods.sort_by(|a, b| {
        a.tau_norm()
            .total_cmp(&b.tau_norm())
            .then_with(|| a.source_lattice_point.cmp(&b.source_lattice_point))
    });
}

/// Empirical inclusion length of the almost periods over `region`.
///
/// For `d = 1` this is an exact sweep over sorted translations. For `d = 2`
/// it is certified on a grid of step `g`: if every grid-anchored square of
/// side `s` contains a translation, every square of side `s + g` does.
pub fn inclusion_length(set: &PeriodSet, region: &Region) -> Result<InclusionReport> {
    if set.periods.is_empty() {
        return Err(invalid("inclusion length needs a non-empty list of almost periods"));
    }
    let dim = set.periods[0].tau.len();
    if region.lo.len() != dim || region.hi.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "region has dimension {}, almost periods have {dim}",
            region.lo.len()
        )));
    }
    if region.lo.iter().zip(&region.hi).any(|(a, b)| !(a < b)) {
        return Err(invalid("region must have lo < hi in every direction"));
    }
    if region.farthest_corner_norm() > set.radius * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "region reaches distance {} but periods were enumerated only up to radius {}",
            region.farthest_corner_norm(),
            set.radius
        )));
    }
    let inside: Vec<&AlmostPeriod> = set
        .periods
        .iter()
        .filter(|p| {
            p.tau
                .iter()
                .zip(region.lo.iter().zip(&region.hi))
                .all(|(t, (lo, hi))| t >= lo && t <= hi)
        })
        .collect();
    if inside.is_empty() {
        return Err(invalid("no almost period lies inside the region"));
    }
    match dim {
        1 => {
            let mut ts: Vec<f64> = inside.iter().map(|p| p.tau[0]).collect();
            ts.sort_by(f64::total_cmp);
            let mut gap = (ts[0] - region.lo[0]).max(region.hi[0] - ts[ts.len() - 1]);
            for w in ts.windows(2) {
                gap = gap.max(w[1] - w[0]);
            }
            Ok(InclusionReport {
                eta: set.eta,
                l_eta: gap,
                region: region.clone(),
                gaps: gap,
                grid_step: 0.0,
            })
        }
        2 => Ok(inclusion_length_2d(set.eta, &inside, region)),
        _ => Err(invalid("inclusion length supports d = 1 or 2")),
    }
}

fn inclusion_length_2d(eta: f64, inside: &[&AlmostPeriod], region: &Region) -> InclusionReport {
    const STEPS: usize = 200;
    let width = (region.hi[0] - region.lo[0]).max(region.hi[1] - region.lo[1]);
    let g = width / STEPS as f64;
    let pts: Vec<[f64; 2]> = inside.iter().map(|p| [p.tau[0], p.tau[1]]).collect();
    // Does every anchored square [s, s + side]^2 inside the region hold a point?
    let covered = |side: f64| -> bool {
        let nx = ((region.hi[0] - region.lo[0] - side) / g).floor().max(0.0) as usize;
        let ny = ((region.hi[1] - region.lo[1] - side) / g).floor().max(0.0) as usize;
        (0..=nx).into_par_iter().all(|i| {
            let x0 = (region.lo[0] + i as f64 * g).min(region.hi[0] - side);
            (0..=ny).all(|j| {
                let y0 = (region.lo[1] + j as f64 * g).min(region.hi[1] - side);
                pts.iter()
                    .any(|p| p[0] >= x0 && p[0] <= x0 + side && p[1] >= y0 && p[1] <= y0 + side)
            })
        })
    };
    // Smallest covered side on the grid, by bisection over step counts.
    let (mut lo, mut hi) = (0usize, STEPS);
    if !covered(hi as f64 * g) {
        return InclusionReport {
            eta,
            l_eta: f64::INFINITY,
            region: region.clone(),
            gaps: width,
            grid_step: g,
        };
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if covered(mid as f64 * g) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let side = hi as f64 * g;
    InclusionReport {
        eta,
        l_eta: side + g,
        region: region.clone(),
        gaps: lo as f64 * g,
        grid_step: g,
    }
}

/// Period with `tau` closest to `target`; ties go to the smaller defect and
/// then to the lexicographically smaller source point.
pub fn select_translation<'a>(periods: &'a [AlmostPeriod], target: &[f64]) -> Result<&'a AlmostPeriod> {
    periods
        .iter()
        .map(|p| {
            let d2: f64 = p.tau.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
            (d2, p)
        })
        .min_by(|(da, a), (db, b)| {
            da.total_cmp(db)
                .then(a.defect.total_cmp(&b.defect))
                .then_with(|| a.source_lattice_point.cmp(&b.source_lattice_point))
        })
        .map(|(_, p)| p)
        .ok_or_else(|| invalid("cannot select a translation from an empty list"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_frame;

    fn golden_frame() -> IsometryFrame {
        let g = (1.0 + 5f64.sqrt()) / 2.0;
        build_frame(&[1.0, -g]).unwrap()
    }

    #[test]
    fn axis_plane_periods_are_integers() {
        let f = build_frame(&[0.0, 1.0]).unwrap();
        let set = almost_periods(&f, 0.01, 5.0).unwrap();
        let mut taus: Vec<f64> = set.periods.iter().map(|p| p.tau[0]).collect();
        taus.sort_by(f64::total_cmp);
        assert_eq!(taus, (-5..=5).map(|k| k as f64).collect::<Vec<_>>());
        assert!(set.periods.iter().all(|p| p.z_tau == 0.0));
        let rep = inclusion_length(&set, &Region::cube(-5.0, 5.0, 1)).unwrap();
        assert_eq!(rep.l_eta, 1.0);
    }

    #[test]
    fn golden_plane_contains_fibonacci_point() {
        let set = almost_periods(&golden_frame(), 0.03, 20.0).unwrap();
        let p = set
            .periods
            .iter()
            .find(|p| p.source_lattice_point == vec![13, 8])
            .expect("(13, 8) is a 0.03-almost period");
        assert!((p.defect - 0.0293).abs() < 1e-3);
    }

    #[test]
    fn coarse_defect_gives_nonempty_set() {
        let set = almost_periods(&golden_frame(), 0.5, 3.0).unwrap();
        assert!(set.periods.len() > 1);
    }

    #[test]
    fn invariant_frame_decomposition() {
        let f = golden_frame();
        let set = almost_periods(&f, 0.1, 30.0).unwrap();
        for p in &set.periods {
            let back = f.to_ambient(&p.shift());
            for (a, b) in back.iter().zip(&p.source_lattice_point) {
                assert!((a - *b as f64).abs() < 1e-12);
            }
            assert_eq!(p.defect, p.z_tau.abs());
        }
    }

    #[test]
    fn candidate_cap_is_enforced() {
        let err = almost_periods_capped(&golden_frame(), 0.1, 1000.0, 100).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
    }

    #[test]
    fn region_beyond_radius_is_rejected() {
        let set = almost_periods(&golden_frame(), 0.1, 10.0).unwrap();
        assert!(inclusion_length(&set, &Region::cube(-20.0, 20.0, 1)).is_err());
    }

    #[test]
    fn empty_period_list_is_an_error() {
        let set = PeriodSet { eta: 0.1, radius: 1.0, periods: vec![] };
        assert!(inclusion_length(&set, &Region::cube(0.0, 1.0, 1)).is_err());
        assert!(select_translation(&[], &[0.0]).is_err());
    }

    #[test]
    fn selection_tie_break_prefers_smaller_defect() {
        let mk = |tau: f64, z: f64, src: i64| AlmostPeriod {
            tau: vec![tau],
            z_tau: z,
            defect: z.abs(),
            source_lattice_point: vec![src, 0],
        };
        let ps = vec![mk(1.0, 0.02, 1), mk(3.0, 0.01, 2)];
        assert_eq!(select_translation(&ps, &[2.0]).unwrap().source_lattice_point[0], 2);
        let ps = vec![mk(1.0, 0.01, 1), mk(3.0, 0.01, 2)];
        assert_eq!(select_translation(&ps, &[2.0]).unwrap().source_lattice_point[0], 1);
    }

    #[test]
    fn axis_plane_in_three_dimensions_has_unit_inclusion() {
        let f = build_frame(&[0.0, 0.0, 1.0]).unwrap();
        let set = almost_periods(&f, 0.01, 8.0).unwrap();
        let rep = inclusion_length(&set, &Region::cube(-4.0, 4.0, 2)).unwrap();
        // Grid certification overestimates by at most two grid steps.
        assert!(rep.l_eta >= 1.0 && rep.l_eta <= 1.0 + 2.0 * rep.grid_step, "{rep:?}");
    }
}
