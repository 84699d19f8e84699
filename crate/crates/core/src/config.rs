//! Run configuration: a single TOML document with strict key checking.
//!
//! Every numeric constraint that a downstream operation would reject is
//! checked here first, so a bad config fails before any work starts and the
//! message names the offending key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell_solver::{GridOptions, SolverOptions};
use crate::energy::{builtin_density, preset, DensitySpec, EnergyDensity, PRESET_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{pull_back_density, IsometryFrame, PlaneSpec, Scalar};
use crate::lattice::DEFAULT_CANDIDATE_CAP;
use crate::linalg::{Mat, MAX_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Size of the worker pool; `None` lets the runtime decide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub frame: FrameConfig,
    pub density: DensityRef,
    /// Named inline densities; shadow the built-in presets.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub densities: BTreeMap<String, DensitySpec>,
    #[serde(default)]
    pub grid: GridOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogenize: Option<HomogenizeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patchwork: Option<PatchworkConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Not part of the config hash.
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// Normal of the cutting plane. Integers and `"p/q"` strings are exact;
    /// any float makes the normal floating point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<Vec<Scalar>>,
    /// Angle of the line from the first axis (`d = 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default = "default_denominator_bound")]
    pub denominator_bound: i64,
}

fn default_denominator_bound() -> i64 {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityRef {
    pub name: String,
    /// Number of components; presets default to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// `A`, row-major `m x d`.
    pub a: Vec<f64>,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default)]
    pub dump_field: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AGrid {
    pub lo: f64,
    pub hi: f64,
    /// Points per entry.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeConfig {
    /// Explicit loads, each row-major `m x d`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub a: Vec<Vec<f64>>,
    /// Tensor grid of loads, appended after `a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_grid: Option<AGrid>,
    pub schedule: Vec<f64>,
    #[serde(default = "default_spread_tol")]
    pub spread_tol: f64,
}

fn default_spread_tol() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub eta: f64,
    pub radius: f64,
    /// Slicing window; requires `delta > eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Half-width of the cube on which the inclusion length is certified;
    /// defaults to the largest cube inside the enumeration ball.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<f64>,
    #[serde(default = "default_cap")]
    pub candidate_cap: u64,
}

fn default_cap() -> u64 {
    DEFAULT_CANDIDATE_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchworkConfig {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    /// Row-major `m x d`.
    pub a: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Samples per pointwise verifier.
    pub samples: usize,
    /// Almost periods checked by the translation verifier.
    pub max_periods: usize,
    /// Rank-one probes on the homogenized estimate; 0 disables the scan.
    pub probes: usize,
    pub probe_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 1000,
            max_periods: 20,
            probes: 0,
            probe_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg(format!("{key} must be a finite number > 0 (got {v})")))
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let c: RunConfig = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn dim_d(&self) -> Result<usize> {
        match (&self.frame.normal, self.frame.angle) {
            (Some(n), None) => {
                if !(2..=MAX_DIM).contains(&n.len()) {
                    return Err(cfg(format!(
                        "frame.normal must have 2 or 3 entries (got {})",
                        n.len()
                    )));
                }
                Ok(n.len() - 1)
            }
            (None, Some(_)) => Ok(1),
            _ => Err(cfg("frame needs exactly one of `normal` or `angle`")),
        }
    }

    pub fn m(&self) -> usize {
        self.density
            .m
            .or_else(|| self.densities.get(&self.density.name).map(|s| s.m))
            .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim_d()?;
        if self.frame.denominator_bound < 1 {
            return Err(cfg("frame.denominator_bound must be >= 1"));
        }
        if let Some(th) = self.frame.angle {
            if !th.is_finite() {
                return Err(cfg("frame.angle must be finite"));
            }
        }
        if self.workers == Some(0) {
            return Err(cfg("workers must be >= 1"));
        }
        self.frame().map_err(|e| cfg(format!("frame: {e}")))?;
        let m = self.m();
        if !(1..=MAX_DIM).contains(&m) {
            return Err(cfg(format!("density.m must be in 1..={MAX_DIM} (got {m})")));
        }
        if let (Some(mm), Some(spec)) = (self.density.m, self.densities.get(&self.density.name)) {
            if mm != spec.m {
                return Err(cfg(format!(
                    "density.m = {mm} conflicts with densities.{}.m = {}",
                    self.density.name, spec.m
                )));
            }
        }
        self.density_tilde().map_err(|e| cfg(format!("density: {e}")))?;

        positive("grid.h", self.grid.h)?;
        if self.grid.n_per_unit == 0 || self.grid.n_y == 0 {
            return Err(cfg("grid.n_per_unit and grid.n_y must be >= 1"));
        }
        let s = &self.solver;
        positive("solver.cg_tol", s.cg_tol)?;
        positive("solver.grad_tol", s.grad_tol)?;
        if s.cg_max_iter == 0 || s.max_iter == 0 || s.memory == 0 {
            return Err(cfg("solver.cg_max_iter, solver.max_iter and solver.memory must be >= 1"));
        }

        let check_a = |key: &str, a: &[f64]| -> Result<()> {
            if a.len() != m * d {
                return Err(cfg(format!("{key} must have m*d = {} entries (got {})", m * d, a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(cfg(format!("{key} must be finite")));
            }
            Ok(())
        };
        if let Some(c) = &self.cell {
            check_a("cell.a", &c.a)?;
            positive("cell.T", c.t)?;
        }
        if let Some(h) = &self.homogenize {
            for (i, a) in h.a.iter().enumerate() {
                check_a(&format!("homogenize.a[{i}]"), a)?;
            }
            if let Some(g) = &h.a_grid {
                if !(g.lo.is_finite() && g.hi.is_finite() && g.lo <= g.hi) || g.n == 0 {
                    return Err(cfg("homogenize.a_grid needs finite lo <= hi and n >= 1"));
                }
                if (g.n as f64).powi((m * d) as i32) > 10_000.0 {
                    return Err(cfg("homogenize.a_grid would generate more than 10000 loads"));
                }
            }
            if h.a.is_empty() && h.a_grid.is_none() {
                return Err(cfg("homogenize needs `a` or `a_grid`"));
            }
            if h.schedule.len() < 3 {
                return Err(cfg(format!(
                    "homogenize.schedule needs at least 3 values of T (got {})",
                    h.schedule.len()
                )));
            }
            for t in &h.schedule {
                positive("homogenize.schedule entries", *t)?;
            }
            if h.schedule.windows(2).any(|w| w[0] >= w[1]) {
                return Err(cfg("homogenize.schedule must be strictly increasing"));
            }
            positive("homogenize.spread_tol", h.spread_tol)?;
        }
        if let Some(l) = &self.lattice {
            positive("lattice.eta", l.eta)?;
            positive("lattice.radius", l.radius)?;
            if let Some(delta) = l.delta {
                if !(delta > l.eta) {
                    return Err(cfg(format!(
                        "lattice.delta and lattice.eta must satisfy delta > eta > 0 \
                         (got delta = {delta}, eta = {})",
                        l.eta
                    )));
                }
                if delta > self.grid.h {
                    return Err(cfg(format!(
                        "lattice.delta = {delta} must not exceed grid.h = {}",
                        self.grid.h
                    )));
                }
            }
            if let Some(r) = l.region {
                positive("lattice.region", r)?;
                if r * (d as f64).sqrt() > l.radius {
                    return Err(cfg(format!(
                        "lattice.region = {r} reaches outside lattice.radius = {}",
                        l.radius
                    )));
                }
            }
            if l.candidate_cap == 0 {
                return Err(cfg("lattice.candidate_cap must be >= 1"));
            }
        }
        if let Some(p) = &self.patchwork {
            check_a("patchwork.a", &p.a)?;
            positive("patchwork.T", p.t)?;
            positive("patchwork.S", p.s)?;
            if p.s <= p.t {
                return Err(cfg("patchwork.S must exceed patchwork.T"));
            }
            match &self.lattice {
                Some(LatticeConfig { delta: Some(_), radius, .. }) => {
                    if *radius < p.s * (d as f64).sqrt() {
                        return Err(cfg(format!(
                            "lattice.radius = {radius} must cover the patchwork domain (>= S sqrt(d) = {})",
                            p.s * (d as f64).sqrt()
                        )));
                    }
                }
                _ => return Err(cfg("patchwork requires [lattice] with eta and delta")),
            }
        }
        let v = &self.verify;
        if v.samples == 0 {
            return Err(cfg("verify.samples must be >= 1"));
        }
        positive("verify.probe_scale", v.probe_scale)?;
        if v.probes > 0 && self.homogenize.is_none() {
            return Err(cfg("verify.probes > 0 requires a [homogenize] schedule"));
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<IsometryFrame> {
        let spec = match (&self.frame.normal, self.frame.angle) {
            (Some(n), None) => PlaneSpec::from_scalars(n)?,
            (None, Some(t)) => PlaneSpec::Angle(t),
            _ => return Err(cfg("frame needs exactly one of `normal` or `angle`")),
        };
        spec.build()
    }

    /// The unrotated density on `R^{d+1}`.
    pub fn density_tilde(&self) -> Result<EnergyDensity> {
        let d = self.dim_d()?;
        let name = &self.density.name;
        let spec = match self.densities.get(name) {
            Some(s) => s.clone(),
            None => preset(name, d, self.m()).ok_or_else(|| {
                cfg(format!(
                    "unknown density `{name}`; define [densities.{name}] or use one of {}",
                    PRESET_NAMES.join(", ")
                ))
            })?,
        };
        builtin_density(&spec, d)
    }

    /// The density in frame coordinates.
    pub fn density(&self) -> Result<EnergyDensity> {
        pull_back_density(&self.density_tilde()?, &self.frame()?)
    }

    pub fn load(&self, entries: &[f64]) -> Result<Mat> {
        let d = self.dim_d()?;
        Mat::from_row_major(self.m(), d, entries)
            .ok_or_else(|| cfg(format!("load needs {} entries", self.m() * d)))
    }

    /// Loads of the `homogenize` section in run order.
    pub fn homogenize_loads(&self) -> Result<Vec<Mat>> {
        let h = self
            .homogenize
            .as_ref()
            .ok_or_else(|| cfg("missing [homogenize] section"))?;
        let mut out = h.a.iter().map(|a| self.load(a)).collect::<Result<Vec<_>>>()?;
        if let Some(g) = &h.a_grid {
            let k = self.m() * self.dim_d()?;
            let axis: Vec<f64> = (0..g.n)
                .map(|i| if g.n == 1 { g.lo } else { g.lo + (g.hi - g.lo) * i as f64 / (g.n - 1) as f64 })
                .collect();
            let total = g.n.pow(k as u32);
            for mut idx in 0..total {
                let mut entries = vec![0.0; k];
                for e in entries.iter_mut().rev() {
                    *e = axis[idx % g.n];
                    idx /= g.n;
                }
                out.push(self.load(&entries)?);
            }
        }
        Ok(out)
    }

    /// Canonical TOML of everything except the output section.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        toml::to_string(&c).expect("config is serializable")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_toml`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// CSV text with a leading `# config_hash=<hash>` line and a header row.
/// Column names carry their units in brackets.
pub fn csv_document(config_hash: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash}");
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
