//! Energy densities with p-growth, built-in periodic families, and the
//! hypothesis verifiers (growth, periodicity, almost periodicity).
//!
//! A density is stored in ambient coordinates `ftilde(x, A)` with
//! `x ∈ R^{d+1}` and `A ∈ M^{m x (d+1)}`. After [`crate::geometry::pull_back_density`]
//! it carries the frame rotation `R` and evaluates `f(x, A) = ftilde(R x, A R^T)`.
//! An optional offset translates the argument, `f(x + offset, A)`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::AlmostPeriod;
use crate::linalg::{Mat, MAX_DIM};
use crate::sampling::Halton;

/// Declared constants of `alpha |A|^p <= f(x, A) <= beta (1 + |A|^p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
}

impl GrowthParams {
    pub fn new(alpha: f64, beta: f64, p: f64) -> Result<Self> {
        let g = GrowthParams { alpha, beta, p };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("growth alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= self.alpha && self.beta.is_finite()) {
            return Err(invalid(format!(
                "growth beta must be >= alpha ({}), got {}",
                self.alpha, self.beta
            )));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(invalid(format!("growth exponent p must be > 1, got {}", self.p)));
        }
        Ok(())
    }

    pub fn lower(&self, norm: f64) -> f64 {
        self.alpha * norm.powf(self.p)
    }

    pub fn upper(&self, norm: f64) -> f64 {
        self.beta * (1.0 + norm.powf(self.p))
    }
}

/// One Fourier mode `amplitude * cos(2π <wave, x> + phase)` with an integer
/// wave vector, hence 1-periodic in every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub wave: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Trig { mean: f64, modes: Vec<Mode> },
    /// `mid + half * tanh(sharpness * prod_i sin(2π x_i))`: a smoothed
    /// checkerboard between `low` and `high`.
    Checkerboard { low: f64, high: f64, sharpness: f64 },
}

impl Coefficient {
    /// `mean + amplitude * prod_{i<k} cos(2π x_i)` over the first `k`
    /// coordinates of `R^{ambient}`, expanded into modes.
    pub fn cos_product(mean: f64, amplitude: f64, k: usize, ambient: usize) -> Self {
        assert!(k >= 1 && k <= ambient);
        let mut waves: Vec<Vec<i64>> = vec![vec![0; ambient]];
        waves[0][0] = 1;
        for i in 1..k {
            let mut next = Vec::with_capacity(2 * waves.len());
            for w in &waves {
                for s in [1, -1] {
                    let mut v = w.clone();
                    v[i] = s;
                    next.push(v);
                }
            }
            waves = next;
        }
        let share = amplitude / waves.len() as f64;
        Coefficient::Trig {
            mean,
            modes: waves
                .into_iter()
                .map(|wave| Mode { wave, amplitude: share, phase: 0.0 })
                .collect(),
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Trig { mean, modes } => {
                let mut v = *mean;
                for m in modes {
                    let arg: f64 = m.wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
                    v += m.amplitude * (TAU * arg + m.phase).cos();
                }
                v
            }
            Coefficient::Checkerboard { low, high, sharpness } => {
                let s: f64 = x.iter().map(|xi| (TAU * xi).sin()).product();
                0.5 * (low + high) + 0.5 * (high - low) * (sharpness * s).tanh()
            }
        }
    }

    /// Guaranteed range `[min, max]` of the coefficient.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Coefficient::Constant(c) => (*c, *c),
            Coefficient::Trig { mean, modes } => {
                let spread: f64 = modes.iter().map(|m| m.amplitude.abs()).sum();
                (mean - spread, mean + spread)
            }
            Coefficient::Checkerboard { low, high, .. } => (*low, *high),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Coefficient::Constant(_) => true,
            Coefficient::Trig { modes, .. } => modes.iter().all(|m| m.amplitude == 0.0),
            Coefficient::Checkerboard { low, high, .. } => low == high,
        }
    }

    fn validate(&self, name: &str, ambient: usize) -> Result<()> {
        match self {
            Coefficient::Constant(c) if !c.is_finite() => {
                return Err(invalid(format!("coefficient {name} is not finite")));
            }
            Coefficient::Trig { mean, modes } => {
                if !mean.is_finite() {
                    return Err(invalid(format!("coefficient {name}: mean is not finite")));
                }
                for (i, m) in modes.iter().enumerate() {
                    if m.wave.len() != ambient {
                        return Err(invalid(format!(
                            "coefficient {name}: mode {i} wave vector has {} entries, expected {ambient}",
                            m.wave.len()
                        )));
                    }
                    if !m.amplitude.is_finite() || !m.phase.is_finite() {
                        return Err(invalid(format!("coefficient {name}: mode {i} is not finite")));
                    }
                }
            }
            Coefficient::Checkerboard { low, high, sharpness }
                if !(low.is_finite() && high.is_finite() && sharpness.is_finite())
                    || low > high
                    || *sharpness <= 0.0 =>
            {
                return Err(invalid(format!(
                    "coefficient {name}: checkerboard needs finite low <= high and sharpness > 0"
                )));
            }
            _ => {}
        }
        let (lo, _) = self.bounds();
        if lo <= 0.0 {
            return Err(invalid(format!(
                "coefficient {name} can reach {lo} <= 0, violating the p-growth lower bound"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `a(x) |A|^2`
    IsoQuadratic { a: Coefficient },
    /// `c(x) |A|^p`
    PPower { c: Coefficient, p: f64 },
    /// `a(x) |A'|^2 + b(x) |xi|^2` with `A = (A' | xi)`.
    TransverseSplit { a: Coefficient, b: Coefficient },
}

impl Family {
    fn exponent(&self) -> f64 {
        match self {
            Family::PPower { p, .. } => *p,
            _ => 2.0,
        }
    }
}

/// Additive non-periodic term `(amplitude/2)(1 + sin 2π<wave, x>)(1 + |A|^p)`.
///
/// With a non-integer wave this breaks exact periodicity while keeping
/// `|f(x + z) - f(x)| <= amplitude (1 + |A|^p)` for lattice vectors `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub amplitude: f64,
    pub wave: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyDensity {
    dim_d: usize,
    m: usize,
    family: Family,
    growth: GrowthParams,
    perturbation: Option<Perturbation>,
    rotation: Option<(Mat, Mat)>,
    offset: [f64; MAX_DIM],
}

impl EnergyDensity {
    /// Builds a density and derives its growth constants from the coefficient
    /// bounds.
    pub fn new(dim_d: usize, m: usize, family: Family) -> Result<Self> {
        if !(1..=2).contains(&dim_d) {
            return Err(invalid(format!("mid-plane dimension d must be 1 or 2, got {dim_d}")));
        }
        if !(1..=MAX_DIM).contains(&m) {
            return Err(invalid(format!("target dimension m must be 1..=3, got {m}")));
        }
        let ambient = dim_d + 1;
        let growth = match &family {
            Family::IsoQuadratic { a } => {
                a.validate("a", ambient)?;
                let (lo, hi) = a.bounds();
                GrowthParams::new(lo, hi, 2.0)?
            }
            Family::PPower { c, p } => {
                c.validate("c", ambient)?;
                if !(*p > 1.0 && p.is_finite()) {
                    return Err(invalid(format!("p_power exponent must be > 1, got {p}")));
                }
                let (lo, hi) = c.bounds();
                GrowthParams::new(lo, hi, *p)?
            }
            Family::TransverseSplit { a, b } => {
                a.validate("a", ambient)?;
                b.validate("b", ambient)?;
                let (alo, ahi) = a.bounds();
                let (blo, bhi) = b.bounds();
                GrowthParams::new(alo.min(blo), ahi.max(bhi), 2.0)?
            }
        };
        Ok(EnergyDensity {
            dim_d,
            m,
            family,
            growth,
            perturbation: None,
            rotation: None,
            offset: [0.0; MAX_DIM],
        })
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn growth(&self) -> &GrowthParams {
        &self.growth
    }

    /// True when `ftilde` itself is `Z^{d+1}`-periodic (no perturbation).
    pub fn is_lattice_periodic(&self) -> bool {
        self.perturbation.is_none()
    }

    /// True when the density is independent of `x`.
    pub fn is_homogeneous(&self) -> bool {
        self.perturbation.is_none()
            && match &self.family {
                Family::IsoQuadratic { a } => a.is_constant(),
                Family::PPower { c, .. } => c.is_constant(),
                Family::TransverseSplit { a, b } => a.is_constant() && b.is_constant(),
            }
    }

    /// True when `A -> f(x, A)` is a quadratic form plus a constant, so the
    /// cell problem is a linear system.
    pub fn is_quadratic(&self) -> bool {
        self.family.exponent() == 2.0
    }

    /// All built-in families are convex in `A`.
    pub fn is_convex(&self) -> bool {
        true
    }

    /// Overrides the declared growth constants. The verifiers check the
    /// declaration; nothing else trusts it blindly.
    pub fn with_growth(mut self, growth: GrowthParams) -> Result<Self> {
        growth.validate()?;
        self.growth = growth;
        Ok(self)
    }

    pub fn with_perturbation(mut self, perturbation: Perturbation) -> Result<Self> {
        if perturbation.wave.len() != self.dim_d + 1 {
            return Err(invalid(format!(
                "perturbation wave needs {} entries, got {}",
                self.dim_d + 1,
                perturbation.wave.len()
            )));
        }
        if !(perturbation.amplitude >= 0.0 && perturbation.amplitude.is_finite())
            || perturbation.wave.iter().any(|w| !w.is_finite())
        {
            return Err(invalid("perturbation amplitude must be finite and >= 0"));
        }
        self.growth.beta += perturbation.amplitude;
        self.perturbation = Some(perturbation);
        Ok(self)
    }

    pub(crate) fn with_rotation(&self, r: Mat) -> Result<Self> {
        let n = self.dim_d + 1;
        if r.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "rotation is {:?}, density needs {n}x{n}",
                r.shape()
            )));
        }
        if self.rotation.is_some() {
            return Err(invalid("density is already pulled back"));
        }
        let mut out = self.clone();
        out.rotation = Some((r, r.transpose()));
        Ok(out)
    }

    pub fn rotation(&self) -> Option<&Mat> {
        self.rotation.as_ref().map(|(r, _)| r)
    }

    /// `x -> f(x + shift, A)`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim_d + 1 {
            return Err(Error::DimensionMismatch(format!(
                "shift has {} entries, expected {}",
                shift.len(),
                self.dim_d + 1
            )));
        }
        let mut out = self.clone();
        for (o, s) in out.offset.iter_mut().zip(shift) {
            *o += s;
        }
        Ok(out)
    }

    fn check_shape(&self, x: &[f64], a: &Mat) {
        debug_assert_eq!(x.len(), self.dim_d + 1, "point has wrong dimension");
        debug_assert_eq!(a.shape(), (self.m, self.dim_d + 1), "gradient has wrong shape");
    }

    #[inline]
    fn to_ambient(&self, x: &[f64], a: &Mat) -> ([f64; MAX_DIM], Mat) {
        let n = self.dim_d + 1;
        let mut p = [0.0; MAX_DIM];
        for i in 0..n {
            p[i] = x[i] + self.offset[i];
        }
        match &self.rotation {
            Some((r, rt)) => (r.apply(&p[..n]), a.matmul(rt)),
            None => (p, *a),
        }
    }

    /// `f(x, A)`.
    pub fn eval(&self, x: &[f64], a: &Mat) -> f64 {
        self.check_shape(x, a);
        let (xt, at) = self.to_ambient(x, a);
        self.ambient_value(&xt[..self.dim_d + 1], &at)
    }

    /// `∂f/∂A (x, A)`.
    pub fn grad_a(&self, x: &[f64], a: &Mat) -> Mat {
        self.eval_with_grad(x, a).1
    }

    pub fn eval_with_grad(&self, x: &[f64], a: &Mat) -> (f64, Mat) {
        self.check_shape(x, a);
        let (xt, at) = self.to_ambient(x, a);
        let (v, g) = self.ambient_value_grad(&xt[..self.dim_d + 1], &at);
        match &self.rotation {
            Some((r, _)) => (v, g.matmul(r)),
            None => (v, g),
        }
    }

    fn ambient_value(&self, x: &[f64], a: &Mat) -> f64 {
        let base = match &self.family {
            Family::IsoQuadratic { a: c } => c.value(x) * a.norm_sq(),
            Family::PPower { c, p } => {
                let n = a.norm();
                if n == 0.0 {
                    0.0
                } else {
                    c.value(x) * n.powf(*p)
                }
            }
            Family::TransverseSplit { a: ca, b: cb } => {
                let (inplane, xi) = a.split_last_column();
                let xi2: f64 = xi.iter().map(|v| v * v).sum();
                ca.value(x) * inplane.norm_sq() + cb.value(x) * xi2
            }
        };
        base + self.perturbation_value(x, a)
    }

    fn ambient_value_grad(&self, x: &[f64], a: &Mat) -> (f64, Mat) {
        let (base, grad) = match &self.family {
            Family::IsoQuadratic { a: c } => {
                let cv = c.value(x);
                (cv * a.norm_sq(), a.scale(2.0 * cv))
            }
            Family::PPower { c, p } => {
                let n = a.norm();
                if n == 0.0 {
                    (0.0, Mat::zeros(a.rows(), a.cols()))
                } else {
                    let cv = c.value(x);
                    let np = n.powf(*p);
                    (cv * np, a.scale(cv * p * np / (n * n)))
                }
            }
            Family::TransverseSplit { a: ca, b: cb } => {
                let av = ca.value(x);
                let bv = cb.value(x);
                let last = a.cols() - 1;
                let mut g = a.scale(2.0 * av);
                let mut val = 0.0;
                for i in 0..a.rows() {
                    for j in 0..a.cols() {
                        let e = a[(i, j)];
                        if j == last {
                            val += bv * e * e;
                            g[(i, j)] = 2.0 * bv * e;
                        } else {
                            val += av * e * e;
                        }
                    }
                }
                (val, g)
            }
        };
        match &self.perturbation {
            None => (base, grad),
            Some(pt) => {
                let (pv, pg) = self.perturbation_value_grad(pt, x, a);
                (base + pv, grad + pg)
            }
        }
    }

    fn perturbation_weight(pt: &Perturbation, x: &[f64]) -> f64 {
        let arg: f64 = pt.wave.iter().zip(x).map(|(w, xi)| w * xi).sum();
        0.5 * pt.amplitude * (1.0 + (TAU * arg).sin())
    }

    fn perturbation_value(&self, x: &[f64], a: &Mat) -> f64 {
        match &self.perturbation {
            None => 0.0,
            Some(pt) => {
                let p = self.family.exponent();
                Self::perturbation_weight(pt, x) * (1.0 + a.norm().powf(p))
            }
        }
    }

    fn perturbation_value_grad(&self, pt: &Perturbation, x: &[f64], a: &Mat) -> (f64, Mat) {
        let p = self.family.exponent();
        let w = Self::perturbation_weight(pt, x);
        let n = a.norm();
        if n == 0.0 {
            return (w, Mat::zeros(a.rows(), a.cols()));
        }
        let np = n.powf(p);
        (w * (1.0 + np), a.scale(w * p * np / (n * n)))
    }

    /// Value at zero gradient, `f(x, 0)`.
    pub fn zero_gradient_value(&self, x: &[f64]) -> f64 {
        self.eval(x, &Mat::zeros(self.m, self.dim_d + 1))
    }
}

// ---------------------------------------------------------------------------
// Config schema

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    IsoQuadratic,
    PPower,
    TransverseSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerboardSpec {
    pub low: f64,
    pub high: f64,
    pub sharpness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientTable {
    #[serde(default)]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkerboard: Option<CheckerboardSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Table(CoefficientTable),
}

impl CoefficientSpec {
    fn build(&self, name: &str) -> Result<Coefficient> {
        match self {
            CoefficientSpec::Constant(c) => Ok(Coefficient::Constant(*c)),
            CoefficientSpec::Table(t) => match (&t.checkerboard, t.mean, t.modes.is_empty()) {
                (Some(cb), None, true) => Ok(Coefficient::Checkerboard {
                    low: cb.low,
                    high: cb.high,
                    sharpness: cb.sharpness,
                }),
                (Some(_), _, _) => Err(invalid(format!(
                    "coefficient {name}: checkerboard cannot be combined with mean/modes"
                ))),
                (None, Some(mean), _) => Ok(Coefficient::Trig {
                    mean,
                    modes: t.modes.clone(),
                }),
                (None, None, _) => Err(invalid(format!("coefficient {name}: missing `mean`"))),
            },
        }
    }
}

/// Density description as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub family: FamilyName,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<CoefficientSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<CoefficientSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<CoefficientSpec>,
    /// Replaces the derived growth constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

fn default_m() -> usize {
    1
}

fn required<'a>(c: &'a Option<CoefficientSpec>, family: &str, name: &str) -> Result<&'a CoefficientSpec> {
    c.as_ref()
        .ok_or_else(|| invalid(format!("family {family} requires coefficient `{name}`")))
}

fn forbid(c: &Option<CoefficientSpec>, family: &str, name: &str) -> Result<()> {
    match c {
        Some(_) => Err(invalid(format!("family {family} does not use coefficient `{name}`"))),
        None => Ok(()),
    }
}

/// Instantiates a built-in family on `R^{d+1}`.
pub fn builtin_density(spec: &DensitySpec, dim_d: usize) -> Result<EnergyDensity> {
    let family = match spec.family {
        FamilyName::IsoQuadratic => {
            forbid(&spec.b, "iso_quadratic", "b")?;
            forbid(&spec.c, "iso_quadratic", "c")?;
            if spec.p.is_some() {
                return Err(invalid("family iso_quadratic has fixed p = 2; remove `p`"));
            }
            Family::IsoQuadratic {
                a: required(&spec.a, "iso_quadratic", "a")?.build("a")?,
            }
        }
        FamilyName::PPower => {
            forbid(&spec.a, "p_power", "a")?;
            forbid(&spec.b, "p_power", "b")?;
            Family::PPower {
                c: required(&spec.c, "p_power", "c")?.build("c")?,
                p: spec.p.ok_or_else(|| invalid("family p_power requires `p`"))?,
            }
        }
        FamilyName::TransverseSplit => {
            forbid(&spec.c, "transverse_split", "c")?;
            if spec.p.is_some() {
                return Err(invalid("family transverse_split has fixed p = 2; remove `p`"));
            }
            Family::TransverseSplit {
                a: required(&spec.a, "transverse_split", "a")?.build("a")?,
                b: required(&spec.b, "transverse_split", "b")?.build("b")?,
            }
        }
    };
    let mut f = EnergyDensity::new(dim_d, spec.m, family)?;
    if let Some(pt) = &spec.perturbation {
        f = f.with_perturbation(pt.clone())?;
    }
    if let Some(g) = spec.growth {
        f = f.with_growth(g)?;
    }
    Ok(f)
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &[
    "unit_split",
    "unit_quadratic",
    "laminate",
    "trig_product",
    "trig_split",
    "checkerboard",
    "cubic_power",
];

/// Built-in density specifications referenced by name from configs.
pub fn preset(name: &str, dim_d: usize, m: usize) -> Option<DensitySpec> {
    let ambient = dim_d + 1;
    let trig = |coef: Coefficient| -> CoefficientSpec {
        match coef {
            Coefficient::Trig { mean, modes } => CoefficientSpec::Table(CoefficientTable {
                mean: Some(mean),
                modes,
                checkerboard: None,
            }),
            Coefficient::Constant(c) => CoefficientSpec::Constant(c),
            Coefficient::Checkerboard { .. } => unreachable!(),
        }
    };
    let base = DensitySpec {
        family: FamilyName::IsoQuadratic,
        m,
        p: None,
        a: None,
        b: None,
        c: None,
        growth: None,
        perturbation: None,
    };
    let product = Coefficient::cos_product(2.0, 1.0, 2.min(ambient), ambient);
    Some(match name {
        "unit_split" => DensitySpec {
            family: FamilyName::TransverseSplit,
            a: Some(CoefficientSpec::Constant(1.0)),
            b: Some(CoefficientSpec::Constant(1.0)),
            ..base
        },
        "unit_quadratic" => DensitySpec {
            a: Some(CoefficientSpec::Constant(1.0)),
            ..base
        },
        // 2 + cos(2π x_1)
        "laminate" => DensitySpec {
            a: Some(trig(Coefficient::cos_product(2.0, 1.0, 1, ambient))),
            ..base
        },
        // 2 + cos(2π x_1) cos(2π x_2)
        "trig_product" => DensitySpec {
            a: Some(trig(product)),
            ..base
        },
        "trig_split" => {
            let mut wave = vec![0; ambient];
            wave[ambient - 1] = 1;
            DensitySpec {
                family: FamilyName::TransverseSplit,
                a: Some(trig(product)),
                b: Some(trig(Coefficient::Trig {
                    mean: 1.5,
                    modes: vec![Mode { wave, amplitude: 0.5, phase: 0.0 }],
                })),
                ..base
            }
        }
        "checkerboard" => DensitySpec {
            a: Some(CoefficientSpec::Table(CoefficientTable {
                mean: None,
                modes: Vec::new(),
                checkerboard: Some(CheckerboardSpec { low: 1.0, high: 3.0, sharpness: 4.0 }),
            })),
            ..base
        },
        "cubic_power" => DensitySpec {
            family: FamilyName::PPower,
            p: Some(3.0),
            c: Some(trig(Coefficient::cos_product(2.0, 0.5, 1, ambient))),
            ..base
        },
        _ => return None,
    })
}

// ---------------------------------------------------------------------------
// Verifiers

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    pub a: Mat,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifierReport {
    pub check: &'static str,
    pub samples: usize,
    pub passed: bool,
    /// Smallest slack over all samples, normalized by `1 + |A|^p`; negative
    /// means the hypothesis failed there.
    pub worst_margin: f64,
    /// Sample attaining `worst_margin`.
    pub witness: Option<Witness>,
}

/// Range of the sampled points in each coordinate.
const SAMPLE_BOX: f64 = 10.0;
/// Largest sampled `|A|`.
const SAMPLE_RADIUS: f64 = 10.0;

struct Sampler {
    halton: Halton,
    dim_x: usize,
    m: usize,
}

impl Sampler {
    fn new(f: &EnergyDensity, seed: u64) -> Self {
        let dim_x = f.dim_d + 1;
        Sampler {
            halton: Halton::new(dim_x + f.m * dim_x + 1, seed),
            dim_x,
            m: f.m,
        }
    }

    fn next(&mut self) -> (Vec<f64>, Mat) {
        let p = self.halton.next_point();
        let x: Vec<f64> = p[..self.dim_x].iter().map(|u| SAMPLE_BOX * (2.0 * u - 1.0)).collect();
        let dir: Vec<f64> = p[self.dim_x..self.dim_x + self.m * self.dim_x]
            .iter()
            .map(|u| 2.0 * u - 1.0)
            .collect();
        let radius = SAMPLE_RADIUS * p[p.len() - 1];
        let mut a = Mat::from_row_major(self.m, self.dim_x, &dir).expect("shape checked");
        let n = a.norm();
        if n > 0.0 {
            a = a.scale(radius / n);
        }
        (x, a)
    }
}

struct MarginTracker {
    check: &'static str,
    samples: usize,
    worst: f64,
    witness: Option<Witness>,
}

impl MarginTracker {
    fn new(check: &'static str) -> Self {
        MarginTracker {
            check,
            samples: 0,
            worst: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, margin: f64, x: &[f64], a: &Mat, detail: impl FnOnce() -> String) {
        self.samples += 1;
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.worst {
            self.worst = margin;
            self.witness = Some(Witness {
                x: x.to_vec(),
                a: *a,
                detail: detail(),
            });
        }
    }

    fn finish(self) -> VerifierReport {
        VerifierReport {
            check: self.check,
            samples: self.samples,
            passed: self.worst >= 0.0,
            worst_margin: self.worst,
            witness: self.witness,
        }
    }
}

fn require_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        Err(invalid("samples must be >= 1"))
    } else {
        Ok(())
    }
}

/// Checks `alpha |A|^p <= f(x, A) <= beta (1 + |A|^p)` on quasi-random
/// samples with `|A| <= 10`.
pub fn verify_growth(f: &EnergyDensity, samples: usize, seed: u64) -> Result<VerifierReport> {
    require_samples(samples)?;
    let g = f.growth;
    let mut sampler = Sampler::new(f, seed);
    let mut tracker = MarginTracker::new("growth");
    for _ in 0..samples {
        let (x, a) = sampler.next();
        let n = a.norm();
        let v = f.eval(&x, &a);
        let scale = 1.0 + n.powf(g.p);
        // Relative allowance for round-off in the evaluation itself.
        let slack = 1e-12 * scale;
        let lower = (v - g.lower(n) + slack) / scale;
        let upper = (g.upper(n) - v + slack) / scale;
        tracker.record(lower.min(upper), &x, &a, || {
            format!(
                "f = {v:e}, alpha|A|^p = {:e}, beta(1+|A|^p) = {:e}",
                g.lower(n),
                g.upper(n)
            )
        });
    }
    Ok(tracker.finish())
}

/// Checks `|f(x + e_i, A) - f(x, A)| <= 1e-12 (1 + |A|^p)` for every
/// coordinate direction of the density's own coordinates.
pub fn verify_periodicity(f: &EnergyDensity, samples: usize, seed: u64) -> Result<VerifierReport> {
    require_samples(samples)?;
    const TOL: f64 = 1e-12;
    let p = f.growth.p;
    let mut sampler = Sampler::new(f, seed);
    let mut tracker = MarginTracker::new("periodicity");
    for _ in 0..samples {
        let (x, a) = sampler.next();
        let v = f.eval(&x, &a);
        let scale = 1.0 + a.norm().powf(p);
        for i in 0..x.len() {
            let mut xs = x.clone();
            xs[i] += 1.0;
            let diff = (f.eval(&xs, &a) - v).abs();
            tracker.record(TOL - diff / scale, &x, &a, || {
                format!("shift e_{} changes f by {diff:e}", i + 1)
            });
        }
    }
    Ok(tracker.finish())
}

/// Checks `|f(x + (tau, z_tau), A) - f(x, A)| <= tol (1 + |A|^p)` where `tol`
/// is round-off (`1e-12`) for lattice-periodic densities and `eta`
/// otherwise.
pub fn verify_almost_period(
    f: &EnergyDensity,
    ap: &AlmostPeriod,
    eta: f64,
    samples: usize,
    seed: u64,
) -> Result<VerifierReport> {
    require_samples(samples)?;
    if !(eta > 0.0) {
        return Err(invalid("eta must be > 0"));
    }
    if ap.tau.len() != f.dim_d {
        return Err(Error::DimensionMismatch(format!(
            "almost period has {} in-plane coordinates, density expects {}",
            ap.tau.len(),
            f.dim_d
        )));
    }
    let tol = if f.is_lattice_periodic() { 1e-12 } else { eta };
    let shift: Vec<f64> = ap.tau.iter().copied().chain([ap.z_tau]).collect();
    let p = f.growth.p;
    let mut sampler = Sampler::new(f, seed);
    let mut tracker = MarginTracker::new("almost_period");
    for _ in 0..samples {
        let (x, a) = sampler.next();
        let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let diff = (f.eval(&xs, &a) - f.eval(&x, &a)).abs();
        let scale = 1.0 + a.norm().powf(p);
        tracker.record(tol - diff / scale, &x, &a, || {
            format!("translation by (tau, z_tau) changes f by {diff:e}")
        });
    }
    Ok(tracker.finish())
}
