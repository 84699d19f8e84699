//! Subcommand pipelines. Each returns the artifacts to write and the checks
//! that failed; nothing here touches the filesystem.

use std::fmt::{self, Write as _};
use std::path::Path;

use filmhom::cell_solver::{
    layer_energies, minimize_cell, rescaling_check, unit_image, write_field, CellSolution,
};
use filmhom::config::{csv_document, RunConfig};
use filmhom::construction::{slice_select, verify_slice_bound};
use filmhom::energy::{verify_almost_period, verify_growth, verify_periodicity, EnergyDensity, VerifierReport};
use filmhom::error::{Error, ErrorClass};
use filmhom::geometry::classify_rationality;
use filmhom::homogenizer::{estimate_fhom, rank_one_scan, upper_bound_patchwork, RankOneOptions};
use filmhom::lattice::{almost_periods_capped, inclusion_length, PeriodSet, Region};
use filmhom::linalg::Mat;

/// Absolute slack on the growth sandwich for computed cell values.
const SANDWICH_TOL: f64 = 1e-8;

#[derive(Debug)]
pub enum Failure {
    Io(String),
    Validation(String),
    Numerical(String),
    Assertion(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Assertion(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "{m}"),
            Failure::Validation(m) => write!(f, "invalid config: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Assertion(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.class() {
            ErrorClass::Validation => Failure::Validation(e.to_string()),
            ErrorClass::Numerical => Failure::Numerical(e.to_string()),
        }
    }
}

type Res<T> = Result<T, Failure>;

#[derive(Debug, Default)]
pub struct Report {
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, String)>,
    pub summary: String,
    pub failures: Vec<String>,
}

impl Report {
    pub fn write(&self, dir: &Path) -> Res<()> {
        let io = |e: std::io::Error| Failure::Io(format!("cannot write to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body).map_err(io)?;
        }
        std::fs::write(dir.join("summary.txt"), &self.summary).map_err(io)
    }
}

/// Shortest round-trip form; exponent notation outside `[1e-4, 1e15)`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn indexed(prefix: &str, n: usize, unit: &str) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i} [{unit}]")).collect()
}

fn load_header(m: usize, d: usize) -> Vec<String> {
    (1..=m)
        .flat_map(|i| (1..=d).map(move |j| format!("A_{i}{j} [1]")))
        .collect()
}

fn head(config: &RunConfig, what: &str) -> String {
    format!("filmhom {what}\nconfig_hash = {}\n", config.config_hash())
}

pub fn frame(config: &RunConfig) -> Res<Report> {
    let frame = config.frame()?;
    let d = frame.dim_d();
    let rat = classify_rationality(&frame, config.frame.denominator_bound)?;
    let mut header = vec!["vector".to_string()];
    header.extend(indexed("x", d + 1, "1"));
    let mut rows: Vec<Vec<String>> = frame
        .basis()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut r = vec![format!("e_{}", i + 1)];
            r.extend(b.iter().map(|v| num(*v)));
            r
        })
        .collect();
    let mut nr = vec!["normal".to_string()];
    nr.extend(frame.normal().iter().map(|v| num(*v)));
    rows.push(nr);
    let mut summary = head(config, "frame");
    let _ = writeln!(summary, "d = {d}");
    let _ = writeln!(summary, "orthogonality defect = {:e}", frame.orthogonality_defect());
    let _ = writeln!(
        summary,
        "plane lattice rank = {} (bound {}, certified = {})",
        rat.lattice_rank, rat.denominator_bound, rat.certified
    );
    for g in &rat.generators {
        let _ = writeln!(summary, "generator = {g:?}");
    }
    Ok(Report {
        files: vec![("frame.csv".into(), csv_document(&config.config_hash(), &header, &rows))],
        summary,
        failures: Vec::new(),
    })
}

fn enumerate(config: &RunConfig) -> Res<(PeriodSet, Region)> {
    let l = config
        .lattice
        .as_ref()
        .ok_or_else(|| Failure::Validation("missing [lattice] section".into()))?;
    let frame = config.frame()?;
    let d = frame.dim_d();
    let set = almost_periods_capped(&frame, l.eta, l.radius, l.candidate_cap)?;
    let half = l.region.unwrap_or(l.radius / (d as f64).sqrt());
    Ok((set, Region::cube(-half, half, d)))
}

pub fn almost_periods(config: &RunConfig) -> Res<Report> {
    let (set, region) = enumerate(config)?;
    let d = config.dim_d()?;
    let mut header = indexed("tau", d, "period");
    header.push("z_tau [period]".into());
    header.push("defect [period]".into());
    header.extend(indexed("source", d + 1, "lattice index"));
    let rows: Vec<Vec<String>> = set
        .periods
        .iter()
        .map(|p| {
            let mut r: Vec<String> = p.tau.iter().map(|v| num(*v)).collect();
            r.push(num(p.z_tau));
            r.push(num(p.defect));
            r.extend(p.source_lattice_point.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    let mut summary = head(config, "almost-periods");
    let _ = writeln!(summary, "eta = {}, radius = {}, count = {}", set.eta, set.radius, set.periods.len());
    if set.periods.is_empty() {
        let _ = writeln!(summary, "no almost periods; inclusion length undefined");
    } else {
        let inc = inclusion_length(&set, &region)?;
        let _ = writeln!(
            summary,
            "inclusion length L_eta = {} on [{}, {}]^{d} (largest gap {}, grid step {})",
            inc.l_eta, region.lo[0], region.hi[0], inc.gaps, inc.grid_step
        );
    }
    Ok(Report {
        files: vec![("almost_periods.csv".into(), csv_document(&config.config_hash(), &header, &rows))],
        summary,
        failures: Vec::new(),
    })
}

fn sandwich(f: &EnergyDensity, a: &Mat, value: f64) -> Option<String> {
    let g = f.growth();
    let n = a.norm();
    let (lo, hi) = (g.lower(n) - SANDWICH_TOL, g.upper(n) + SANDWICH_TOL);
    if value >= lo && value <= hi {
        None
    } else {
        Some(format!("g = {value} outside growth sandwich [{lo}, {hi}] at |A| = {n}"))
    }
}

fn solve_cell(config: &RunConfig) -> Res<(EnergyDensity, CellSolution)> {
    let c = config
        .cell
        .as_ref()
        .ok_or_else(|| Failure::Validation("missing [cell] section".into()))?;
    let f = config.density()?;
    let a = config.load(&c.a)?;
    let sol = minimize_cell(&a, c.t, &f, &config.grid, &config.solver)?;
    Ok((f, sol))
}

pub fn cell(config: &RunConfig) -> Res<Report> {
    let (f, sol) = solve_cell(config)?;
    let header: Vec<String> = [
        "T [period]",
        "value [energy/volume]",
        "iterations [1]",
        "residual [energy/volume]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = vec![vec![
        num(sol.t()),
        num(sol.value),
        sol.iterations.to_string(),
        num(sol.residual_norm),
    ]];
    let mut files = vec![("cell.csv".to_string(), csv_document(&config.config_hash(), &header, &rows))];
    if config.cell.as_ref().is_some_and(|c| c.dump_field) {
        files.push(("field.txt".into(), write_field(&sol.grid, &sol.u_star, f.m())?));
    }
    let mut summary = head(config, "cell");
    let _ = writeln!(
        summary,
        "T = {}, value = {}, zero competitor = {}, method = {}, iterations = {}, converged = {}",
        sol.t(),
        sol.value,
        sol.zero_competitor,
        sol.method.name(),
        sol.iterations,
        sol.converged
    );
    let failures = sandwich(&f, &sol.a, sol.value).into_iter().collect();
    Ok(Report { files, summary, failures })
}

pub fn homogenize(config: &RunConfig) -> Res<Report> {
    let h = config
        .homogenize
        .as_ref()
        .ok_or_else(|| Failure::Validation("missing [homogenize] section".into()))?;
    let f = config.density()?;
    let (m, d) = (f.m(), f.dim_d());
    let mut header = load_header(m, d);
    header.extend(
        [
            "T [period]",
            "g_A(T) [energy/volume]",
            "extrapolated [energy/volume]",
            "spread [energy/volume]",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut rows = Vec::new();
    let mut summary = head(config, "homogenize");
    let mut failures = Vec::new();
    for a in config.homogenize_loads()? {
        let est = estimate_fhom(&a, &f, &h.schedule, &config.grid, &config.solver, h.spread_tol)?;
        for (t, v) in est.values() {
            let mut r: Vec<String> = a.row_major().iter().map(|x| num(*x)).collect();
            r.extend([num(t), num(v), num(est.extrapolated), num(est.spread)]);
            rows.push(r);
            if let Some(msg) = sandwich(&f, &a, v) {
                failures.push(format!("A = {:?}, T = {t}: {msg}", a.row_major()));
            }
        }
        for run in est.runs.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(summary, "A = {:?}, T = {}: failed ({})", a.row_major(), run.t, run.error.as_deref().unwrap_or(""));
        }
        let _ = writeln!(
            summary,
            "A = {:?}: fhom ~ {} (spread {}{})",
            a.row_major(),
            est.extrapolated,
            est.spread,
            if est.non_cauchy { ", tail not Cauchy within spread_tol" } else { "" }
        );
    }
    Ok(Report {
        files: vec![("homogenize.csv".into(), csv_document(&config.config_hash(), &header, &rows))],
        summary,
        failures,
    })
}

struct Checks {
    rows: Vec<Vec<String>>,
    failures: Vec<String>,
}

impl Checks {
    fn push(&mut self, name: &str, passed: bool, margin: f64, detail: impl Into<String>) {
        let detail = detail.into().replace(',', ";");
        if !passed {
            self.failures.push(format!("{name}: {detail}"));
        }
        self.rows
            .push(vec![name.to_string(), passed.to_string(), num(margin), detail]);
    }

    fn verifier(&mut self, name: &str, r: &VerifierReport) {
        let detail = r
            .witness
            .as_ref()
            .map_or_else(|| format!("{} samples", r.samples), |w| format!("{} samples; worst: {}", r.samples, w.detail));
        self.push(name, r.passed, r.worst_margin, detail);
    }
}

pub fn verify(config: &RunConfig) -> Res<Report> {
    let v = &config.verify;
    let ftilde = config.density_tilde()?;
    let f = config.density()?;
    let mut ch = Checks { rows: Vec::new(), failures: Vec::new() };
    ch.verifier("growth", &verify_growth(&ftilde, v.samples, config.seed)?);
    ch.verifier("growth_pulled_back", &verify_growth(&f, v.samples, config.seed)?);
    if ftilde.is_lattice_periodic() {
        ch.verifier("periodicity", &verify_periodicity(&ftilde, v.samples, config.seed)?);
    }

    let lattice = match &config.lattice {
        Some(l) => {
            let (set, region) = enumerate(config)?;
            let inc = if set.periods.is_empty() {
                ch.push("inclusion_length", false, f64::NEG_INFINITY, "no almost periods");
                None
            } else {
                let inc = inclusion_length(&set, &region)?;
                ch.push(
                    "inclusion_length",
                    inc.l_eta.is_finite(),
                    inc.l_eta,
                    format!("L_eta = {} on [{}; {}]^d", inc.l_eta, region.lo[0], region.hi[0]),
                );
                Some(inc)
            };
            for ap in set.periods.iter().take(v.max_periods) {
                let r = verify_almost_period(&f, ap, l.eta, v.samples, config.seed)?;
                ch.verifier(&format!("almost_period {:?}", ap.source_lattice_point), &r);
            }
            Some((l.clone(), set, inc))
        }
        None => None,
    };

    if config.cell.is_some() {
        let (f, sol) = solve_cell(config)?;
        let msg = sandwich(&f, &sol.a, sol.value);
        ch.push("growth_sandwich", msg.is_none(), sol.value, msg.unwrap_or_else(|| format!("g = {}", sol.value)));
        let unit = unit_image(&sol.grid)?;
        let r = rescaling_check(&sol.u_star, &sol.a, &f, &sol.grid, &unit)?;
        ch.push(
            "rescaling",
            r.passed,
            filmhom::cell_solver::RESCALING_TOL - r.relative_difference,
            format!("cell form {} vs scaled form {}", r.cell_form, r.scaled_form),
        );
        if let Some((l, _, _)) = &lattice {
            if let Some(delta) = l.delta {
                let g = layer_energies(&sol.u_star, &sol.a, &f, &sol.grid)?;
                match slice_select(&g, &sol.grid.layers(), sol.grid.h(), delta, l.eta) {
                    Ok(sel) => {
                        let b = verify_slice_bound(&sol.u_star, &sol.a, &f, &sel, &sol.grid)?;
                        ch.push(
                            "slice_bound",
                            b.passed,
                            b.margin(),
                            format!("y+ = {}; y- = {}; caps {} / {}", sel.y_plus, sel.y_minus, b.top_cap, b.bottom_cap),
                        );
                    }
                    Err(e) => ch.push("slice_bound", false, f64::NEG_INFINITY, e.to_string()),
                }
            }
        }
    }

    if let (Some(p), Some((l, set, Some(_)))) = (&config.patchwork, &lattice) {
        let d = f.dim_d();
        let inside = inclusion_length(set, &Region::cube(0.0, p.s, d))?;
        let a = config.load(&p.a)?;
        let sol = minimize_cell(&a, p.t, &f, &config.grid, &config.solver)?;
        let delta = l.delta.expect("validated");
        let r = upper_bound_patchwork(&sol, &f, p.s, l.eta, delta, &set.periods, inside.l_eta)?;
        ch.push(
            "patchwork_bound",
            r.energy_s <= r.bound,
            r.bound - r.energy_s,
            format!("g_S = {} <= {}; blocks = {}", r.energy_s, r.bound, r.plan.placements.len()),
        );
        ch.push(
            "patchwork_q_s",
            r.q_s_matches_plan,
            r.zero_region_tolerance - (r.zero_region_measure - r.plan.q_s_measure).abs(),
            format!("|Q_S| = {} vs plan {}", r.zero_region_measure, r.plan.q_s_measure),
        );
    }

    if v.probes > 0 {
        let h = config.homogenize.as_ref().expect("validated");
        let opts = RankOneOptions { probes: v.probes, seed: config.seed, scale: v.probe_scale };
        let r = rank_one_scan(f.m(), f.dim_d(), &opts, |a| {
            let est = estimate_fhom(a, &f, &h.schedule, &config.grid, &config.solver, h.spread_tol)?;
            Ok((est.extrapolated, est.tolerance()))
        })?;
        ch.push(
            "rank_one",
            r.passed(),
            r.worst_margin(),
            format!("{} probes; {} violations", r.probes, r.violations),
        );
    }

    let header: Vec<String> = ["check", "passed", "margin [1]", "detail"].iter().map(|s| s.to_string()).collect();
    let mut summary = head(config, "verify");
    for r in &ch.rows {
        let _ = writeln!(summary, "{} {} (margin {})", if r[1] == "true" { "PASS" } else { "FAIL" }, r[0], r[2]);
    }
    Ok(Report {
        files: vec![("verify.csv".into(), csv_document(&config.config_hash(), &header, &ch.rows))],
        summary,
        failures: ch.failures,
    })
}
