//! Property tests for the structural invariants of each module.

use std::collections::BTreeSet;

use filmhom::cell_solver::{
    assemble_energy, build_grid, layer_energies, minimize_cell, sample_field, GridOptions, SlabGrid, SolverOptions,
};
use filmhom::construction::{clamp_extend, patchwork_assemble, plan_patchwork, slice_select, translate_test_function};
use filmhom::energy::{builtin_density, preset, EnergyDensity, Perturbation, PRESET_NAMES};
use filmhom::geometry::{build_frame, build_frame_exact, build_frame_from_angle, classify_rationality, pull_back_density};
use filmhom::homogenizer::estimate_fhom;
use filmhom::lattice::{almost_periods, inclusion_length, AlmostPeriod, Region};
use filmhom::linalg::Mat;
use num_rational::Ratio;
use proptest::prelude::*;

const GOLDEN: f64 = 1.618033988749895;

fn density(name: &str, d: usize, m: usize) -> EnergyDensity {
    builtin_density(&preset(name, d, m).unwrap(), d).unwrap()
}

/// Every preset, a pulled-back one and a perturbed one.
fn families(d: usize, m: usize) -> Vec<EnergyDensity> {
    let mut out: Vec<EnergyDensity> = PRESET_NAMES.iter().map(|n| density(n, d, m)).collect();
    let normal: Vec<f64> = if d == 1 { vec![1.0, -GOLDEN] } else { vec![1.0, -GOLDEN, 0.3] };
    out.push(pull_back_density(&density("trig_product", d, m), &build_frame(&normal).unwrap()).unwrap());
    out.push(
        density("laminate", d, m)
            .with_perturbation(Perturbation { amplitude: 0.05, wave: vec![GOLDEN; d + 1] })
            .unwrap(),
    );
    out
}

fn mat(m: usize, n: usize, v: &[f64]) -> Mat {
    Mat::from_row_major(m, n, v).unwrap()
}

fn normal_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-3.0f64..3.0, 2),
        prop::collection::vec(-3.0f64..3.0, 3),
    ]
    .prop_filter("non-degenerate normal", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
}

fn shape_strategy() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=2, 1usize..=3)
}

fn entries(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pull_back_is_composition_with_rotation(
        normal in normal_strategy(),
        seed in prop::collection::vec(-5.0f64..5.0, 3 + 9),
        fam in 0usize..7,
        m in 1usize..=3,
    ) {
        let n = normal.len();
        let d = n - 1;
        let frame = build_frame(&normal).unwrap();
        let ftilde = &families(d, m)[fam];
        let f = pull_back_density(ftilde, &frame).unwrap();
        let r = frame.matrix_r();
        let x = &seed[..n];
        let a = mat(m, n, &seed[3..3 + m * n]);
        let rx = r.apply(x);
        let expected = ftilde.eval(&rx[..n], &a.matmul(&r.transpose()));
        let got = f.eval(x, &a);
        prop_assert!((got - expected).abs() <= 1e-14 * (1.0 + expected.abs()), "{got} vs {expected}");
    }

    #[test]
    fn rebuilt_frame_is_orthogonal(normal in normal_strategy()) {
        let frame = build_frame(&normal).unwrap();
        let again = build_frame(frame.normal()).unwrap();
        prop_assert!(again.orthogonality_defect() <= 1e-12);
        for (a, b) in frame.normal().iter().zip(again.normal()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn rationality_rank_is_monotone_in_bound(
        normal in prop::collection::vec(-6i64..=6, 2..=3),
        b1 in 1i64..6,
        extra in 0i64..6,
    ) {
        prop_assume!(normal.iter().any(|v| *v != 0));
        let exact: Vec<Ratio<i64>> = normal.iter().map(|v| Ratio::from_integer(*v)).collect();
        let frame = build_frame_exact(&exact).unwrap();
        let lo = classify_rationality(&frame, b1).unwrap();
        let hi = classify_rationality(&frame, b1 + extra).unwrap();
        prop_assert!(lo.lattice_rank <= hi.lattice_rank);
        prop_assert!(lo.certified);
        for g in &hi.generators {
            let dot: i64 = g.iter().zip(&normal).map(|(a, b)| a * b).sum();
            prop_assert_eq!(dot, 0);
        }
    }

    #[test]
    fn enumeration_matches_brute_force(theta in 0.0f64..std::f64::consts::PI, eta in 0.001f64..0.3, radius in 1.0f64..50.0) {
        let frame = build_frame_from_angle(theta).unwrap();
        let set = almost_periods(&frame, eta, radius).unwrap();
        let found: BTreeSet<Vec<i64>> = set.periods.iter().map(|p| p.source_lattice_point.clone()).collect();
        let (nx, ny) = (-theta.sin(), theta.cos());
        let k = radius.ceil() as i64 + 1;
        let mut brute = BTreeSet::new();
        for a in -k..=k {
            for b in -k..=k {
                let dot = a as f64 * nx + b as f64 * ny;
                let (px, py) = (a as f64 - dot * nx, b as f64 - dot * ny);
                let dist = (px * px + py * py).sqrt();
                // Skip points within round-off of either boundary.
                if (dot.abs() - eta).abs() < 1e-9 || (dist - radius).abs() < 1e-9 {
                    prop_assume!(false);
                }
                if dot.abs() < eta && dist <= radius {
                    brute.insert(vec![a, b]);
                }
            }
        }
        prop_assert_eq!(found, brute);
    }

    #[test]
    fn period_count_grows_with_eta_and_radius(
        normal in normal_strategy(),
        eta in 0.01f64..0.2,
        deta in 0.0f64..0.2,
        radius in 1.0f64..8.0,
        dr in 0.0f64..4.0,
    ) {
        let frame = build_frame(&normal).unwrap();
        let base = almost_periods(&frame, eta, radius).unwrap().periods.len();
        prop_assert!(almost_periods(&frame, eta + deta, radius).unwrap().periods.len() >= base);
        prop_assert!(almost_periods(&frame, eta, radius + dr).unwrap().periods.len() >= base);
    }

    #[test]
    fn scaled_periods_are_exact_lattice_translations(
        eps in 0.1f64..4.0,
        x in prop::collection::vec(-5.0f64..5.0, 2),
        a in entries(2),
    ) {
        let frame = build_frame(&[1.0, -GOLDEN]).unwrap();
        let f = pull_back_density(&density("trig_product", 1, 1), &frame).unwrap();
        let a = mat(1, 2, &a);
        let scale = 1.0 + a.norm_sq();
        for ap in almost_periods(&frame, 0.05, 40.0).unwrap().periods {
            // f_eps(x) = f(x / eps); the eps-scaled lift of the lattice point.
            let shifted: Vec<f64> = x.iter().zip(ap.shift()).map(|(xi, s)| xi + eps * s).collect();
            let f0 = f.eval(&x.iter().map(|v| v / eps).collect::<Vec<_>>(), &a);
            let f1 = f.eval(&shifted.iter().map(|v| v / eps).collect::<Vec<_>>(), &a);
            prop_assert!((f1 - f0).abs() <= 1e-11 * scale, "{:?}: {}", ap.source_lattice_point, f1 - f0);
        }
    }

    #[test]
    fn grad_a_matches_central_differences(
        (d, m) in shape_strategy(),
        fam in 0usize..9,
        x in prop::collection::vec(-3.0f64..3.0, 3),
        raw in entries(9),
    ) {
        let f = &families(d, m)[fam];
        let n = d + 1;
        let a = mat(m, n, &raw[..m * n]);
        let g = f.grad_a(&x[..n], &a);
        let step = 1e-5;
        let mut err = 0.0f64;
        for i in 0..m {
            for j in 0..n {
                let mut up = a;
                let mut dn = a;
                up[(i, j)] += step;
                dn[(i, j)] -= step;
                let fd = (f.eval(&x[..n], &up) - f.eval(&x[..n], &dn)) / (2.0 * step);
                err = err.max((fd - g[(i, j)]).abs());
            }
        }
        let gmax = g.row_major().iter().fold(0.0f64, |s, v| s.max(v.abs()));
        prop_assert!(err / gmax.max(1.0) < 1e-6, "error {err}");
    }

    #[test]
    fn builtin_families_are_midpoint_convex(
        (d, m) in shape_strategy(),
        fam in 0usize..9,
        x in prop::collection::vec(-3.0f64..3.0, 3),
        ra in entries(9),
        rb in entries(9),
    ) {
        let f = &families(d, m)[fam];
        prop_assert!(f.is_convex());
        let n = d + 1;
        let (a, b) = (mat(m, n, &ra[..m * n]), mat(m, n, &rb[..m * n]));
        let mid = (a + b).scale(0.5);
        let lhs = f.eval(&x[..n], &mid);
        let rhs = 0.5 * (f.eval(&x[..n], &a) + f.eval(&x[..n], &b));
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cell_value_lies_between_jensen_and_zero_competitor(
        fam in 0usize..9,
        t in 1usize..4,
        raw in entries(2),
    ) {
        let f = &families(1, 2)[fam];
        let a = mat(2, 1, &raw);
        let grid = GridOptions { h: 0.5, n_per_unit: 3, n_y: 2 };
        let sol = minimize_cell(&a, t as f64, f, &grid, &SolverOptions::default()).unwrap();
        let g = f.growth();
        let np = a.norm().powf(g.p);
        prop_assert!(sol.value >= g.alpha * np - 1e-10, "{} < {}", sol.value, g.alpha * np);
        prop_assert!(sol.value <= sol.zero_competitor);
        prop_assert!(sol.zero_competitor <= g.beta * (1.0 + np) * (1.0 + 1e-12));
    }

    #[test]
    fn refinement_never_raises_the_value(fam in 0usize..9, t in 1usize..4, a in -2.0f64..2.0) {
        let f = &families(1, 1)[fam];
        prop_assume!(f.is_quadratic());
        let a = mat(1, 1, &[a]);
        let solver = SolverOptions::default();
        let coarse = minimize_cell(&a, t as f64, f, &GridOptions { h: 0.5, n_per_unit: 4, n_y: 4 }, &solver).unwrap();
        let fine = minimize_cell(&a, t as f64, f, &GridOptions { h: 0.5, n_per_unit: 8, n_y: 8 }, &solver).unwrap();
        // Nested Q1 spaces: the coarse minimizer is admissible on the fine grid.
        let prolonged: Vec<f64> = (0..fine.grid.n_nodes())
            .map(|n| sample_field(&coarse.grid, &coarse.u_star, 1, &fine.grid.node_coords(n)).unwrap()[0])
            .collect();
        let competitor = assemble_energy(&prolonged, &a, f, &fine.grid).unwrap();
        prop_assert!(fine.value <= competitor + 1e-9 * (1.0 + competitor), "{} > {competitor}", fine.value);
        // Raw values differ by the change of quadrature as well.
        prop_assert!(fine.value <= coarse.value * (1.0 + 1e-3) + 1e-10, "{} > {}", fine.value, coarse.value);
    }

    #[test]
    fn integer_shift_of_periodic_density_keeps_value(
        fam in 0usize..7,
        t in 1usize..4,
        shift in -3i32..=3,
        a in entries(2),
    ) {
        let f = &families(1, 1)[fam];
        prop_assert!(f.is_lattice_periodic());
        let g = f.translated(&[shift as f64, 0.0]).unwrap();
        let a = mat(1, 1, &a[..1]);
        let grid = GridOptions { h: 0.5, n_per_unit: 4, n_y: 2 };
        let solver = SolverOptions::default();
        let v0 = minimize_cell(&a, t as f64, f, &grid, &solver).unwrap().value;
        let v1 = minimize_cell(&a, t as f64, &g, &grid, &solver).unwrap().value;
        prop_assert!((v0 - v1).abs() <= 1e-10 * (1.0 + v0.abs()), "{v0} vs {v1}");
    }

    #[test]
    fn homogenized_estimate_is_homogeneous_of_degree_p(fam in 0usize..8, a in 0.2f64..2.0, s in 0.3f64..3.0) {
        // The perturbed family (index 8) is not positively homogeneous.
        let f = &families(1, 1)[fam];
        let grid = GridOptions { h: 0.5, n_per_unit: 4, n_y: 2 };
        let solver = SolverOptions::default();
        let sched = [1.0, 2.0, 3.0];
        let e1 = estimate_fhom(&mat(1, 1, &[a]), f, &sched, &grid, &solver, 1.0).unwrap();
        let e2 = estimate_fhom(&mat(1, 1, &[s * a]), f, &sched, &grid, &solver, 1.0).unwrap();
        let p = f.growth().p;
        let tol = if f.is_quadratic() { 1e-8 } else { 1e-5 };
        let expected = s.powf(p) * e1.extrapolated;
        prop_assert!((e2.extrapolated - expected).abs() <= tol * expected, "{} vs {expected}", e2.extrapolated);
        let zero = estimate_fhom(&Mat::zeros(1, 1), f, &sched, &grid, &solver, 1.0).unwrap();
        prop_assert_eq!(zero.extrapolated, 0.0);
    }

    #[test]
    fn slice_selection_meets_threshold(
        g in prop::collection::vec(0.0f64..5.0, 21),
        eta in 0.01f64..0.1,
        delta_frac in 0.3f64..1.0,
    ) {
        let h = 1.0;
        let layers: Vec<f64> = (0..21).map(|j| -h + 0.1 * j as f64).collect();
        let delta = (delta_frac * h).max(eta * 1.5);
        let sel = slice_select(&g, &layers, h, delta, eta).unwrap();
        prop_assert!(sel.weighted_plus <= sel.threshold * (1.0 + 1e-12));
        prop_assert!(sel.weighted_minus <= sel.threshold_bottom * (1.0 + 1e-12));
        prop_assert!(sel.y_plus >= h - delta - 1e-12 && sel.y_plus <= h);
        prop_assert!(sel.y_minus <= -h + delta + 1e-12 && sel.y_minus >= -h);
    }

    #[test]
    fn extension_freezes_caps(seed in prop::collection::vec(-1.0f64..1.0, 200), t in 1usize..3) {
        let f = density("trig_product", 1, 1);
        let grid = SlabGrid::slab(1, t as f64, 0.5, 4, 8).unwrap();
        let u: Vec<f64> = (0..grid.n_nodes()).map(|i| if grid.is_fixed(i) { 0.0 } else { seed[i % seed.len()] }).collect();
        let a = mat(1, 1, &[0.7]);
        let g = layer_energies(&u, &a, &f, &grid).unwrap();
        let sel = slice_select(&g, &grid.layers(), 0.5, 0.25, 0.05).unwrap();
        let ext = clamp_extend(&u, 1, &grid, &sel).unwrap();
        for k in 0..=4 * t {
            let x = k as f64 / 4.0;
            let top = ext.sample(&[x, sel.y_plus]).unwrap()[0];
            let bottom = ext.sample(&[x, sel.y_minus]).unwrap()[0];
            for dy in [0.01, 0.05, 0.2] {
                prop_assert_eq!(ext.sample(&[x, sel.y_plus + dy]).unwrap()[0], top);
                prop_assert_eq!(ext.sample(&[x, sel.y_minus - dy]).unwrap()[0], bottom);
            }
        }
    }
}

#[test]
fn patchwork_field_vanishes_on_lateral_boundary() {
    let frame = build_frame(&[1.0, -GOLDEN]).unwrap();
    let f = pull_back_density(&density("trig_product", 1, 1), &frame).unwrap();
    for (t, s, eta) in [(2.0, 20.0, 0.1), (3.0, 30.0, 0.08), (4.0, 25.0, 0.15)] {
        let opts = GridOptions { h: 0.5, n_per_unit: 4, n_y: 8 };
        let sol = minimize_cell(&mat(1, 1, &[1.0]), t, &f, &opts, &SolverOptions::default()).unwrap();
        let g = layer_energies(&sol.u_star, &sol.a, &f, &sol.grid).unwrap();
        let sel = slice_select(&g, &sol.grid.layers(), 0.5, 0.2, eta).unwrap();
        let ext = clamp_extend(&sol.u_star, 1, &sol.grid, &sel).unwrap();
        let set = almost_periods(&frame, eta, s).unwrap();
        let l = inclusion_length(&set, &Region::cube(0.0, s, 1)).unwrap().l_eta;
        let plan = plan_patchwork(1, 0.5, t, s, l, &set.periods).unwrap();
        let target = build_grid(1, s, &opts).unwrap();
        let field = patchwork_assemble(&ext, &plan, &target).unwrap();
        for node in 0..target.n_nodes() {
            if target.is_fixed(node) {
                assert_eq!(field.u[node], 0.0);
            }
        }
        assert!(field.matches_plan(&plan));
    }
}

#[test]
fn exact_period_translation_preserves_energy() {
    // y-independent field, A = 0 and f(x, 0) = 0, so the caps and the zero
    // region contribute nothing.
    let f = density("laminate", 1, 1);
    let a = Mat::zeros(1, 1);
    let base = SlabGrid::slab(1, 2.0, 0.5, 8, 4).unwrap();
    let np = base.n_plane_nodes();
    let u: Vec<f64> = (0..base.n_nodes())
        .map(|i| {
            let k = i % np;
            if k == 0 || k == np - 1 {
                0.0
            } else {
                ((k * 7) % 5) as f64 / 5.0 - 0.3
            }
        })
        .collect();
    let g = layer_energies(&u, &a, &f, &base).unwrap();
    let sel = slice_select(&g, &base.layers(), 0.5, 0.25, 0.05).unwrap();
    let ext = clamp_extend(&u, 1, &base, &sel).unwrap();
    let e_base = assemble_energy(&u, &a, &f, &base).unwrap() * base.plane_measure();
    for tau in [0.0, 1.0, 3.0] {
        let ap = AlmostPeriod {
            tau: vec![tau],
            z_tau: 0.0,
            defect: 0.0,
            source_lattice_point: vec![tau as i64, 0],
        };
        let target = SlabGrid::slab(1, 6.0, 0.5, 8, 4).unwrap();
        let v = translate_test_function(&ext, &ap, &target).unwrap();
        let e = assemble_energy(&v, &a, &f, &target).unwrap() * target.plane_measure();
        assert!((e - e_base).abs() <= 1e-12 * e_base, "tau = {tau}: {e} vs {e_base}");
    }
}
