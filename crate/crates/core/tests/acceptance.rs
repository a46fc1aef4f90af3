use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use biot_core::analysis::{compute_errors, convergence_order, ConvergenceReport, ErrorRecord};
use biot_core::assembly::{stiffness_matrix, PhysicalParams};
use biot_core::elements::{triangle_quadrature, MAX_TRIANGLE_EXACTNESS};
use biot_core::mesh::{BoundaryRoles, SegmentTag, TagSet};
use biot_core::mms::{derived_sources_selftest, example1, example2, AffineSolution, ManufacturedCase};
use biot_core::schemes::{
    elliptic_projection, initial_state, monolithic_matrix, stokes_projection, Discretization, Method,
    SchemeConfig, State, TimeStepper,
};
use biot_core::{spatial_study, temporal_study};

const WORKERS: usize = 1;

type Outcome = Result<String, String>;

fn fmt_orders(o: &[Option<f64>; 4]) -> String {
    let parts: Vec<String> = o.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.3}"))).collect();
    format!("[{}]", parts.join(", "))
}

fn final_orders(report: &ConvergenceReport) -> Result<[f64; 4], String> {
    let o = report.final_orders().ok_or("study has a single row")?;
    let mut out = [0.0; 4];
    for (i, v) in o.iter().enumerate() {
        out[i] = v.ok_or_else(|| format!("{} order undefined", ErrorRecord::NAMES[i]))?;
    }
    Ok(out)
}

fn check_bands(orders: [f64; 4], bands: [(f64, f64); 4]) -> Outcome {
    let text = fmt_orders(&orders.map(Some));
    let bad: Vec<String> = orders
        .iter()
        .zip(bands)
        .zip(ErrorRecord::NAMES)
        .filter(|((o, (lo, hi)), _)| !(lo..=hi).contains(o))
        .map(|((o, (lo, hi)), name)| format!("{name} {o:.3} outside [{lo}, {hi}]"))
        .collect();
    if bad.is_empty() { Ok(format!("final orders {text}")) } else { Err(format!("{}; orders {text}", bad.join("; "))) }
}

fn temporal(method: Method, bands: [(f64, f64); 4]) -> Outcome {
    let dts = [0.25, 0.125, 0.0625, 0.03125];
    let report = temporal_study(&example1(), method, 32, 3, 2, &dts, WORKERS).map_err(|e| e.to_string())?;
    check_bands(final_orders(&report)?, bands)
}

const PAIRS_M1_K2: [(usize, f64); 4] = [(2, 1.0 / 4.0), (4, 1.0 / 16.0), (8, 1.0 / 64.0), (16, 1.0 / 256.0)];
const BANDS_K2: [(f64, f64); 4] = [(1.75, 2.15), (1.8, 2.4), (1.75, 2.15), (0.85, 1.10)];
const BANDS_K3: [(f64, f64); 4] = [(2.8, 3.25), (2.8, 3.3), (2.7, 3.3), (1.8, 2.2)];

fn spatial(case: &ManufacturedCase, method: Method, k: usize, bands: [(f64, f64); 4]) -> Result<(String, ErrorRecord), String> {
    let report = spatial_study(case, method, &PAIRS_M1_K2, k, k - 1, WORKERS).map_err(|e| e.to_string())?;
    let last = report.rows.last().expect("four rows").errors;
    check_bands(final_orders(&report)?, bands).map(|s| (s, last))
}

fn robustness(base: &mut [Option<ErrorRecord>]) -> Outcome {
    let case = example2(0.49999, 1e-6).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    let mut failed = false;
    for (i, (method, k, bands)) in [(Method::Method1, 2, BANDS_K2), (Method::Method2, 3, BANDS_K3)].into_iter().enumerate() {
        match spatial(&case, method, k, bands) {
            Ok((text, last)) => {
                let ratio_text = match base[i].take() {
                    Some(reference) => {
                        let ratios: Vec<f64> =
                            last.as_array().iter().zip(reference.as_array()).map(|(a, b)| a / b).collect();
                        failed |= ratios.iter().any(|r| !(0.2..=5.0).contains(r));
                        format!(", error ratios {ratios:.2?}")
                    }
                    None => {
                        failed = true;
                        ", no nu=0.3 reference".into()
                    }
                };
                notes.push(format!("k={k}: {text}{ratio_text}"));
            }
            Err(e) => {
                failed = true;
                notes.push(format!("k={k}: {e}"));
            }
        }
    }
    if failed { Err(notes.join(" | ")) } else { Ok(notes.join(" | ")) }
}

fn projection_orders() -> Outcome {
    let case = example1();
    let ns = [4, 8, 16, 32];
    let mut notes = Vec::new();
    let mut failed = false;
    for (k, l) in [(2, 1), (3, 2)] {
        let mut errs = Vec::new();
        for &n in &ns {
            let disc = Discretization::for_case(&case, n, k, l).map_err(|e| e.to_string())?;
            let (u, xi) = stokes_projection(&disc, &case, 0.0).map_err(|e| e.to_string())?;
            let p = elliptic_projection(&disc, &case, 0.0).map_err(|e| e.to_string())?;
            let e = compute_errors(&disc, &State { u, xi, p, t: 0.0 }, &case);
            errs.push([e.u_h1, e.p_l2, e.p_h1]);
        }
        let want = [k as f64, (l + 1) as f64, l as f64];
        let mut orders = Vec::new();
        for (i, w) in errs.windows(2).enumerate() {
            let o: Vec<Option<f64>> = (0..3).map(|j| convergence_order(w[0][j], w[1][j], 2.0)).collect();
            // finest refinement only
            let last = i + 2 == errs.len();
            for (j, v) in o.iter().enumerate() {
                if last && !v.is_some_and(|v| (v - want[j]).abs() <= 0.2) {
                    failed = true;
                }
            }
            orders.push(o.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.2}"))).collect::<Vec<_>>().join("/"));
        }
        notes.push(format!("k={k}, l={l} (u_H1/p_L2/p_H1, want {want:?}): {}", orders.join(", ")));
    }
    if failed { Err(notes.join(" | ")) } else { Ok(notes.join(" | ")) }
}

fn affine_case(sol: AffineSolution, roles: BoundaryRoles) -> ManufacturedCase {
    ManufacturedCase {
        name: "affine".into(),
        exact: Arc::new(sol),
        params: PhysicalParams::from_lame(0.8, 1.7, 0.3, 0.9, 1.4).unwrap(),
        roles,
        final_time: 1.0,
    }
}

fn mixed_roles() -> BoundaryRoles {
    let d = TagSet::of(&[SegmentTag::Gamma2, SegmentTag::Gamma4]);
    BoundaryRoles::new(d, d).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn properties() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };
    let methods = [Method::Method1, Method::Method2];
    let role_sets = [BoundaryRoles::all_dirichlet(), mixed_roles()];

    for roles in role_sets {
        for (k, l) in [(2, 1), (3, 2)] {
            let zero = affine_case(AffineSolution::default(), roles);
            let disc = Discretization::for_case(&zero, 3, k, l).map_err(|e| e.to_string())?;
            for method in methods {
                let config = SchemeConfig::new(method, 0.25, 1.0, k, l).unwrap();
                let mut stepper = TimeStepper::new(&disc, &zero, config).map_err(|e| e.to_string())?;
                let s0 = initial_state(&disc, &zero).map_err(|e| e.to_string())?;
                let mut nonzero = s0.u.iter().chain(&s0.xi).chain(&s0.p).any(|&v| v != 0.0);
                stepper
                    .run_with(s0, |s| nonzero |= s.u.iter().chain(&s.xi).chain(&s.p).any(|&v| v != 0.0))
                    .map_err(|e| e.to_string())?;
                check(!nonzero, format!("zero data produced a nonzero state ({method:?}, k={k})"));
            }

            let steady = AffineSolution {
                u: [[0.1, 0.4, -0.3], [-0.2, 0.25, 0.5]],
                p: [1.5, -0.7, 0.9],
                ..Default::default()
            };
            let case = affine_case(steady, roles);
            let disc = Discretization::for_case(&case, 3, k, l).map_err(|e| e.to_string())?;
            for method in methods {
                let config = SchemeConfig::new(method, 0.25, 1.0, k, l).unwrap();
                let mut stepper = TimeStepper::new(&disc, &case, config).map_err(|e| e.to_string())?;
                let mut prev = initial_state(&disc, &case).map_err(|e| e.to_string())?;
                let mut drift: f64 = 0.0;
                stepper
                    .run_with(prev.clone(), |s| {
                        drift = drift.max(max_diff(&s.u, &prev.u)).max(max_diff(&s.xi, &prev.xi)).max(max_diff(&s.p, &prev.p));
                        prev = s.clone();
                    })
                    .map_err(|e| e.to_string())?;
                check(drift < 1e-9, format!("steady state drifts by {drift:e} per step ({method:?}, k={k})"));
                let sym = stepper.matrix().symmetry_defect();
                check(sym < 1e-12, format!("monolithic matrix asymmetric by {sym:e} ({method:?}, k={k})"));
            }
        }
    }

    let e2 = example2(0.49999, 1e-6).unwrap();
    for case in [example1(), example2(0.3, 1.0).unwrap(), e2.clone()] {
        let disc = Discretization::for_case(&case, 4, 3, 2).map_err(|e| e.to_string())?;
        let o = &disc.ops;
        for (name, m) in [("A1", &o.a1), ("A2", &o.a2), ("A3", &o.a3), ("D", &o.d)] {
            let s = m.symmetry_defect();
            check(s < 1e-12, format!("{name} asymmetric by {s:e} ({})", case.name));
        }
        let rows = o.d.mul_vec(&vec![1.0; o.d.ncols()]);
        let worst = rows.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        check(worst < 1e-12, format!("D row sum {worst:e} ({})", case.name));
        for method in methods {
            let s = monolithic_matrix(&disc, method, 0.125).symmetry_defect();
            check(s < 1e-12, format!("sign-symmetric form asymmetric by {s:e} ({method:?}, {})", case.name));
        }
        let report = derived_sources_selftest(&case, 50, 7);
        check(report.passed(), format!("source self-test failed for {}: {report}", case.name));
    }
    let disc = Discretization::for_case(&e2, 2, 2, 1).map_err(|e| e.to_string())?;
    let d = stiffness_matrix(&disc.p_space, 1.0).map_err(|e| e.to_string())?;
    let worst = d.mul_vec(&vec![1.0; d.ncols()]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(worst < 1e-12, format!("unit stiffness row sum {worst:e}"));

    for req in 0..=MAX_TRIANGLE_EXACTNESS {
        let rule = triangle_quadrature(req).map_err(|e| e.to_string())?;
        for a in 0..=rule.exactness_degree {
            for b in 0..=rule.exactness_degree - a {
                let got: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                let want = monomial_integral(a, b);
                let rel = (got - want).abs() / want;
                check(rel < 1e-14, format!("quadrature {req}: x^{a} y^{b} relative error {rel:e}"));
            }
        }
    }

    if failures.is_empty() {
        Ok("zero data, fixed points, symmetry, D row sums, quadrature table and source self-tests".into())
    } else {
        Err(failures.join("; "))
    }
}

/// `a! b! / (a + b + 2)!` over the reference triangle.
fn monomial_integral(a: usize, b: usize) -> f64 {
    let mut v = 1.0;
    for i in 1..=b {
        v *= i as f64 / (a + i) as f64;
    }
    v / ((a + b + 1) * (a + b + 2)) as f64
}

fn line(id: &str, title: &str, started: Instant, outcome: &Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (status, detail) = match outcome {
        Ok(detail) => ("PASS", detail),
        Err(detail) => ("FAIL", detail),
    };
    // bypasses the harness capture so the summary shows without --nocapture
    let _ = writeln!(std::io::stdout().lock(), "{status}  criterion {id}: {title} ({secs:.1} s) {detail}");
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let mut all = true;

    let t = Instant::now();
    all &= line("1", "temporal order, method 1", t, &temporal(Method::Method1, [(0.85, 1.10); 4]));

    let t = Instant::now();
    all &= line("2", "temporal order, method 2", t, &temporal(Method::Method2, [(1.80, 2.20); 4]));

    let base_case = example2(0.3, 1.0).unwrap();
    let mut base = [None, None];
    let t = Instant::now();
    let r3 = spatial(&base_case, Method::Method1, 2, BANDS_K2).map(|(s, e)| {
        base[0] = Some(e);
        s
    });
    all &= line("3", "spatial orders, method 1, k=2, l=1", t, &r3);

    let t = Instant::now();
    let r4 = spatial(&base_case, Method::Method2, 3, BANDS_K3).map(|(s, e)| {
        base[1] = Some(e);
        s
    });
    all &= line("4", "spatial orders, method 2, k=3, l=2", t, &r4);

    let t = Instant::now();
    all &= line("5", "robustness at nu=0.49999, K=1e-6", t, &robustness(&mut base));

    let t = Instant::now();
    all &= line("6", "projection orders", t, &projection_orders());

    let t = Instant::now();
    all &= line("7", "property suite", t, &properties());

    assert!(all, "at least one acceptance criterion failed");
}

/// Reference errors on the 64 x 64 mesh with `k = 3, l = 2`, method 1.
const TABLE1: [[f64; 4]; 4] = [
    [5.219e-02, 2.754e-01, 2.971e-01, 1.386e+00],
    [2.735e-02, 1.443e-01, 1.557e-01, 7.263e-01],
    [1.399e-02, 7.381e-02, 7.963e-02, 3.715e-01],
    [7.076e-03, 3.732e-02, 4.026e-02, 1.878e-01],
];
const TABLE1_ORDERS: [[f64; 4]; 3] = [[0.93; 4], [0.97; 4], [0.98; 4]];

#[test]
#[ignore = "slow: 64 x 64 mesh"]
fn acceptance_table1_resolution() {
    let t = Instant::now();
    let dts = [0.25, 0.125, 0.0625, 0.03125];
    let outcome = temporal_study(&example1(), Method::Method1, 64, 3, 2, &dts, WORKERS)
        .map_err(|e| e.to_string())
        .and_then(|report| {
            let mut bad = Vec::new();
            for (row, want) in report.rows.iter().zip(TABLE1) {
                for ((got, want), name) in row.errors.as_array().iter().zip(want).zip(ErrorRecord::NAMES) {
                    let r = got / want;
                    if !(0.5..=2.0).contains(&r) {
                        bad.push(format!("dt={} {name} {got:.3e} vs {want:.3e}", row.dt));
                    }
                }
            }
            for (orders, want) in report.orders().iter().skip(1).zip(TABLE1_ORDERS) {
                for ((got, want), name) in orders.iter().zip(want).zip(ErrorRecord::NAMES) {
                    if !got.is_some_and(|g| (g - want).abs() <= 0.1) {
                        bad.push(format!("{name} order {got:?} vs {want}"));
                    }
                }
            }
            let last = report.rows.last().expect("four rows").errors.as_array();
            let last: Vec<String> = last.iter().map(|v| format!("{v:.3e}")).collect();
            let summary = format!("final errors [{}], orders {}", last.join(", "), fmt_orders(&report.final_orders().expect("orders")));
            if bad.is_empty() { Ok(summary) } else { Err(format!("{}; {summary}", bad.join("; "))) }
        });
    assert!(line("8", "table1 errors and orders at h=1/64", t, &outcome));
}
