//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting, so the summary is visible in plain
//! `cargo test` output.

use std::collections::HashSet;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbf_pum::adaptivity::{
    coarse_fine_on, indicator_interpolant, solve_collocation, SolveSettings, SEPARATION,
};
use rbf_pum::geometry::{
    boundary_count, build_covering, default_patches_per_axis, distance, distance_sq, make_initial_points, nearest_point,
    HaltonStream, InitialMode, Point, PointSet,
};
use rbf_pum::harness::{convergence_study, run, RunConfig, RunOutput};
use rbf_pum::kernels::KernelModel;
use rbf_pum::problems::{make_problem, ProblemName};
use rbf_pum::weights::evaluate_weights;
use rbf_pum::Execution;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance [{id}] {verdict} {name}: {detail}");
}

struct Case {
    label: &'static str,
    output: RunOutput,
}

fn adaptive_case(problem: ProblemName, mode: InitialMode) -> Case {
    let config = RunConfig { problem, mode, ..RunConfig::default() };
    let label = match (problem, mode) {
        (ProblemName::U1, InitialMode::Grid) => "u1 grid",
        (ProblemName::U1, InitialMode::Halton) => "u1 halton",
        (ProblemName::U2, InitialMode::Grid) => "u2 grid",
        (ProblemName::U2, InitialMode::Halton) => "u2 halton",
    };
    Case { label, output: run(&config, Execution::default()).expect("adaptive run") }
}

fn cases() -> &'static [Case] {
    static CASES: OnceLock<Vec<Case>> = OnceLock::new();
    CASES.get_or_init(|| {
        vec![
            adaptive_case(ProblemName::U1, InitialMode::Grid),
            adaptive_case(ProblemName::U1, InitialMode::Halton),
            adaptive_case(ProblemName::U2, InitialMode::Grid),
            adaptive_case(ProblemName::U2, InitialMode::Halton),
        ]
    })
}

fn case(label: &str) -> &'static Case {
    cases().iter().find(|c| c.label == label).unwrap()
}

fn within_factor(value: f64, reference: f64, factor: f64) -> bool {
    value >= reference / factor && value <= reference * factor
}

/// Node count within ×2, MAE within ×10, RMSE ≤ MAE, CN in [1e5, 1e10], ≤ 60 s.
fn table_band(c: &Case, n_ref: f64, mae_ref: f64) -> (bool, String) {
    let r = &c.output.report;
    let ok = within_factor(r.n_tot as f64, n_ref, 2.0)
        && within_factor(r.mae, mae_ref, 10.0)
        && r.rmse <= r.mae
        && (1e5..=1e10).contains(&r.cn)
        && r.timings.total_seconds <= 60.0;
    let detail = format!(
        "{}: N_tot={} (ref {n_ref}) MAE={:.3e} (ref {mae_ref:.2e}) RMSE={:.3e} CN={:.3e} time={:.2}s iterations={} stop={}",
        c.label,
        r.n_tot,
        r.mae,
        r.rmse,
        r.cn,
        r.timings.total_seconds,
        r.iterations,
        r.stop_reason
    );
    (ok, detail)
}

#[test]
fn u1_grid_start_lands_in_reference_band() {
    let (ok, detail) = table_band(case("u1 grid"), 755.0, 1.00e-4);
    report(1, "u1 adaptive run, grid start", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn u2_grid_and_halton_starts_land_in_reference_bands() {
    let (ok_a, da) = table_band(case("u2 grid"), 1411.0, 1.58e-4);
    let (ok_b, db) = table_band(case("u2 halton"), 1452.0, 1.13e-4);
    report(2, "u2 adaptive runs, grid and Halton starts", ok_a && ok_b, &format!("{da}; {db}"));
    assert!(ok_a && ok_b, "{da}\n{db}");
}

// Central differences against closed forms, compared as relative errors of
// the whole gradient vector (or of all active weight derivatives at a point).
// Where a Laplacian crosses zero the comparison scale is floored at 1% of
// its value at the origin.
/// Richardson-extrapolated central differences of `f` at `p`: gradient and
/// five-point Laplacian, both with O(h⁴) truncation.
fn fd_derivatives(f: impl Fn(Point) -> f64, p: Point, h: f64) -> ([f64; 2], f64) {
    let stencil = |h: f64| {
        let (xp, xm) = (f([p[0] + h, p[1]]), f([p[0] - h, p[1]]));
        let (yp, ym) = (f([p[0], p[1] + h]), f([p[0], p[1] - h]));
        ([(xp - xm) / (2.0 * h), (yp - ym) / (2.0 * h)], (xp + xm + yp + ym - 4.0 * f(p)) / (h * h))
    };
    let (g1, l1) = stencil(h);
    let (g2, l2) = stencil(h / 2.0);
    let rich = |coarse: f64, fine: f64| (4.0 * fine - coarse) / 3.0;
    ([rich(g1[0], g2[0]), rich(g1[1], g2[1])], rich(l1, l2))
}

#[test]
fn derivatives_match_central_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_kernel: f64 = 0.0;
    let kernels = [KernelModel::matern6(3.0).unwrap(), KernelModel::wendland2(1.0).unwrap()];
    for k in &kernels {
        let value = |p: Point| k.value(p[0].hypot(p[1])).unwrap();
        let lap0 = k.radial(0.0).laplacian.abs();
        let mut n = 0;
        while n < 1000 {
            let p: Point = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = p[0].hypot(p[1]);
            if r < 1e-2 || (r * k.shape() - 1.0).abs() < 1e-2 {
                continue;
            }
            n += 1;
            let g = k.gradient(p);
            let (fd, _) = fd_derivatives(value, p, 1e-4);
            let gscale = g[0].hypot(g[1]).max(1e-300);
            worst_kernel = worst_kernel.max((g[0] - fd[0]).hypot(g[1] - fd[1]) / gscale);

            let lap = k.radial(r).laplacian;
            let (_, fdl) = fd_derivatives(value, p, 2e-3);
            // the Laplacian changes sign, so small values are measured against its peak
            worst_kernel = worst_kernel.max((lap - fdl).abs() / lap.abs().max(1e-2 * lap0));
        }
    }

    let pts = make_initial_points(21, InitialMode::Grid).unwrap();
    let settings = SolveSettings::default();
    let covering = build_covering(&pts, default_patches_per_axis(pts.len()), settings.overlap).unwrap();
    let mut worst_weights: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        // weights are C² only: keep the stencil off support circles and patch centres
        let rough = covering.patches().iter().any(|p| {
            let d = distance(x, p.center);
            (d - p.radius).abs() < 3e-3 || d < 1e-2
        });
        if rough {
            continue;
        }
        n += 1;
        let e = evaluate_weights(x, &covering).unwrap();
        let gscale = e.gradients.iter().map(|g| g[0].hypot(g[1])).fold(0.0, f64::max);
        let lscale = e.laplacians.iter().map(|l| l.abs()).fold(0.0, f64::max);
        for &j in &e.active {
            let (_, g, l) = e.get(j);
            let w = |q: Point| evaluate_weights(q, &covering).unwrap().get(j).0;
            let (fg, _) = fd_derivatives(w, x, 1e-4);
            let (_, fl) = fd_derivatives(w, x, 2e-3);
            if gscale > 0.0 {
                worst_weights = worst_weights.max((g[0] - fg[0]).hypot(g[1] - fg[1]) / gscale);
            }
            if lscale > 0.0 {
                worst_weights = worst_weights.max((l - fl).abs() / lscale);
            }
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let ok = worst_kernel <= 1e-5 && worst_weights <= 1e-5 && seconds <= 5.0;
    let detail = format!("worst kernel rel {worst_kernel:.2e}, worst weight rel {worst_weights:.2e}, {seconds:.2}s");
    report(3, "kernel and weight derivatives vs central differences", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn weights_form_a_partition_of_unity() {
    let pts = make_initial_points(21, InitialMode::Grid).unwrap();
    let covering =
        build_covering(&pts, default_patches_per_axis(pts.len()), SolveSettings::default().overlap).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut s_err, mut g_err, mut l_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10_000 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let e = evaluate_weights(x, &covering).unwrap();
        s_err = s_err.max((e.values.iter().sum::<f64>() - 1.0).abs());
        let g = e.gradients.iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
        g_err = g_err.max(g[0].hypot(g[1]));
        l_err = l_err.max(e.laplacians.iter().sum::<f64>().abs());
    }
    let ok = s_err <= 1e-12 && g_err <= 1e-8 && l_err <= 1e-6;
    let detail = format!("max |Σw-1|={s_err:.2e}, max |Σ∇w|={g_err:.2e}, max |ΣΔw|={l_err:.2e}");
    report(4, "partition of unity at 10^4 points", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn fixed_grid_solves_converge() {
    let started = Instant::now();
    let rows = convergence_study(ProblemName::U1, &[9, 17, 33], &SolveSettings::default()).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let decreasing = rows.windows(2).all(|w| w[1].rmse < w[0].rmse);
    let last = rows.last().unwrap().rmse;
    let ok = decreasing && last <= 1e-3 && seconds <= 30.0;
    let table: Vec<String> = rows.iter().map(|r| format!("{}²→{:.3e}", r.n_side, r.rmse)).collect();
    let detail = format!("RMSE {}, {seconds:.2}s", table.join(", "));
    report(5, "non-adaptive convergence on u1", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn indicators_vanish_in_identity_configurations() {
    let problem = make_problem(ProblemName::U1);
    let pts = make_initial_points(11, InitialMode::Grid).unwrap();
    let single = SolveSettings { patches_per_axis: Some(1), ..SolveSettings::default() };
    let solved = solve_collocation(&pts, &problem, &single).unwrap();
    let test = HaltonStream::new().draw(2 * pts.n_interior());
    let e = indicator_interpolant(&solved.solution, &test, Execution::default()).unwrap();
    let max_interp = e.iter().cloned().fold(0.0, f64::max);
    let cf = coarse_fine_on(&problem, &pts, &pts, &SolveSettings::default()).unwrap();
    let cf_zero = cf.iter().all(|&v| v == 0.0);
    let ok = max_interp <= 1e-10 && cf_zero;
    let detail = format!("single-patch interpolant indicator max {max_interp:.2e}; coarse-fine with fine = coarse all zero: {cf_zero}");
    report(6, "indicator identities", ok, &detail);
    assert!(ok, "{detail}");
}

fn band_density_ratio(points: &PointSet) -> f64 {
    let in_band = |p: Point| (4.0 * p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 0.2;
    let m = 1000;
    let mut area = 0.0;
    for j in 0..m {
        for i in 0..m {
            if in_band([(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64]) {
                area += 1.0;
            }
        }
    }
    area /= (m * m) as f64;
    let inside = points.interior().iter().filter(|&&p| in_band(p)).count() as f64;
    let outside = points.n_interior() as f64 - inside;
    (inside / area) / (outside / (1.0 - area))
}

#[test]
fn u2_refinement_concentrates_on_ridge() {
    let grid = band_density_ratio(&case("u2 grid").output.history.last().unwrap().points);
    let halton = band_density_ratio(&case("u2 halton").output.history.last().unwrap().points);
    let ok = grid >= 2.0 && halton >= 2.0;
    let detail = format!("band/outside interior density: grid start {grid:.2}, Halton start {halton:.2} (need ≥ 2)");
    report(7, "u2 refinement targeting", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn safety_invariants_hold_on_every_run() {
    let mut problems = Vec::new();
    for c in cases() {
        let h = &c.output.history;
        if h.len() > 50 {
            problems.push(format!("{}: {} iterations", c.label, h.len()));
        }
        if h.last().unwrap().record.stop_reason.is_none() {
            problems.push(format!("{}: no stop reason", c.label));
        }
        for s in h {
            let p = &s.points;
            if p.n_boundary() != boundary_count(p.n_interior()) {
                problems.push(format!("{} k={}: N_b={} for N_i={}", c.label, s.k, p.n_boundary(), p.n_interior()));
            }
            if p.len() > 5000 {
                problems.push(format!("{} k={}: {} points", c.label, s.k, p.len()));
            }
            let sep = p.min_separation();
            if sep < SEPARATION {
                problems.push(format!("{} k={}: separation {sep:.2e}", c.label, s.k));
            }
            let boundary: HashSet<[u64; 2]> = p.boundary().iter().map(|q| [q[0].to_bits(), q[1].to_bits()]).collect();
            for &i in &s.remove_set {
                let q = p.interior().get(i);
                match q {
                    Some(q) if !boundary.contains(&[q[0].to_bits(), q[1].to_bits()]) => {}
                    _ => problems.push(format!("{} k={}: removal target {i} is not interior", c.label, s.k)),
                }
            }
        }
        let last = h.last().unwrap();
        if last.record.stop_reason != Some(c.output.report.stop_reason) || last.points.len() != c.output.report.n_tot {
            problems.push(format!("{}: report and history disagree", c.label));
        }
    }
    let ok = problems.is_empty();
    let iterations: Vec<String> =
        cases().iter().map(|c| format!("{} {} it ({})", c.label, c.output.history.len(), c.output.report.stop_reason)).collect();
    let detail = if ok { iterations.join(", ") } else { problems.join("; ") };
    report(8, "safety invariants on all adaptive runs", ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn queries_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut mismatches, mut coverings) = (0, 0);
    for _ in 0..500 {
        let n = rng.gen_range(1..200);
        let interior: Vec<Point> = (0..n).map(|_| [rng.gen_range(0.001..0.999), rng.gen_range(0.001..0.999)]).collect();
        let Ok(points) = PointSet::with_boundary_ring(interior) else { continue };
        let all = points.to_vec();
        for _ in 0..5 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (k, d) = nearest_point(q, &points).unwrap();
            // rank by squared distance; the reported distance may differ from hypot by an ulp
            let d2 = |p: Point| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            let best = all.iter().map(|&p| d2(p)).fold(f64::INFINITY, f64::min);
            let first = all.iter().position(|&p| d2(p) == best).unwrap();
            if k != first || (d - best.sqrt()).abs() > 4.0 * f64::EPSILON * d.max(1e-300) {
                mismatches += 1;
            }
        }
        let per_axis = rng.gen_range(1..6);
        let overlap = rng.gen_range(1.0..2.5);
        if let Ok(cov) = build_covering(&points, per_axis, overlap) {
            coverings += 1;
            for patch in cov.patches() {
                let brute: Vec<usize> =
                    (0..all.len()).filter(|&i| distance_sq(all[i], patch.center) <= patch.radius * patch.radius).collect();
                if brute != patch.members {
                    mismatches += 1;
                }
            }
        }
    }
    let ok = mismatches == 0;
    report(9, "nearest-point and membership queries vs brute force", ok, &format!("500 instances ({coverings} valid coverings), {mismatches} mismatches"));
    assert!(ok);
}
