//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts. The lines go straight to the process's stdout, bypassing the test
//! harness's output capture, so a plain `cargo test` shows the scorecard.
//!
//! 1-5 reproduce benchmark cells (20 draws, base seed 2024, 5-fold CV,
//! default grids); 6-12 are deterministic property and oracle checks.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdre::estimators::{fit_dre_v, fit_dre_v_expansion, fit_dre_vk, fit_ulsif_like, predict_scaled};
use vdre::experiment::{parse_config, run_cells, write_csv, ConfigOverrides};
use vdre::kernels::{gram, ink1, KernelSpec};
use vdre::linalg::{qp_objective, solve_nonneg, solve_regularized, ProductShiftSolver, RidgeMatrix, ShiftedSolver, RESIDUAL_TOL};
use vdre::selection::{default_gamma_grid, Method};
use vdre::synthetic::{run_experiment, summarize, ExperimentOptions};
use vdre::vmatrix::{build_v_matrices, l2_residual};
use vdre::ScaledSamples;

const BASE_SEED: u64 = 2024;
const DRAWS: usize = 20;

fn report(id: u32, what: &str, passed: bool, detail: String) {
    let line = format!("criterion {id:>2} {}: {what}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).expect("stdout is writable");
    assert!(passed, "criterion {id} failed: {what}: {detail}");
}

/// Mean and std of NRMSE for one benchmark cell. Results are memoized so
/// criteria sharing a cell reuse it (a concurrent first request may compute
/// it twice; the result is deterministic either way).
fn cell(model: u32, m: usize, method: Method) -> (f64, f64) {
    static CACHE: OnceLock<Mutex<HashMap<(u32, usize, Method), (f64, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(&(model, m, method)) {
        return *v;
    }
    let records = run_experiment(model, m, method, DRAWS, &ExperimentOptions::default(), BASE_SEED).unwrap();
    let s = summarize(&records).unwrap();
    assert_eq!(s.failures, 0, "failed draws in model {model} m {m} {method}");
    let v = (s.mean.unwrap(), s.std.unwrap());
    cache.lock().unwrap().insert((model, m, method), v);
    v
}

fn check_cell(id: u32, model: u32, m: usize, method: Method, target: f64, tol: f64) {
    let (mean, std) = cell(model, m, method);
    report(
        id,
        &format!("model {model}, m = {m}, {method}"),
        (mean - target).abs() <= tol,
        format!("mean NRMSE {mean:.3} (std {std:.3}), target {target} +/- {tol}"),
    );
}

#[test]
fn criterion_01_model2_dre_v() {
    check_cell(1, 2, 200, Method::DreV, 0.18, 0.10);
}

#[test]
fn criterion_02_model3_dre_vk_ink() {
    check_cell(2, 3, 200, Method::DreVkInk, 0.15, 0.10);
}

#[test]
fn criterion_03_model1_dre_vk_ink() {
    check_cell(3, 1, 200, Method::DreVkInk, 0.52, 0.15);
}

#[test]
fn criterion_04_model6_dre_vk_ink_and_rbf() {
    check_cell(4, 6, 500, Method::DreVkInk, 0.57, 0.15);
    check_cell(4, 6, 500, Method::DreVkRbf, 0.57, 0.15);
}

#[test]
fn criterion_05_ordering_against_ulsif_like() {
    for model in [2, 3] {
        let (baseline, _) = cell(model, 200, Method::UlsifLike);
        for method in [Method::DreV, Method::DreVkInk, Method::DreVkRbf] {
            let (mean, _) = cell(model, 200, method);
            report(
                5,
                &format!("model {model}, m = 200, {method} below ulsif-like"),
                mean < baseline,
                format!("{mean:.3} vs {baseline:.3}"),
            );
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, d, |_, _| rng.random::<f64>())
}

/// Integral over the unit box of `((1/n) sum r_i 1[x >= x'_i] - (1/l) sum 1[x >= x_j])^2`
/// by the midpoint rule on a tensor grid that breaks at every sample
/// coordinate and splits each piece into `refine` cells.
fn residual_quadrature(xp: &DMatrix<f64>, x: &DMatrix<f64>, r: &DVector<f64>, refine: usize) -> f64 {
    let d = xp.ncols();
    let axes: Vec<Vec<(f64, f64)>> = (0..d)
        .map(|k| {
            let mut b: Vec<f64> = xp.column(k).iter().chain(x.column(k).iter()).copied().collect();
            b.extend([0.0, 1.0]);
            b.sort_by(f64::total_cmp);
            b.dedup();
            b.windows(2)
                .flat_map(|w| {
                    let h = (w[1] - w[0]) / refine as f64;
                    (0..refine).map(move |i| (w[0] + (i as f64 + 0.5) * h, h))
                })
                .collect()
        })
        .collect();
    let dominated = |p: &DMatrix<f64>, i: usize, t: &[f64]| (0..d).all(|k| p[(i, k)] <= t[k]);
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    loop {
        let t: Vec<f64> = (0..d).map(|k| axes[k][idx[k]].0).collect();
        let vol: f64 = (0..d).map(|k| axes[k][idx[k]].1).product();
        let f2: f64 = (0..xp.nrows()).filter(|&i| dominated(xp, i, &t)).map(|i| r[i]).sum::<f64>() / xp.nrows() as f64;
        let f1 = (0..x.nrows()).filter(|&j| dominated(x, j, &t)).count() as f64 / x.nrows() as f64;
        total += (f2 - f1).powi(2) * vol;
        let mut k = 0;
        loop {
            if k == d {
                return total;
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[test]
fn criterion_06_residual_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..=2);
        let (n, l) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let (xp, x) = (random_unit(&mut rng, n, d), random_unit(&mut rng, l, d));
        let r = DVector::from_fn(n, |_, _| rng.random_range(-1.0..3.0));
        let s = ScaledSamples::from_unit(xp.clone(), x.clone()).unwrap();
        worst = worst.max((l2_residual(&s, &r).unwrap() - residual_quadrature(&xp, &x, &r, 3)).abs());
    }
    report(6, "l2 residual vs grid quadrature, 50 instances", worst <= 1e-3, format!("max abs error {worst:.2e}"));
}

#[test]
fn criterion_07_matrices_are_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lowest = f64::INFINITY;
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=50);
        let xp = random_unit(&mut rng, n, d);
        let s = ScaledSamples::from_unit(xp.clone(), random_unit(&mut rng, 3, d)).unwrap();
        let sigma2 = rng.random_range(0.01..4.0);
        for m in [
            build_v_matrices(&s).unwrap().v_dd,
            gram(&KernelSpec::ink_spline(d), &xp).unwrap(),
            gram(&KernelSpec::rbf(d, sigma2).unwrap(), &xp).unwrap(),
        ] {
            lowest = lowest.min(m.symmetric_eigenvalues().min());
        }
    }
    report(7, "min eigenvalue of V'', INK and RBF Gram, 50 sets", lowest >= -1e-8, format!("min eigenvalue {lowest:.2e}"));
}

#[test]
fn criterion_08_direct_and_expansion_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(1..=3);
        let (n, l) = (rng.random_range(5..=40), rng.random_range(5..=40));
        let s = ScaledSamples::from_unit(random_unit(&mut rng, n, d), random_unit(&mut rng, l, d)).unwrap();
        for gamma in default_gamma_grid() {
            let direct = predict_scaled(&fit_dre_v(&s, gamma).unwrap(), &s.x_prime).unwrap();
            let expansion = predict_scaled(&fit_dre_v_expansion(&s, gamma).unwrap(), &s.x_prime).unwrap();
            worst = worst.max((&direct - &expansion).norm() / direct.norm());
        }
    }
    report(8, "DRE-V direct vs expansion form over the gamma grid, 20 instances", worst <= 1e-8, format!("max relative error {worst:.2e}"));
}

#[test]
fn criterion_09_matching_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(10..=60);
        let xp = random_unit(&mut rng, n, d);
        let s = ScaledSamples::from_unit(xp.clone(), xp).unwrap();
        for est in [fit_dre_v(&s, 1e-6).unwrap(), fit_dre_vk(&s, &KernelSpec::ink_spline(d), 1e-6).unwrap()] {
            for v in predict_scaled(&est, &s.x_prime).unwrap().iter() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
    }
    report(9, "identical samples, gamma = 1e-6, DRE-V and DRE-VK-INK", lo >= 0.9 && hi <= 1.1, format!("predictions in [{lo:.4}, {hi:.4}]"));
}

/// Minimum of `0.5 x'Ax - b'x` over `x >= 0`, by solving the stationarity
/// conditions on each of the 2^5 candidate supports.
fn qp_enumeration(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let n = b.len();
    let mut best = 0.0f64; // the empty support, x = 0
    for mask in 1u32..(1 << n) {
        let f: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let a_ff = DMatrix::from_fn(f.len(), f.len(), |i, j| a[(f[i], f[j])]);
        let b_f = DVector::from_fn(f.len(), |i, _| b[f[i]]);
        let Some(y) = a_ff.lu().solve(&b_f) else { continue };
        if y.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (k, &i) in f.iter().enumerate() {
            x[i] = y[k];
        }
        best = best.min(0.5 * x.dot(&(a * &x)) - b.dot(&x));
    }
    best
}

#[test]
fn criterion_10_solver_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let bound = |b: &DVector<f64>| RESIDUAL_TOL * (1.0 + b.norm());

    // Accepted direct solves satisfy the residual bound, on random and on
    // overlap-matrix systems (which include rank-deficient ones).
    let (mut accepted, mut rejected, mut worst_ratio) = (0, 0, 0.0f64);
    let mut tally = |m: &DMatrix<f64>, x: Option<DVector<f64>>, b: &DVector<f64>| match x {
        Some(x) => {
            accepted += 1;
            worst_ratio = worst_ratio.max((m * x - b).norm() / bound(b));
        }
        None => rejected += 1,
    };
    for trial in 0..40 {
        let n = rng.random_range(2..=30);
        let d = rng.random_range(1..=3);
        let mut xp = random_unit(&mut rng, n, d);
        if trial % 4 == 0 {
            xp[(0, 0)] = 1.0; // a point on the upper face: zero row in V''
        }
        let s = ScaledSamples::from_unit(xp.clone(), random_unit(&mut rng, n, d)).unwrap();
        let v = build_v_matrices(&s).unwrap().v_dd;
        let k = gram(&KernelSpec::ink_spline(d), &xp).unwrap();
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let vb = &v * &b;
        let eye = DMatrix::identity(n, n);
        for gamma in [0.0, 1e-8, 1e-3, 1.0] {
            let m = &v + &eye * gamma;
            tally(&m, solve_regularized(&v, gamma, RidgeMatrix::Identity, &b).ok().map(|r| r.solution), &b);
            let vk = &v * &k;
            let m = &vk + &eye * gamma;
            tally(&m, ShiftedSolver::new(vk).unwrap().solve(gamma, &b).ok().map(|r| r.solution), &b);
            let m = &v * &v + &v * gamma;
            let solver = ProductShiftSolver::new(v.clone()).unwrap();
            tally(&m, solver.solve(gamma, &vb).ok().map(|r| r.solution), &vb);
            tally(&m, solver.solve(gamma, &b).ok().map(|r| r.solution), &b);
        }
    }
    // The library's own estimators go through the same gate.
    let s = ScaledSamples::from_unit(random_unit(&mut rng, 30, 2), random_unit(&mut rng, 30, 2)).unwrap();
    assert!(fit_ulsif_like(&s, &KernelSpec::rbf(2, 0.5).unwrap(), 1e-3).is_ok());
    report(
        10,
        "accepted direct solves meet |Ax - b| <= 1e-8 (1 + |b|)",
        worst_ratio <= 1.0 && accepted > 0,
        format!("{accepted} accepted, {rejected} rejected, worst residual / bound {worst_ratio:.2e}"),
    );

    let mut worst_gap = 0.0f64;
    for _ in 0..100 {
        let g = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let a = g.transpose() * &g;
        let b = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let pg = solve_nonneg(&a, &b, 500_000, 1e-12).unwrap();
        assert!(pg.solution.iter().all(|v| *v >= 0.0));
        worst_gap = worst_gap.max((qp_objective(&a, &b, &pg.solution) - qp_enumeration(&a, &b)).abs());
    }
    report(10, "projected gradient vs 2^5 active-set enumeration, 100 PSD instances", worst_gap <= 1e-6, format!("max objective gap {worst_gap:.2e}"));
}

/// Composite Simpson rule with `steps` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let inner: f64 = (1..steps).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + inner + f(b)) * h / 3.0
}

#[test]
fn criterion_11_ink_closed_form_vs_integral() {
    // K(x, y) = 1 + xy + int_0^inf (x - t)_+ (y - t)_+ dt, integrated piecewise
    // on either side of the kink at min(x, y).
    let mut worst = 0.0f64;
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
    for &x in &grid {
        for &y in &grid {
            let f = |t: f64| (x - t).max(0.0) * (y - t).max(0.0);
            let (lo, hi) = (x.min(y), x.max(y));
            let integral = simpson(f, 0.0, lo, 1000) + simpson(f, lo, hi, 1000);
            worst = worst.max((ink1(x, y).unwrap() - (1.0 + x * y + integral)).abs());
        }
    }
    report(11, "ink1 vs quadrature of its integral on a 21 x 21 grid", worst <= 1e-6, format!("max abs error {worst:.2e}"));
}

#[test]
fn criterion_12_identical_config_gives_identical_csv() {
    let config = parse_config(
        "[experiment]\nmodels = [1, 5, 7]\nsizes_1d = [30]\nsizes_20d = [40]\ndraws = 3\nseed = 12\n",
        &ConfigOverrides::default(),
    )
    .unwrap();
    let mut first = Vec::new();
    let mut second = Vec::new();
    write_csv(&run_cells(&config).unwrap().records, &mut first).unwrap();
    write_csv(&run_cells(&config).unwrap().records, &mut second).unwrap();
    let rows = String::from_utf8_lossy(&first).lines().count() - 1;
    report(12, "two runs of one config write identical CSV", first == second && rows == 3 * 4 * 3, format!("{} bytes, {rows} rows", first.len()));
}
