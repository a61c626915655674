//! Acceptance suite: one line per criterion with its measured quantities.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use warpflow::anosov_criterion::{
    averaged_curvature, contraction_check, estimate_b, run_criterion, sample_thetas, CriterionSettings, Side, Verdict,
};
use warpflow::geodesic_flow::{integrate_geodesic, integrate_geodesic_with_limit, scalar_velocity_series, velocity_sandwich, UnitTangent};
use warpflow::jacobi_fields::{
    green_stable, green_unstable_via_flip, riccati_along, sasaki_orthonormal_directions, solve_boundary,
    solve_jacobi_ivp, GreenOptions,
};
use warpflow::scenarios::{build_anosov_example, build_constant_curvature, build_counterexample, case_bound, ScenarioBounds};
use warpflow::warped_geometry::{sectional_curvature_frame, WarpSpec};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn hyperbolic() -> WarpSpec {
    build_constant_curvature(1.0, 2).unwrap()
}

fn a3() -> WarpSpec {
    build_anosov_example(3.0, 2).unwrap()
}

fn criterion_1() -> Outcome {
    let spec = hyperbolic();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_k: f64 = 0.0;
    for _ in 0..100 {
        let x = rng.random_range(-5.0..5.0);
        let u: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let k = sectional_curvature_frame(&spec.jet(x), &u, &w).map_err(|e| e.to_string())?;
        worst_k = worst_k.max((k + 1.0).abs());
    }
    ensure!(worst_k < 1e-9, "|K + 1| = {worst_k:e}");

    let id = DMatrix::<f64>::identity(2, 2);
    let mut worst_green: f64 = 0.0;
    for theta in sample_thetas(&spec, 5, 7) {
        let mut path = integrate_geodesic(&spec, &theta, 5.0, 1e-3).map_err(|e| e.to_string())?;
        let g = green_stable(&mut path, &GreenOptions { t_obs: 5.0, ..GreenOptions::default() }).map_err(|e| e.to_string())?;
        g.solution.for_each_matrix(|k, y, _| {
            worst_green = worst_green.max((y - &id * (-g.solution.t(k)).exp()).amax());
            true
        });
    }
    ensure!(worst_green < 1e-6, "|Y - e^-t I| = {worst_green:e}");

    let settings = CriterionSettings { t_min: 5.0, horizon: 10.0, ..CriterionSettings::default() };
    let (report, results) = run_criterion(&spec, &sample_thetas(&spec, 6, 1), &settings, 1).map_err(|e| e.to_string())?;
    let worst_series = results
        .iter()
        .flat_map(|r| [&r.stable, &r.unstable])
        .flatten()
        .flat_map(|s| s.series.iter().flat_map(|s| s.value.iter().map(|v| (v + 1.0).abs())))
        .fold(0.0, f64::max);
    ensure!(worst_series < 1e-6, "series deviate from -1 by {worst_series:e}");
    let ls = report.stable_envelope.map(|e| e.lambda).ok_or("no stable envelope")?;
    let e1 = (-1f64).exp();
    ensure!((0.95 * e1..=1.05 * e1).contains(&ls), "lambda_s = {ls}");
    Ok(format!("|K+1| = {worst_k:.1e}, |Y-e^-t I| = {worst_green:.1e}, series dev = {worst_series:.1e}, lambda_s = {ls:.6}"))
}

fn criterion_2() -> Outcome {
    let spec = hyperbolic();
    let theta = UnitTangent::normalized(&spec, 0.3, vec![0.0; 2], 0.4, &[-0.5, 0.7]).unwrap();
    let mut path = integrate_geodesic(&spec, &theta, 5.0, 1e-3).map_err(|e| e.to_string())?;
    let id = DMatrix::<f64>::identity(2, 2);
    let mut worst: f64 = 0.0;
    let mut residual: f64 = 0.0;
    for r in [8.0f64, 16.0] {
        let sol = solve_boundary(&mut path, r).map_err(|e| e.to_string())?;
        sol.for_each_matrix(|k, y, _| {
            let t = sol.t(k);
            if t <= 5.0 + 1e-9 {
                worst = worst.max((y - &id * ((r - t).sinh() / r.sinh())).amax());
            }
            true
        });
        let (y_r, _) = sol.matrices_at(sol.len() - 1);
        residual = residual.max(y_r.norm());
    }
    ensure!(worst < 1e-7, "boundary solution error {worst:e}");
    ensure!(residual < 1e-8, "boundary residual {residual:e}");
    Ok(format!("max error = {worst:.1e}, |Y(r)| = {residual:.1e}"))
}

fn criterion_3() -> Outcome {
    let spec = a3();
    let cond = spec.check_conditions();
    ensure!(cond.all_claimed_hold() && cond.min_h > 0.0, "conditions fail: {cond:?}");
    let bounds = ScenarioBounds::for_spec(&spec).map_err(|e| e.to_string())?;
    ensure!((bounds.eta - 20.0 * std::f64::consts::PI).abs() < 1e-8, "eta = {}", bounds.eta);
    let settings = CriterionSettings { t_min: 200.0, horizon: 240.0, ..CriterionSettings::default() };
    let thetas = sample_thetas(&spec, 100, 1);
    let (report, results) = run_criterion(&spec, &thetas, &settings, 1).map_err(|e| e.to_string())?;
    let mut max_value = f64::NEG_INFINITY;
    let mut checked = 0usize;
    let mut worst_margin = f64::NEG_INFINITY;
    for r in &results {
        for side in [&r.stable, &r.unstable].into_iter().flatten() {
            let b0 = if side.side == Side::Stable { r.b0 } else { -r.b0 };
            for s in &side.series {
                for (t, v) in s.t.iter().zip(&s.value).skip(1) {
                    max_value = max_value.max(*v);
                    if let Some(bound) = case_bound(&bounds, b0, *t).map_err(|e| e.to_string())? {
                        checked += 1;
                        worst_margin = worst_margin.max(v - bound);
                    }
                }
            }
        }
    }
    ensure!(results.iter().all(|r| r.stable.is_some() && r.unstable.is_some()), "failures: {:?}", report.failures);
    ensure!(max_value < 0.0, "largest averaged curvature {max_value}");
    ensure!(report.b_est > 0.0, "B_est = {}", report.b_est);
    ensure!(worst_margin <= 1e-3, "case bound exceeded by {worst_margin}");
    ensure!(report.verdict == Verdict::AnosovConsistent, "verdict {:?}: {:?}", report.verdict, report.reasons);
    let (ls, lu) = (report.stable_envelope.unwrap().lambda, report.unstable_envelope.unwrap().lambda);
    Ok(format!(
        "B_est = {:.4}, t0 = {}, max average = {max_value:.4}, {checked} case samples, worst margin = {worst_margin:.4}, lambda_s = {ls:.4}, lambda_u = {lu:.4}",
        report.b_est, report.t0_est
    ))
}

fn criterion_4() -> Outcome {
    let spec = build_counterexample(2).unwrap();
    let ray = UnitTangent::normalized(&spec, 0.0, vec![0.0; 2], 1.0, &[0.0, 0.0]).unwrap();
    let path = integrate_geodesic(&spec, &ray, 100.0, 1e-2).map_err(|e| e.to_string())?;
    let sol = solve_jacobi_ivp(&path, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).map_err(|e| e.to_string())?;
    let s = averaged_curvature(&path, &sol, &[1.0, 0.0], &[100.0]).map_err(|e| e.to_string())?;
    let oracle = -0.5 * (100f64.atan() + 100.0 / 10001.0) / 100.0;
    let v = s.value[0];
    ensure!((v - oracle).abs() < 1e-5, "ray average {v} vs {oracle}");

    let settings = CriterionSettings {
        step: 1e-2,
        t_min: 50.0,
        horizon: 800.0,
        green: GreenOptions { r_max: Some(2048.0), ..GreenOptions::default() },
        ..CriterionSettings::default()
    };
    let (_, results) = run_criterion(&spec, &sample_thetas(&spec, 8, 1), &settings, 1).map_err(|e| e.to_string())?;
    let series: Vec<_> = results.iter().flat_map(|r| [&r.stable, &r.unstable]).flatten().flat_map(|s| s.series.clone()).collect();
    let mut profile = Vec::new();
    for t_min in [50.0, 100.0, 200.0, 400.0] {
        let b = estimate_b(&series, t_min, Some(2.0 * t_min)).map_err(|e| e.to_string())?.b_est;
        let windowed = CriterionSettings { t_min, b_window_end: Some(2.0 * t_min), ..settings.clone() };
        let report = contraction_check(&results, spec.curvature_bound_c(), &windowed);
        ensure!(report.verdict == Verdict::NotAnosovConsistent, "t_min {t_min}: verdict {:?}", report.verdict);
        profile.push(b);
    }
    ensure!(profile.windows(2).all(|w| w[1] < w[0]), "B_est profile not decreasing: {profile:?}");
    ensure!(profile[3] < 1e-3 && profile[0] <= 7.9e-3, "B_est profile {profile:?}");
    let profile: Vec<String> = profile.iter().map(|b| format!("{b:.2e}")).collect();
    Ok(format!("ray average = {v:.6e} (oracle {oracle:.6e}), B_est(50,100,200,400) = [{}], verdict not_anosov_consistent", profile.join(", ")))
}

fn criterion_5() -> Outcome {
    let scenarios = [("constant-curvature", hyperbolic()), ("anosov-warped-torus", a3()), ("counterexample-sqrt", build_counterexample(2).unwrap())];
    let mut lines = Vec::new();
    for (name, spec) in &scenarios {
        let thetas = sample_thetas(spec, 100, 55);
        let (mut unit, mut mom): (f64, f64) = (0.0, 0.0);
        for theta in &thetas {
            let path = integrate_geodesic(spec, theta, 100.0, 1e-3).map_err(|e| format!("{name}: {e}"))?;
            unit = unit.max(path.diagnostics().max_unit_defect);
            mom = mom.max(path.diagnostics().max_momentum_defect);
        }
        ensure!(unit < 1e-8 && mom < 1e-8, "{name}: unit {unit:e}, momentum {mom:e}");

        let coarse = |h: f64| -> Result<(f64, f64), String> {
            let (mut u, mut m): (f64, f64) = (0.0, 0.0);
            for theta in thetas.iter().take(10) {
                let p = integrate_geodesic_with_limit(spec, theta, 100.0, h, 1.0).map_err(|e| e.to_string())?;
                u = u.max(p.diagnostics().max_unit_defect);
                m = m.max(p.diagnostics().max_momentum_defect);
            }
            Ok((u, m))
        };
        let (u1, m1) = coarse(0.05)?;
        let (u2, m2) = coarse(0.025)?;
        let ru = u1 / u2;
        ensure!(ru >= 8.0, "{name}: unit-defect ratio {ru}");
        // Momentum is conserved to round-off for the linear warp.
        let rm = if m1 > 1e-10 { Some(m1 / m2) } else { None };
        if let Some(r) = rm {
            ensure!(r >= 8.0, "{name}: momentum-defect ratio {r}");
        }
        lines.push(format!(
            "{name}: unit {unit:.1e} mom {mom:.1e} ratios {ru:.1}/{}",
            rm.map_or("round-off".to_string(), |r| format!("{r:.1}"))
        ));
    }
    Ok(lines.join("; "))
}

fn criterion_6() -> Outcome {
    let spec = a3();
    let c = spec.curvature_bound_c();
    let (mut res, mut sup, mut ident): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for theta in sample_thetas(&spec, 10, 66) {
        let mut path = integrate_geodesic(&spec, &theta, 20.0, 1e-3).map_err(|e| e.to_string())?;
        let g = green_stable(&mut path, &GreenOptions::default()).map_err(|e| e.to_string())?;
        for w in sasaki_orthonormal_directions(&g.u0) {
            let z = riccati_along(&path, &g.solution, &w).map_err(|e| e.to_string())?;
            res = res.max(z.max_residual());
            sup = sup.max(z.sup_abs());
            let f = g.solution.field(&w).map_err(|e| e.to_string())?;
            let h = path.step();
            let mut integral = 0.0;
            for k in 1..z.z.len() {
                integral += 0.5 * h * (z.z[k - 1] + z.z[k]);
                if k % 100 == 0 {
                    let t = k as f64 * h;
                    ident = ident.max((integral / t - 2.0 / t * (f.log_norm(k) - f.log_norm(0))).abs());
                }
            }
        }
    }
    ensure!(res < 1e-5, "Riccati residual {res:e}");
    ensure!(sup <= 2.0 * c + 1e-6, "sup |z| = {sup} > 2c = {}", 2.0 * c);
    ensure!(ident < 1e-6, "average identity error {ident:e}");
    Ok(format!("residual = {res:.1e}, sup|z| = {sup:.3} <= 2c = {:.3}, identity error = {ident:.1e}", 2.0 * c))
}

fn criterion_7() -> Outcome {
    let spec = a3();
    let c = spec.curvature_bound_c();
    let opts = GreenOptions::default();
    let (mut grow, mut shrink, mut deriv, mut min_det, mut min_focal) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY);
    for theta in sample_thetas(&spec, 10, 77) {
        let mut fwd = integrate_geodesic(&spec, &theta, 20.0, 1e-3).map_err(|e| e.to_string())?;
        let st = green_stable(&mut fwd, &opts).map_err(|e| e.to_string())?;
        let mut flipped = integrate_geodesic(&spec, &theta.flip(), 20.0, 1e-3).map_err(|e| e.to_string())?;
        let un = green_unstable_via_flip(&mut flipped, &opts).map_err(|e| e.to_string())?;
        for w in sasaki_orthonormal_directions(&st.u0) {
            let f = st.solution.field(&w).map_err(|e| e.to_string())?;
            for k in 1..f.len() {
                grow = grow.max(f.log_norm(k) - f.log_norm(k - 1));
                deriv = deriv.max((f.log_norm_derivative(k) - f.log_norm(k)).exp() - c);
            }
        }
        for w in sasaki_orthonormal_directions(&un.u0) {
            let f = un.solution.field(&w).map_err(|e| e.to_string())?;
            // Node k is time -k h: |J^u| must not increase going backward.
            // Both checks are relative to |J| since the norms span many decades.
            for k in 1..f.len() {
                shrink = shrink.max(f.log_norm(k) - f.log_norm(k - 1));
                deriv = deriv.max((f.log_norm_derivative(k) - f.log_norm(k)).exp() - c);
            }
        }
        min_det = min_det.min(st.solution.det_ratios().into_iter().fold(f64::INFINITY, f64::min));
        let ivp = solve_jacobi_ivp(&fwd, &DMatrix::zeros(2, 2), &DMatrix::identity(2, 2)).map_err(|e| e.to_string())?;
        for w in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
            let f = ivp.field(&w).map_err(|e| e.to_string())?;
            for k in 1..f.len().min(20_001) {
                let d: f64 = f.j_at(k).iter().zip(f.jp_at(k)).map(|(a, b)| a * b).sum();
                min_focal = min_focal.min(d);
            }
        }
    }
    ensure!(grow <= 1e-9, "stable norm increases by {grow:e}");
    ensure!(shrink <= 1e-9, "unstable norm decreases by {shrink:e}");
    ensure!(deriv <= 1e-6, "|J'|/|J| exceeds c by {deriv:e}");
    ensure!(min_det > 1e-3, "det ratio {min_det:e}");
    ensure!(min_focal > 0.0, "<J, J'> = {min_focal:e}");
    Ok(format!(
        "max d ln|J^s| = {grow:.1e}, max -d ln|J^u| = {shrink:.1e}, |J'|/|J| - c <= {deriv:.2}, min det ratio {min_det:.3}, min <J,J'> {min_focal:.1e}"
    ))
}

fn criterion_8() -> Outcome {
    let spec = a3();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut min_gap = f64::INFINITY;
    for _ in 0..50 {
        let b0: f64 = rng.random_range(-0.999..0.999);
        let x0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let series = scalar_velocity_series(&spec, x0, b0, 50.0, 1e-3).map_err(|e| e.to_string())?;
        for p in series.iter().skip(1) {
            let (lo, hi) = velocity_sandwich(&spec, b0, p.t).ok_or("no bounds")?;
            ensure!(lo < p.sigma && p.sigma < hi, "b0 = {b0}, t = {}: {lo} < {} < {hi} fails", p.t, p.sigma);
            min_gap = min_gap.min((p.sigma - lo).min(hi - p.sigma));
        }
    }
    Ok(format!("50 trajectories strictly inside, smallest gap in artanh(b) = {min_gap:.2e}"))
}

fn criterion_9() -> Outcome {
    let cases = [
        ("anosov-warped-torus", a3(), common::trig_oracle(3.0, 2), 0.0, std::f64::consts::TAU),
        ("counterexample-sqrt", build_counterexample(2).unwrap(), common::sqrt_oracle(2), -10.0, 10.0),
        ("constant-curvature", hyperbolic(), common::linear_oracle(1.0, 2), -5.0, 5.0),
    ];
    let mut lines = Vec::new();
    for (i, (name, spec, oracle, lo, hi)) in cases.iter().enumerate() {
        let (g, r, k) = common::oracle_errors(spec, oracle, *lo, *hi, 900 + i as u64, 200);
        ensure!(g < 1e-5 && r < 1e-5 && k < 1e-5, "{name}: Gamma {g:e}, R {r:e}, K {k:e}");
        lines.push(format!("{name} {:.1e}", g.max(r).max(k)));
    }
    Ok(lines.join(", "))
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().to_str().unwrap().to_string();
    let files = ["anosov_report.json", "anosov_series.csv", "anosov_dphi.csv"];
    let mut runs = Vec::new();
    for workers in ["1", "2"] {
        let status = Command::new(env!("CARGO_BIN_EXE_warpflow"))
            .args([
                "anosov-check", "--scenario", "anosov-warped-torus", "--a", "3", "--samples", "4", "--tmin", "20",
                "--horizon", "30", "--step", "0.002", "--seed", "10", "--out", &out, "--workers", workers,
            ])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "run failed: {}", String::from_utf8_lossy(&status.stderr));
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(tmp.path().join(f)).unwrap()).collect();
        runs.push(bytes);
    }
    ensure!(runs[0] == runs[1], "outputs differ between runs");
    let size: usize = runs[0].iter().map(|b| b.len()).sum();
    Ok(format!("{} files, {size} bytes identical across two runs", files.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("constant-curvature oracle", criterion_1, Duration::from_secs(10)),
        ("boundary-solution oracle", criterion_2, Duration::from_secs(5)),
        ("a=3 Anosov reproduction", criterion_3, Duration::from_secs(300)),
        ("sqrt(1+x^2) counterexample", criterion_4, Duration::from_secs(60)),
        ("conservation suite", criterion_5, Duration::from_secs(120)),
        ("Riccati suite", criterion_6, Duration::from_secs(60)),
        ("stable/unstable monotonicity suite", criterion_7, Duration::from_secs(60)),
        ("velocity sandwich", criterion_8, Duration::from_secs(30)),
        ("finite-difference curvature cross-check", criterion_9, Duration::from_secs(30)),
        ("determinism", criterion_10, Duration::from_secs(60)),
    ];
    let mut failed = Vec::new();
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; runtime {elapsed:.1?} over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name} ({elapsed:.1?}): {detail}", i + 1),
            Err(detail) => {
                println!("[FAIL] {:>2} {name} ({elapsed:.1?}): {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
