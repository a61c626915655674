//! Averaged-curvature criterion: sampled time averages of the plane curvature
//! along Green stable and unstable fields, an estimate of the uniform negative
//! bound `-B`, exponential envelopes of the restricted derivative norms and a
//! numerical verdict.
//!
//! A verdict of [`Verdict::AnosovConsistent`] means that the sample supports
//! the hyperbolicity of the geodesic flow; a finite sample cannot prove it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodesic_flow::{integrate_geodesic, GeodesicPath, UnitTangent};
use crate::jacobi_fields::{green_stable, sasaki_orthonormal_directions, GreenOptions, JacobiField, MatrixJacobiSolution};
use crate::warped_geometry::WarpSpec;

/// Relative slack on envelope and decay checks.
pub const ENVELOPE_SLACK: f64 = 0.05;
/// Half-width of the `x` range sampled for nonperiodic specs.
pub const NONPERIODIC_HALF_WIDTH: f64 = 10.0;

/// Which Green bundle a series follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Stable,
    /// Unstable fields of `theta`, followed backward in time through the
    /// stable fields of `flip(theta)`; `t` is elapsed time.
    Unstable,
}

/// `(1/t) int_0^t K(gamma'(s), J(s)) ds` on a time grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AveragedCurvatureSeries {
    pub theta: UnitTangent,
    pub direction: usize,
    pub side: Side,
    pub t: Vec<f64>,
    pub value: Vec<f64>,
}

fn grid_indices(step: f64, len: usize, t_grid: &[f64]) -> Result<Vec<usize>> {
    t_grid
        .iter()
        .map(|&t| {
            let q = (t / step).abs();
            let k = q.round();
            if (q - k).abs() > 1e-6 || k as usize >= len {
                Err(Error::OffGrid { t })
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// Plane curvature `K(gamma', J) = J^T K J / |J|^2` at every node of the field.
pub fn plane_curvature_series(path: &GeodesicPath, field: &JacobiField) -> Result<Vec<f64>> {
    if field.step != path.step() || field.len() > path.len() {
        return Err(Error::GridMismatch("field does not lie on the path grid".into()));
    }
    let n = path.n();
    (0..field.len())
        .map(|k| {
            let j = field.j_at(k);
            let jj: f64 = j.iter().map(|v| v * v).sum();
            if jj.sqrt() < crate::jacobi_fields::VANISHING_TOL {
                return Err(Error::VanishingJacobiField { t: field.t(k), norm: jj.sqrt() });
            }
            let km = path.curvature(k);
            let mut q = 0.0;
            for i in 0..n {
                for l in 0..n {
                    q += j[i] * km[i * n + l] * j[l];
                }
            }
            Ok(q / jj)
        })
        .collect()
}

/// Trapezoidal running average of `values` (spacing `|step|`) sampled at grid nodes.
pub fn running_average(values: &[f64], step: f64, nodes: &[usize]) -> Vec<f64> {
    let h = step.abs();
    let mut out = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    let mut k = 0;
    for &target in nodes {
        while k < target {
            acc += 0.5 * h * (values[k] + values[k + 1]);
            k += 1;
        }
        out.push(if target == 0 { values[0] } else { acc / (target as f64 * h) });
    }
    out
}

/// Averaged curvature along `J = Y w` for a Green solution on `path`.
pub fn averaged_curvature(
    path: &GeodesicPath,
    green: &MatrixJacobiSolution,
    w: &[f64],
    t_grid: &[f64],
) -> Result<AveragedCurvatureSeries> {
    let field = green.field(w)?;
    averaged_curvature_of_field(path, &field, t_grid, 0, Side::Stable)
}

pub fn averaged_curvature_of_field(
    path: &GeodesicPath,
    field: &JacobiField,
    t_grid: &[f64],
    direction: usize,
    side: Side,
) -> Result<AveragedCurvatureSeries> {
    let nodes = grid_indices(field.step, field.len(), t_grid)?;
    let kvals = plane_curvature_series(path, field)?;
    let value = running_average(&kvals, field.step, &nodes);
    let t = nodes.iter().map(|&k| k as f64 * field.step.abs()).collect();
    Ok(AveragedCurvatureSeries { theta: path.node(0), direction, side, t, value })
}

/// `(B_est, t0_est)` from a set of series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BEstimate {
    pub b_est: f64,
    pub t0_est: f64,
}

/// `B_est = -sup` of all series values over `[t_min, t_max]`, where `t_max`
/// defaults to the largest time common to every series. `t0_est` is the
/// smallest grid time from which every series stays at or below `-B_est` up to
/// `t_max`.
pub fn estimate_b(series: &[AveragedCurvatureSeries], t_min: f64, t_max: Option<f64>) -> Result<BEstimate> {
    if series.is_empty() {
        return Err(Error::EmptyInput("averaged-curvature series"));
    }
    let common = series
        .iter()
        .map(|s| s.t.last().copied().unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min);
    let t_max = t_max.unwrap_or(common).min(common);
    if t_max < t_min {
        return Err(Error::Domain(format!(
            "series end at t = {common}, which is before t_min = {t_min}"
        )));
    }
    let eps = 1e-9 * (1.0 + t_max.abs());
    let mut sup = f64::NEG_INFINITY;
    for s in series {
        for (t, v) in s.t.iter().zip(&s.value) {
            if *t >= t_min - eps && *t <= t_max + eps {
                sup = sup.max(*v);
            }
        }
    }
    if sup == f64::NEG_INFINITY {
        return Err(Error::EmptyInput("series samples inside [t_min, t_max]"));
    }
    let b_est = -sup;
    let mut t0 = 0.0;
    for s in series {
        for (t, v) in s.t.iter().zip(&s.value).rev() {
            if *t > t_max + eps {
                continue;
            }
            if *v > -b_est {
                t0 = f64::max(t0, *t);
                break;
            }
        }
    }
    Ok(BEstimate { b_est, t0_est: t0 })
}

/// Exponential envelope `f(t) <= C lambda^t` of a submultiplicative function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Envelope {
    pub c: f64,
    pub lambda: f64,
    /// Grid time `r` with `f(r) < 1` used for `lambda = f(r)^{1/r}`.
    pub r: f64,
}

/// Result of [`decay_envelope`]: the envelope, or `None` when `f` never drops below 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnvelopeFit {
    pub envelope: Option<Envelope>,
    /// Largest `f(t+s) / (f(t) f(s))` over the sampled pairs.
    pub worst_ratio: f64,
}

/// Fits `(C, lambda)` to samples `(t_i, ln f(t_i))` on a uniform grid with
/// `t_0 = 0`, following the submultiplicative argument: the first grid `r` with
/// `f(r) < 1` gives `lambda = f(r)^{1/r}` and `C = max_{t <= r} f(t) / lambda^t`.
pub fn decay_envelope(log_samples: &[(f64, f64)]) -> Result<EnvelopeFit> {
    if log_samples.is_empty() {
        return Err(Error::EmptyInput("envelope samples"));
    }
    if log_samples.iter().any(|(_, l)| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Domain("envelope samples must be positive and bounded".into()));
    }
    let dt = if log_samples.len() > 1 { log_samples[1].0 - log_samples[0].0 } else { 1.0 };
    let uniform = log_samples
        .iter()
        .enumerate()
        .all(|(i, (t, _))| (t - log_samples[0].0 - i as f64 * dt).abs() < 1e-6 * dt.abs().max(1.0));
    if !uniform || log_samples[0].0.abs() > 1e-12 {
        return Err(Error::GridMismatch("envelope samples must lie on a uniform grid from t = 0".into()));
    }
    let l: Vec<f64> = log_samples.iter().map(|(_, l)| *l).collect();
    let m = l.len();
    let (mut worst, mut wt, mut ws) = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 1..m {
        for j in i..m - i {
            let excess = l[i + j] - l[i] - l[j];
            if excess > worst {
                worst = excess;
                wt = log_samples[i].0;
                ws = log_samples[j].0;
            }
        }
    }
    let worst_ratio = if worst == f64::NEG_INFINITY { 0.0 } else { worst.exp() };
    if worst_ratio > 1.0 + ENVELOPE_SLACK {
        return Err(Error::NotSubmultiplicative { worst_ratio, t: wt, s: ws });
    }
    let envelope = (1..m).find(|&i| l[i] < 0.0).map(|i| {
        let r = log_samples[i].0;
        let log_lambda = l[i] / r;
        let log_c = (0..=i).map(|k| l[k] - log_lambda * log_samples[k].0).fold(f64::NEG_INFINITY, f64::max);
        Envelope { c: log_c.exp(), lambda: log_lambda.exp(), r }
    });
    Ok(EnvelopeFit { envelope, worst_ratio })
}

/// `max_t f(t) / (C lambda^t)` over the samples.
pub fn envelope_excess(env: &Envelope, log_samples: &[(f64, f64)]) -> f64 {
    log_samples
        .iter()
        .map(|(t, l)| l - env.c.ln() - env.lambda.ln() * t)
        .fold(f64::NEG_INFINITY, f64::max)
        .exp()
}

/// Numerical Anosov verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AnosovConsistent,
    NotAnosovConsistent,
    Inconclusive,
}

/// Settings of a criterion run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CriterionSettings {
    pub step: f64,
    pub t_min: f64,
    pub horizon: f64,
    /// Spacing of the reported time grid.
    pub grid_dt: f64,
    /// Green ladder; its window is widened to the horizon.
    pub green: GreenOptions,
    /// `lambda >= 1 - lambda_margin` counts as absence of contraction.
    pub lambda_margin: f64,
    /// Optional end of the `B_est` window; defaults to the horizon.
    pub b_window_end: Option<f64>,
}

impl Default for CriterionSettings {
    fn default() -> Self {
        CriterionSettings {
            step: crate::geodesic_flow::DEFAULT_STEP,
            t_min: 200.0,
            horizon: 240.0,
            grid_dt: 1.0,
            green: GreenOptions::default(),
            lambda_margin: 0.05,
            b_window_end: None,
        }
    }
}

impl CriterionSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step, self.t_min, self.horizon, self.grid_dt, self.green.tol, self.lambda_margin];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("step, t_min, horizon, grid spacing and tolerances must be positive".into()));
        }
        if self.horizon <= self.t_min {
            return Err(Error::Config(format!("horizon {} must exceed t_min {}", self.horizon, self.t_min)));
        }
        let q = self.grid_dt / self.step;
        if (q - q.round()).abs() > 1e-6 {
            return Err(Error::Config("grid spacing must be a multiple of the step".into()));
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        let count = (self.horizon / self.grid_dt + 1e-9).floor() as usize;
        (0..=count).map(|i| i as f64 * self.grid_dt).collect()
    }
}

/// Output of one Green bundle along one geodesic.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SideResult {
    pub side: Side,
    pub series: Vec<AveragedCurvatureSeries>,
    /// `ln |J_i(t)|` on the time grid, one vector per direction.
    pub log_norms: Vec<Vec<f64>>,
    /// `ln |d phi^t restricted to the bundle|` on the time grid.
    pub log_dphi: Vec<f64>,
    pub green_converged: bool,
    pub final_gap: f64,
    pub r_last: f64,
}

/// Everything computed for one sampled unit vector.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ThetaResult {
    pub theta: UnitTangent,
    pub b0: f64,
    pub stable: Option<SideResult>,
    pub unstable: Option<SideResult>,
    pub failures: Vec<String>,
}

/// Green solution along a fresh forward path of `theta` and the bundle data on the grid.
pub fn analyze_side(spec: &WarpSpec, theta: &UnitTangent, side: Side, settings: &CriterionSettings) -> (Option<SideResult>, Vec<String>) {
    let mut failures = Vec::new();
    let green_opts = GreenOptions { t_obs: settings.horizon, ..settings.green.clone() };
    let mut path = match integrate_geodesic(spec, theta, settings.horizon, settings.step) {
        Ok(p) => p,
        Err(e) => return (None, vec![format!("{side:?}: {e}")]),
    };
    let (solution, converged, final_gap, r_last) = match green_stable(&mut path, &green_opts) {
        Ok(g) => {
            let gap = g.final_gap();
            let r = *g.r_ladder.last().unwrap();
            (g.solution, true, gap, r)
        }
        Err(Error::GreenNotConverged { r_ladder, gaps, last: Some(last) }) => {
            failures.push(format!(
                "{side:?}: Green ladder not converged (last gap {:e} at r = {})",
                gaps.last().copied().unwrap_or(f64::NAN),
                r_ladder.last().copied().unwrap_or(f64::NAN)
            ));
            (*last, false, gaps.last().copied().unwrap_or(f64::NAN), r_ladder.last().copied().unwrap_or(f64::NAN))
        }
        Err(e) => {
            failures.push(format!("{side:?}: {e}"));
            return (None, failures);
        }
    };
    let t_grid = settings.t_grid();
    let nodes = match grid_indices(solution.step(), solution.len(), &t_grid) {
        Ok(n) => n,
        Err(e) => {
            failures.push(format!("{side:?}: {e}"));
            return (None, failures);
        }
    };
    let directions = sasaki_orthonormal_directions(&solution.initial_riccati());
    let mut series = Vec::with_capacity(directions.len());
    let mut log_norms = Vec::with_capacity(directions.len());
    for (i, w) in directions.iter().enumerate() {
        let res = solution
            .field(w)
            .and_then(|field| averaged_curvature_of_field(&path, &field, &t_grid, i, side).map(|s| (field, s)));
        match res {
            Ok((field, s)) => {
                log_norms.push(nodes.iter().map(|&k| field.log_norm(k)).collect());
                series.push(AveragedCurvatureSeries { theta: theta.clone(), ..s });
            }
            Err(e) => {
                failures.push(format!("{side:?} direction {i}: {e}"));
                return (None, failures);
            }
        }
    }
    let stride = nodes.get(1).copied().unwrap_or(1).max(1);
    let log_dphi: Vec<f64> = solution
        .log_dphi_norms(stride)
        .into_iter()
        .filter(|(k, _)| k % stride == 0)
        .map(|(_, l)| l)
        .take(nodes.len())
        .collect();
    (
        Some(SideResult { side, series, log_norms, log_dphi, green_converged: converged, final_gap, r_last }),
        failures,
    )
}

/// Stable bundle of `theta` and unstable bundle (through `flip(theta)`).
pub fn analyze_theta(spec: &WarpSpec, theta: &UnitTangent, settings: &CriterionSettings) -> ThetaResult {
    let (stable, mut failures) = analyze_side(spec, theta, Side::Stable, settings);
    let (unstable, f2) = analyze_side(spec, &theta.flip(), Side::Unstable, settings);
    failures.extend(f2);
    let unstable = unstable.map(|mut u| {
        for s in &mut u.series {
            s.theta = theta.clone();
        }
        u
    });
    ThetaResult { theta: theta.clone(), b0: theta.dx, stable, unstable, failures }
}

/// Summary of a criterion run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AnosovReport {
    pub sample_count: usize,
    pub t_min: f64,
    pub horizon: f64,
    pub b_est: f64,
    pub t0_est: f64,
    /// Predicted decay rate `B / (4 c)`.
    pub predicted_rate: f64,
    pub c: f64,
    pub stable_envelope: Option<Envelope>,
    pub unstable_envelope: Option<Envelope>,
    pub stable_worst_ratio: Option<f64>,
    pub unstable_worst_ratio: Option<f64>,
    pub stable_envelope_excess: Option<f64>,
    pub unstable_envelope_excess: Option<f64>,
    /// Number of `(field, t)` pairs violating the predicted decay bound.
    pub decay_violations: usize,
    pub max_series_value: f64,
    pub green_failures: usize,
    pub failures: Vec<String>,
    pub slack: f64,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
}

/// Envelope samples `ln max_theta |d phi^t|` on the grid.
fn sup_log_dphi<'a>(sides: impl Iterator<Item = &'a SideResult>, dt: f64) -> Vec<(f64, f64)> {
    let mut sup: Vec<f64> = Vec::new();
    for s in sides {
        if sup.is_empty() {
            sup = s.log_dphi.clone();
        } else {
            let m = sup.len().min(s.log_dphi.len());
            sup.truncate(m);
            for (a, b) in sup.iter_mut().zip(&s.log_dphi) {
                *a = a.max(*b);
            }
        }
    }
    sup.into_iter().enumerate().map(|(i, l)| (i as f64 * dt, l)).collect()
}

/// Combines per-vector results into the report and verdict.
pub fn contraction_check(results: &[ThetaResult], c: f64, settings: &CriterionSettings) -> AnosovReport {
    let mut failures: Vec<String> = Vec::new();
    let mut reasons = Vec::new();
    for (i, r) in results.iter().enumerate() {
        failures.extend(r.failures.iter().map(|f| format!("theta {i}: {f}")));
    }
    let green_failures = results
        .iter()
        .flat_map(|r| [&r.stable, &r.unstable])
        .filter(|s| s.as_ref().is_none_or(|s| !s.green_converged))
        .count();
    let sides: Vec<&SideResult> = results.iter().flat_map(|r| [&r.stable, &r.unstable]).flatten().collect();
    let series: Vec<AveragedCurvatureSeries> = sides.iter().flat_map(|s| s.series.iter().cloned()).collect();
    let max_series_value = series
        .iter()
        .flat_map(|s| s.t.iter().zip(&s.value).filter(|(t, _)| **t > 0.0).map(|(_, v)| *v))
        .fold(f64::NEG_INFINITY, f64::max);

    let estimate = estimate_b(&series, settings.t_min, settings.b_window_end.or(Some(settings.horizon)));
    let (b_est, t0_est) = match &estimate {
        Ok(e) => (e.b_est, e.t0_est),
        Err(e) => {
            failures.push(format!("B estimate: {e}"));
            (f64::NAN, f64::NAN)
        }
    };
    let predicted_rate = if c > 0.0 { b_est / (4.0 * c) } else { f64::NAN };

    let mut decay_violations = 0;
    if b_est > 0.0 && c > 0.0 {
        let k0 = (t0_est / settings.grid_dt).round() as usize;
        for s in &sides {
            for ln in &s.log_norms {
                if k0 >= ln.len() {
                    continue;
                }
                for k in k0..ln.len() {
                    let t = k as f64 * settings.grid_dt;
                    let bound = -predicted_rate * (t - t0_est) + ln[k0] + (1.0 + ENVELOPE_SLACK).ln();
                    if ln[k] > bound {
                        decay_violations += 1;
                    }
                }
            }
        }
    }

    let mut fit = |label: &str, side: Side| -> (Option<Envelope>, Option<f64>, Option<f64>, bool) {
        let samples = sup_log_dphi(sides.iter().copied().filter(|s| s.side == side), settings.grid_dt);
        if samples.is_empty() {
            failures.push(format!("{label} envelope: no samples"));
            return (None, None, None, false);
        }
        match decay_envelope(&samples) {
            Ok(f) => {
                let excess = f.envelope.map(|e| envelope_excess(&e, &samples));
                (f.envelope, Some(f.worst_ratio), excess, true)
            }
            Err(e) => {
                failures.push(format!("{label} envelope: {e}"));
                (None, None, None, false)
            }
        }
    };
    let (stable_envelope, stable_worst_ratio, stable_excess, stable_ok) = fit("stable", Side::Stable);
    let (unstable_envelope, unstable_worst_ratio, unstable_excess, unstable_ok) = fit("unstable", Side::Unstable);

    let mut negative = Vec::new();
    if !(b_est > 0.0) {
        negative.push(format!("B_est = {b_est:e} is not positive"));
    }
    for (label, ok, env) in [("stable", stable_ok, stable_envelope), ("unstable", unstable_ok, unstable_envelope)] {
        if !ok {
            continue;
        }
        match env {
            None => negative.push(format!("{label} derivative norm never drops below 1")),
            Some(e) if e.lambda >= 1.0 - settings.lambda_margin => {
                negative.push(format!("{label} lambda = {} is within {} of 1", e.lambda, settings.lambda_margin))
            }
            _ => {}
        }
    }

    let mut doubtful = Vec::new();
    if green_failures > 0 {
        doubtful.push(format!("{green_failures} Green ladders did not converge"));
    }
    if !stable_ok || !unstable_ok {
        doubtful.push("an envelope could not be fitted".to_string());
    }
    if decay_violations > 0 {
        doubtful.push(format!("{decay_violations} samples exceed the predicted decay bound"));
    }
    for (label, ex) in [("stable", stable_excess), ("unstable", unstable_excess)] {
        if let Some(x) = ex {
            if x > 1.0 + ENVELOPE_SLACK {
                doubtful.push(format!("{label} envelope exceeded by factor {x}"));
            }
        }
    }
    if estimate.is_err() {
        doubtful.push("B could not be estimated".to_string());
    }

    let verdict = if !negative.is_empty() && estimate.is_ok() {
        reasons = negative;
        Verdict::NotAnosovConsistent
    } else if !doubtful.is_empty() {
        reasons.extend(negative);
        reasons.extend(doubtful);
        Verdict::Inconclusive
    } else {
        reasons.push("B_est > 0 and both envelopes contract".to_string());
        Verdict::AnosovConsistent
    };

    AnosovReport {
        sample_count: results.len(),
        t_min: settings.t_min,
        horizon: settings.horizon,
        b_est,
        t0_est,
        predicted_rate,
        c,
        stable_envelope,
        unstable_envelope,
        stable_worst_ratio,
        unstable_worst_ratio,
        stable_envelope_excess: stable_excess,
        unstable_envelope_excess: unstable_excess,
        decay_violations,
        max_series_value,
        green_failures,
        failures,
        slack: ENVELOPE_SLACK,
        verdict,
        reasons,
    }
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// Deterministic sample of unit vectors with `y = 0`.
///
/// `x` is a shifted van der Corput sequence over `[0, T)` (or `[-L, L]` without
/// a period). Directions `(b, w)` cover the unit sphere: the two horizontal
/// poles first, then a Fibonacci lattice for `n = 2`, equally spaced angles for
/// `n = 1` and seeded Gaussian directions otherwise.
pub fn sample_thetas(spec: &WarpSpec, count: usize, seed: u64) -> Vec<UnitTangent> {
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: f64 = rng.random();
    let (lo, span) = match spec.period {
        Some(t) => (0.0, t),
        None => (-NONPERIODIC_HALF_WIDTH, 2.0 * NONPERIODIC_HALF_WIDTH),
    };
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let rest = count.saturating_sub(2).max(1);
    (0..count)
        .map(|i| {
            let x = lo + span * (radical_inverse(i as u64 + 1, 2) + shift).fract();
            let (b, w): (f64, Vec<f64>) = match i {
                0 => (1.0, vec![0.0; n]),
                1 => (-1.0, vec![0.0; n]),
                _ => {
                    let j = (i - 2) as f64;
                    match n {
                        1 => {
                            let a = std::f64::consts::TAU * (j + 0.5) / rest as f64;
                            (a.cos(), vec![a.sin()])
                        }
                        2 => {
                            let b = 1.0 - 2.0 * (j + 0.5) / rest as f64;
                            let rho = (1.0 - b * b).sqrt();
                            let phi = std::f64::consts::TAU * j / golden;
                            (b, vec![rho * phi.cos(), rho * phi.sin()])
                        }
                        _ => {
                            let g: Vec<f64> = (0..=n).map(|_| rng.sample(StandardNormal)).collect();
                            let s = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                            (g[0] / s, g[1..].iter().map(|v| v / s).collect())
                        }
                    }
                }
            };
            UnitTangent::normalized(spec, x, vec![0.0; n], b, &w).expect("non-zero direction")
        })
        .collect()
}

/// Runs the criterion over `thetas` on a pool of `workers` threads.
pub fn run_criterion(spec: &WarpSpec, thetas: &[UnitTangent], settings: &CriterionSettings, workers: usize) -> Result<(AnosovReport, Vec<ThetaResult>)> {
    settings.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<ThetaResult> = pool.install(|| thetas.par_iter().map(|th| analyze_theta(spec, th, settings)).collect());
    let report = contraction_check(&results, spec.curvature_bound_c(), settings);
    Ok((report, results))
}
