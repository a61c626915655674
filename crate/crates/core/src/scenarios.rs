//! Catalog of warp functions and the closed-form averaged-curvature bounds of
//! the trigonometric family `g(x) = a x - cos x + sin x`.

use std::f64::consts::{SQRT_2, TAU};

use crate::error::{Error, Result};
use crate::warped_geometry::{WarpProfile, WarpSpec, CONDITION_SAMPLES, CONDITION_TOL};

/// Dense grid used to locate the curvature floor `c^2`.
const FLOOR_SAMPLES: usize = 100_000;
/// Tolerance of the adaptive quadrature for `eta`.
pub const ETA_TOL: f64 = 1e-10;

/// Named scenarios addressable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    AnosovWarpedTorus { a: f64 },
    CounterexampleSqrt,
    ConstantCurvature { k: f64 },
    Flat,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::AnosovWarpedTorus { .. } => "anosov-warped-torus",
            Scenario::CounterexampleSqrt => "counterexample-sqrt",
            Scenario::ConstantCurvature { .. } => "constant-curvature",
            Scenario::Flat => "flat",
        }
    }

    /// Parses a scenario name with its parameters.
    pub fn from_name(name: &str, a: f64, k: f64) -> Result<Self> {
        match name {
            "anosov-warped-torus" => Ok(Scenario::AnosovWarpedTorus { a }),
            "counterexample-sqrt" => Ok(Scenario::CounterexampleSqrt),
            "constant-curvature" => Ok(Scenario::ConstantCurvature { k }),
            "flat" => Ok(Scenario::Flat),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected anosov-warped-torus, counterexample-sqrt, constant-curvature or flat)"
            ))),
        }
    }

    pub fn build(&self, n: usize) -> Result<WarpSpec> {
        match *self {
            Scenario::AnosovWarpedTorus { a } => build_anosov_example(a, n),
            Scenario::CounterexampleSqrt => build_counterexample(n),
            Scenario::ConstantCurvature { k } => build_constant_curvature(k, n),
            Scenario::Flat => Ok(WarpSpec::new(WarpProfile::Flat, n)?.with_period(TAU)),
        }
    }

    /// Closed-form bounds, available for the trigonometric family only.
    pub fn bounds(&self, n: usize) -> Result<Option<ScenarioBounds>> {
        match self {
            Scenario::AnosovWarpedTorus { .. } => Ok(Some(ScenarioBounds::for_spec(&self.build(n)?)?)),
            _ => Ok(None),
        }
    }
}

/// `g(x) = a x - cos x + sin x`, period `2 pi`, `a - sqrt 2 < g' < a + sqrt 2`.
pub fn build_anosov_example(a: f64, n: usize) -> Result<WarpSpec> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("a must be positive, got {a}")));
    }
    let spec = WarpSpec::new(WarpProfile::TrigLinear { a }, n)?.with_period(TAU);
    let (x_min, h_min) = argmin_h(&spec);
    if h_min < -CONDITION_TOL {
        return Err(Error::ConditionAViolated { x: x_min, h: h_min });
    }
    if a <= SQRT_2 {
        return Err(Error::ConditionCViolated(format!(
            "g' = a + sin x + cos x is not bounded below by a positive constant for a = {a} <= sqrt(2)"
        )));
    }
    let spec = spec.with_bounds(2.0 * (a - SQRT_2), 2.0 * (a + SQRT_2));
    let floor = curvature_floor(&spec, 0.0, TAU);
    Ok(spec.with_curvature_floor(floor))
}

/// `f(x) = sqrt(1 + x^2)`; no period and no (C) bounds.
pub fn build_counterexample(n: usize) -> Result<WarpSpec> {
    // h = (1 + x^2)^{-2} <= 1 and (f'/f)^2 = x^2 (1 + x^2)^{-2} <= 1/4.
    Ok(WarpSpec::new(WarpProfile::SqrtQuadratic, n)?.with_curvature_floor(1.0))
}

/// `g(x) = k x`: sectional curvature `-k^2` everywhere.
pub fn build_constant_curvature(k: f64, n: usize) -> Result<WarpSpec> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("k must be positive, got {k}")));
    }
    Ok(WarpSpec::new(WarpProfile::Linear { k }, n)?
        .with_period(TAU)
        .with_bounds(k, 3.0 * k)
        .with_curvature_floor(k * k))
}

fn argmin_h(spec: &WarpSpec) -> (f64, f64) {
    let t = spec.period.unwrap_or(TAU);
    (0..CONDITION_SAMPLES)
        .map(|i| {
            let x = t * i as f64 / CONDITION_SAMPLES as f64;
            (x, spec.h(x))
        })
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// `max_x max(h, (f'/f)^2)` on a dense grid of `[lo, lo + span)`: every
/// sectional curvature is at least minus this value (only `h` for `n = 1`).
pub fn curvature_floor(spec: &WarpSpec, lo: f64, span: f64) -> f64 {
    (0..FLOOR_SAMPLES)
        .map(|i| {
            let j = spec.jet(lo + span * i as f64 / FLOOR_SAMPLES as f64);
            if spec.n == 1 {
                j.ddf_over_f
            } else {
                j.ddf_over_f.max(j.dlog_f * j.dlog_f)
            }
        })
        .fold(0.0, f64::max)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// The four initial-velocity brackets of the case analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Case {
    /// `b0 = 1` or `b0 = -1`.
    One,
    /// `1/2 <= b0 < 1`.
    Two,
    /// `-1/2 <= b0 < 1/2`.
    Three,
    /// `-1 < b0 < -1/2`.
    Four,
}

impl Case {
    pub fn of(b0: f64) -> Result<Case> {
        if !(b0.abs() <= 1.0) {
            return Err(Error::Domain(format!("b0 = {b0} outside [-1, 1]")));
        }
        Ok(if b0.abs() == 1.0 {
            Case::One
        } else if b0 >= 0.5 {
            Case::Two
        } else if b0 >= -0.5 {
            Case::Three
        } else {
            Case::Four
        })
    }
}

/// Period, `eta`, `A` and the case thresholds for a spec with conditions (A)-(C).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScenarioBounds {
    pub period: f64,
    /// `eta = integral of h over one period`.
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    /// `A = (2 / C1) ln 3`.
    pub a_const: f64,
    /// Thresholds of Cases 1 to 4, in that order.
    pub thresholds: [f64; 4],
    /// Bounds of Cases 1 to 4, in that order.
    pub case_bounds: [f64; 4],
    /// `max{-eta/(64 T), -eta/(4 (8 T + 2 A))}`, valid for every initial vector.
    pub final_bound: f64,
}

impl ScenarioBounds {
    pub fn for_spec(spec: &WarpSpec) -> Result<Self> {
        let t = spec
            .period
            .ok_or_else(|| Error::Domain("case bounds need a periodic spec".into()))?;
        let (c1, c2) = spec
            .bounds
            .ok_or_else(|| Error::ConditionCViolated("case bounds need C1 and C2".into()))?;
        let eta = adaptive_simpson(&|x| spec.h(x), 0.0, t, ETA_TOL);
        if !(eta > 0.0) {
            return Err(Error::ConditionAViolated { x: 0.0, h: eta });
        }
        let a_const = 2.0 / c1 * 3f64.ln();
        let case3 = (a_const + 4.0 * t).max(2.0 * a_const);
        let thresholds = [2.0 * t, 4.0 * t, case3, 4.0 * t + case3];
        let final_bound = (-eta / (64.0 * t)).max(-eta / (4.0 * (8.0 * t + 2.0 * a_const)));
        let case_bounds = [-eta / (2.0 * t), -eta / (16.0 * t), -eta / (32.0 * t), final_bound];
        Ok(ScenarioBounds { period: t, eta, c1, c2, a_const, thresholds, case_bounds, final_bound })
    }

    /// Upper bound of `T1`, the time with `b(T1) = 1/2`, for `b0` in Case 3.
    pub fn t1_upper(&self, b0: f64) -> f64 {
        let big_b0 = (1.0 + b0) / (1.0 - b0);
        (3.0 / big_b0).ln() / self.c1
    }

    /// Lower bound of `T2`, the time with `b(T2) = -1/2`, for `b0` in Case 4.
    pub fn t2_lower(&self, b0: f64) -> f64 {
        let big_b0 = (1.0 + b0) / (1.0 - b0);
        (1.0 / (3.0 * big_b0)).ln() / self.c2
    }
}

/// Theoretical upper bound of the averaged curvature at time `t` for a geodesic
/// with `x'(0) = b0`; `None` when `t` is not beyond the case threshold.
pub fn case_bound(bounds: &ScenarioBounds, b0: f64, t: f64) -> Result<Option<f64>> {
    let i = match Case::of(b0)? {
        Case::One => 0,
        Case::Two => 1,
        Case::Three => 2,
        Case::Four => 3,
    };
    Ok((t > bounds.thresholds[i]).then_some(bounds.case_bounds[i]))
}
