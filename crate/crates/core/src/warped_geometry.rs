//! Metric, Christoffel symbols and curvature of the warped product `R x_f T^n`.
//!
//! The metric is `dx^2 + f(x)^2 (dy_1^2 + ... + dy_n^2)` with flat torus fibres.
//! Everything along long geodesics is expressed in the orthonormal frame
//! `e_0 = d/dx`, `e_i = f^{-1} d/dy_i`, where the components stay of order one
//! even when `f` itself over- or underflows. Coordinate components are only
//! used at the public [`TangentVector`] boundary.
//!
//! Curvature follows the convention in which the Jacobi equation reads
//! `J'' + R(c', J) c' = 0` and the sectional curvature of the plane spanned by
//! `u, w` is `<R(u, w) u, w> / (|u|^2 |w|^2 - <u, w>^2)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{ensure_finite, Error, Result};

/// Step of the central differences used when only `g` (or `f`) is supplied.
pub const FD_STEP: f64 = 1e-5;
/// Uniform samples per period used by the (A)-(C) condition checks.
pub const CONDITION_SAMPLES: usize = 10_000;
/// Tolerance of the sampled condition checks.
pub const CONDITION_TOL: f64 = 1e-9;

/// How the warp function is parametrised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpMode {
    /// `f = e^g`, with `g` and its derivatives supplied.
    Exponential,
    /// `f` supplied directly with `f'` and `f''`.
    Direct,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The warp families known to the crate.
#[derive(Clone)]
pub enum WarpProfile {
    /// `g = 0`, the flat product.
    Flat,
    /// `g(x) = k x`: constant sectional curvature `-k^2`.
    Linear { k: f64 },
    /// `g(x) = a x - cos x + sin x`.
    TrigLinear { a: f64 },
    /// `f(x) = sqrt(1 + x^2)`.
    SqrtQuadratic,
    /// A user function; derivatives come from central differences.
    Custom { name: String, mode: WarpMode, func: ScalarFn },
}

impl fmt::Debug for WarpProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WarpProfile::Flat => write!(f, "Flat"),
            WarpProfile::Linear { k } => write!(f, "Linear {{ k: {k} }}"),
            WarpProfile::TrigLinear { a } => write!(f, "TrigLinear {{ a: {a} }}"),
            WarpProfile::SqrtQuadratic => write!(f, "SqrtQuadratic"),
            WarpProfile::Custom { name, mode, .. } => {
                write!(f, "Custom {{ name: {name:?}, mode: {mode:?} }}")
            }
        }
    }
}

/// Value and first two derivatives of a scalar function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Scale-free description of the warp at one `x`.
///
/// `log_f = ln f`, `dlog_f = f'/f` and `ddf_over_f = f''/f`. For `f = e^g` these
/// are `g`, `g'` and `h = g'' + g'^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpJet {
    pub log_f: f64,
    pub dlog_f: f64,
    pub ddf_over_f: f64,
}

impl WarpJet {
    pub fn f(&self) -> f64 {
        self.log_f.exp()
    }

    pub fn df(&self) -> f64 {
        self.dlog_f * self.f()
    }

    pub fn ddf(&self) -> f64 {
        self.ddf_over_f * self.f()
    }
}

/// A warp function together with the metadata of conditions (A)-(C).
#[derive(Debug, Clone)]
pub struct WarpSpec {
    pub profile: WarpProfile,
    /// Dimension of the torus fibre.
    pub n: usize,
    /// Period `T` of `h = g'' + g'^2` when it is claimed periodic; `None` marks a
    /// nonperiodic spec.
    pub period: Option<f64>,
    /// `(C1, C2)` with `C1/2 < g' < C2/2` when condition (C) is claimed.
    pub bounds: Option<(f64, f64)>,
    /// `c^2` such that every sectional curvature is at least `-c^2`.
    pub curvature_floor: f64,
}

impl WarpSpec {
    pub fn new(profile: WarpProfile, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("torus dimension n must be at least 1".into()));
        }
        Ok(WarpSpec {
            profile,
            n,
            period: None,
            bounds: None,
            curvature_floor: 0.0,
        })
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = Some(period);
        self
    }

    pub fn with_bounds(mut self, c1: f64, c2: f64) -> Self {
        self.bounds = Some((c1, c2));
        self
    }

    pub fn with_curvature_floor(mut self, c_squared: f64) -> Self {
        self.curvature_floor = c_squared;
        self
    }

    pub fn mode(&self) -> WarpMode {
        match &self.profile {
            WarpProfile::SqrtQuadratic => WarpMode::Direct,
            WarpProfile::Custom { mode, .. } => *mode,
            _ => WarpMode::Exponential,
        }
    }

    /// `c` with sectional curvature bounded below by `-c^2`.
    pub fn curvature_bound_c(&self) -> f64 {
        self.curvature_floor.sqrt()
    }

    /// `(g, g', g'')` for exponential-mode specs.
    pub fn g_jet(&self, x: f64) -> Option<Jet> {
        match &self.profile {
            WarpProfile::Flat => Some(Jet { value: 0.0, d1: 0.0, d2: 0.0 }),
            WarpProfile::Linear { k } => Some(Jet { value: k * x, d1: *k, d2: 0.0 }),
            WarpProfile::TrigLinear { a } => {
                let (s, c) = x.sin_cos();
                Some(Jet { value: a * x - c + s, d1: a + s + c, d2: c - s })
            }
            WarpProfile::SqrtQuadratic => None,
            WarpProfile::Custom { mode: WarpMode::Exponential, func, .. } => {
                Some(central_jet(func.as_ref(), x))
            }
            WarpProfile::Custom { .. } => None,
        }
    }

    /// `(f, f', f'')` at `x`; may overflow for exponential specs far out.
    pub fn f_jet(&self, x: f64) -> Jet {
        match &self.profile {
            WarpProfile::SqrtQuadratic => {
                let q = 1.0 + x * x;
                let f = q.sqrt();
                Jet { value: f, d1: x / f, d2: 1.0 / (q * f) }
            }
            WarpProfile::Custom { mode: WarpMode::Direct, func, .. } => central_jet(func.as_ref(), x),
            _ => {
                let w = self.jet(x);
                Jet { value: w.f(), d1: w.df(), d2: w.ddf() }
            }
        }
    }

    /// Scale-free warp data at `x`.
    pub fn jet(&self, x: f64) -> WarpJet {
        match &self.profile {
            WarpProfile::SqrtQuadratic => {
                let q = 1.0 + x * x;
                WarpJet {
                    log_f: 0.5 * q.ln(),
                    dlog_f: x / q,
                    ddf_over_f: 1.0 / (q * q),
                }
            }
            WarpProfile::Custom { mode: WarpMode::Direct, func, .. } => {
                let j = central_jet(func.as_ref(), x);
                WarpJet {
                    log_f: j.value.ln(),
                    dlog_f: j.d1 / j.value,
                    ddf_over_f: j.d2 / j.value,
                }
            }
            _ => {
                let g = self.g_jet(x).expect("exponential-mode profile");
                WarpJet {
                    log_f: g.value,
                    dlog_f: g.d1,
                    ddf_over_f: g.d2 + g.d1 * g.d1,
                }
            }
        }
    }

    /// `h = g'' + g'^2 = f''/f`.
    pub fn h(&self, x: f64) -> f64 {
        self.jet(x).ddf_over_f
    }

    /// Dense-sample check of `f > 0` and of the claimed conditions (A)-(C).
    pub fn check_conditions(&self) -> ConditionReport {
        let (start, span) = match self.period {
            Some(t) => (0.0, t),
            None => (-10.0, 20.0),
        };
        let mut report = ConditionReport {
            samples: CONDITION_SAMPLES,
            f_positive: true,
            min_h: f64::INFINITY,
            max_h: f64::NEG_INFINITY,
            min_dlog_f: f64::INFINITY,
            max_dlog_f: f64::NEG_INFINITY,
            max_period_defect: None,
            condition_a: None,
            condition_b: None,
            condition_c: None,
        };
        let mut period_defect: f64 = 0.0;
        for i in 0..CONDITION_SAMPLES {
            let x = start + span * i as f64 / CONDITION_SAMPLES as f64;
            let j = self.jet(x);
            if !(j.log_f.is_finite()) {
                report.f_positive = false;
            }
            report.min_h = report.min_h.min(j.ddf_over_f);
            report.max_h = report.max_h.max(j.ddf_over_f);
            report.min_dlog_f = report.min_dlog_f.min(j.dlog_f);
            report.max_dlog_f = report.max_dlog_f.max(j.dlog_f);
            if let Some(t) = self.period {
                period_defect = period_defect.max((self.h(x + t) - j.ddf_over_f).abs());
            }
        }
        if self.period.is_some() {
            report.condition_a = Some(report.min_h >= -CONDITION_TOL);
            report.max_period_defect = Some(period_defect);
            report.condition_b = Some(period_defect < CONDITION_TOL.max(1e-9 * report.max_h.abs()));
        }
        if let Some((c1, c2)) = self.bounds {
            report.condition_c = Some(
                c1 > 0.0
                    && c1 < c2
                    && report.min_dlog_f > c1 / 2.0 - CONDITION_TOL
                    && report.max_dlog_f < c2 / 2.0 + CONDITION_TOL,
            );
        }
        report
    }
}

/// Result of the sampled (A)-(C) checks over one period.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionReport {
    pub samples: usize,
    pub f_positive: bool,
    pub min_h: f64,
    pub max_h: f64,
    pub min_dlog_f: f64,
    pub max_dlog_f: f64,
    pub max_period_defect: Option<f64>,
    pub condition_a: Option<bool>,
    pub condition_b: Option<bool>,
    pub condition_c: Option<bool>,
}

impl ConditionReport {
    pub fn all_claimed_hold(&self) -> bool {
        self.f_positive
            && [self.condition_a, self.condition_b, self.condition_c]
                .iter()
                .all(|c| c.unwrap_or(true))
    }
}

fn central_jet(func: &(dyn Fn(f64) -> f64 + Send + Sync), x: f64) -> Jet {
    let h = FD_STEP;
    let (m, c, p) = (func(x - h), func(x), func(x + h));
    Jet {
        value: c,
        d1: (p - m) / (2.0 * h),
        d2: (p - 2.0 * c + m) / (h * h),
    }
}

/// A point `(x, y_1, ..., y_n)` of `R x T^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePoint {
    pub x: f64,
    pub y: Vec<f64>,
}

impl BasePoint {
    pub fn new(x: f64, y: Vec<f64>) -> Self {
        BasePoint { x, y }
    }

    pub fn origin(x: f64, n: usize) -> Self {
        BasePoint { x, y: vec![0.0; n] }
    }
}

/// Tangent vector in coordinate components `dx d/dx + sum dy_i d/dy_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: BasePoint,
    pub dx: f64,
    pub dy: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: BasePoint, dx: f64, dy: Vec<f64>) -> Self {
        TangentVector { base, dx, dy }
    }

    /// The coordinate vector `d/dx` at `base`.
    pub fn horizontal(base: BasePoint) -> Self {
        let n = base.y.len();
        TangentVector { base, dx: 1.0, dy: vec![0.0; n] }
    }

    /// Unit vertical vector `f^{-1} d/dy_i` at `base`.
    pub fn unit_vertical(spec: &WarpSpec, base: BasePoint, i: usize) -> Self {
        let n = base.y.len();
        let mut dy = vec![0.0; n];
        dy[i] = (-spec.jet(base.x).log_f).exp();
        TangentVector { base, dx: 0.0, dy }
    }

    /// Components in the orthonormal frame `(d/dx, f^{-1} d/dy_i)`.
    pub fn to_frame(&self, spec: &WarpSpec) -> Vec<f64> {
        let f = spec.jet(self.base.x).log_f.exp();
        std::iter::once(self.dx).chain(self.dy.iter().map(|d| d * f)).collect()
    }

    pub fn from_frame(spec: &WarpSpec, base: BasePoint, comps: &[f64]) -> Self {
        let inv_f = (-spec.jet(base.x).log_f).exp();
        TangentVector {
            dx: comps[0],
            dy: comps[1..].iter().map(|c| c * inv_f).collect(),
            base,
        }
    }

    fn validate(&self, spec: &WarpSpec) -> Result<()> {
        if self.dy.len() != spec.n || self.base.y.len() != spec.n {
            return Err(Error::Domain(format!(
                "tangent vector has {} fibre components, spec has n = {}",
                self.dy.len(),
                spec.n
            )));
        }
        ensure_finite("tangent vector", &[self.base.x, self.dx])?;
        ensure_finite("tangent vector", &self.dy)?;
        ensure_finite("base point", &self.base.y)
    }
}

fn check_based_at(p: &BasePoint, vs: &[&TangentVector]) -> Result<()> {
    for v in vs {
        if (v.base.x - p.x).abs() > 1e-12 * (1.0 + p.x.abs()) {
            return Err(Error::Domain(format!(
                "vector based at x = {} used at x = {}",
                v.base.x, p.x
            )));
        }
    }
    Ok(())
}

/// Warped inner product `u_x w_x + f(x)^2 sum u_{y_i} w_{y_i}`.
pub fn metric_dot(spec: &WarpSpec, p: &BasePoint, u: &TangentVector, w: &TangentVector) -> Result<f64> {
    ensure_finite("base point", &[p.x])?;
    u.validate(spec)?;
    w.validate(spec)?;
    check_based_at(p, &[u, w])?;
    let f2 = (2.0 * spec.jet(p.x).log_f).exp();
    let fibre: f64 = u.dy.iter().zip(&w.dy).map(|(a, b)| a * b).sum();
    Ok(u.dx * w.dx + f2 * fibre)
}

/// Non-zero Christoffel symbols at `x`. Index 0 is `x`, indices `1..=n` the fibre angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Christoffel {
    /// `Gamma^x_{y_i y_i} = -f' f`.
    pub x_yy: f64,
    /// `Gamma^{y_i}_{x y_i} = Gamma^{y_i}_{y_i x} = f'/f`.
    pub y_xy: f64,
}

impl Christoffel {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        match (k, i, j) {
            (0, i, j) if i == j && i > 0 => self.x_yy,
            (k, 0, j) if k > 0 && k == j => self.y_xy,
            (k, i, 0) if k > 0 && k == i => self.y_xy,
            _ => 0.0,
        }
    }
}

pub fn christoffel(spec: &WarpSpec, x: f64) -> Result<Christoffel> {
    ensure_finite("x", &[x])?;
    let j = spec.jet(x);
    let x_yy = -j.dlog_f * (2.0 * j.log_f).exp();
    let out = Christoffel { x_yy, y_xy: j.dlog_f };
    ensure_finite("Christoffel symbols", &[out.x_yy, out.y_xy])?;
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `R(a, b) c` for frame components `a, b, c` (length `n + 1`), written into `out`.
///
/// The tensor is assembled from the warped-product curvature identities with a
/// flat one-dimensional base and flat fibre, so only three blocks survive:
/// horizontal-vertical-horizontal, horizontal-vertical-vertical and the purely
/// vertical block `-|grad f|^2 [(U, W) V - (V, W) U]`.
pub fn riemann_frame(jet: &WarpJet, a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]) {
    let hess = jet.ddf_over_f;
    let grad2 = jet.dlog_f * jet.dlog_f;
    let (a0, av) = (a[0], &a[1..]);
    let (b0, bv) = (b[0], &b[1..]);
    let (c0, cv) = (c[0], &c[1..]);
    let bc = dot(bv, cv);
    let ac = dot(av, cv);

    // R(X,V)W = f (V,W) grad_X G and its antisymmetric partner.
    out[0] = hess * (a0 * bc - b0 * ac);
    for i in 0..av.len() {
        // R(X,V)Y = -(1/f) <grad_X G, Y> V and partner, then the vertical block.
        out[i + 1] = hess * (b0 * c0 * av[i] - a0 * c0 * bv[i]) - grad2 * (ac * bv[i] - bc * av[i]);
    }
}

/// Sectional curvature of the plane spanned by frame vectors `u, w`.
pub fn sectional_curvature_frame(jet: &WarpJet, u: &[f64], w: &[f64]) -> Result<f64> {
    let uu = dot(u, u);
    let ww = dot(w, w);
    let uw = dot(u, w);
    let normalized_gram = 1.0 - uw * uw / (uu * ww);
    if !(uu > 0.0 && ww > 0.0) || !(normalized_gram > 1e-12) {
        return Err(Error::DegeneratePlane { gram: normalized_gram.max(0.0) });
    }
    let mut r = vec![0.0; u.len()];
    riemann_frame(jet, u, w, u, &mut r);
    Ok(dot(&r, w) / (uu * ww - uw * uw))
}

/// Closed form for a plane with orthonormal basis `z + v, w` where `z` is
/// horizontal and `v, w` are vertical: `-(f''/f)|z|^2 - (f'/f)^2 |v|^2`.
pub fn sectional_closed_form(jet: &WarpJet, z_sq: f64, v_sq: f64) -> f64 {
    -jet.ddf_over_f * z_sq - jet.dlog_f * jet.dlog_f * v_sq
}

/// `R(A, B) C` in coordinate components.
pub fn curvature_tensor(
    spec: &WarpSpec,
    p: &BasePoint,
    a: &TangentVector,
    b: &TangentVector,
    c: &TangentVector,
) -> Result<TangentVector> {
    for v in [a, b, c] {
        v.validate(spec)?;
    }
    check_based_at(p, &[a, b, c])?;
    let jet = spec.jet(p.x);
    let (fa, fb, fc) = (a.to_frame(spec), b.to_frame(spec), c.to_frame(spec));
    let mut out = vec![0.0; spec.n + 1];
    riemann_frame(&jet, &fa, &fb, &fc, &mut out);
    Ok(TangentVector::from_frame(spec, p.clone(), &out))
}

/// Sectional curvature of the plane spanned by coordinate vectors `u, w`.
pub fn sectional_curvature(spec: &WarpSpec, p: &BasePoint, u: &TangentVector, w: &TangentVector) -> Result<f64> {
    u.validate(spec)?;
    w.validate(spec)?;
    check_based_at(p, &[u, w])?;
    sectional_curvature_frame(&spec.jet(p.x), &u.to_frame(spec), &w.to_frame(spec))
}

/// Symmetric matrix `K_ij = <R(c', V_i) c', V_j>` along a geodesic.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMatrix {
    pub entries: DMatrix<f64>,
    pub t: f64,
}

impl CurvatureMatrix {
    pub fn asymmetry(&self) -> f64 {
        (&self.entries - self.entries.transpose()).abs().max()
    }
}

/// Fills `out` (row-major `n x n`) with `<R(vel, V_i) vel, V_j>`; `frame` holds the
/// `n` frame vectors back to back, each with `n + 1` components.
pub(crate) fn curvature_matrix_into(jet: &WarpJet, vel: &[f64], frame: &[f64], out: &mut [f64]) {
    let d = vel.len();
    let n = d - 1;
    let mut r = [0.0f64; 16];
    let mut r_heap;
    let r: &mut [f64] = if d <= 16 {
        &mut r[..d]
    } else {
        r_heap = vec![0.0; d];
        &mut r_heap
    };
    for i in 0..n {
        let vi = &frame[i * d..(i + 1) * d];
        riemann_frame(jet, vel, vi, vel, r);
        for j in 0..n {
            out[i * n + j] = dot(r, &frame[j * d..(j + 1) * d]);
        }
    }
    // The tensor is symmetric in exact arithmetic; remove rounding asymmetry.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = m;
            out[j * n + i] = m;
        }
    }
}
