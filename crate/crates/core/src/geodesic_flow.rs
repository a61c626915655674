//! Geodesics of `R x_f T^n` with a transported perpendicular frame.
//!
//! The velocity is carried in the orthonormal frame as `b e_0 + |w| w_hat`.
//! Along a geodesic `w' = -(f'/f) b w`, so `w_hat` is constant and only the
//! logarithm `s = ln|w|` is integrated. The integrated state is
//! `(x, y_1..y_n, b, s)` plus the `n` frame vectors, with equations
//!
//! ```text
//! x' = b,  y_i' = w_hat_i e^{s - ln f},  b' = (f'/f) e^{2s},  s' = -(f'/f) b,
//! V_0' = (f'/f) <w, V_v>,  V_v' = -(f'/f) V_0 w.
//! ```
//!
//! In coordinates this is the usual system with conserved momenta
//! `p_i = e^{2g} y_i' = w_hat_i e^{ln f + s}`.

use std::f64::consts::TAU;
use std::io::Write;

use crate::error::{ensure_finite, Error, Result};
use crate::warped_geometry::{curvature_matrix_into, CurvatureMatrix, WarpJet, WarpSpec};

/// Default integrator step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Tolerance of the node invariants; drift beyond ten times this is an error.
pub const INVARIANT_TOL: f64 = 1e-8;
/// Frame deviation that triggers re-orthonormalisation.
pub const REORTHO_TOL: f64 = 1e-9;
/// Steps between step-doubling error estimates.
const DOUBLING_STRIDE: usize = 64;

/// A point of the unit tangent bundle in coordinate components.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct UnitTangent {
    pub x: f64,
    pub y: Vec<f64>,
    pub dx: f64,
    pub dy: Vec<f64>,
}

impl UnitTangent {
    /// Builds a unit vector from a horizontal component `b` and fibre frame components `w`.
    pub fn from_frame(spec: &WarpSpec, x: f64, y: Vec<f64>, b: f64, w: &[f64]) -> Self {
        let inv_f = (-spec.jet(x).log_f).exp();
        UnitTangent { x, y, dx: b, dy: w.iter().map(|c| c * inv_f).collect() }
    }

    /// Rescales an arbitrary non-zero direction `(b, w)` in frame components to unit length.
    pub fn normalized(spec: &WarpSpec, x: f64, y: Vec<f64>, b: f64, w: &[f64]) -> Result<Self> {
        let norm = (b * b + w.iter().map(|c| c * c).sum::<f64>()).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Domain("direction must be finite and non-zero".into()));
        }
        let w: Vec<f64> = w.iter().map(|c| c / norm).collect();
        Ok(Self::from_frame(spec, x, y, b / norm, &w))
    }

    /// `(b, w)`: frame components of the velocity.
    pub fn frame_velocity(&self, spec: &WarpSpec) -> (f64, Vec<f64>) {
        let f = spec.jet(self.x).log_f.exp();
        (self.dx, self.dy.iter().map(|d| d * f).collect())
    }

    /// `|metric_dot(v, v) - 1|`.
    pub fn unit_defect(&self, spec: &WarpSpec) -> f64 {
        let (b, w) = self.frame_velocity(spec);
        (b * b + w.iter().map(|c| c * c).sum::<f64>() - 1.0).abs()
    }

    /// The flip `(x, v) -> (x, -v)`.
    pub fn flip(&self) -> Self {
        UnitTangent {
            x: self.x,
            y: self.y.clone(),
            dx: -self.dx,
            dy: self.dy.iter().map(|d| -d).collect(),
        }
    }
}

/// The flip `(x, v) -> (x, -v)` on the unit tangent bundle.
pub fn flip(theta: &UnitTangent) -> UnitTangent {
    theta.flip()
}

/// Largest invariant defects seen while integrating.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct PathDiagnostics {
    pub max_unit_defect: f64,
    pub max_momentum_defect: f64,
    /// Frame deviation from orthonormality before each correction.
    pub max_frame_defect: f64,
    /// Step-doubling estimate of the local state error.
    pub step_doubling_error: f64,
    pub reorthonormalizations: usize,
}

/// A geodesic sampled on the uniform grid `t_k = k * step`, with its frame and
/// curvature matrices at the nodes and at the step midpoints.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    spec: WarpSpec,
    n: usize,
    step: f64,
    w_hat: Vec<f64>,
    x0: f64,
    b0: f64,
    ray: bool,
    log_p0: f64,
    /// Per node: `x, y_1..y_n, b, s` followed by the frame.
    nodes: Vec<f64>,
    /// Derivative of the last node, reused as the first RK4 stage.
    last_deriv: Vec<f64>,
    k_nodes: Vec<f64>,
    k_mid: Vec<f64>,
    diagnostics: PathDiagnostics,
    drift_limit: f64,
}

impl GeodesicPath {
    fn stride(&self) -> usize {
        state_len(self.n)
    }

    pub fn spec(&self) -> &WarpSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Signed integrator step.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.nodes.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.len() - 1)
    }

    pub fn diagnostics(&self) -> &PathDiagnostics {
        &self.diagnostics
    }

    /// `true` for the `|b| = 1` geodesics `x(t) = x(0) + b t`.
    pub fn is_ray(&self) -> bool {
        self.ray
    }

    pub fn x(&self, k: usize) -> f64 {
        self.nodes[k * self.stride()]
    }

    /// Horizontal velocity component `b = x'`.
    pub fn b(&self, k: usize) -> f64 {
        self.nodes[k * self.stride() + self.n + 1]
    }

    pub fn jet(&self, k: usize) -> WarpJet {
        self.spec.jet(self.x(k))
    }

    /// Frame components `(b, w)` of the velocity at node `k`.
    pub fn velocity_frame(&self, k: usize, out: &mut [f64]) {
        let z = &self.nodes[k * self.stride()..];
        velocity_into(self.n, &self.w_hat, z, out);
    }

    /// The `n` frame vectors at node `k`, each with `n + 1` frame components.
    pub fn frame(&self, k: usize) -> &[f64] {
        let off = k * self.stride() + self.n + 3;
        &self.nodes[off..off + self.n * (self.n + 1)]
    }

    /// Row-major curvature matrix at node `k`.
    pub fn curvature(&self, k: usize) -> &[f64] {
        let m = self.n * self.n;
        &self.k_nodes[k * m..(k + 1) * m]
    }

    /// Curvature matrix at the midpoint of step `k -> k + 1`.
    pub fn curvature_mid(&self, k: usize) -> &[f64] {
        let m = self.n * self.n;
        &self.k_mid[k * m..(k + 1) * m]
    }

    /// State at node `k` as a coordinate unit tangent vector.
    pub fn node(&self, k: usize) -> UnitTangent {
        let z = &self.nodes[k * self.stride()..];
        let n = self.n;
        let x = z[0];
        let log_f = self.spec.jet(x).log_f;
        let e = (z[n + 2] - log_f).exp();
        UnitTangent {
            x,
            y: z[1..=n].to_vec(),
            dx: z[n + 1],
            dy: self.w_hat.iter().map(|c| c * e).collect(),
        }
    }

    /// Unit-speed defect at node `k`.
    pub fn unit_defect(&self, k: usize) -> f64 {
        let z = &self.nodes[k * self.stride()..];
        let (b, s) = (z[self.n + 1], z[self.n + 2]);
        (b * b + (2.0 * s).exp() - 1.0).abs()
    }

    /// Relative momentum defect `|p(t) - p(0)| / |p(0)|` at node `k`.
    pub fn momentum_defect(&self, k: usize) -> f64 {
        if self.ray {
            return 0.0;
        }
        let z = &self.nodes[k * self.stride()..];
        let log_p = self.spec.jet(z[0]).log_f + z[self.n + 2];
        (log_p - self.log_p0).exp_m1().abs()
    }

    /// Conserved momenta `p_i = e^{2g} y_i'` at node `k`.
    pub fn momenta(&self, k: usize) -> Vec<f64> {
        let z = &self.nodes[k * self.stride()..];
        let log_p = self.spec.jet(z[0]).log_f + z[self.n + 2];
        self.w_hat.iter().map(|c| c * log_p.exp()).collect()
    }

    /// Grid index of `t`, or `OffGrid` when `t` is not within rounding of a node.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let q = t / self.step;
        let k = q.round();
        if k < 0.0 || k as usize >= self.len() || (q - k).abs() > 1e-6 {
            return Err(Error::OffGrid { t });
        }
        Ok(k as usize)
    }

    /// Largest deviation of the node frame from an orthonormal basis of `velocity^perp`.
    pub fn frame_defect(&self, k: usize) -> f64 {
        let d = self.n + 1;
        let mut u = vec![0.0; d];
        self.velocity_frame(k, &mut u);
        frame_deviation(&u, self.frame(k), self.n)
    }

    /// Continues the integration until `|t_end|` reaches `|t|`.
    pub fn extend_to(&mut self, t: f64) -> Result<()> {
        ensure_finite("t_end", &[t])?;
        let target = (t / self.step).abs();
        let target = if (target - target.round()).abs() < 1e-9 { target.round() } else { target.ceil() };
        let steps = target as usize;
        if steps < self.len() {
            return Ok(());
        }
        let n = self.n;
        let len = state_len(n);
        let m = n * n;
        let extra = steps + 1 - self.len();
        self.nodes.reserve(extra * len);
        self.k_nodes.reserve(extra * m);
        self.k_mid.reserve(extra * m);

        let h = self.step;
        let mut z = self.nodes[(self.len() - 1) * len..].to_vec();
        let mut fz = self.last_deriv.clone();
        let mut k2 = vec![0.0; len];
        let mut k3 = vec![0.0; len];
        let mut k4 = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        let mut next = vec![0.0; len];
        let mut f_next = vec![0.0; len];
        let mut mid = vec![0.0; len];
        let mut u = vec![0.0; n + 1];
        let mut kbuf = vec![0.0; m];
        let mut doubled = vec![0.0; len];

        while self.len() <= steps {
            let k = self.len() - 1;
            rk4_step(&self.spec, &self.w_hat, n, &z, &fz, h, &mut k2, &mut k3, &mut k4, &mut tmp, &mut next);
            if self.ray {
                next[0] = self.x0 + self.b0 * self.t(k + 1);
            }

            let dev = {
                velocity_into(n, &self.w_hat, &next, &mut u);
                frame_deviation(&u, &next[n + 3..], n)
            };
            self.diagnostics.max_frame_defect = self.diagnostics.max_frame_defect.max(dev);
            if dev > REORTHO_TOL {
                orthonormalize(&u, &mut next[n + 3..], n);
                self.diagnostics.reorthonormalizations += 1;
            }
            ensure_finite("geodesic state", &next[..n + 2])?;
            ensure_finite("geodesic frame", &next[n + 3..])?;
            rhs(&self.spec, &self.w_hat, n, &next, &mut f_next);

            // Cubic Hermite midpoint of the step.
            for i in 0..len {
                mid[i] = 0.5 * (z[i] + next[i]) + h * (fz[i] - f_next[i]) / 8.0;
            }
            velocity_into(n, &self.w_hat, &mid, &mut u);
            curvature_matrix_into(&self.spec.jet(mid[0]), &u, &mid[n + 3..], &mut kbuf);
            self.k_mid.extend_from_slice(&kbuf);

            velocity_into(n, &self.w_hat, &next, &mut u);
            curvature_matrix_into(&self.spec.jet(next[0]), &u, &next[n + 3..], &mut kbuf);
            self.k_nodes.extend_from_slice(&kbuf);
            self.nodes.extend_from_slice(&next);

            let kk = k + 1;
            let unit = self.unit_defect(kk);
            let mom = self.momentum_defect(kk);
            let d = &mut self.diagnostics;
            d.max_unit_defect = d.max_unit_defect.max(unit);
            d.max_momentum_defect = d.max_momentum_defect.max(mom);
            let limit = self.drift_limit;
            if unit > limit {
                return Err(Error::IntegratorDrift { quantity: "unit speed", max_defect: unit, limit, t: self.t(kk) });
            }
            if mom > limit {
                return Err(Error::IntegratorDrift { quantity: "momentum", max_defect: mom, limit, t: self.t(kk) });
            }

            if kk.is_multiple_of(DOUBLING_STRIDE) && kk >= 2 {
                // One step of 2h from node kk-2 against the two steps just taken.
                let base = self.nodes[(kk - 2) * len..(kk - 1) * len].to_vec();
                let mut fb = vec![0.0; len];
                rhs(&self.spec, &self.w_hat, n, &base, &mut fb);
                rk4_step(&self.spec, &self.w_hat, n, &base, &fb, 2.0 * h, &mut k2, &mut k3, &mut k4, &mut tmp, &mut doubled);
                let err = (0..n + 3)
                    .map(|i| (doubled[i] - next[i]).abs())
                    .filter(|e| e.is_finite())
                    .fold(0.0, f64::max)
                    / 15.0;
                self.diagnostics.step_doubling_error = self.diagnostics.step_doubling_error.max(err);
            }

            std::mem::swap(&mut z, &mut next);
            std::mem::swap(&mut fz, &mut f_next);
        }
        self.last_deriv = fz;
        Ok(())
    }

    /// Writes the trajectory CSV, angles reduced to `[0, 2 pi)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n;
        let mut header = vec!["t".to_string(), "x".to_string()];
        header.extend((1..=n).map(|i| format!("y{i}")));
        header.push("dx".into());
        header.extend((1..=n).map(|i| format!("dy{i}")));
        header.push("defect_unit".into());
        header.push("defect_momentum".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let node = self.node(k);
            let mut row = vec![self.t(k), node.x];
            row.extend(node.y.iter().map(|y| y.rem_euclid(TAU)));
            row.push(node.dx);
            row.extend(node.dy.iter().copied());
            row.push(self.unit_defect(k));
            row.push(self.momentum_defect(k));
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn state_len(n: usize) -> usize {
    n + 3 + n * (n + 1)
}

fn velocity_into(n: usize, w_hat: &[f64], z: &[f64], out: &mut [f64]) {
    out[0] = z[n + 1];
    let ws = z[n + 2].exp();
    for i in 0..n {
        out[i + 1] = ws * w_hat[i];
    }
}

fn rhs(spec: &WarpSpec, w_hat: &[f64], n: usize, z: &[f64], dz: &mut [f64]) {
    let jet = spec.jet(z[0]);
    let phi = jet.dlog_f;
    let (b, s) = (z[n + 1], z[n + 2]);
    let ws = s.exp();
    let e = (s - jet.log_f).exp();
    dz[0] = b;
    for i in 0..n {
        dz[1 + i] = w_hat[i] * e;
    }
    dz[n + 1] = phi * ws * ws;
    dz[n + 2] = -phi * b;
    let d = n + 1;
    for j in 0..n {
        let off = n + 3 + j * d;
        let v0 = z[off];
        let wv: f64 = (0..n).map(|i| w_hat[i] * z[off + 1 + i]).sum::<f64>() * ws;
        dz[off] = phi * wv;
        for i in 0..n {
            dz[off + 1 + i] = -phi * ws * w_hat[i] * v0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn rk4_step(
    spec: &WarpSpec,
    w_hat: &[f64],
    n: usize,
    z: &[f64],
    k1: &[f64],
    h: f64,
    k2: &mut [f64],
    k3: &mut [f64],
    k4: &mut [f64],
    tmp: &mut [f64],
    out: &mut [f64],
) {
    let len = z.len();
    for i in 0..len {
        tmp[i] = z[i] + 0.5 * h * k1[i];
    }
    rhs(spec, w_hat, n, tmp, k2);
    for i in 0..len {
        tmp[i] = z[i] + 0.5 * h * k2[i];
    }
    rhs(spec, w_hat, n, tmp, k3);
    for i in 0..len {
        tmp[i] = z[i] + h * k3[i];
    }
    rhs(spec, w_hat, n, tmp, k4);
    for i in 0..len {
        out[i] = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn frame_deviation(u: &[f64], frame: &[f64], n: usize) -> f64 {
    let d = n + 1;
    let uu = dot(u, u).sqrt();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        let vi = &frame[i * d..(i + 1) * d];
        dev = dev.max((dot(vi, u) / uu).abs());
        for j in i..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((dot(vi, &frame[j * d..(j + 1) * d]) - target).abs());
        }
    }
    dev
}

/// Modified Gram-Schmidt of the frame against the unit velocity `u` and itself.
fn orthonormalize(u: &[f64], frame: &mut [f64], n: usize) {
    let d = n + 1;
    let uu = dot(u, u);
    for i in 0..n {
        let (done, rest) = frame.split_at_mut(i * d);
        let vi = &mut rest[..d];
        let c = dot(vi, u) / uu;
        for (v, uc) in vi.iter_mut().zip(u) {
            *v -= c * uc;
        }
        for j in 0..i {
            let vj = &done[j * d..(j + 1) * d];
            let c = dot(vi, vj);
            for (v, w) in vi.iter_mut().zip(vj) {
                *v -= c * w;
            }
        }
        let norm = dot(vi, vi).sqrt();
        for v in vi.iter_mut() {
            *v /= norm;
        }
    }
}

/// Orthonormal basis of `u^perp`: Gram-Schmidt of the standard basis with the
/// direction of the largest component of `u` left out.
pub fn initial_frame(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let skip = (0..d)
        .max_by(|&i, &j| u[i].abs().partial_cmp(&u[j].abs()).unwrap().then(j.cmp(&i)))
        .unwrap();
    let mut frame = Vec::with_capacity((d - 1) * d);
    for e in (0..d).filter(|&e| e != skip) {
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        frame.extend_from_slice(&v);
    }
    orthonormalize(u, &mut frame, d - 1);
    frame
}

/// Integrates the geodesic with initial vector `theta0` on `[0, t_end]` (or
/// `[t_end, 0]` when `t_end < 0`) with classic fixed-step RK4.
pub fn integrate_geodesic(spec: &WarpSpec, theta0: &UnitTangent, t_end: f64, step: f64) -> Result<GeodesicPath> {
    integrate_geodesic_with_limit(spec, theta0, t_end, step, 10.0 * INVARIANT_TOL)
}

/// [`integrate_geodesic`] with a custom bound on the invariant defects.
pub fn integrate_geodesic_with_limit(
    spec: &WarpSpec,
    theta0: &UnitTangent,
    t_end: f64,
    step: f64,
    drift_limit: f64,
) -> Result<GeodesicPath> {
    let n = spec.n;
    if theta0.y.len() != n || theta0.dy.len() != n {
        return Err(Error::Domain(format!("initial vector must have {n} fibre components")));
    }
    ensure_finite("initial vector", &[theta0.x, theta0.dx, t_end, step])?;
    ensure_finite("initial vector", &theta0.dy)?;
    ensure_finite("initial vector", &theta0.y)?;
    if !(step > 0.0) {
        return Err(Error::Domain("step must be positive".into()));
    }
    if !(drift_limit > 0.0) {
        return Err(Error::Domain("drift limit must be positive".into()));
    }
    let defect = theta0.unit_defect(spec);
    if defect > 1e-10 {
        return Err(Error::Domain(format!("initial vector is not unit (defect {defect:e})")));
    }
    let (b, w) = theta0.frame_velocity(spec);
    let wn = w.iter().map(|c| c * c).sum::<f64>().sqrt();
    let ray = wn == 0.0;
    let w_hat: Vec<f64> = if ray { vec![0.0; n] } else { w.iter().map(|c| c / wn).collect() };
    let s = if ray { f64::NEG_INFINITY } else { wn.ln() };

    let mut z = Vec::with_capacity(state_len(n));
    z.push(theta0.x);
    z.extend_from_slice(&theta0.y);
    z.push(b);
    z.push(s);
    let mut u = vec![0.0; n + 1];
    velocity_into(n, &w_hat, &z, &mut u);
    z.extend(initial_frame(&u));

    let mut f0 = vec![0.0; z.len()];
    rhs(spec, &w_hat, n, &z, &mut f0);
    let mut k0 = vec![0.0; n * n];
    curvature_matrix_into(&spec.jet(theta0.x), &u, &z[n + 3..], &mut k0);
    let log_p0 = if ray { 0.0 } else { spec.jet(theta0.x).log_f + s };

    let mut path = GeodesicPath {
        spec: spec.clone(),
        n,
        step: if t_end < 0.0 { -step } else { step },
        w_hat,
        x0: theta0.x,
        b0: b,
        ray,
        log_p0,
        nodes: z,
        last_deriv: f0,
        k_nodes: k0,
        k_mid: Vec::new(),
        diagnostics: PathDiagnostics::default(),
        drift_limit,
    };
    path.diagnostics.max_unit_defect = defect;
    path.extend_to(t_end)?;
    Ok(path)
}

/// Curvature matrix at time `t`, linearly interpolated between neighbouring nodes.
pub fn curvature_matrix_along(path: &GeodesicPath, t: f64) -> Result<CurvatureMatrix> {
    ensure_finite("t", &[t])?;
    let q = t / path.step();
    let last = (path.len() - 1) as f64;
    if q < -1e-9 || q > last + 1e-9 {
        return Err(Error::OffGrid { t });
    }
    let q = q.clamp(0.0, last);
    let k = q.floor() as usize;
    let frac = q - k as f64;
    let n = path.n();
    let a = path.curvature(k);
    let entries = if frac < 1e-9 || k + 1 >= path.len() {
        nalgebra::DMatrix::from_row_slice(n, n, a)
    } else {
        let b = path.curvature(k + 1);
        let v: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - frac) * x + frac * y).collect();
        nalgebra::DMatrix::from_row_slice(n, n, &v)
    };
    Ok(CurvatureMatrix { entries, t })
}

/// State of the scalar reduction `b' = g'(x)(1 - b^2)`, `x' = b`.
///
/// `b` is carried as `sigma = artanh(b)`, for which the equation reads
/// `sigma' = g'(x)` and `b = tanh(sigma)` never saturates numerically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarVelocity {
    pub t: f64,
    pub x: f64,
    pub sigma: f64,
}

impl ScalarVelocity {
    pub fn b(&self) -> f64 {
        self.sigma.tanh()
    }
}

/// Grid solution of the scalar reduction from `(x0, b0)`; `|b0| = 1` is the
/// fixed point `b = b0`, `x = x0 + b0 t`.
pub fn scalar_velocity_series(spec: &WarpSpec, x0: f64, b0: f64, t_end: f64, step: f64) -> Result<Vec<ScalarVelocity>> {
    ensure_finite("scalar velocity input", &[x0, b0, t_end, step])?;
    if b0.abs() > 1.0 {
        return Err(Error::Domain(format!("|b0| = {} exceeds 1", b0.abs())));
    }
    if !(step > 0.0) || t_end < 0.0 {
        return Err(Error::Domain("need step > 0 and t_end >= 0".into()));
    }
    let steps = (t_end / step - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let mut out = Vec::with_capacity(steps + 1);
    if b0.abs() == 1.0 {
        let sigma = b0 * f64::INFINITY;
        for k in 0..=steps {
            let t = k as f64 * h;
            out.push(ScalarVelocity { t, x: x0 + b0 * t, sigma });
        }
        return Ok(out);
    }
    let g1 = |x: f64| spec.jet(x).dlog_f;
    let (mut x, mut sigma) = (x0, b0.atanh());
    out.push(ScalarVelocity { t: 0.0, x, sigma });
    for k in 1..=steps {
        let (x1, s1) = (sigma.tanh(), g1(x));
        let (x2, s2) = ((sigma + 0.5 * h * s1).tanh(), g1(x + 0.5 * h * x1));
        let (x3, s3) = ((sigma + 0.5 * h * s2).tanh(), g1(x + 0.5 * h * x2));
        let (x4, s4) = ((sigma + h * s3).tanh(), g1(x + h * x3));
        x += h / 6.0 * (x1 + 2.0 * x2 + 2.0 * x3 + x4);
        sigma += h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
        out.push(ScalarVelocity { t: k as f64 * h, x, sigma });
    }
    Ok(out)
}

/// `b(t)` of the scalar reduction, integrated with step [`DEFAULT_STEP`].
pub fn scalar_velocity(spec: &WarpSpec, x0: f64, b0: f64, t: f64) -> Result<f64> {
    let series = scalar_velocity_series(spec, x0, b0, t, DEFAULT_STEP)?;
    Ok(series.last().unwrap().b())
}

/// Bounds on `artanh(b(t))` implied by `C1/2 < g' < C2/2`:
/// `artanh(b0) + C1 t / 2 < artanh(b(t)) < artanh(b0) + C2 t / 2`.
///
/// Through `tanh` these are `1 - 2/(B0 e^{C t} + 1)` with `B0 = (1 + b0)/(1 - b0)`.
pub fn velocity_sandwich(spec: &WarpSpec, b0: f64, t: f64) -> Option<(f64, f64)> {
    let (c1, c2) = spec.bounds?;
    let s0 = b0.atanh();
    Some((s0 + 0.5 * c1 * t, s0 + 0.5 * c2 * t))
}

/// The sandwich bounds in terms of `b`.
pub fn velocity_bounds(c1: f64, c2: f64, b0: f64, t: f64) -> (f64, f64) {
    let big_b0 = (1.0 + b0) / (1.0 - b0);
    (1.0 - 2.0 / (big_b0 * (c1 * t).exp() + 1.0), 1.0 - 2.0 / (big_b0 * (c2 * t).exp() + 1.0))
}
