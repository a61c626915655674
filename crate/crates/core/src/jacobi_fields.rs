//! Matrix Jacobi equation `Y'' + K(t) Y = 0` along a [`GeodesicPath`].
//!
//! Solutions are stored in renormalised form. At node `k` the `2n x n` matrix
//! `[Y; Y']` equals `X_k F_k F_{k-1} ... F_1 C_0`, where `X_k` has orthonormal
//! columns and the `F_k` are small per-step transfer matrices. Growth and decay
//! live entirely in the products of the `F_k`, which are tracked with a
//! separate log scale, so solutions can be evaluated far beyond the range of
//! `f64` without overflow.
//!
//! Boundary solutions `Y_r(0) = I`, `Y_r(r) = 0` are computed by integrating
//! `Z(r) = 0`, `Z'(r) = I` from `r` back to `0` and setting `Y_r = Z Z(0)^{-1}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geodesic_flow::GeodesicPath;
use crate::warped_geometry::sectional_curvature_frame;

/// Default first rung of the Green ladder.
pub const DEFAULT_R0: f64 = 8.0;
/// Default convergence tolerance of the Green ladder.
pub const DEFAULT_GREEN_TOL: f64 = 1e-8;
/// Default number of doublings tried before giving up.
pub const DEFAULT_MAX_RUNGS: usize = 12;
/// Default observation window of the Green ladder.
pub const DEFAULT_T_OBS: f64 = 20.0;
/// Relative norm below which a Jacobi field counts as vanishing.
pub const VANISHING_TOL: f64 = 1e-12;

/// What a [`MatrixJacobiSolution`] represents.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Ivp,
    Boundary { r: f64 },
    GreenStable,
    GreenUnstable,
}

/// Grid solution of the matrix Jacobi equation.
#[derive(Debug, Clone)]
pub struct MatrixJacobiSolution {
    pub kind: SolutionKind,
    n: usize,
    step: f64,
    /// Per node the orthonormal `2n x n` frame, column-major.
    frames: Vec<f64>,
    /// Per node `F_k` (column-major `n x n`); the entry for node 0 is unused.
    transfers: Vec<f64>,
    c0: Vec<f64>,
    /// Set for boundary solutions: `|Y(r)|` at the boundary node.
    boundary_residual: Option<f64>,
}

/// A Jacobi field `J = Y w` on the grid, stored as unit-length `(j, j')` pairs
/// with the true field equal to `(j, j') * exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct JacobiField {
    pub n: usize,
    pub step: f64,
    /// Frame components of the normalised `J`, `n` per node.
    pub j: Vec<f64>,
    /// Frame components of the normalised `J'`, `n` per node.
    pub jp: Vec<f64>,
    /// `ln` of the Sasaki norm `sqrt(|J|^2 + |J'|^2)`.
    pub log_scale: Vec<f64>,
}

impl JacobiField {
    pub fn len(&self) -> usize {
        self.log_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scale.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn j_at(&self, k: usize) -> &[f64] {
        &self.j[k * self.n..(k + 1) * self.n]
    }

    pub fn jp_at(&self, k: usize) -> &[f64] {
        &self.jp[k * self.n..(k + 1) * self.n]
    }

    /// `|J(t_k)| / sasaki(t_k)`.
    pub fn relative_norm(&self, k: usize) -> f64 {
        norm(self.j_at(k))
    }

    /// `ln |J(t_k)|`.
    pub fn log_norm(&self, k: usize) -> f64 {
        self.relative_norm(k).ln() + self.log_scale[k]
    }

    /// `ln |J'(t_k)|`.
    pub fn log_norm_derivative(&self, k: usize) -> f64 {
        norm(self.jp_at(k)).ln() + self.log_scale[k]
    }

    /// `|J(t_k)|` in true scale.
    pub fn norm(&self, k: usize) -> f64 {
        self.log_norm(k).exp()
    }

    /// Sasaki norm of `(J, J')` at `t_k`.
    pub fn sasaki_norm(&self, k: usize) -> f64 {
        self.log_scale[k].exp()
    }

    /// Values `(J(0), J'(0))` as a tangent vector of the unit tangent bundle.
    pub fn initial_vector(&self) -> SasakiVector {
        let s = self.log_scale[0].exp();
        SasakiVector {
            j: self.j_at(0).iter().map(|v| v * s).collect(),
            jp: self.jp_at(0).iter().map(|v| v * s).collect(),
        }
    }
}

/// Tangent vector `xi` of the unit tangent bundle through `(J_xi(0), J'_xi(0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SasakiVector {
    pub j: Vec<f64>,
    pub jp: Vec<f64>,
}

impl SasakiVector {
    pub fn norm(&self) -> f64 {
        (dot(&self.j, &self.j) + dot(&self.jp, &self.jp)).sqrt()
    }

    /// Sasaki inner product.
    pub fn dot(&self, other: &SasakiVector) -> f64 {
        dot(&self.j, &other.j) + dot(&self.jp, &other.jp)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl MatrixJacobiSolution {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.frames.len() / (2 * self.n * self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.len() - 1)
    }

    pub fn boundary_residual(&self) -> Option<f64> {
        self.boundary_residual
    }

    fn frame(&self, k: usize) -> &[f64] {
        let m = 2 * self.n * self.n;
        &self.frames[k * m..(k + 1) * m]
    }

    fn transfer(&self, k: usize) -> &[f64] {
        let m = self.n * self.n;
        &self.transfers[k * m..(k + 1) * m]
    }

    /// Drops all nodes after `k_last`.
    pub fn truncate(&mut self, k_last: usize) {
        let n2 = self.n * self.n;
        self.frames.truncate((k_last + 1) * 2 * n2);
        self.transfers.truncate((k_last + 1) * n2);
    }

    /// `Y'(0) Y(0)^{-1}`; for solutions with `Y(0) = I` this is `Y'(0)`.
    pub fn initial_riccati(&self) -> DMatrix<f64> {
        let (y, yp) = self.matrices_at(0);
        yp * y.try_inverse().unwrap_or_else(|| DMatrix::from_element(self.n, self.n, f64::NAN))
    }

    /// `(Y(t_k), Y'(t_k))` in true scale.
    pub fn matrices_at(&self, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut out = None;
        self.for_each_matrix(|i, y, yp| {
            if i == k {
                out = Some((y.clone(), yp.clone()));
                false
            } else {
                true
            }
        });
        out.expect("node index inside the solution")
    }

    /// Calls `visit(k, Y, Y')` node by node in true scale until it returns `false`.
    pub fn for_each_matrix<F: FnMut(usize, &DMatrix<f64>, &DMatrix<f64>) -> bool>(&self, mut visit: F) {
        let n = self.n;
        let mut p = DMatrix::from_column_slice(n, n, &self.c0);
        for k in 0..self.len() {
            if k > 0 {
                p = DMatrix::from_column_slice(n, n, self.transfer(k)) * p;
            }
            let x = DMatrix::from_column_slice(2 * n, n, self.frame(k));
            let full = x * &p;
            let y = full.rows(0, n).into_owned();
            let yp = full.rows(n, n).into_owned();
            if !visit(k, &y, &yp) {
                break;
            }
        }
    }

    /// The Jacobi field `J = Y w`.
    pub fn field(&self, w: &[f64]) -> Result<JacobiField> {
        let n = self.n;
        if w.len() != n {
            return Err(Error::Domain(format!("direction must have {n} components")));
        }
        let len = self.len();
        let mut j = Vec::with_capacity(len * n);
        let mut jp = Vec::with_capacity(len * n);
        let mut log_scale = Vec::with_capacity(len);
        let mut v = vec![0.0; n];
        mat_vec(&self.c0, n, w, &mut v);
        let mut ell = 0.0;
        let mut tmp = vec![0.0; n];
        for k in 0..len {
            if k > 0 {
                mat_vec(self.transfer(k), n, &v, &mut tmp);
                std::mem::swap(&mut v, &mut tmp);
            }
            let s = norm(&v);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain("direction is in the kernel of the solution".into()));
            }
            ell += s.ln();
            for c in v.iter_mut() {
                *c /= s;
            }
            let x = self.frame(k);
            for i in 0..n {
                let mut top = 0.0;
                let mut bot = 0.0;
                for (c, vc) in v.iter().enumerate() {
                    top += x[c * 2 * n + i] * vc;
                    bot += x[c * 2 * n + n + i] * vc;
                }
                j.push(top);
                jp.push(bot);
            }
            log_scale.push(ell);
        }
        Ok(JacobiField { n, step: self.step, j, jp, log_scale })
    }

    /// Columns of `Y`, i.e. the fields `Y e_i`.
    pub fn column_fields(&self) -> Result<Vec<JacobiField>> {
        (0..self.n)
            .map(|i| {
                let mut e = vec![0.0; self.n];
                e[i] = 1.0;
                self.field(&e)
            })
            .collect()
    }

    /// `ln` of the operator norm of `xi -> (J_xi(t_k), J'_xi(t_k))` on the span
    /// of the solution, relative to the Sasaki norm of `xi` at `t = 0`.
    pub fn log_dphi_norms(&self, stride: usize) -> Vec<(usize, f64)> {
        let n = self.n;
        let stride = stride.max(1);
        let mut q = DMatrix::<f64>::identity(n, n);
        let mut ell = 0.0;
        let mut out = Vec::with_capacity(self.len() / stride + 1);
        for k in 0..self.len() {
            if k > 0 {
                q = DMatrix::from_column_slice(n, n, self.transfer(k)) * q;
                let s = q.amax();
                if s > 0.0 && s.is_finite() {
                    q /= s;
                    ell += s.ln();
                }
            }
            if k % stride == 0 || k + 1 == self.len() {
                let sv = q.clone().singular_values().max();
                out.push((k, ell + sv.ln()));
            }
        }
        out
    }

    /// Operator norm of `d phi^t` restricted to the solution span at `t_k`.
    pub fn dphi_norm(&self, k: usize) -> f64 {
        let mut sub = self.clone();
        sub.truncate(k);
        sub.log_dphi_norms(usize::MAX).last().map_or(f64::NAN, |(_, l)| l.exp())
    }

    /// `|det Y(t_k)| / prod |Y(t_k) e_i|` at every node: `1` for orthogonal
    /// columns, `0` for a singular `Y`.
    pub fn det_ratios(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(self.len());
        let mut p = DMatrix::from_column_slice(n, n, &self.c0);
        for k in 0..self.len() {
            if k > 0 {
                p = DMatrix::from_column_slice(n, n, self.transfer(k)) * p;
                let s = p.amax();
                if s > 0.0 && s.is_finite() {
                    p /= s;
                }
            }
            let x = DMatrix::from_column_slice(2 * n, n, self.frame(k));
            let y = x.rows(0, n) * &p;
            let prod: f64 = (0..n).map(|c| y.column(c).norm()).product();
            out.push(if prod > 0.0 { y.determinant().abs() / prod } else { 0.0 });
        }
        out
    }

    /// Largest change of the Wronskian `Y^T Y' - Y'^T Y` from its initial value.
    pub fn wronskian_drift(&self) -> f64 {
        let mut w0: Option<DMatrix<f64>> = None;
        let mut drift: f64 = 0.0;
        self.for_each_matrix(|_, y, yp| {
            let w = y.transpose() * yp - yp.transpose() * y;
            match &w0 {
                None => w0 = Some(w),
                Some(w0) => {
                    let d = (&w - w0).amax();
                    if d.is_finite() {
                        drift = drift.max(d);
                    }
                }
            }
            true
        });
        drift
    }

    /// Largest relative residual `|Y'' + K Y| / |Y|` column by column, with
    /// `Y''` from a fourth-order central difference of `Y'`.
    pub fn residual(&self, path: &GeodesicPath) -> Result<f64> {
        check_grid(self, path)?;
        let n = self.n;
        let h = self.step;
        let mut worst: f64 = 0.0;
        for field in self.column_fields()? {
            for k in 2..field.len().saturating_sub(2) {
                let kmat = path.curvature(k);
                let mut r2 = 0.0;
                let mut y2 = 0.0;
                for i in 0..n {
                    let jp_at = |q: usize| field.jp_at(q)[i] * (field.log_scale[q] - field.log_scale[k]).exp();
                    let ypp = (-jp_at(k + 2) + 8.0 * jp_at(k + 1) - 8.0 * jp_at(k - 1) + jp_at(k - 2)) / (12.0 * h);
                    let ky: f64 = (0..n).map(|l| kmat[i * n + l] * field.j_at(k)[l]).sum();
                    r2 += (ypp + ky).powi(2);
                    y2 += field.j_at(k)[i].powi(2);
                }
                worst = worst.max((r2 / y2).sqrt());
            }
        }
        Ok(worst)
    }

    /// Same solution seen from the flipped geodesic: `Y(-t)`, `-Y'(-t)`.
    pub fn time_reversed(&self) -> MatrixJacobiSolution {
        let n = self.n;
        let mut out = self.clone();
        for frame in out.frames.chunks_mut(2 * n * n) {
            for c in 0..n {
                for v in &mut frame[c * 2 * n + n..(c + 1) * 2 * n] {
                    *v = -*v;
                }
            }
        }
        out.step = -self.step;
        out.kind = match self.kind {
            SolutionKind::GreenStable => SolutionKind::GreenUnstable,
            SolutionKind::GreenUnstable => SolutionKind::GreenStable,
            SolutionKind::Boundary { r } => SolutionKind::Boundary { r: -r },
            SolutionKind::Ivp => SolutionKind::Ivp,
        };
        out
    }

    /// CSV `t, Y row-major, Y' row-major` in true scale, every `stride` nodes.
    pub fn write_csv<W: Write>(&self, mut out: W, stride: usize) -> Result<()> {
        let n = self.n;
        let mut header = vec!["t".to_string()];
        for name in ["Y", "Yp"] {
            for i in 1..=n {
                for j in 1..=n {
                    header.push(format!("{name}{i}{j}"));
                }
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let stride = stride.max(1);
        let last = self.len() - 1;
        let mut err = None;
        self.for_each_matrix(|k, y, yp| {
            if k % stride == 0 || k == last {
                let mut cells = vec![format!("{:.16e}", self.t(k))];
                for m in [y, yp] {
                    for i in 0..n {
                        for j in 0..n {
                            cells.push(format!("{:.16e}", m[(i, j)]));
                        }
                    }
                }
                if let Err(e) = writeln!(out, "{}", cells.join(",")) {
                    err = Some(e);
                    return false;
                }
            }
            true
        });
        match err {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }
}

fn check_grid(sol: &MatrixJacobiSolution, path: &GeodesicPath) -> Result<()> {
    if sol.n != path.n() || sol.step != path.step() || sol.len() > path.len() {
        return Err(Error::GridMismatch(format!(
            "solution (n = {}, step = {}, {} nodes) does not lie on path (n = {}, step = {}, {} nodes)",
            sol.n,
            sol.step,
            sol.len(),
            path.n(),
            path.step(),
            path.len()
        )));
    }
    Ok(())
}

/// `out = A v` for column-major `n x n` `A`.
fn mat_vec(a: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..n).map(|c| a[c * n + i] * v[c]).sum();
    }
}

/// `dx = [bottom; -K top]` for a column-major `2n x n` block.
fn jacobi_rhs(n: usize, kmat: &[f64], x: &[f64], dx: &mut [f64]) {
    let d = 2 * n;
    for c in 0..n {
        let col = &x[c * d..(c + 1) * d];
        let out = &mut dx[c * d..(c + 1) * d];
        for i in 0..n {
            out[i] = col[n + i];
            out[n + i] = -(0..n).map(|l| kmat[i * n + l] * col[l]).sum::<f64>();
        }
    }
}

struct Rk4Buffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    fn new(len: usize) -> Self {
        Rk4Buffers {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }
}

/// One RK4 step of length `dt` for the linear system, curvature given at the
/// start, midpoint and end of the step.
fn rk4_linear(n: usize, x: &mut [f64], dt: f64, k_start: &[f64], k_mid: &[f64], k_end: &[f64], b: &mut Rk4Buffers) {
    let len = x.len();
    jacobi_rhs(n, k_start, x, &mut b.k1);
    for i in 0..len {
        b.tmp[i] = x[i] + 0.5 * dt * b.k1[i];
    }
    jacobi_rhs(n, k_mid, &b.tmp, &mut b.k2);
    for i in 0..len {
        b.tmp[i] = x[i] + 0.5 * dt * b.k2[i];
    }
    jacobi_rhs(n, k_mid, &b.tmp, &mut b.k3);
    for i in 0..len {
        b.tmp[i] = x[i] + dt * b.k3[i];
    }
    jacobi_rhs(n, k_end, &b.tmp, &mut b.k4);
    for i in 0..len {
        x[i] += dt / 6.0 * (b.k1[i] + 2.0 * b.k2[i] + 2.0 * b.k3[i] + b.k4[i]);
    }
}

/// Thin QR by modified Gram-Schmidt with one reorthogonalisation pass:
/// overwrites the column-major `rows x n` block `x` with `Q` and returns `R`.
fn qr_in_place(x: &mut [f64], rows: usize, n: usize, r: &mut [f64]) -> bool {
    r.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..n {
        for _pass in 0..2 {
            for p in 0..c {
                let (prev, cur) = x.split_at_mut(c * rows);
                let q = &prev[p * rows..(p + 1) * rows];
                let col = &mut cur[..rows];
                let proj = dot(q, col);
                for (v, qv) in col.iter_mut().zip(q) {
                    *v -= proj * qv;
                }
                r[c * n + p] += proj;
            }
        }
        let col = &mut x[c * rows..(c + 1) * rows];
        let s = norm(col);
        if !(s > 0.0 && s.is_finite()) {
            return false;
        }
        for v in col.iter_mut() {
            *v /= s;
        }
        r[c * n + c] = s;
    }
    true
}

/// Inverse of an upper triangular column-major matrix.
fn upper_inverse(r: &[f64], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..n {
        // Solve R x = e_c by back substitution.
        for i in (0..=c).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for l in (i + 1)..=c {
                s -= r[l * n + i] * out[c * n + l];
            }
            out[c * n + i] = s / r[i * n + i];
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Forward initial value problem `Y(0) = Y0`, `Y'(0) = Yp0` on the whole path.
pub fn solve_jacobi_ivp(path: &GeodesicPath, y0: &DMatrix<f64>, yp0: &DMatrix<f64>) -> Result<MatrixJacobiSolution> {
    solve_ivp_until(path, y0, yp0, path.len() - 1)
}

fn solve_ivp_until(path: &GeodesicPath, y0: &DMatrix<f64>, yp0: &DMatrix<f64>, k_last: usize) -> Result<MatrixJacobiSolution> {
    let n = path.n();
    if y0.shape() != (n, n) || yp0.shape() != (n, n) {
        return Err(Error::GridMismatch(format!("initial matrices must be {n} x {n}")));
    }
    if k_last >= path.len() {
        return Err(Error::GridMismatch("solution window exceeds the path".into()));
    }
    let d = 2 * n;
    let mut x = vec![0.0; d * n];
    for c in 0..n {
        for i in 0..n {
            x[c * d + i] = y0[(i, c)];
            x[c * d + n + i] = yp0[(i, c)];
        }
    }
    let mut r = vec![0.0; n * n];
    if !qr_in_place(&mut x, d, n, &mut r) {
        return Err(Error::Domain("initial data [Y0; Yp0] must have full rank".into()));
    }
    let mut frames = Vec::with_capacity((k_last + 1) * d * n);
    let mut transfers = Vec::with_capacity((k_last + 1) * n * n);
    frames.extend_from_slice(&x);
    transfers.extend(identity(n));
    let c0 = r.clone();
    let mut bufs = Rk4Buffers::new(d * n);
    let h = path.step();
    for k in 0..k_last {
        rk4_linear(n, &mut x, h, path.curvature(k), path.curvature_mid(k), path.curvature(k + 1), &mut bufs);
        if !qr_in_place(&mut x, d, n, &mut r) {
            return Err(Error::Domain(format!("Jacobi solution lost rank at t = {}", path.t(k + 1))));
        }
        frames.extend_from_slice(&x);
        transfers.extend_from_slice(&r);
    }
    Ok(MatrixJacobiSolution {
        kind: SolutionKind::Ivp,
        n,
        step: h,
        frames,
        transfers,
        c0,
        boundary_residual: None,
    })
}

/// Boundary solution on nodes `0..=k_keep`, boundary node `k_r`.
fn boundary_window(path: &GeodesicPath, k_r: usize, k_keep: usize) -> Result<MatrixJacobiSolution> {
    let n = path.n();
    let d = 2 * n;
    let r_time = path.t(k_r);
    let k_keep = k_keep.min(k_r);
    let mut x = vec![0.0; d * n];
    for c in 0..n {
        x[c * d + n + c] = 1.0;
    }
    let boundary_residual = (0..n).map(|c| norm(&x[c * d..c * d + n])).fold(0.0, f64::max);

    let mut frames = vec![0.0; (k_keep + 1) * d * n];
    let mut transfers = vec![0.0; (k_keep + 1) * n * n];
    if k_r == k_keep {
        frames[k_r * d * n..].copy_from_slice(&x);
    }
    let mut r = vec![0.0; n * n];
    let mut rinv = vec![0.0; n * n];
    let mut bufs = Rk4Buffers::new(d * n);
    let h = path.step();
    for k in (0..k_r).rev() {
        rk4_linear(n, &mut x, -h, path.curvature(k + 1), path.curvature_mid(k), path.curvature(k), &mut bufs);
        if !qr_in_place(&mut x, d, n, &mut r) {
            return Err(Error::ConjugatePointDetected { r: r_time });
        }
        if k <= k_keep {
            frames[k * d * n..(k + 1) * d * n].copy_from_slice(&x);
        }
        if k < k_keep {
            upper_inverse(&r, n, &mut rinv);
            transfers[(k + 1) * n * n..(k + 2) * n * n].copy_from_slice(&rinv);
        }
    }
    transfers[..n * n].copy_from_slice(&identity(n));

    let top0 = DMatrix::from_fn(n, n, |i, c| x[c * d + i]);
    let svd = top0.clone().svd(false, false);
    let smin = svd.singular_values.min();
    if !(smin > 1e-12) {
        return Err(Error::ConjugatePointDetected { r: r_time });
    }
    let inv = top0.try_inverse().ok_or(Error::ConjugatePointDetected { r: r_time })?;
    Ok(MatrixJacobiSolution {
        kind: SolutionKind::Boundary { r: r_time },
        n,
        step: h,
        frames,
        transfers,
        c0: inv.as_slice().to_vec(),
        boundary_residual: Some(boundary_residual),
    })
}

fn grid_index(path: &GeodesicPath, t: f64) -> usize {
    let q = (t / path.step()).abs();
    if (q - q.round()).abs() < 1e-9 {
        q.round() as usize
    } else {
        q.ceil() as usize
    }
}

/// Boundary solution `Y_r(0) = I`, `Y_r(r) = 0` on `[0, r]`, extending the path
/// when it is shorter than `r`. For a path with negative step, `r` is a
/// distance along the path and the boundary sits at time `-r`.
pub fn solve_boundary(path: &mut GeodesicPath, r: f64) -> Result<MatrixJacobiSolution> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain("boundary time must be positive".into()));
    }
    path.extend_to(r.copysign(path.step()))?;
    let k_r = grid_index(path, r);
    boundary_window(path, k_r, k_r)
}

/// Settings of the Green ladder `r_k = r0 2^k`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GreenOptions {
    pub r0: f64,
    pub tol: f64,
    pub max_rungs: usize,
    /// Window `[0, t_obs]` of the convergence test; also the stored range.
    pub t_obs: f64,
    /// Optional cap on the rung length.
    pub r_max: Option<f64>,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            r0: DEFAULT_R0,
            tol: DEFAULT_GREEN_TOL,
            max_rungs: DEFAULT_MAX_RUNGS,
            t_obs: DEFAULT_T_OBS,
            r_max: None,
        }
    }
}

/// A converged Green solution with its ladder diagnostics.
#[derive(Debug, Clone)]
pub struct GreenSolution {
    pub solution: MatrixJacobiSolution,
    pub r_ladder: Vec<f64>,
    /// `sup_{[0, t_obs]} |Y_{r_{k+1}} - Y_{r_k}|_F` for consecutive rungs.
    pub gaps: Vec<f64>,
    /// `U(0) = Y'(0)`, the initial value of the matrix Riccati solution.
    pub u0: DMatrix<f64>,
    /// `true` when convergence was only reached after elimination of the `1/r` term.
    pub extrapolated: bool,
}

impl GreenSolution {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::NAN)
    }
}

/// `sup_k |Y_a(t_k) - Y_b(t_k)|_F` over the common nodes.
pub fn solution_gap(a: &MatrixJacobiSolution, b: &MatrixJacobiSolution) -> f64 {
    let len = a.len().min(b.len());
    let mut ya = Vec::with_capacity(len);
    a.for_each_matrix(|k, y, _| {
        ya.push(y.clone());
        k + 1 < len
    });
    let mut gap: f64 = 0.0;
    b.for_each_matrix(|k, y, _| {
        if k < len {
            gap = gap.max((y - &ya[k]).norm());
        }
        k + 1 < len
    });
    gap
}

fn green_ladder(path: &mut GeodesicPath, opts: &GreenOptions, kind: SolutionKind) -> Result<GreenSolution> {
    if !(opts.r0 > 0.0 && opts.tol > 0.0 && opts.t_obs > 0.0) {
        return Err(Error::Domain("Green ladder needs r0, tol and t_obs positive".into()));
    }
    let dir = path.step().signum();
    let k_obs = grid_index(path, opts.t_obs);
    let n = path.n();
    let mut r_ladder = Vec::new();
    let mut gaps = Vec::new();
    let mut prev: Option<MatrixJacobiSolution> = None;
    let mut prev_u: Vec<DMatrix<f64>> = Vec::new();
    let mut prev_extrap: Option<MatrixJacobiSolution> = None;
    for rung in 0..=opts.max_rungs {
        let r = opts.r0 * 2f64.powi(rung as i32);
        if r < opts.t_obs {
            continue;
        }
        if let Some(cap) = opts.r_max {
            if r > cap {
                break;
            }
        }
        path.extend_to(dir * r)?;
        let k_r = grid_index(path, r);
        let sol = boundary_window(path, k_r, k_obs)?;
        let u = sol.initial_riccati();
        r_ladder.push(r);
        if let Some(p) = &prev {
            let gap = solution_gap(p, &sol);
            gaps.push(gap);
            if gap < opts.tol {
                let mut solution = sol;
                solution.kind = kind;
                return Ok(GreenSolution { solution, r_ladder, gaps, u0: u, extrapolated: false });
            }
            // Eliminate a 1/r error term: 2 Y_{2r} - Y_r, again with Y(0) = I.
            let u_ex = 2.0 * &u - prev_u.last().unwrap();
            let ex = solve_ivp_until(path, &DMatrix::identity(n, n), &u_ex, k_obs)?;
            if let Some(pe) = &prev_extrap {
                if solution_gap(pe, &ex) < opts.tol {
                    let mut solution = ex;
                    solution.kind = kind;
                    return Ok(GreenSolution { solution, r_ladder, gaps, u0: u_ex, extrapolated: true });
                }
            }
            prev_extrap = Some(ex);
        }
        prev_u.push(u);
        prev = Some(sol);
    }
    Err(Error::GreenNotConverged {
        r_ladder,
        gaps,
        last: prev.map(|mut s| {
            s.kind = kind;
            Box::new(s)
        }),
    })
}

/// Green stable solution `lim_{r -> inf} Y_r` on `[0, t_obs]`.
pub fn green_stable(path: &mut GeodesicPath, opts: &GreenOptions) -> Result<GreenSolution> {
    if path.step() < 0.0 {
        return Err(Error::Domain("stable solutions need a forward path".into()));
    }
    green_ladder(path, opts, SolutionKind::GreenStable)
}

/// Green unstable solution `lim_{r -> -inf} Y_r` on `[-t_obs, 0]`, from the
/// backward path of the same initial vector.
pub fn green_unstable(path: &mut GeodesicPath, opts: &GreenOptions) -> Result<GreenSolution> {
    if path.step() > 0.0 {
        return Err(Error::Domain("unstable solutions need a backward path".into()));
    }
    green_ladder(path, opts, SolutionKind::GreenUnstable)
}

/// Unstable solution of `theta` from the stable solution of `flip(theta)`:
/// `Y^u(-s) = Y^s(s)` and `Y^u'(-s) = -Y^s'(s)`.
pub fn green_unstable_via_flip(flipped_path: &mut GeodesicPath, opts: &GreenOptions) -> Result<GreenSolution> {
    let g = green_stable(flipped_path, opts)?;
    Ok(GreenSolution {
        solution: g.solution.time_reversed(),
        r_ladder: g.r_ladder,
        gaps: g.gaps,
        u0: -g.u0,
        extrapolated: g.extrapolated,
    })
}

/// Riccati function `z = d/dt ln |J|^2` along the field `J = Y w`.
#[derive(Debug, Clone)]
pub struct RiccatiSeries {
    pub step: f64,
    pub z: Vec<f64>,
    /// `|J'|^2 / |J|^2`.
    pub energy: Vec<f64>,
    /// `K(gamma', J)` evaluated geometrically.
    pub curvature: Vec<f64>,
}

impl RiccatiSeries {
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// `|z' + z^2 - 2 |J'|^2/|J|^2 + 2 K(gamma', J)|` with `z'` from a five-point
    /// stencil, at the interior nodes.
    pub fn residuals(&self) -> Vec<(usize, f64)> {
        let h = self.step;
        let z = &self.z;
        (2..z.len().saturating_sub(2))
            .map(|k| {
                let dz = (-z[k + 2] + 8.0 * z[k + 1] - 8.0 * z[k - 1] + z[k - 2]) / (12.0 * h);
                (k, (dz + z[k] * z[k] - 2.0 * self.energy[k] + 2.0 * self.curvature[k]).abs())
            })
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals().into_iter().map(|(_, r)| r).fold(0.0, f64::max)
    }

    pub fn sup_abs(&self) -> f64 {
        self.z.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Plane curvature `K(gamma'(t_k), J(t_k))` from the geometry of the path.
pub fn plane_curvature(path: &GeodesicPath, k: usize, j: &[f64]) -> Result<f64> {
    let n = path.n();
    let d = n + 1;
    let mut u = vec![0.0; d];
    path.velocity_frame(k, &mut u);
    let frame = path.frame(k);
    let mut jv = vec![0.0; d];
    for (i, ji) in j.iter().enumerate() {
        for c in 0..d {
            jv[c] += ji * frame[i * d + c];
        }
    }
    sectional_curvature_frame(&path.jet(k), &u, &jv)
}

/// Riccati series of `J = Y w`.
pub fn riccati_along(path: &GeodesicPath, solution: &MatrixJacobiSolution, w: &[f64]) -> Result<RiccatiSeries> {
    check_grid(solution, path)?;
    let field = solution.field(w)?;
    riccati_of_field(path, &field)
}

/// Riccati series of a precomputed field.
pub fn riccati_of_field(path: &GeodesicPath, field: &JacobiField) -> Result<RiccatiSeries> {
    if field.step != path.step() || field.len() > path.len() {
        return Err(Error::GridMismatch("field does not lie on the path grid".into()));
    }
    let len = field.len();
    let mut z = Vec::with_capacity(len);
    let mut energy = Vec::with_capacity(len);
    let mut curvature = Vec::with_capacity(len);
    for k in 0..len {
        let j = field.j_at(k);
        let jp = field.jp_at(k);
        let jj = dot(j, j);
        if jj.sqrt() < VANISHING_TOL {
            return Err(Error::VanishingJacobiField { t: field.t(k), norm: jj.sqrt() });
        }
        z.push(2.0 * dot(j, jp) / jj);
        energy.push(dot(jp, jp) / jj);
        curvature.push(plane_curvature(path, k, j)?);
    }
    Ok(RiccatiSeries { step: field.step, z, energy, curvature })
}

/// Sasaki-orthonormal basis `xi_i = (q_i, U q_i)/sqrt(1 + mu_i^2)` of the graph
/// of a symmetric `U`, returned as the directions `w_i` with `J_i(0) = w_i`.
pub fn sasaki_orthonormal_directions(u0: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let sym = 0.5 * (u0 + u0.transpose());
    let eig = sym.symmetric_eigen();
    let n = u0.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    order
        .into_iter()
        .map(|i| {
            let mu = eig.eigenvalues[i];
            let mut q: DVector<f64> = eig.eigenvectors.column(i).into_owned();
            // Fix the sign so the output is reproducible.
            let lead = (0..n).max_by(|&a, &b| q[a].abs().partial_cmp(&q[b].abs()).unwrap()).unwrap();
            if q[lead] < 0.0 {
                q = -q;
            }
            let s = (1.0 + mu * mu).sqrt();
            q.iter().map(|v| v / s).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic_flow::{integrate_geodesic, UnitTangent};
    use crate::warped_geometry::{WarpProfile, WarpSpec};

    fn path_for(p: WarpProfile, t_end: f64) -> GeodesicPath {
        let s = WarpSpec::new(p, 2).unwrap();
        let th = UnitTangent { x: 0.0, y: vec![0.0; 2], dx: 1.0, dy: vec![0.0; 2] };
        integrate_geodesic(&s, &th, t_end, 1e-3).unwrap()
    }

    #[test]
    fn ivp_examples() {
        let flat = path_for(WarpProfile::Flat, 2.0);
        let i2 = DMatrix::<f64>::identity(2, 2);
        let sol = solve_jacobi_ivp(&flat, &i2, &DMatrix::zeros(2, 2)).unwrap();
        let (y, _) = sol.matrices_at(sol.len() - 1);
        assert!((y - &i2).amax() < 1e-14);

        let hyp = path_for(WarpProfile::Linear { k: 1.0 }, 5.0);
        let sol = solve_jacobi_ivp(&hyp, &i2, &(-&i2)).unwrap();
        sol.for_each_matrix(|k, y, _| {
            assert!((y - &i2 * (-sol.t(k)).exp()).amax() < 1e-7);
            true
        });
        let sol = solve_jacobi_ivp(&hyp, &i2, &DMatrix::zeros(2, 2)).unwrap();
        sol.for_each_matrix(|k, y, _| {
            if sol.t(k) <= 3.0 {
                assert!((y - &i2 * sol.t(k).cosh()).amax() < 1e-6);
            }
            true
        });
        assert!(sol.wronskian_drift() < 1e-8);
        assert!(sol.residual(&hyp).unwrap() < 1e-6);
    }

    #[test]
    fn boundary_examples() {
        let mut flat = path_for(WarpProfile::Flat, 1.0);
        let sol = solve_boundary(&mut flat, 8.0).unwrap();
        assert_eq!(sol.boundary_residual(), Some(0.0));
        sol.for_each_matrix(|k, y, _| {
            assert!((y[(0, 0)] - (1.0 - sol.t(k) / 8.0)).abs() < 1e-12);
            assert!(y[(0, 1)].abs() < 1e-12);
            true
        });

        let mut hyp = path_for(WarpProfile::Linear { k: 1.0 }, 1.0);
        for r in [8.0f64, 16.0] {
            let sol = solve_boundary(&mut hyp, r).unwrap();
            sol.for_each_matrix(|k, y, _| {
                let t = sol.t(k);
                if t <= 5.0 {
                    assert!((y[(1, 1)] - (r - t).sinh() / r.sinh()).abs() < 1e-7);
                }
                true
            });
            let (y_r, _) = sol.matrices_at(sol.len() - 1);
            assert!(y_r.amax() < 1e-8);
        }
    }

    #[test]
    fn green_examples() {
        let mut hyp = path_for(WarpProfile::Linear { k: 1.0 }, 1.0);
        let g = green_stable(&mut hyp, &GreenOptions::default()).unwrap();
        assert!(!g.extrapolated);
        assert!((g.u0.clone() + DMatrix::<f64>::identity(2, 2)).amax() < 1e-7);
        g.solution.for_each_matrix(|k, y, _| {
            assert!((y[(0, 0)] - (-g.solution.t(k)).exp()).abs() < 1e-7);
            true
        });
        let d = g.solution.log_dphi_norms(500);
        assert!(d[0].1.abs() < 1e-12);
        for (k, l) in d {
            assert!((l + g.solution.t(k)).abs() < 1e-6);
        }

        let mut flat = path_for(WarpProfile::Flat, 1.0);
        let g = green_stable(&mut flat, &GreenOptions::default()).unwrap();
        assert!(g.extrapolated);
        assert!(g.u0.amax() < 1e-10);
        let d = g.solution.log_dphi_norms(1000);
        assert!(d.iter().all(|(_, l)| l.abs() < 1e-9));
    }

    #[test]
    fn unstable_routes_agree() {
        let s = WarpSpec::new(WarpProfile::Linear { k: 1.0 }, 2).unwrap();
        let th = UnitTangent::normalized(&s, 0.0, vec![0.0; 2], 0.3, &[0.5, -0.2]).unwrap();
        let opts = GreenOptions { t_obs: 3.0, ..GreenOptions::default() };
        let mut back = integrate_geodesic(&s, &th, -1.0, 1e-3).unwrap();
        let direct = green_unstable(&mut back, &opts).unwrap();
        let mut flipped = integrate_geodesic(&s, &th.flip(), 1.0, 1e-3).unwrap();
        let via = green_unstable_via_flip(&mut flipped, &opts).unwrap();
        assert!(solution_gap(&direct.solution, &via.solution) < 1e-6);
        assert!((direct.u0.clone() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-7);
        direct.solution.for_each_matrix(|k, y, _| {
            assert!((y[(0, 0)] - direct.solution.t(k).exp()).abs() < 1e-7);
            true
        });
    }

    #[test]
    fn riccati_constant_curvature() {
        let mut hyp = path_for(WarpProfile::Linear { k: 1.0 }, 1.0);
        let g = green_stable(&mut hyp, &GreenOptions { t_obs: 5.0, ..GreenOptions::default() }).unwrap();
        let z = riccati_along(&hyp, &g.solution, &[0.6, 0.8]).unwrap();
        assert!(z.z.iter().all(|v| (v + 2.0).abs() < 1e-7));
        assert!(z.max_residual() < 1e-5);
    }

    #[test]
    fn qr_and_triangular_inverse() {
        let mut x = vec![1.0, 2.0, 0.5, 1.0, 0.3, -1.0, 2.0, 0.1];
        let orig = DMatrix::from_column_slice(4, 2, &x);
        let mut r = vec![0.0; 4];
        assert!(qr_in_place(&mut x, 4, 2, &mut r));
        let q = DMatrix::from_column_slice(4, 2, &x);
        let rm = DMatrix::from_column_slice(2, 2, &r);
        assert!((&q * &rm - orig).amax() < 1e-14);
        let mut inv = vec![0.0; 4];
        upper_inverse(&r, 2, &mut inv);
        let prod = rm * DMatrix::from_column_slice(2, 2, &inv);
        assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn sasaki_directions_are_orthonormal() {
        let u = DMatrix::from_row_slice(2, 2, &[-1.5, 0.4, 0.4, -0.7]);
        let ws = sasaki_orthonormal_directions(&u);
        let xi: Vec<SasakiVector> = ws
            .iter()
            .map(|w| {
                let wv = DVector::from_column_slice(w);
                SasakiVector { j: w.clone(), jp: (&u * wv).as_slice().to_vec() }
            })
            .collect();
        assert!((xi[0].norm() - 1.0).abs() < 1e-14);
        assert!((xi[1].norm() - 1.0).abs() < 1e-14);
        assert!(xi[0].dot(&xi[1]).abs() < 1e-14);
    }
}
