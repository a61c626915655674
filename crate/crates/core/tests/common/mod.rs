//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpflow::warped_geometry::{
    christoffel, curvature_tensor, sectional_curvature, BasePoint, TangentVector, WarpSpec,
};

const H: f64 = 1e-3;

pub fn d5(f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    (f(x - 2.0 * H) - 8.0 * f(x - H) + 8.0 * f(x + H) - f(x + 2.0 * H)) / (12.0 * H)
}

pub struct Oracle {
    /// `F = f^2`.
    pub big_f: Box<dyn Fn(f64) -> f64>,
    pub n: usize,
}

impl Oracle {
    /// `Gamma^k_{ij}` at `x` from `1/2 g^{kl}(d_i g_jl + d_j g_il - d_l g_ij)`.
    fn gamma(&self, x: f64) -> Vec<f64> {
        let m = self.n + 1;
        let f = (self.big_f)(x);
        let fp = d5(&*self.big_f, x);
        let mut g = vec![0.0; m * m * m];
        let dg = |i: usize, j: usize, l: usize| -> f64 {
            // Only d_x g_{yy} is non-zero.
            if l == 0 && i == j && i > 0 {
                fp
            } else {
                0.0
            }
        };
        let ginv = |k: usize| if k == 0 { 1.0 } else { 1.0 / f };
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    let v = 0.5 * ginv(k) * (dg(j, k, i) + dg(i, k, j) - dg(i, j, k));
                    g[(k * m + i) * m + j] = v;
                }
            }
        }
        g
    }

    /// `R^l_{ijk} = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik`.
    fn riemann(&self, x: f64) -> Vec<f64> {
        let m = self.n + 1;
        let g = self.gamma(x);
        let idx = |k: usize, i: usize, j: usize| (k * m + i) * m + j;
        let dgam: Vec<f64> = (0..m * m * m)
            .map(|e| d5(&|s| self.gamma(s)[e], x))
            .collect();
        let mut r = vec![0.0; m * m * m * m];
        for l in 0..m {
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        let di = if i == 0 { dgam[idx(l, j, k)] } else { 0.0 };
                        let dj = if j == 0 { dgam[idx(l, i, k)] } else { 0.0 };
                        let mut v = di - dj;
                        for p in 0..m {
                            v += g[idx(l, i, p)] * g[idx(p, j, k)] - g[idx(l, j, p)] * g[idx(p, i, k)];
                        }
                        r[((l * m + i) * m + j) * m + k] = v;
                    }
                }
            }
        }
        r
    }
}

pub fn coords(v: &TangentVector) -> Vec<f64> {
    std::iter::once(v.dx).chain(v.dy.iter().copied()).collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, spec: &WarpSpec, base: &BasePoint) -> TangentVector {
    let comps: Vec<f64> = (0..=spec.n).map(|_| rng.random_range(-1.0..1.0)).collect();
    TangentVector::from_frame(spec, base.clone(), &comps)
}

/// Worst relative errors `(Gamma, R, K)` of the library against the
/// finite-difference oracle over `samples` random points and planes.
pub fn oracle_errors(spec: &WarpSpec, oracle: &Oracle, lo: f64, hi: f64, seed: u64, samples: usize) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.n + 1;
    let (mut worst_g, mut worst, mut worst_k): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let x = rng.random_range(lo..hi);
        let y: Vec<f64> = (0..spec.n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let p = BasePoint::new(x, y);

        let gam = oracle.gamma(x);
        let ch = christoffel(spec, x).unwrap();
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    let want = gam[(k * m + i) * m + j];
                    let got = ch.get(k, i, j);
                    worst_g = worst_g.max((got - want).abs() / (1.0 + want.abs()));
                }
            }
        }

        let (a, b, c) = (random_vector(&mut rng, spec, &p), random_vector(&mut rng, spec, &p), random_vector(&mut rng, spec, &p));
        let r = oracle.riemann(x);
        let (ca, cb, cc) = (coords(&a), coords(&b), coords(&c));
        let mut want = vec![0.0; m];
        for l in 0..m {
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        // Opposite sign to the R^l_{ijk} convention above.
                        want[l] -= r[((l * m + i) * m + j) * m + k] * ca[i] * cb[j] * cc[k];
                    }
                }
            }
        }
        let want_v = TangentVector::new(p.clone(), want[0], want[1..].to_vec());
        let want_frame = want_v.to_frame(spec);
        let got_frame = curvature_tensor(spec, &p, &a, &b, &c).unwrap().to_frame(spec);
        let scale = 1.0 + want_frame.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (g, w) in got_frame.iter().zip(&want_frame) {
            worst = worst.max((g - w).abs() / scale);
        }

        // Sectional curvature from the oracle tensor in the standard form.
        let ru = {
            let mut out = vec![0.0; m];
            for l in 0..m {
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            out[l] += r[((l * m + i) * m + j) * m + k] * ca[i] * cb[j] * cb[k];
                        }
                    }
                }
            }
            out
        };
        let fsq = (oracle.big_f)(x);
        let metric = |u: &[f64], w: &[f64]| u[0] * w[0] + fsq * (1..m).map(|i| u[i] * w[i]).sum::<f64>();
        let num = metric(&ru, &ca);
        let gram = metric(&ca, &ca) * metric(&cb, &cb) - metric(&ca, &cb).powi(2);
        let k_want = num / gram;
        let k_got = sectional_curvature(spec, &p, &a, &b).unwrap();
        worst_k = worst_k.max((k_got - k_want).abs() / (1.0 + k_want.abs()));
    }
    (worst_g, worst, worst_k)
}

pub fn trig_oracle(a: f64, n: usize) -> Oracle {
    Oracle { big_f: Box::new(move |x: f64| (2.0 * (a * x - x.cos() + x.sin())).exp()), n }
}

pub fn sqrt_oracle(n: usize) -> Oracle {
    Oracle { big_f: Box::new(|x: f64| 1.0 + x * x), n }
}

pub fn linear_oracle(k: f64, n: usize) -> Oracle {
    Oracle { big_f: Box::new(move |x: f64| (2.0 * k * x).exp()), n }
}

