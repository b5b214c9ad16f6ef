//! Normalizing constant of the matrix-Fisher distribution.
//!
//! `c(S) = ∫_{SO(3)} exp(tr(S Q)) dQ` under normalized Haar measure, with the
//! rotation written in ZXZ Euler angles `Q = Rz(α) Rx(β) Rz(γ)` and Haar
//! weight `sin β / 8π²`. After substituting `x = cos β` the β-integral is done
//! by adaptive Gauss–Legendre; α and γ are periodic, so they use the
//! trapezoid rule on the torus, which converges geometrically.
//!
//! The same pass also returns `E[Q_ii] = ∂ log c / ∂ s_i`, which gives the
//! first moment `E[R] = U diag(E[Q]) Vᵀ`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use crate::error::{Error, Result};

/// Largest `|s_i|` accepted before exp-overflow becomes a concern.
pub const MAX_SINGULAR_VALUE: f64 = 500.0;

const GL_ORDER: usize = 16;
const MAX_DEPTH: usize = 30;
const REL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizerValue {
    /// `log c(S)`.
    pub log_c: f64,
    /// `E[Q_11], E[Q_22], E[Q_33]` for `Q ~ M(diag S)`.
    pub mean_diag: [f64; 3],
}

type Cache = RwLock<HashMap<[u64; 3], NormalizerValue>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Cached evaluation for proper singular values `s`.
pub fn normalizer(s: [f64; 3]) -> Result<NormalizerValue> {
    let max_abs = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !max_abs.is_finite() || max_abs > MAX_SINGULAR_VALUE {
        return Err(Error::NormalizerOverflow { max_abs, limit: MAX_SINGULAR_VALUE });
    }
    let key = s.map(|v| (v + 0.0).to_bits());
    if let Some(v) = cache().read().ok().and_then(|c| c.get(&key).copied()) {
        return Ok(v);
    }
    let v = compute(s);
    // Values are a pure function of the key; concurrent writers agree.
    if let Ok(mut c) = cache().write() {
        c.insert(key, v);
    }
    Ok(v)
}

fn compute(s: [f64; 3]) -> NormalizerValue {
    if s == [0.0; 3] {
        return NormalizerValue { log_c: 0.0, mean_diag: [0.0; 3] };
    }
    let [s1, s2, s3] = s;
    // max_Q tr(S Q) = s1 + s2 + s3 for proper singular values
    let shift = s1 + s2 + s3;
    let torus = Torus::new(s1.abs() + s2.abs());
    let integrand = |x: f64| torus.eval(s, shift, x);

    let nodes = gauss_legendre(GL_ORDER);
    let coarse: [f64; 4] = (0..8).fold([0.0; 4], |acc, i| {
        let a = -1.0 + 0.25 * i as f64;
        add(acc, panel(&integrand, &nodes, a, a + 0.25))
    });
    let scale = coarse[0].abs().max(f64::MIN_POSITIVE);
    // Below this the panel difference is cancellation noise, not truncation error.
    let floor = 64.0 * f64::EPSILON * scale;
    let total = adaptive(&integrand, &nodes, -1.0, 1.0, REL_TOL * scale, floor, 0);

    let c = total[0];
    NormalizerValue { log_c: c.ln() + shift, mean_diag: [total[1] / c, total[2] / c, total[3] / c] }
}

/// Trapezoid rule over (α, γ) ∈ [0, 2π)² with `n` nodes per axis.
///
/// With `u = α + γ`, `v = α - γ` the exponent is `A cos u + B cos v`. On the
/// discrete grid `(k + l, k - l) mod n` hits every same-parity pair twice,
/// so the double sum factors into parity-split single sums.
struct Torus {
    n: usize,
    cos: Vec<f64>,
}

impl Torus {
    fn new(amplitude: f64) -> Self {
        let n = (amplitude + 12.0 * amplitude.sqrt() + 32.0).ceil() as usize;
        let n = n + n % 2;
        let cos = (0..n).map(|m| (2.0 * PI * m as f64 / n as f64).cos()).collect();
        Self { n, cos }
    }

    /// Parity-split sums of `exp(a (cos φ - 1))` and of `cos φ` times it.
    fn sums(&self, a: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (m, &c) in self.cos.iter().enumerate() {
            let e = (a * (c - 1.0)).exp();
            let p = 2 * (m % 2);
            out[p] += e;
            out[p + 1] += e * c;
        }
        out
    }

    /// Returns the x-integrand for `[1, Q11, Q22, Q33]`, scaled by `exp(-shift)`.
    fn eval(&self, s: [f64; 3], shift: f64, x: f64) -> [f64; 4] {
        let [s1, s2, s3] = s;
        let a = 0.5 * (s1 + s2) * (1.0 + x);
        let b = 0.5 * (s1 - s2) * (1.0 - x);
        let [fe, fce, fo, fco] = self.sums(a);
        let [ge, gce, go, gco] = self.sums(b);
        let pre = (s3 * x + s1 + s2 * x - shift).exp() / (self.n * self.n) as f64;
        let base = fe * ge + fo * go;
        let cos_u = fce * ge + fco * go;
        let cos_v = fe * gce + fo * gco;
        [
            pre * base,
            pre * (0.5 * (1.0 - x) * cos_v + 0.5 * (1.0 + x) * cos_u),
            pre * (0.5 * (x - 1.0) * cos_v + 0.5 * (1.0 + x) * cos_u),
            pre * x * base,
        ]
    }
}

fn add(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

fn panel<F: Fn(f64) -> [f64; 4]>(f: &F, nodes: &[(f64, f64)], a: f64, b: f64) -> [f64; 4] {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes.iter().fold([0.0; 4], |acc, &(t, w)| {
        let v = f(mid + half * t);
        [acc[0] + w * half * v[0], acc[1] + w * half * v[1], acc[2] + w * half * v[2], acc[3] + w * half * v[3]]
    })
}

fn adaptive<F: Fn(f64) -> [f64; 4]>(
    f: &F,
    nodes: &[(f64, f64)],
    a: f64,
    b: f64,
    tol: f64,
    floor: f64,
    depth: usize,
) -> [f64; 4] {
    let whole = panel(f, nodes, a, b);
    let m = 0.5 * (a + b);
    let halves = add(panel(f, nodes, a, m), panel(f, nodes, m, b));
    let err = (0..4).map(|i| (whole[i] - halves[i]).abs()).fold(0.0, f64::max);
    if err <= tol.max(floor) || depth >= MAX_DEPTH {
        halves
    } else {
        let t = 0.5 * tol;
        add(adaptive(f, nodes, a, m, t, floor, depth + 1), adaptive(f, nodes, m, b, t, floor, depth + 1))
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// `exp(-x) I0(x)` for `x >= 0`, by the trapezoid rule on
/// `I0(x) = (1/2π) ∫ exp(x cos t) dt`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 1.0;
    }
    let torus = Torus::new(x);
    let s = torus.sums(x);
    (s[0] + s[2]) / torus.n as f64
}
