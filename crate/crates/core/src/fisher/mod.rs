//! Matrix-Fisher distribution on SO(3).
//!
//! Density `p(R) = exp(tr(Fᵀ R)) / c(F)` with respect to normalized Haar
//! measure, so the uniform distribution (`F = 0`) has density 1.

mod normalizer;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::so3::{exp_so3, is_finite, proper_svd, AxisAngle, Mat3, ProperSvd, RotationMatrix, Vec3};

pub use normalizer::{bessel_i0_scaled, normalizer, NormalizerValue, MAX_SINGULAR_VALUE};

/// Proposals drawn before the sampler decides whether the acceptance rate is workable.
pub const SAMPLER_PROBE: usize = 1 << 20;
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// The parameter matrix `F` together with its proper SVD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherParams {
    f: Mat3,
    svd: ProperSvd,
}

/// Principal rotation axes (columns of `U`) and per-axis concentrations
/// `κ_i = s_j + s_k` for cyclic `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationProfile {
    pub axes: RotationMatrix,
    pub kappas: [f64; 3],
}

impl FisherParams {
    pub fn new(f: Mat3) -> Result<Self> {
        if !is_finite(&f) {
            return Err(Error::NonFinite("fisher parameter"));
        }
        Ok(Self { f, svd: proper_svd(&f) })
    }

    pub fn zero() -> Self {
        Self::new(Mat3::zeros()).expect("zero matrix is finite")
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.f
    }

    pub fn svd(&self) -> &ProperSvd {
        &self.svd
    }

    pub fn singular_values(&self) -> [f64; 3] {
        self.svd.s
    }

    /// Most probable rotation `U Vᵀ`; identity for `F = 0`.
    pub fn mode(&self) -> RotationMatrix {
        if self.f == Mat3::zeros() {
            return RotationMatrix::identity();
        }
        self.svd.u * self.svd.v.inverse()
    }

    fn normalizer(&self) -> Result<NormalizerValue> {
        normalizer(self.svd.s)
    }

    /// `log c(F)`; depends on `F` only through its proper singular values.
    pub fn log_normalizer(&self) -> Result<f64> {
        Ok(self.normalizer()?.log_c)
    }

    /// `tr(Fᵀ R)`.
    pub fn trace_with(&self, r: &RotationMatrix) -> f64 {
        self.f.component_mul(r.matrix()).sum()
    }

    pub fn density(&self, r: &RotationMatrix) -> Result<f64> {
        Ok((self.trace_with(r) - self.log_normalizer()?).exp())
    }

    /// Negative log-likelihood `log c(F) - tr(Fᵀ R)`.
    pub fn nll(&self, r: &RotationMatrix) -> Result<f64> {
        Ok(self.log_normalizer()? - self.trace_with(r))
    }

    /// First moment `E[R] = U diag(E[Q]) Vᵀ`.
    pub fn expected_rotation(&self) -> Result<Mat3> {
        let m = self.normalizer()?.mean_diag;
        Ok(self.svd.u.matrix() * Mat3::from_diagonal(&Vec3::from(m)) * self.svd.v.matrix().transpose())
    }

    /// `∂ nll / ∂F = E[R] - R`.
    pub fn nll_grad(&self, r: &RotationMatrix) -> Result<Mat3> {
        Ok(self.expected_rotation()? - r.matrix())
    }

    pub fn concentration_profile(&self) -> ConcentrationProfile {
        let [s1, s2, s3] = self.svd.s;
        ConcentrationProfile { axes: self.svd.u, kappas: [s2 + s3, s3 + s1, s1 + s2] }
    }

    /// Rotation `U exp(θ ê_i) Vᵀ`: the mode turned by `theta` about the
    /// `axis`-th principal axis (`axis` in 1..=3).
    pub fn principal_rotation(&self, axis: usize, theta: f64) -> Result<RotationMatrix> {
        let e = unit_axis(axis)?;
        let turn = exp_so3(&AxisAngle::new(e, theta)?);
        Ok((self.svd.u * turn) * self.svd.v.inverse())
    }

    /// Density of the distribution on SO(3) along the principal one-parameter
    /// family: `e^{s_i} / c(S) · exp(κ_i cos θ)`.
    pub fn principal_axis_density(&self, axis: usize, theta: f64) -> Result<f64> {
        let i = axis_index(axis)?;
        let kappa = self.concentration_profile().kappas[i];
        Ok((self.svd.s[i] + kappa * theta.cos() - self.log_normalizer()?).exp())
    }

    /// The same family renormalized over the circle: the von Mises density
    /// `exp(κ cos θ) / (2π I0(κ))` with `κ = s_j + s_k`.
    pub fn marginal_angle_density(&self, axis: usize, theta: f64) -> Result<f64> {
        let i = axis_index(axis)?;
        let kappa = self.concentration_profile().kappas[i];
        Ok(von_mises_pdf(kappa, theta))
    }

    /// `n` i.i.d. draws by rejection from the uniform distribution, with
    /// envelope `exp(tr(Fᵀ R_mode))`. Deterministic in `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<RotationMatrix>> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        let [s1, s2, s3] = self.svd.s;
        let peak = s1 + s2 + s3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut proposed = 0usize;
        let mut accepted = 0usize;
        while out.len() < n {
            let r = RotationMatrix::uniform(&mut rng);
            let u: f64 = rng.random();
            proposed += 1;
            if u < (self.trace_with(&r) - peak).exp() {
                accepted += 1;
                out.push(r);
            }
            if proposed == SAMPLER_PROBE {
                let rate = accepted as f64 / proposed as f64;
                if rate < MIN_ACCEPTANCE {
                    return Err(Error::ConcentrationTooHigh { rate, floor: MIN_ACCEPTANCE });
                }
            }
        }
        Ok(out)
    }
}

/// Von Mises density on the circle.
pub fn von_mises_pdf(kappa: f64, theta: f64) -> f64 {
    // scaled Bessel keeps this finite for large κ
    (kappa * (theta.cos() - 1.0)).exp() / (2.0 * PI * bessel_i0_scaled(kappa))
}

fn axis_index(axis: usize) -> Result<usize> {
    if (1..=3).contains(&axis) {
        Ok(axis - 1)
    } else {
        Err(Error::InvalidParameter(format!("principal axis must be 1, 2 or 3 (got {axis})")))
    }
}

fn unit_axis(axis: usize) -> Result<Vec3> {
    let mut e = Vec3::zeros();
    e[axis_index(axis)?] = 1.0;
    Ok(e)
}

/// Angle of the rotation `Uᵀ R V` about its first body axis, i.e. the
/// coordinate θ of `R` along the family `U exp(θ ê_1) Vᵀ`, in `(-π, π]`.
pub fn principal_angle(p: &FisherParams, r: &RotationMatrix, axis: usize) -> Result<f64> {
    let i = axis_index(axis)?;
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    let q = p.svd.u.matrix().transpose() * r.matrix() * p.svd.v.matrix();
    Ok((q[(k, j)] - q[(j, k)]).atan2(q[(j, j)] + q[(k, k)]))
}

/// Reads a 3×3 matrix written as `diag(a, b, c)` or as nine row-major numbers
/// separated by whitespace, commas or semicolons; `#` starts a comment.
pub fn parse_matrix(text: &str, origin: &str) -> Result<Mat3> {
    let body: String = text.lines().map(|l| l.split('#').next().unwrap_or("")).collect::<Vec<_>>().join(" ");
    let body = body.trim();
    let bad = |m: String| Error::parse(origin, 1, m);
    let numbers = |s: &str| -> Result<Vec<f64>> {
        s.split(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == '[' || c == ']')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("'{t}' is not a number"))))
            .collect()
    };
    let m = if let Some(inner) = body.strip_prefix("diag(").and_then(|r| r.strip_suffix(')')) {
        let d = numbers(inner)?;
        if d.len() != 3 {
            return Err(bad(format!("diag() takes 3 entries, got {}", d.len())));
        }
        Mat3::from_diagonal(&Vec3::new(d[0], d[1], d[2]))
    } else {
        let v = numbers(body)?;
        if v.len() != 9 {
            return Err(bad(format!("expected 9 matrix entries, got {}", v.len())));
        }
        Mat3::from_row_slice(&v)
    };
    if !is_finite(&m) {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3::from_diagonal(&Vec3::new(a, b, c))
    }

    #[test]
    fn matrix_text() {
        assert_eq!(parse_matrix("diag(25, 5, 1)", "t").unwrap(), diag(25.0, 5.0, 1.0));
        let m = parse_matrix("1 2 3\n4 5 6 # row two\n7,8,9\n", "t").unwrap();
        assert_eq!(m, Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0));
        assert_eq!(parse_matrix("[[1,0,0],[0,1,0],[0,0,1]]", "t").unwrap(), Mat3::identity());
        assert!(parse_matrix("1 2 3", "t").is_err());
        assert!(parse_matrix("diag(1, x, 2)", "t").is_err());
        assert!(parse_matrix("diag(1, inf, 2)", "t").is_err());
    }

    #[test]
    fn mode_examples() {
        let p = FisherParams::new(diag(25.0, 5.0, 1.0)).unwrap();
        assert!((p.mode().matrix() - Mat3::identity()).abs().max() < 1e-12);
        assert_eq!(FisherParams::zero().mode(), RotationMatrix::identity());
    }

    #[test]
    fn uniform_distribution() {
        let p = FisherParams::zero();
        assert_eq!(p.log_normalizer().unwrap(), 0.0);
        let r = RotationMatrix::about_x(0.7);
        assert_eq!(p.density(&r).unwrap(), 1.0);
        assert_eq!(p.nll(&r).unwrap(), 0.0);
        assert_eq!(p.nll_grad(&r).unwrap(), -r.matrix());
        let m0 = p.marginal_angle_density(1, 0.0).unwrap();
        let m1 = p.marginal_angle_density(1, 2.0).unwrap();
        assert!((m0 - 1.0 / (2.0 * PI)).abs() < 1e-15 && (m0 - m1).abs() < 1e-15);
        assert_eq!(p.concentration_profile().kappas, [0.0; 3]);
    }

    #[test]
    fn nll_is_negative_log_density() {
        let p = FisherParams::new(Mat3::new(3.0, 1.0, 0.0, -2.0, 4.0, 1.0, 0.5, 0.0, 2.0)).unwrap();
        let r = RotationMatrix::about_y(0.4) * RotationMatrix::about_z(-1.1);
        let d = p.density(&r).unwrap();
        assert!((p.nll(&r).unwrap() + d.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_the_mean() {
        let p = FisherParams::new(diag(4.0, 2.0, 1.0)).unwrap();
        let r = RotationMatrix::about_z(0.2);
        let e = p.expected_rotation().unwrap();
        let g = p.nll_grad(&r).unwrap();
        assert!((g + r.matrix() - e).abs().max() < 1e-15);
        // E[Q] for a diagonal F is diagonal with entries in (0, 1)
        for i in 0..3 {
            assert!(e[(i, i)] > 0.0 && e[(i, i)] < 1.0);
        }
    }

    #[test]
    fn concentration_profile_example() {
        let p = FisherParams::new(diag(25.0, 5.0, 1.0)).unwrap();
        let c = p.concentration_profile();
        assert_eq!(c.kappas, [6.0, 26.0, 30.0]);
        assert!((c.axes.matrix() - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn marginal_ratio() {
        let p = FisherParams::new(diag(40.0, 30.0, 20.0)).unwrap();
        for axis in 1..=3 {
            let kappa = p.concentration_profile().kappas[axis - 1];
            let r = p.marginal_angle_density(axis, 0.0).unwrap() / p.marginal_angle_density(axis, PI).unwrap();
            assert!((r.ln() - 2.0 * kappa).abs() < 1e-9);
            let r = p.principal_axis_density(axis, 0.0).unwrap() / p.principal_axis_density(axis, PI).unwrap();
            assert!((r.ln() - 2.0 * kappa).abs() < 1e-9);
        }
        assert!(p.marginal_angle_density(0, 0.0).is_err());
        assert!(p.marginal_angle_density(4, 0.0).is_err());
    }

    #[test]
    fn principal_axis_density_matches_density() {
        let f = Mat3::new(5.0, -1.0, 2.0, 0.0, 3.0, 1.0, 1.0, 1.0, 4.0);
        let p = FisherParams::new(f).unwrap();
        for axis in 1..=3 {
            for theta in [-2.5, -0.3, 0.0, 1.0, 3.0] {
                let r = p.principal_rotation(axis, theta).unwrap();
                let a = p.principal_axis_density(axis, theta).unwrap();
                let b = p.density(&r).unwrap();
                assert!((a / b - 1.0).abs() < 1e-10);
                let back = principal_angle(&p, &r, axis).unwrap();
                assert!((back - theta).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = FisherParams::new(diag(3.0, 2.0, 1.0)).unwrap();
        let a = p.sample(11, 50).unwrap();
        let b = p.sample(11, 50).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p.sample(12, 50).unwrap());
        assert!(p.sample(1, 0).is_err());
    }

    #[test]
    fn sampling_refuses_extreme_concentration() {
        let p = FisherParams::new(diag(3000.0, 3000.0, 3000.0)).unwrap();
        assert!(matches!(p.sample(0, 10), Err(Error::ConcentrationTooHigh { .. })));
    }
}
