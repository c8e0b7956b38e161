//! Exact functionals of the Poisson and Gaussian suspensions.
//!
//! Everything here is `f64`; measures come in as exact rationals and are
//! converted once at the boundary.

use std::f64::consts::PI;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuspensionError {
    #[error("poisson_pmf needs k >= 0 and lambda >= 0, got lambda = {0}")]
    NegativeRate(f64),
    #[error("base measure must be positive, got {0}")]
    NonPositiveBase(String),
    #[error("overlap {overlap} outside [0, {base}]")]
    OverlapOutOfRange { overlap: String, base: String },
}

pub type Result<T> = std::result::Result<T, SuspensionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SuspensionKind {
    /// Cylinder `C(A, m)`: configurations with exactly `m` points in `A`.
    Poisson { m: u32 },
    /// Half-space cylinder `{<·, χ_A> > 0}`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuspensionModel {
    kind: SuspensionKind,
    a: BigRational,
    a_f64: f64,
}

impl SuspensionModel {
    pub fn new(kind: SuspensionKind, a: BigRational) -> Result<Self> {
        if !a.is_positive() {
            return Err(SuspensionError::NonPositiveBase(a.to_string()));
        }
        let a_f64 = ratio_to_f64(&a);
        Ok(Self { kind, a, a_f64 })
    }

    pub fn poisson(m: u32) -> Self {
        Self::new(
            SuspensionKind::Poisson { m },
            BigRational::from_integer(1.into()),
        )
        .expect("unit base")
    }

    pub fn gaussian() -> Self {
        Self::new(
            SuspensionKind::Gaussian,
            BigRational::from_integer(1.into()),
        )
        .expect("unit base")
    }

    pub fn kind(&self) -> SuspensionKind {
        self.kind
    }

    pub fn base_measure(&self) -> &BigRational {
        &self.a
    }
}

pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Huge numerators and denominators: divide after scaling both down.
        let n = r.numer().bits() as i64;
        let d = r.denom().bits() as i64;
        let shift = (n.max(d) - 1000).max(0) as usize;
        let num = (r.numer() >> shift).to_f64().unwrap_or(0.0);
        let den = (r.denom() >> shift).to_f64().unwrap_or(f64::INFINITY);
        num / den
    })
}

fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// `λ^k e^{-λ} / k!`, evaluated in log space.
pub fn poisson_pmf(k: u32, lam: f64) -> Result<f64> {
    if lam.is_nan() || lam < 0.0 {
        return Err(SuspensionError::NegativeRate(lam));
    }
    if lam == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    Ok((k as f64 * lam.ln() - lam - ln_factorial(k)).exp())
}

/// `c = ∫ f dμ∘` for the cylinder indicator `f`.
pub fn cylinder_constant(model: &SuspensionModel) -> f64 {
    match model.kind {
        SuspensionKind::Poisson { m } => poisson_pmf(m, model.a_f64).expect("a > 0"),
        SuspensionKind::Gaussian => 0.5,
    }
}

/// `∫ S^n f · T^n f dμ∘` as a function of `μ(S^n A ∩ T^n A)`.
///
/// Poisson: the three regions `S^nA ∩ T^nA`, `S^nA \ T^nA`, `T^nA \ S^nA`
/// are disjoint with measures `λ, a − λ, a − λ`, so the event "m points in
/// each image" has probability `Σ_k P(k; λ) P(m − k; a − λ)^2`.
/// Gaussian: Sheppard's orthant formula `1/4 + asin(ρ)/(2π)`, `ρ = λ / a`.
pub fn pair_integrand(model: &SuspensionModel, lam_overlap: &BigRational) -> Result<f64> {
    if lam_overlap.is_negative() || lam_overlap > &model.a {
        return Err(SuspensionError::OverlapOutOfRange {
            overlap: lam_overlap.to_string(),
            base: model.a.to_string(),
        });
    }
    let rest = &model.a - lam_overlap;
    Ok(match model.kind {
        SuspensionKind::Poisson { m } => {
            let lam = ratio_to_f64(lam_overlap);
            let rest = if rest.is_zero() {
                0.0
            } else {
                ratio_to_f64(&rest)
            };
            let mut sum = 0.0;
            for k in 0..=m {
                let p = poisson_pmf(m - k, rest)?;
                sum += poisson_pmf(k, lam)? * p * p;
            }
            sum
        }
        SuspensionKind::Gaussian => {
            let rho = ratio_to_f64(&(lam_overlap / &model.a));
            gaussian_orthant(rho)
        }
    })
}

/// `P(X > 0, Z > 0)` for standard normals with correlation `rho`.
pub fn gaussian_orthant(rho: f64) -> f64 {
    0.25 + rho.clamp(-1.0, 1.0).asin() / (2.0 * PI)
}
