//! Kernel families, their gradients and uniform gradient bounds.
//!
//! Every Euclidean family here is radial and every spherical family is zonal,
//! so the ambient gradient of `log k(x, y)` is always a scalar multiple of
//! `y − x` (Euclidean) or of `y` (sphere). That scalar is the per-pair *score
//! weight*; the KDE score is a normalized, weighted sum of them.
//!
//! Kernels are unnormalized: `k(x, x) = 1` for the Euclidean families.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::{dist_sq, dot, Scalar};

/// Matérn smoothness; only the closed-form half-integer cases above 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum MaternNu {
    ThreeHalves,
    FiveHalves,
}

impl TryFrom<f64> for MaternNu {
    type Error = String;
    fn try_from(v: f64) -> std::result::Result<Self, String> {
        if v == 1.5 {
            Ok(MaternNu::ThreeHalves)
        } else if v == 2.5 {
            Ok(MaternNu::FiveHalves)
        } else {
            Err(format!("matern nu must be 1.5 or 2.5, got {v}"))
        }
    }
}

impl From<MaternNu> for f64 {
    fn from(nu: MaternNu) -> f64 {
        match nu {
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Scalar")]
pub enum KernelFamily<T> {
    /// `exp(−‖x−y‖²/(2h²))`
    Gaussian { h: T },
    /// `exp(−‖x−y‖/h)`
    Laplace { h: T },
    Matern { nu: MaternNu, length_scale: T },
    /// Inverse multiquadric `(1 + ‖x−y‖²/h²)^(−β)`
    Imq { h: T, beta: T },
    /// `exp(κ xᵀy)` on the sphere
    #[serde(rename = "vmf")]
    VonMisesFisher { kappa: T },
    /// `−log(a(1 − xᵀy + c))` on the sphere, with `0 < a < 1/(2 + c)`
    SphericalLog { c: T, a: T },
}

impl<T: Scalar> KernelFamily<T> {
    pub fn is_spherical(&self) -> bool {
        matches!(self, KernelFamily::VonMisesFisher { .. } | KernelFamily::SphericalLog { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian { .. } => "gaussian",
            KernelFamily::Laplace { .. } => "laplace",
            KernelFamily::Matern { .. } => "matern",
            KernelFamily::Imq { .. } => "imq",
            KernelFamily::VonMisesFisher { .. } => "vmf",
            KernelFamily::SphericalLog { .. } => "spherical_log",
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: T, what: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} requires {what} > 0, got {v}", self.name())))
            }
        };
        match *self {
            KernelFamily::Gaussian { h } | KernelFamily::Laplace { h } => pos(h, "h"),
            KernelFamily::Matern { length_scale, .. } => pos(length_scale, "length_scale"),
            KernelFamily::Imq { h, beta } => pos(h, "h").and(pos(beta, "beta")),
            KernelFamily::VonMisesFisher { kappa } => pos(kappa, "kappa"),
            KernelFamily::SphericalLog { c, a } => {
                pos(c, "c")?;
                pos(a, "a")?;
                if a >= T::one() / (T::lit(2.0) + c) {
                    return Err(Error::Config(format!(
                        "spherical_log requires a < 1/(2 + c) = {}, got {a}",
                        T::one() / (T::lit(2.0) + c)
                    )));
                }
                Ok(())
            }
        }
    }
}

impl<T: Scalar> fmt::Display for KernelFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Gaussian { h } => write!(f, "gaussian(h={h})"),
            KernelFamily::Laplace { h } => write!(f, "laplace(h={h})"),
            KernelFamily::Matern { nu, length_scale } => {
                write!(f, "matern(nu={}, l={length_scale})", f64::from(*nu))
            }
            KernelFamily::Imq { h, beta } => write!(f, "imq(h={h}, beta={beta})"),
            KernelFamily::VonMisesFisher { kappa } => write!(f, "vmf(kappa={kappa})"),
            KernelFamily::SphericalLog { c, a } => write!(f, "spherical_log(c={c}, a={a})"),
        }
    }
}

/// Verdicts on the four kernel regularity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AssumptionReport<T> {
    /// K1: mean embedding is injective.
    pub k1_characteristic: bool,
    /// K2: `M_k = sup ‖∇ₓk‖`, present iff finite.
    pub k2_gradient_bound: Option<T>,
    /// K3: `k > 0` everywhere.
    pub k3_strictly_positive: bool,
    /// K4: `x ↦ k(x, y)` is C¹.
    pub k4_c1: bool,
    pub overall: bool,
}

/// Per-pair quantities shared by every KDE-level computation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairTerms<T> {
    pub log_k: T,
    /// `∇ₓ log k = w·(y − x)` (Euclidean) or `w·y` (sphere, ambient). `None`
    /// where the gradient does not exist.
    pub score_weight: Option<T>,
}

/// A kernel family bound to the geometry it is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    family: KernelFamily<T>,
    geometry: Geometry,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(family: KernelFamily<T>, geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        family.validate()?;
        if family.is_spherical() != geometry.is_sphere() {
            let want = if family.is_spherical() { "sphere" } else { "euclidean" };
            return Err(Error::Config(format!(
                "{} kernel requires {want} geometry, got {geometry:?}",
                family.name()
            )));
        }
        Ok(Self { family, geometry })
    }

    pub fn gaussian(h: T, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian { h }, Geometry::euclidean(dim)?)
    }

    #[inline]
    pub fn family(&self) -> &KernelFamily<T> {
        &self.family
    }

    #[inline]
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    /// Gaussian bandwidth, if this is a Gaussian kernel.
    pub fn gaussian_bandwidth(&self) -> Option<T> {
        match self.family {
            KernelFamily::Gaussian { h } => Some(h),
            _ => None,
        }
    }

    fn check_pair(&self, x: &[T], y: &[T]) -> Result<()> {
        self.geometry.check_point(x)?;
        self.geometry.check_point(y)
    }

    /// `k(x, y)`.
    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check_pair(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        match self.family {
            KernelFamily::Gaussian { h } => (-dist_sq(x, y) / (T::lit(2.0) * h * h)).exp(),
            KernelFamily::SphericalLog { c, a } => -(a * (T::one() - dot(x, y) + c)).ln(),
            _ => self.log_eval_unchecked(x, y).exp(),
        }
    }

    /// `log k(x, y)`, finite even where `k` underflows.
    pub(crate) fn log_eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        self.pair_terms(x, y).log_k
    }

    #[inline]
    pub(crate) fn pair_terms(&self, x: &[T], y: &[T]) -> PairTerms<T> {
        let two = T::lit(2.0);
        match self.family {
            KernelFamily::Gaussian { h } => {
                let h2 = h * h;
                PairTerms { log_k: -dist_sq(x, y) / (two * h2), score_weight: Some(h2.recip()) }
            }
            KernelFamily::Laplace { h } => {
                let r = dist_sq(x, y).sqrt();
                let w = if r > T::zero() { Some((h * r).recip()) } else { None };
                PairTerms { log_k: -r / h, score_weight: w }
            }
            KernelFamily::Matern { nu, length_scale: l } => {
                let r = dist_sq(x, y).sqrt();
                match nu {
                    MaternNu::ThreeHalves => {
                        let t = T::lit(3.0).sqrt() * r / l;
                        PairTerms {
                            log_k: t.ln_1p() - t,
                            score_weight: Some(T::lit(3.0) / (l * l) / (T::one() + t)),
                        }
                    }
                    MaternNu::FiveHalves => {
                        let t = T::lit(5.0).sqrt() * r / l;
                        let poly = T::one() + t + t * t / T::lit(3.0);
                        PairTerms {
                            log_k: poly.ln() - t,
                            score_weight: Some(
                                T::lit(5.0) / (T::lit(3.0) * l * l) * (T::one() + t) / poly,
                            ),
                        }
                    }
                }
            }
            KernelFamily::Imq { h, beta } => {
                let r2 = dist_sq(x, y);
                let h2 = h * h;
                PairTerms {
                    log_k: -beta * (r2 / h2).ln_1p(),
                    score_weight: Some(two * beta / (h2 + r2)),
                }
            }
            KernelFamily::VonMisesFisher { kappa } => {
                PairTerms { log_k: kappa * dot(x, y), score_weight: Some(kappa) }
            }
            KernelFamily::SphericalLog { c, a } => {
                let gap = T::one() - dot(x, y) + c;
                let k = -(a * gap).ln();
                PairTerms { log_k: k.ln(), score_weight: Some((gap * k).recip()) }
            }
        }
    }

    /// `∇ₓ k(x, y)`; the Riemannian (tangent) gradient on the sphere.
    pub fn grad(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check_pair(x, y)?;
        let terms = self.pair_terms(x, y);
        let w = terms.score_weight.ok_or_else(|| {
            Error::UndefinedGradient(format!("{} kernel gradient at r = 0", self.family.name()))
        })?;
        let scale = self.eval_unchecked(x, y) * w;
        let mut g: Vec<T> = if self.geometry.is_sphere() {
            y.iter().map(|&yi| scale * yi).collect()
        } else {
            x.iter().zip(y).map(|(&xi, &yi)| scale * (yi - xi)).collect()
        };
        self.geometry.project_in_place(x, &mut g);
        Ok(g)
    }

    /// Analytic `M_k = sup ‖∇ₓk‖`.
    pub fn gradient_bound(&self) -> Option<T> {
        let one = T::one();
        let e = T::E();
        Some(match self.family {
            // maximum at r = h
            KernelFamily::Gaussian { h } => one / (h * e.sqrt()),
            // supremum approached as r → 0⁺
            KernelFamily::Laplace { h } => one / h,
            // maximum at r = l/√3
            KernelFamily::Matern { nu: MaternNu::ThreeHalves, length_scale: l } => {
                T::lit(3.0).sqrt() / (l * e)
            }
            // maximum at √5 r/l = golden ratio φ, value √5 φ³ e^(−φ) / (3l)
            KernelFamily::Matern { nu: MaternNu::FiveHalves, length_scale: l } => {
                let phi = (one + T::lit(5.0).sqrt()) / T::lit(2.0);
                T::lit(5.0).sqrt() * phi.powi(3) * (-phi).exp() / (T::lit(3.0) * l)
            }
            // maximum at r² = h²/(2β + 1)
            KernelFamily::Imq { h, beta } => {
                let two_b = T::lit(2.0) * beta;
                two_b / h / (two_b + one).sqrt() * ((two_b + one) / (two_b + T::lit(2.0))).powf(beta + one)
            }
            KernelFamily::VonMisesFisher { kappa } => kappa * kappa.exp(),
            KernelFamily::SphericalLog { c, .. } => one / c,
        })
    }

    pub fn assumption_report(&self) -> AssumptionReport<T> {
        // K1 is not checkable numerically; the verdicts follow the kernel
        // literature (positive Fourier transform / positive Mercer or
        // Schoenberg coefficients). K4 fails only for the Laplace cusp.
        let k1 = true;
        let k2 = self.gradient_bound();
        let k3 = true;
        let k4 = !matches!(self.family, KernelFamily::Laplace { .. });
        AssumptionReport {
            k1_characteristic: k1,
            k2_gradient_bound: k2,
            k3_strictly_positive: k3,
            k4_c1: k4,
            overall: k1 && k2.is_some() && k3 && k4,
        }
    }
}

impl<T: Scalar> fmt::Display for KernelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.family.fmt(f)
    }
}
