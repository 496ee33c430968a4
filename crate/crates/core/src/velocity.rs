//! Velocity fields of KDE-level Wasserstein gradient flows.
//!
//! With `Δ(x) = ∇log p_kde(x) − ∇log q_kde(x)`:
//!
//! | divergence | velocity |
//! |---|---|
//! | forward KL | `Δ` |
//! | reverse KL | `(p_kde/q_kde) Δ` |
//! | χ² | `(q_kde/p_kde) Δ` |
//! | MMD | `∇p_kde − ∇q_kde` |
//! | mixed | `α·reverse KL + β·χ²` |
//!
//! [`drifting_field`] is the kernel-generic mean-shift difference
//! `V⁺_p − V⁻_q`, evaluated directly from kernel-weighted means rather
//! than through scores, so that its agreement with `h²·Δ` for Gaussian
//! kernels is a real cross-check.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kde::{self, KdeEval};
use crate::kernels::KernelSpec;
use crate::scalar::Scalar;

/// Log density ratios are clamped to `±DEFAULT_LOG_RATIO_CLAMP` before weighting.
pub const DEFAULT_LOG_RATIO_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum DivergenceSpec<T> {
    /// `KL(q‖p)`, `f(u) = u log u`
    ForwardKl,
    /// `KL(p‖q)`, `f(u) = −log u`
    ReverseKl,
    /// `χ²(q‖p)`, `f(u) = (u − 1)²/2`
    ChiSquared,
    Mmd,
    /// `α·ReverseKl + β·ChiSquared`
    Mixed { alpha: T, beta: T },
}

impl<T: Scalar> DivergenceSpec<T> {
    pub fn mixed(alpha: T, beta: T) -> Result<Self> {
        let s = DivergenceSpec::Mixed { alpha, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let DivergenceSpec::Mixed { alpha, beta } = *self {
            if !(alpha > T::zero() && beta > T::zero()) {
                return Err(Error::Config("mixed weights must be strictly positive".into()));
            }
            if (alpha + beta - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(4.0)) {
                return Err(Error::Config(format!("mixed weights must sum to 1, got {}", alpha + beta)));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceSpec::ForwardKl => "forward_kl",
            DivergenceSpec::ReverseKl => "reverse_kl",
            DivergenceSpec::ChiSquared => "chi_squared",
            DivergenceSpec::Mmd => "mmd",
            DivergenceSpec::Mixed { .. } => "mixed",
        }
    }

    /// The convex generator `f` with `D_f(q‖p) = ∫ p f(q/p)`; `None` for MMD.
    pub fn generator(&self, u: T) -> Option<T> {
        let half = T::lit(0.5);
        let fwd = |u: T| if u == T::zero() { T::zero() } else { u * u.ln() };
        let rev = |u: T| -u.ln();
        let chi = |u: T| half * (u - T::one()) * (u - T::one());
        match *self {
            DivergenceSpec::ForwardKl => Some(fwd(u)),
            DivergenceSpec::ReverseKl => Some(rev(u)),
            DivergenceSpec::ChiSquared => Some(chi(u)),
            DivergenceSpec::Mmd => None,
            DivergenceSpec::Mixed { alpha, beta } => Some(alpha * rev(u) + beta * chi(u)),
        }
    }
}

impl<T: Scalar> fmt::Display for DivergenceSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceSpec::Mixed { alpha, beta } => write!(f, "mixed(alpha={alpha}, beta={beta})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Kernel plus data (`p`) and generated (`q`) ensembles.
#[derive(Debug, Clone)]
pub struct FieldContext<T> {
    pub kernel: KernelSpec<T>,
    pub data: Ensemble<T>,
    pub generated: Ensemble<T>,
    pub log_ratio_clamp: T,
    /// Take the zero subgradient where a kernel has a cusp (Laplace at
    /// `r = 0`, hit by every particle's own term in `q`) instead of failing.
    pub zero_at_cusp: bool,
}

impl<T: Scalar> FieldContext<T> {
    pub fn new(kernel: KernelSpec<T>, data: Ensemble<T>, generated: Ensemble<T>) -> Result<Self> {
        let g = kernel.geometry();
        if data.geometry() != g || generated.geometry() != g {
            return Err(Error::Config(format!(
                "kernel {:?}, data {:?} and generated {:?} geometries must match",
                g,
                data.geometry(),
                generated.geometry()
            )));
        }
        Ok(Self { kernel, data, generated, log_ratio_clamp: T::lit(DEFAULT_LOG_RATIO_CLAMP), zero_at_cusp: false })
    }

    pub fn with_log_ratio_clamp(mut self, clamp: T) -> Self {
        self.log_ratio_clamp = clamp;
        self
    }

    pub fn with_zero_at_cusp(mut self, enabled: bool) -> Self {
        self.zero_at_cusp = enabled;
        self
    }

    fn check_query(&self, x: &[T]) -> Result<()> {
        self.kernel.geometry().check_point(x)
    }

    fn clamped_ratio(&self, log_num: T, log_den: T) -> T {
        let c = self.log_ratio_clamp;
        (log_num - log_den).max(-c).min(c).exp()
    }
}

/// Softmax-normalized kernel-weighted mean of `y − x` (ambient).
fn mean_displacement<T: Scalar>(kernel: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<Vec<T>> {
    let (logs, max) = kde::log_weights(kernel, support, x, None, false)?;
    let mut num = vec![T::zero(); x.len()];
    let mut den = T::zero();
    for (y, &l) in support.iter().zip(&logs) {
        let k = (l - max).exp();
        den += k;
        for ((a, &yj), &xj) in num.iter_mut().zip(y).zip(x) {
            *a += k * (yj - xj);
        }
    }
    Ok(num.into_iter().map(|a| a / den).collect())
}

/// `V_{p,q}(x) = V⁺_p(x) − V⁻_q(x)`, tangent-projected on the sphere.
pub fn drifting_field<T: Scalar>(ctx: &FieldContext<T>, x: &[T]) -> Result<Vec<T>> {
    ctx.check_query(x)?;
    drifting_unchecked(ctx, x)
}

fn drifting_unchecked<T: Scalar>(ctx: &FieldContext<T>, x: &[T]) -> Result<Vec<T>> {
    let plus = mean_displacement(&ctx.kernel, &ctx.data, x)?;
    let minus = mean_displacement(&ctx.kernel, &ctx.generated, x)?;
    let mut v: Vec<T> = plus.iter().zip(&minus).map(|(&a, &b)| a - b).collect();
    ctx.kernel.geometry().project_in_place(x, &mut v);
    Ok(v)
}

/// Velocity of the chosen divergence's flow at `x`.
pub fn velocity<T: Scalar>(spec: &DivergenceSpec<T>, ctx: &FieldContext<T>, x: &[T]) -> Result<Vec<T>> {
    spec.validate()?;
    ctx.check_query(x)?;
    velocity_unchecked(spec, ctx, x)
}

fn velocity_unchecked<T: Scalar>(spec: &DivergenceSpec<T>, ctx: &FieldContext<T>, x: &[T]) -> Result<Vec<T>> {
    let p: KdeEval<T> = kde::eval_unchecked(&ctx.kernel, &ctx.data, x, ctx.zero_at_cusp)?;
    let q: KdeEval<T> = kde::eval_unchecked(&ctx.kernel, &ctx.generated, x, ctx.zero_at_cusp)?;
    let delta = p.score.iter().zip(&q.score).map(|(&a, &b)| a - b);
    let v = match *spec {
        DivergenceSpec::ForwardKl => delta.collect(),
        DivergenceSpec::ReverseKl => {
            let w = ctx.clamped_ratio(p.log_density, q.log_density);
            delta.map(|d| w * d).collect()
        }
        DivergenceSpec::ChiSquared => {
            let w = ctx.clamped_ratio(q.log_density, p.log_density);
            delta.map(|d| w * d).collect()
        }
        DivergenceSpec::Mixed { alpha, beta } => {
            let wr = ctx.clamped_ratio(p.log_density, q.log_density);
            let wc = ctx.clamped_ratio(q.log_density, p.log_density);
            delta.map(|d| alpha * (wr * d) + beta * (wc * d)).collect()
        }
        DivergenceSpec::Mmd => {
            let dp = p.log_density.exp();
            let dq = q.log_density.exp();
            p.score.iter().zip(&q.score).map(|(&a, &b)| dp * a - dq * b).collect()
        }
    };
    Ok(v)
}

/// What moves particles: a divergence's velocity, or the raw drifting field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VectorField<T> {
    Divergence(DivergenceSpec<T>),
    /// The kernel-generic mean-shift difference; needs no kernel gradient,
    /// so it is defined for Laplace at coincident points.
    Drifting,
}

impl<T: Scalar> From<DivergenceSpec<T>> for VectorField<T> {
    fn from(spec: DivergenceSpec<T>) -> Self {
        VectorField::Divergence(spec)
    }
}

impl<T: Scalar> VectorField<T> {
    pub fn eval(&self, ctx: &FieldContext<T>, x: &[T]) -> Result<Vec<T>> {
        match self {
            VectorField::Divergence(spec) => velocity(spec, ctx, x),
            VectorField::Drifting => drifting_field(ctx, x),
        }
    }

    /// Row-major `n × d` field values at every query, in query order.
    pub fn batch(&self, ctx: &FieldContext<T>, queries: &Ensemble<T>) -> Result<Vec<T>> {
        if let VectorField::Divergence(spec) = self {
            spec.validate()?;
        }
        if queries.geometry() != ctx.kernel.geometry() {
            return Err(Error::Config("query geometry does not match the field".into()));
        }
        let rows: Vec<Vec<T>> = (0..queries.len())
            .into_par_iter()
            .map(|i| {
                let x = queries.point(i);
                match self {
                    VectorField::Divergence(spec) => velocity_unchecked(spec, ctx, x),
                    VectorField::Drifting => drifting_unchecked(ctx, x),
                }
            })
            .collect::<Result<_>>()?;
        Ok(rows.concat())
    }
}

/// Batched [`velocity`].
pub fn field_batch<T: Scalar>(spec: &DivergenceSpec<T>, ctx: &FieldContext<T>, queries: &Ensemble<T>) -> Result<Vec<T>> {
    VectorField::Divergence(*spec).batch(ctx, queries)
}
