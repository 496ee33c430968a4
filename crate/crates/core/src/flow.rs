//! Explicit-Euler particle flows with KDE-level energy tracking.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{format_scalar, Ensemble};
use crate::error::{Error, Result};
use crate::kde;
use crate::kernels::KernelFamily;
use crate::metrics::mmd2_biased;
use crate::rng::SeededStream;
use crate::scalar::Scalar;
use crate::velocity::{DivergenceSpec, FieldContext, VectorField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case", bound = "T: Scalar")]
pub enum EnergyEstimator<T> {
    /// Average of `f(q_kde/p_kde)` over `samples` draws from the data KDE
    /// (Gaussian kernels only).
    MonteCarlo { samples: usize },
    /// Midpoint rule on a regular grid of `resolution` cells per axis over
    /// `bounds` (one `[lo, hi]` per axis, `d ≤ 2`).
    Grid { resolution: usize, bounds: Vec<[T; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EnergyConfig<T> {
    #[serde(flatten)]
    pub estimator: EnergyEstimator<T>,
    pub divergence: DivergenceSpec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FlowConfig<T> {
    pub dt: T,
    pub steps: usize,
    #[serde(default = "one")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub energy: Option<EnergyConfig<T>>,
}

fn one() -> usize {
    1
}

impl<T: Scalar> FlowConfig<T> {
    pub fn new(dt: T, steps: usize) -> Self {
        Self { dt, steps, snapshot_every: 1, seed: 0, energy: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt >= T::zero()) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be finite and nonnegative, got {}", self.dt)));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be positive".into()));
        }
        if let Some(e) = &self.energy {
            e.divergence.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub step: usize,
    pub ensemble: Ensemble<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub frames: Vec<Frame<T>>,
    /// `(step, energy)` for each frame, empty when no energy was requested.
    pub energy_series: Vec<(usize, T)>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last(&self) -> &Frame<T> {
        self.frames.last().expect("trajectory has at least one frame")
    }

    /// Writes `frame_{k}.csv` per frame, `frames.csv` mapping frame index to
    /// step, and `energy.csv` when present.
    /// Returns the paths written, in order.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.frames.len() + 1);
        for (k, frame) in self.frames.iter().enumerate() {
            let path = dir.join(format!("frame_{k}.csv"));
            frame.ensemble.save_csv(&path)?;
            written.push(path);
        }
        let path = dir.join("frames.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "frame,step")?;
        for (k, frame) in self.frames.iter().enumerate() {
            writeln!(f, "{k},{}", frame.step)?;
        }
        f.flush()?;
        written.push(path);
        if !self.energy_series.is_empty() {
            let path = dir.join("energy.csv");
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "step,energy")?;
            for (s, e) in &self.energy_series {
                writeln!(f, "{s},{}", format_scalar(*e))?;
            }
            f.flush()?;
            written.push(path);
        }
        Ok(written)
    }
}

/// One explicit Euler step of the generated ensemble; data is untouched.
pub fn step<T: Scalar>(ctx: &FieldContext<T>, field: &VectorField<T>, dt: T) -> Result<FieldContext<T>> {
    if !(dt >= T::zero()) {
        return Err(Error::Config(format!("dt must be nonnegative, got {dt}")));
    }
    let v = field.batch(ctx, &ctx.generated)?;
    let d = ctx.generated.dim();
    if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index: bad / d, what: "velocity".into() });
    }
    let geometry = ctx.kernel.geometry();
    let mut pts = ctx.generated.as_flat().to_vec();
    pts.par_chunks_mut(d)
        .zip(v.par_chunks(d))
        .enumerate()
        .try_for_each(|(i, (x, vi))| {
            let s: Vec<T> = vi.iter().map(|&c| dt * c).collect();
            geometry.retract_in_place(x, &s).map_err(|e| match e {
                Error::DegenerateRetraction { norm } => Error::NonFinite {
                    index: i,
                    what: format!("degenerate retraction (norm {norm:e})"),
                },
                other => other,
            })?;
            if x.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { index: i, what: "position".into() });
            }
            Ok(())
        })?;
    let mut next = ctx.clone();
    next.generated.set_flat_unchecked(pts);
    Ok(next)
}

/// Runs `config.steps` Euler steps, recording frames at step 0, every
/// `snapshot_every` steps, and at the final step.
pub fn run<T: Scalar>(initial: &FieldContext<T>, field: &VectorField<T>, config: &FlowConfig<T>) -> Result<Trajectory<T>> {
    config.validate()?;
    if let Some(m) = initial.kernel.gradient_bound() {
        if config.dt * m > T::one() {
            log::warn!("dt·M_k = {} > 1 for {}; the Euler step may be unstable", config.dt * m, initial.kernel);
        }
    }
    let record = |ctx: &FieldContext<T>, step: usize, traj: &mut Trajectory<T>| -> Result<()> {
        if let Some(e) = &config.energy {
            let value = estimate_energy(ctx, e, config.seed).map_err(|err| Error::AtStep { step, source: Box::new(err) })?;
            traj.energy_series.push((step, value));
        }
        traj.frames.push(Frame { step, ensemble: ctx.generated.clone() });
        Ok(())
    };
    let mut traj = Trajectory { frames: Vec::new(), energy_series: Vec::new() };
    let mut ctx = initial.clone();
    record(&ctx, 0, &mut traj)?;
    for s in 1..=config.steps {
        ctx = step(&ctx, field, config.dt).map_err(|err| Error::AtStep { step: s, source: Box::new(err) })?;
        if s % config.snapshot_every == 0 || s == config.steps {
            record(&ctx, s, &mut traj)?;
        }
    }
    Ok(traj)
}

/// `f(u)` evaluated from `log u`, avoiding an explicit ratio.
fn generator_from_log<T: Scalar>(spec: &DivergenceSpec<T>, log_u: T) -> T {
    let half = T::lit(0.5);
    match *spec {
        DivergenceSpec::ForwardKl => log_u.exp() * log_u,
        DivergenceSpec::ReverseKl => -log_u,
        DivergenceSpec::ChiSquared => {
            let m = log_u.exp_m1();
            half * m * m
        }
        DivergenceSpec::Mixed { alpha, beta } => {
            let m = log_u.exp_m1();
            alpha * (-log_u) + beta * half * m * m
        }
        DivergenceSpec::Mmd => unreachable!("MMD energy is not an f-divergence"),
    }
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// KDE-level energy `D(q_kde‖p_kde)` of the current generated ensemble.
///
/// `seed` drives the Monte Carlo sampler; reusing one seed across a run
/// yields common random numbers, so successive estimates differ only
/// through the particles.
pub fn estimate_energy<T: Scalar>(ctx: &FieldContext<T>, energy: &EnergyConfig<T>, seed: u64) -> Result<T> {
    energy.divergence.validate()?;
    if let DivergenceSpec::Mmd = energy.divergence {
        return mmd2_biased(&ctx.kernel, &ctx.generated, &ctx.data);
    }
    match &energy.estimator {
        EnergyEstimator::Grid { resolution, bounds } => grid_energy(ctx, &energy.divergence, *resolution, bounds),
        EnergyEstimator::MonteCarlo { samples } => mc_energy(ctx, &energy.divergence, *samples, seed),
    }
}

fn grid_energy<T: Scalar>(ctx: &FieldContext<T>, spec: &DivergenceSpec<T>, res: usize, bounds: &[[T; 2]]) -> Result<T> {
    let geometry = ctx.kernel.geometry();
    let d = geometry.dim();
    if geometry.is_sphere() || d > 2 {
        return Err(Error::Unsupported(format!("grid energy needs euclidean d ≤ 2, got {geometry:?}")));
    }
    if bounds.len() != d || res == 0 || bounds.iter().any(|b| !(b[1] > b[0])) {
        return Err(Error::Config("grid energy needs one increasing [lo, hi] per axis and resolution > 0".into()));
    }
    let axes: Vec<Vec<T>> = bounds
        .iter()
        .map(|b| {
            let step = (b[1] - b[0]) / T::from_usize(res);
            (0..res).map(|i| b[0] + (T::from_usize(i) + T::lit(0.5)) * step).collect()
        })
        .collect();
    let log_p = grid_log_density(&ctx.kernel, &ctx.data, &axes)?;
    let log_q = grid_log_density(&ctx.kernel, &ctx.generated, &axes)?;
    let zp = log_sum_exp(&log_p);
    let zq = log_sum_exp(&log_q);
    // Cell volume cancels between the normalized π and the Riemann sum.
    let shift = zq - zp;
    let total: T = log_p
        .par_iter()
        .zip(log_q.par_iter())
        .map(|(&lp, &lq)| (lp - zp).exp() * generator_from_log(spec, (lq - lp) - shift))
        .collect::<Vec<T>>()
        .into_iter()
        .sum();
    Ok(total)
}

/// Log-KDE at every node of the tensor grid `axes` (row-major, last axis fastest).
fn grid_log_density<T: Scalar>(
    kernel: &crate::kernels::KernelSpec<T>,
    support: &Ensemble<T>,
    axes: &[Vec<T>],
) -> Result<Vec<T>> {
    let nodes: Vec<Vec<T>> = match axes {
        [a] => a.iter().map(|&x| vec![x]).collect(),
        [a, b] => a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect(),
        _ => return Err(Error::Unsupported("grid over more than two axes".into())),
    };
    if let (KernelFamily::Gaussian { h }, [a, b]) = (kernel.family(), axes) {
        if let Some(v) = separable_gaussian_grid(*h, support, a, b) {
            return Ok(v);
        }
    }
    nodes.par_iter().map(|x| kde::kde_log_density(kernel, support, x)).collect()
}

/// Gaussian KDE on a 2-D grid via the product structure of the kernel.
/// Returns `None` if any node underflows, so the caller can fall back to
/// the log-space path.
fn separable_gaussian_grid<T: Scalar>(h: T, support: &Ensemble<T>, a: &[T], b: &[T]) -> Option<Vec<T>> {
    let inv = T::one() / (T::lit(2.0) * h * h);
    let n = support.len();
    let factor = |axis: &[T], coord: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(n * axis.len());
        for y in support.iter() {
            out.extend(axis.iter().map(|&g| {
                let d = g - y[coord];
                (-d * d * inv).exp()
            }));
        }
        out
    };
    let fa = factor(a, 0);
    let fb = factor(b, 1);
    let nb = b.len();
    let rows: Vec<Vec<T>> = (0..a.len())
        .into_par_iter()
        .map(|ia| {
            let mut row = vec![T::zero(); nb];
            for i in 0..n {
                let c = support.weight(i) * fa[i * a.len() + ia];
                if c.is_zero() {
                    continue;
                }
                let fbi = &fb[i * nb..(i + 1) * nb];
                for (r, &v) in row.iter_mut().zip(fbi) {
                    *r += c * v;
                }
            }
            row
        })
        .collect();
    let mut out = Vec::with_capacity(a.len() * nb);
    for row in rows {
        for v in row {
            if !v.is_normal() {
                return None;
            }
            out.push(v.ln());
        }
    }
    Some(out)
}

fn mc_energy<T: Scalar>(ctx: &FieldContext<T>, spec: &DivergenceSpec<T>, samples: usize, seed: u64) -> Result<T> {
    let h = ctx.kernel.gaussian_bandwidth().ok_or_else(|| {
        Error::Unsupported("monte carlo energy requires a gaussian kernel (exact KDE sampling)".into())
    })?;
    if samples == 0 {
        return Err(Error::Config("monte carlo energy needs at least one sample".into()));
    }
    let data = &ctx.data;
    let d = data.dim();
    let mut rng = SeededStream::new(seed);
    let cumulative: Option<Vec<f64>> = data.weights().map(|w| {
        let mut acc = 0.0;
        w.iter().map(|v| {
            acc += v.to_f64_lossy();
            acc
        }).collect()
    });
    let mut draws = Vec::with_capacity(samples * d);
    for _ in 0..samples {
        let i = match &cumulative {
            Some(c) => {
                let u = rng.uniform() * c[c.len() - 1];
                c.partition_point(|&v| v <= u).min(c.len() - 1)
            }
            None => rng.index(data.len()),
        };
        for &yj in data.point(i) {
            draws.push(yj + h * T::lit(rng.normal()));
        }
    }
    let terms: Vec<T> = draws
        .par_chunks(d)
        .map(|x| {
            let lp = kde::kde_log_density(&ctx.kernel, &ctx.data, x)?;
            let lq = kde::kde_log_density(&ctx.kernel, &ctx.generated, x)?;
            Ok(generator_from_log(spec, lq - lp))
        })
        .collect::<Result<_>>()?;
    Ok(terms.into_iter().sum::<T>() / T::from_usize(samples))
}
