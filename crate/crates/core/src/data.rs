//! Seeded synthetic datasets.

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::rng::SeededStream;
use crate::scalar::{dot, norm, Scalar};

/// Swiss-roll scale: the spiral `(t cos t, t sin t)` for `t ∈ [1.5π, 4.5π]`
/// is divided by this so the data fit in `[−5, 5]²`.
pub const SWISS_ROLL_SCALE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum DatasetKind<T> {
    #[serde(rename = "swiss_roll")]
    SwissRoll2D { n: usize, #[serde(default = "default_noise")] noise: T },
    GaussianRing { n: usize, modes: usize, radius: T, sigma: T },
    TwoGaussians { n: usize, separation: T, sigma: T },
    /// Equal-weight mixture of vMF components on `S^(d−1)`.
    VmfMixture { n: usize, centers: Vec<Vec<T>>, kappa: T },
}

fn default_noise<T: Scalar>() -> T {
    T::lit(0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DatasetSpec<T> {
    #[serde(flatten)]
    pub kind: DatasetKind<T>,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Scalar> DatasetSpec<T> {
    pub fn new(kind: DatasetKind<T>, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn n(&self) -> usize {
        match &self.kind {
            DatasetKind::SwissRoll2D { n, .. }
            | DatasetKind::GaussianRing { n, .. }
            | DatasetKind::TwoGaussians { n, .. }
            | DatasetKind::VmfMixture { n, .. } => *n,
        }
    }

    pub fn with_n(mut self, count: usize) -> Self {
        match &mut self.kind {
            DatasetKind::SwissRoll2D { n, .. }
            | DatasetKind::GaussianRing { n, .. }
            | DatasetKind::TwoGaussians { n, .. }
            | DatasetKind::VmfMixture { n, .. } => *n = count,
        }
        self
    }

    pub fn geometry(&self) -> Result<Geometry> {
        match &self.kind {
            DatasetKind::VmfMixture { centers, .. } => {
                let d = centers.first().map(|c| c.len()).unwrap_or(0);
                Geometry::sphere(d)
            }
            _ => Geometry::euclidean(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        let pos = |v: T, what: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        match &self.kind {
            DatasetKind::SwissRoll2D { noise, .. } => {
                if !(*noise >= T::zero()) {
                    return Err(Error::Config("swiss roll noise must be nonnegative".into()));
                }
            }
            DatasetKind::GaussianRing { modes, radius, sigma, .. } => {
                if *modes == 0 {
                    return Err(Error::Config("ring needs at least one mode".into()));
                }
                pos(*radius, "ring radius")?;
                pos(*sigma, "mode sigma")?;
            }
            DatasetKind::TwoGaussians { separation, sigma, .. } => {
                if !(*separation >= T::zero()) {
                    return Err(Error::Config("separation must be nonnegative".into()));
                }
                pos(*sigma, "sigma")?;
            }
            DatasetKind::VmfMixture { centers, kappa, .. } => {
                pos(*kappa, "kappa")?;
                if centers.is_empty() {
                    return Err(Error::Config("vMF mixture needs at least one center".into()));
                }
                let g = self.geometry()?;
                for c in centers {
                    g.check_point(c)?;
                }
            }
        }
        Ok(())
    }

    /// Component means, where the dataset has any.
    pub fn mode_centers(&self) -> Option<Vec<Vec<T>>> {
        match &self.kind {
            DatasetKind::SwissRoll2D { .. } => None,
            DatasetKind::GaussianRing { modes, radius, .. } => Some(
                (0..*modes)
                    .map(|k| {
                        let a = T::TAU() * T::from_usize(k) / T::from_usize(*modes);
                        vec![*radius * a.cos(), *radius * a.sin()]
                    })
                    .collect(),
            ),
            DatasetKind::TwoGaussians { separation, .. } => {
                let s = *separation / T::lit(2.0);
                Some(vec![vec![-s, T::zero()], vec![s, T::zero()]])
            }
            DatasetKind::VmfMixture { centers, .. } => Some(centers.clone()),
        }
    }

    /// Recommended mode-assignment radius: 3× the component noise scale
    /// (`1/√κ` is the vMF angular scale).
    pub fn mode_radius(&self) -> Option<T> {
        let three = T::lit(3.0);
        match &self.kind {
            DatasetKind::SwissRoll2D { .. } => None,
            DatasetKind::GaussianRing { sigma, .. } | DatasetKind::TwoGaussians { sigma, .. } => Some(three * *sigma),
            DatasetKind::VmfMixture { kappa, .. } => Some(three / kappa.sqrt()),
        }
    }

    pub fn sample(&self) -> Result<Ensemble<T>> {
        sample(self)
    }
}

/// Draws the dataset; identical specs give bitwise-identical ensembles.
pub fn sample<T: Scalar>(spec: &DatasetSpec<T>) -> Result<Ensemble<T>> {
    spec.validate()?;
    let mut rng = SeededStream::new(spec.seed);
    let geometry = spec.geometry()?;
    let n = spec.n();
    let mut pts: Vec<T> = Vec::with_capacity(n * geometry.dim());
    match &spec.kind {
        DatasetKind::SwissRoll2D { noise, .. } => {
            let noise = noise.to_f64_lossy();
            let pi = std::f64::consts::PI;
            for _ in 0..n {
                let t = 1.5 * pi + 3.0 * pi * rng.uniform();
                let x = t * t.cos() / SWISS_ROLL_SCALE + noise * rng.normal();
                let y = t * t.sin() / SWISS_ROLL_SCALE + noise * rng.normal();
                pts.push(T::lit(x));
                pts.push(T::lit(y));
            }
        }
        DatasetKind::GaussianRing { .. } | DatasetKind::TwoGaussians { .. } => {
            let centers = spec.mode_centers().expect("mixture kinds have centers");
            let sigma = match &spec.kind {
                DatasetKind::GaussianRing { sigma, .. } | DatasetKind::TwoGaussians { sigma, .. } => *sigma,
                _ => unreachable!(),
            };
            for _ in 0..n {
                let c = &centers[rng.index(centers.len())];
                for &cj in c {
                    pts.push(cj + sigma * T::lit(rng.normal()));
                }
            }
        }
        DatasetKind::VmfMixture { centers, kappa, .. } => {
            let kappa = kappa.to_f64_lossy();
            for _ in 0..n {
                let c: Vec<f64> = centers[rng.index(centers.len())].iter().map(|v| v.to_f64_lossy()).collect();
                let x = sample_vmf(&mut rng, &c, kappa)?;
                pts.extend(x.into_iter().map(T::lit));
            }
            // renormalize in the target precision
            let d = geometry.dim();
            for row in pts.chunks_exact_mut(d) {
                let s = norm(row);
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
    }
    Ensemble::new(geometry, pts)
}

/// One draw from `vMF(mean, κ)` by Wood's rejection sampler for the cosine
/// `w = xᵀmean`, then the tangent-normal decomposition
/// `x = w·mean + √(1−w²)·v` with `v` uniform on the tangent unit sphere.
pub fn sample_vmf(rng: &mut SeededStream, mean: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let d = mean.len();
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).map_err(|e| Error::Config(format!("beta sampler: {e}")))?;
    let w = loop {
        let z: f64 = beta.sample(rng.inner());
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u = rng.uniform();
        if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w.clamp(-1.0, 1.0);
        }
    };
    let v = loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let proj = dot(&v, mean);
        for (vi, &mi) in v.iter_mut().zip(mean) {
            *vi -= proj * mi;
        }
        let nv = norm(&v);
        if nv > 1e-12 {
            break v.into_iter().map(|x| x / nv).collect::<Vec<f64>>();
        }
    };
    let s = (1.0 - w * w).max(0.0).sqrt();
    let mut x: Vec<f64> = mean.iter().zip(&v).map(|(&m, &vi)| w * m + s * vi).collect();
    let nx = norm(&x);
    for xi in x.iter_mut() {
        *xi /= nx;
    }
    Ok(x)
}
