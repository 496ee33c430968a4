//! Sample-quality metrics: biased MMD² and mode coverage.
//!
//! `mmd2_biased` reports `‖m_X − m_Y‖²` (V-statistic, diagonal terms kept,
//! no ½ factor), so it is exactly zero on identical ensembles and never
//! negative.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::scalar::{dist_sq, Scalar};

fn weighted_gram_sum<T: Scalar>(k: &KernelSpec<T>, a: &Ensemble<T>, b: &Ensemble<T>) -> T {
    let rows: Vec<T> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let x = a.point(i);
            let s: T = b.iter().enumerate().map(|(j, y)| b.weight(j) * k.eval_unchecked(x, y)).sum();
            a.weight(i) * s
        })
        .collect();
    rows.into_iter().sum()
}

/// Total order on ensembles used to fix the summation order of the cross term.
fn canonical_order<T: Scalar>(a: &Ensemble<T>, b: &Ensemble<T>) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.as_flat()
            .iter()
            .zip(b.as_flat())
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    })
}

/// Biased (V-statistic) squared MMD between two weighted ensembles.
pub fn mmd2_biased<T: Scalar>(kernel: &KernelSpec<T>, x: &Ensemble<T>, y: &Ensemble<T>) -> Result<T> {
    if x.geometry() != kernel.geometry() || y.geometry() != kernel.geometry() {
        return Err(Error::Config("ensembles must share the kernel's geometry".into()));
    }
    let xx = weighted_gram_sum(kernel, x, x);
    let yy = weighted_gram_sum(kernel, y, y);
    let xy = match canonical_order(x, y) {
        Ordering::Greater => weighted_gram_sum(kernel, y, x),
        _ => weighted_gram_sum(kernel, x, y),
    };
    Ok(((xx + yy) - T::lit(2.0) * xy).max(T::zero()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub modes_covered: usize,
    pub per_mode_counts: Vec<usize>,
    /// Fraction of particles within `radius` of their nearest center.
    pub precision: f64,
}

/// Assigns each particle to its nearest center if it lies within `radius`.
pub fn mode_report<T: Scalar>(particles: &Ensemble<T>, centers: &[Vec<T>], radius: T) -> Result<ModeReport> {
    if centers.is_empty() {
        return Err(Error::InvalidInput("at least one mode center required".into()));
    }
    if centers.iter().any(|c| c.len() != particles.dim()) {
        return Err(Error::InvalidInput("center dimension differs from particles".into()));
    }
    let r2 = radius * radius;
    let mut counts = vec![0usize; centers.len()];
    for x in particles.iter() {
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, dist_sq(x, c)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
            .expect("centers non-empty");
        if d2 <= r2 {
            counts[best] += 1;
        }
    }
    let inside: usize = counts.iter().sum();
    Ok(ModeReport {
        modes_covered: counts.iter().filter(|&&c| c > 0).count(),
        precision: inside as f64 / particles.len() as f64,
        per_mode_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::rng::SeededStream;

    fn ens(d: usize, pts: Vec<f64>) -> Ensemble<f64> {
        Ensemble::new(Geometry::Euclidean { dim: d }, pts).unwrap()
    }

    #[test]
    fn mmd_of_identical_sets_is_exactly_zero() {
        let mut rng = SeededStream::new(1);
        let x = ens(2, (0..40).map(|_| rng.normal()).collect());
        let k = KernelSpec::gaussian(0.7, 2).unwrap();
        assert_eq!(mmd2_biased(&k, &x, &x.clone()).unwrap(), 0.0);
    }

    #[test]
    fn mmd_two_singletons() {
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        let v = mmd2_biased(&k, &ens(1, vec![0.0]), &ens(1, vec![1.0])).unwrap();
        assert!((v - 2.0 * (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((v - 0.786939).abs() < 1e-6);
    }

    #[test]
    fn mmd_symmetric_and_permutation_invariant() {
        let mut rng = SeededStream::new(2);
        let k = KernelSpec::gaussian(0.5, 2).unwrap();
        let x = ens(2, (0..30).map(|_| rng.normal()).collect());
        let y = ens(2, (0..50).map(|_| 1.0 + rng.normal()).collect());
        assert_eq!(mmd2_biased(&k, &x, &y).unwrap(), mmd2_biased(&k, &y, &x).unwrap());
        let mut rows: Vec<Vec<f64>> = x.iter().map(|r| r.to_vec()).collect();
        rows.reverse();
        let xp = Ensemble::from_rows(x.geometry(), &rows).unwrap();
        let a = mmd2_biased(&k, &x, &y).unwrap();
        let b = mmd2_biased(&k, &xp, &y).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn mmd_decreases_along_homotopy() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap();
        let x = ens(2, vec![0.0, 0.0, 1.0, 0.5]);
        let y0 = [3.0, -1.0, 4.0, 2.0];
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let y: Vec<f64> = y0.iter().zip(x.as_flat()).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let m = mmd2_biased(&k, &x, &ens(2, y)).unwrap();
            assert!(m <= last);
            last = m;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn mode_report_examples() {
        let centers: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 4.0;
                vec![4.0 * a.cos(), 4.0 * a.sin()]
            })
            .collect();
        let at = ens(2, centers.concat());
        let r = mode_report(&at, &centers, 0.1).unwrap();
        assert_eq!((r.modes_covered, r.precision), (8, 1.0));
        assert_eq!(r.per_mode_counts, vec![1; 8]);

        let one = ens(2, [centers[2].clone(), centers[2].clone()].concat());
        assert_eq!(mode_report(&one, &centers, 0.1).unwrap().modes_covered, 1);

        let far = ens(2, vec![0.0, 0.2]);
        let c = vec![vec![0.0, 0.0]];
        let r = mode_report(&far, &c, 0.1).unwrap();
        assert_eq!((r.modes_covered, r.precision), (0, 0.0));
        assert!(mode_report(&far, &[], 0.1).is_err());
    }
}
