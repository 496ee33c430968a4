//! Sample-based KDE: density, score and mean-shift target.
//!
//! All three are computed from one pass over the support with log-sum-exp
//! stabilization, so scores stay well defined in the far field where every
//! individual kernel value underflows.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::scalar::Scalar;

/// Log-density and score of a KDE at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeEval<T> {
    pub log_density: T,
    /// `∇ log μ_kde(x)`; tangent at `x` on the sphere.
    pub score: Vec<T>,
}

pub(crate) fn check_inputs<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<()> {
    if support.geometry() != spec.geometry() {
        return Err(Error::Config(format!(
            "support geometry {:?} does not match kernel geometry {:?}",
            support.geometry(),
            spec.geometry()
        )));
    }
    if support.is_empty() {
        return Err(Error::InvalidInput("empty support ensemble".into()));
    }
    spec.geometry().check_point(x)
}

/// Stabilized log-weights `log w_i + log k(x, y_i)` and their maximum.
///
/// With `zero_at_cusp`, a pair without a gradient (Laplace at `r = 0`) gets
/// the minimal-norm subgradient, zero, instead of an error.
pub(crate) fn log_weights<T: Scalar>(
    spec: &KernelSpec<T>,
    support: &Ensemble<T>,
    x: &[T],
    score_weights: Option<&mut Vec<T>>,
    zero_at_cusp: bool,
) -> Result<(Vec<T>, T)> {
    let n = support.len();
    let uniform = -T::from_usize(n).ln();
    let mut logs = Vec::with_capacity(n);
    let mut max = T::neg_infinity();
    let mut sw = score_weights;
    if let Some(sw) = sw.as_deref_mut() {
        sw.clear();
        sw.reserve(n);
    }
    for (i, y) in support.iter().enumerate() {
        let terms = spec.pair_terms(x, y);
        let lw = match support.weights() {
            Some(w) => w[i].ln(),
            None => uniform,
        };
        let l = lw + terms.log_k;
        if l > max {
            max = l;
        }
        logs.push(l);
        if let Some(sw) = sw.as_deref_mut() {
            match terms.score_weight {
                Some(w) => sw.push(w),
                None if zero_at_cusp => sw.push(T::zero()),
                None => {
                    return Err(Error::UndefinedGradient(format!(
                        "{} kernel score at support point {i} (query coincides with it)",
                        spec.family().name()
                    )))
                }
            }
        }
    }
    Ok((logs, max))
}

pub(crate) fn eval_unchecked<T: Scalar>(
    spec: &KernelSpec<T>,
    support: &Ensemble<T>,
    x: &[T],
    zero_at_cusp: bool,
) -> Result<KdeEval<T>> {
    let d = x.len();
    let mut sw = Vec::new();
    let (logs, max) = log_weights(spec, support, x, Some(&mut sw), zero_at_cusp)?;
    let mut total = T::zero();
    let mut acc = vec![T::zero(); d];
    let sphere = spec.geometry().is_sphere();
    for ((y, &l), &w) in support.iter().zip(&logs).zip(&sw) {
        let e = (l - max).exp();
        total += e;
        let c = e * w;
        if sphere {
            for (a, &yj) in acc.iter_mut().zip(y) {
                *a += c * yj;
            }
        } else {
            for ((a, &yj), &xj) in acc.iter_mut().zip(y).zip(x) {
                *a += c * (yj - xj);
            }
        }
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    spec.geometry().project_in_place(x, &mut acc);
    Ok(KdeEval { log_density: max + total.ln(), score: acc })
}

/// Log-density and score together.
pub fn kde_eval<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<KdeEval<T>> {
    check_inputs(spec, support, x)?;
    eval_unchecked(spec, support, x, false)
}

pub fn kde_log_density<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<T> {
    check_inputs(spec, support, x)?;
    let (logs, max) = log_weights(spec, support, x, None, false)?;
    Ok(max + logs.iter().map(|&l| (l - max).exp()).sum::<T>().ln())
}

/// `μ_kde(x) = Σ w_i k(x, y_i)`.
pub fn kde_density<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<T> {
    kde_log_density(spec, support, x).map(|l| l.exp())
}

/// `∇ log μ_kde(x)`.
pub fn kde_score<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<Vec<T>> {
    kde_eval(spec, support, x).map(|e| e.score)
}

/// `∇ μ_kde(x) = μ_kde(x) · ∇ log μ_kde(x)`.
pub fn kde_grad<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<Vec<T>> {
    let e = kde_eval(spec, support, x)?;
    let p = e.log_density.exp();
    Ok(e.score.into_iter().map(|s| s * p).collect())
}

/// Kernel-weighted conditional mean `E[y | x]` (ambient, not projected).
pub fn mean_shift_target<T: Scalar>(spec: &KernelSpec<T>, support: &Ensemble<T>, x: &[T]) -> Result<Vec<T>> {
    check_inputs(spec, support, x)?;
    let (logs, max) = log_weights(spec, support, x, None, false)?;
    let mut total = T::zero();
    let mut acc = vec![T::zero(); x.len()];
    for (y, &l) in support.iter().zip(&logs) {
        let e = (l - max).exp();
        total += e;
        for (a, &yj) in acc.iter_mut().zip(y) {
            *a += e * yj;
        }
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::kernels::{KernelFamily, MaternNu};
    use crate::rng::SeededStream;
    use crate::scalar::{dot, norm};

    fn euclid(rows: &[Vec<f64>]) -> Ensemble<f64> {
        Ensemble::from_rows(Geometry::Euclidean { dim: rows[0].len() }, rows).unwrap()
    }

    fn random_support(rng: &mut SeededStream, n: usize, d: usize, sphere: bool) -> Ensemble<f64> {
        let mut pts = Vec::new();
        for _ in 0..n {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let s = if sphere { norm(&v) } else { 1.0 };
            pts.extend(v.iter().map(|x| x / s));
        }
        let g = if sphere { Geometry::Sphere { dim: d } } else { Geometry::Euclidean { dim: d } };
        Ensemble::new(g, pts).unwrap()
    }

    fn random_query(rng: &mut SeededStream, d: usize, sphere: bool) -> Vec<f64> {
        random_support(rng, 1, d, sphere).into_flat()
    }

    /// Central differences of the log-density (through the retraction on the sphere).
    fn fd_score(k: &KernelSpec<f64>, s: &Ensemble<f64>, x: &[f64], eps: f64) -> Vec<f64> {
        let g = k.geometry();
        (0..x.len())
            .map(|j| {
                let mut e = vec![0.0; x.len()];
                e[j] = 1.0;
                let u = g.tangent_project(x, &e).unwrap();
                let xp = g.retract(x, &u.iter().map(|v| eps * v).collect::<Vec<_>>()).unwrap();
                let xm = g.retract(x, &u.iter().map(|v| -eps * v).collect::<Vec<_>>()).unwrap();
                (kde_log_density(k, s, &xp).unwrap() - kde_log_density(k, s, &xm).unwrap()) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn density_examples() {
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        assert_eq!(kde_density(&k, &euclid(&[vec![0.4]]), &[0.4]).unwrap(), 1.0);
        let two = euclid(&[vec![1.0], vec![-1.0]]);
        assert!((kde_density(&k, &two, &[0.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn density_positive_in_far_field_log() {
        let k = KernelSpec::gaussian(0.05, 1).unwrap();
        let s = euclid(&[vec![0.0]]);
        let l = kde_log_density(&k, &s, &[100.0]).unwrap();
        assert!(l.is_finite() && l < -1e6);
        // the score survives total underflow of the kernel values
        let sc = kde_score(&k, &s, &[100.0]).unwrap();
        assert!((sc[0] - (-100.0 / 0.0025)).abs() < 1e-6);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap();
        let s = euclid(&[vec![0.0]]);
        assert!(matches!(kde_density(&k, &s, &[0.0]), Err(Error::Config(_))));
        assert!(matches!(kde_density(&k, &s, &[0.0, 0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn score_examples() {
        let h: f64 = 0.7;
        let k = KernelSpec::gaussian(h, 2).unwrap();
        let y = vec![1.0, -0.5];
        let x = [0.2, 0.3];
        let s = kde_score(&k, &euclid(std::slice::from_ref(&y)), &x).unwrap();
        for j in 0..2 {
            assert!((s[j] - (y[j] - x[j]) / (h * h)).abs() < 1e-14);
        }
        let k1 = KernelSpec::gaussian(1.0, 1).unwrap();
        assert_eq!(kde_score(&k1, &euclid(&[vec![1.0], vec![-1.0]]), &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn laplace_score_at_support_point_errors() {
        let k = KernelSpec::new(KernelFamily::Laplace { h: 1.0 }, Geometry::Euclidean { dim: 1 }).unwrap();
        let s = euclid(&[vec![0.0], vec![1.0]]);
        assert!(matches!(kde_score(&k, &s, &[1.0]), Err(Error::UndefinedGradient(_))));
        assert!(kde_score(&k, &s, &[0.5]).is_ok());
        // density itself is fine at the cusp
        assert!(kde_density(&k, &s, &[1.0]).unwrap() > 0.0);
    }

    #[test]
    fn mean_shift_examples() {
        let k = KernelSpec::gaussian(0.9, 2).unwrap();
        let y = vec![3.0, -1.0];
        assert_eq!(mean_shift_target(&k, &euclid(std::slice::from_ref(&y)), &[0.0, 0.0]).unwrap(), y);
        let m = mean_shift_target(&k, &euclid(&[vec![0.0, 0.0], vec![2.0, 2.0]]), &[0.0, 2.0]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-15 && (m[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_mean_shift_identity() {
        let h: f64 = 1.3;
        let mut rng = SeededStream::new(21);
        for _ in 0..50 {
            let s = random_support(&mut rng, 24, 3, false);
            let k = KernelSpec::gaussian(h, 3).unwrap();
            let x = random_query(&mut rng, 3, false);
            let score = kde_score(&k, &s, &x).unwrap();
            let m = mean_shift_target(&k, &s, &x).unwrap();
            for j in 0..3 {
                assert!((h * h * score[j] + x[j] - m[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_shift_in_convex_hull_box() {
        let mut rng = SeededStream::new(2);
        let s = random_support(&mut rng, 10, 2, false);
        let k = KernelSpec::gaussian(0.5, 2).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| 4.0 * rng.normal()).collect();
            let m = mean_shift_target(&k, &s, &x).unwrap();
            for j in 0..2 {
                let lo = s.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                let hi = s.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                assert!(m[j] >= lo - 1e-12 && m[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn score_matches_finite_differences_all_c1_families() {
        let families = [
            KernelFamily::Gaussian { h: 0.7 },
            KernelFamily::Matern { nu: MaternNu::ThreeHalves, length_scale: 1.0 },
            KernelFamily::Matern { nu: MaternNu::FiveHalves, length_scale: 0.8 },
            KernelFamily::Imq { h: 1.0, beta: 1.0 },
            KernelFamily::VonMisesFisher { kappa: 3.0 },
            KernelFamily::SphericalLog { c: 0.5, a: 0.3 },
        ];
        let mut rng = SeededStream::new(4);
        for f in families {
            let sphere = f.is_spherical();
            let d = 3;
            let g = if sphere { Geometry::Sphere { dim: d } } else { Geometry::Euclidean { dim: d } };
            let k = KernelSpec::new(f, g).unwrap();
            for _ in 0..20 {
                let s = random_support(&mut rng, 16, d, sphere);
                let x = random_query(&mut rng, d, sphere);
                let a = kde_score(&k, &s, &x).unwrap();
                let n = fd_score(&k, &s, &x, 1e-5);
                for (ai, ni) in a.iter().zip(&n) {
                    assert!((ai - ni).abs() < 1e-6, "{f}: {a:?} vs {n:?}");
                }
            }
        }
    }

    #[test]
    fn vmf_score_is_kappa_times_projected_mean_shift() {
        let kappa = 2.5;
        let k = KernelSpec::new(KernelFamily::VonMisesFisher { kappa }, Geometry::Sphere { dim: 3 }).unwrap();
        let mut rng = SeededStream::new(17);
        for _ in 0..100 {
            let s = random_support(&mut rng, 20, 3, true);
            let x = random_query(&mut rng, 3, true);
            let score = kde_score(&k, &s, &x).unwrap();
            let m = mean_shift_target(&k, &s, &x).unwrap();
            let p = k.geometry().tangent_project(&x, &m).unwrap();
            for j in 0..3 {
                assert!((score[j] - kappa * p[j]).abs() < 1e-12);
            }
            assert!(dot(&x, &score).abs() < 1e-12);
        }
    }

    #[test]
    fn density_gradient_bounded_by_mk() {
        let k = KernelSpec::gaussian(0.4, 2).unwrap();
        let bound = k.gradient_bound().unwrap();
        let mut rng = SeededStream::new(12);
        for _ in 0..200 {
            let s = random_support(&mut rng, 8, 2, false);
            let x = random_query(&mut rng, 2, false);
            assert!(norm(&kde_grad(&k, &s, &x).unwrap()) <= bound + 1e-12);
        }
    }

    #[test]
    fn duplicated_point_equals_doubled_weight() {
        let g = Geometry::Euclidean { dim: 2 };
        let k = KernelSpec::gaussian(0.8, 2).unwrap();
        let a = [0.3f64, -0.2];
        let b = [1.1, 0.4];
        let dup = Ensemble::new(g, [a, a, b].concat()).unwrap();
        let weighted = Ensemble::with_weights(g, [a, b].concat(), vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        for x in [[0.0, 0.0], [1.0, 1.0], [-2.0, 0.5]] {
            let e1 = kde_eval(&k, &dup, &x).unwrap();
            let e2 = kde_eval(&k, &weighted, &x).unwrap();
            assert!((e1.log_density.exp() - e2.log_density.exp()).abs() < 1e-12);
            for j in 0..2 {
                assert!((e1.score[j] - e2.score[j]).abs() < 1e-12);
            }
        }
    }
}
