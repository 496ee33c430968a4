//! Ambient spaces: Euclidean `R^d` and the unit sphere `S^(d-1) ⊂ R^d`.
//!
//! Kernels, scores and integrators are written once against the two
//! operations here: projection onto the tangent space at a point and a
//! retraction that moves a point along a tangent step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Euclidean { dim: usize },
    /// Unit sphere embedded in `R^dim`; `dim` is the ambient dimension.
    Sphere { dim: usize },
}

impl Geometry {
    pub fn euclidean(dim: usize) -> Result<Self> {
        let g = Geometry::Euclidean { dim };
        g.validate()?;
        Ok(g)
    }

    pub fn sphere(dim: usize) -> Result<Self> {
        let g = Geometry::Sphere { dim };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Geometry::Euclidean { dim } if dim < 1 => {
                Err(Error::Config("euclidean dimension must be at least 1".into()))
            }
            Geometry::Sphere { dim } if dim < 2 => {
                Err(Error::Config("sphere ambient dimension must be at least 2".into()))
            }
            _ => Ok(()),
        }
    }

    /// Ambient dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        match *self {
            Geometry::Euclidean { dim } | Geometry::Sphere { dim } => dim,
        }
    }

    #[inline]
    pub fn is_sphere(&self) -> bool {
        matches!(self, Geometry::Sphere { .. })
    }

    /// Checks dimension and, on the sphere, unit norm within the scalar's tolerance.
    pub fn check_point<T: Scalar>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "point has dimension {}, geometry expects {}",
                x.len(),
                self.dim()
            )));
        }
        if self.is_sphere() {
            let n = norm(x);
            if !((n - T::one()).abs() <= T::sphere_tolerance()) {
                return Err(Error::ConstraintViolation(format!(
                    "point is off the unit sphere: ‖x‖ = {n}"
                )));
            }
        } else if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConstraintViolation("point has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// Projects an ambient vector onto the tangent space at `x`.
    pub fn tangent_project<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        if v.len() != x.len() {
            return Err(Error::Config("vector and point dimensions differ".into()));
        }
        let mut out = v.to_vec();
        self.project_in_place(x, &mut out);
        Ok(out)
    }

    /// `v ← v − (xᵀv)x` on the sphere, no-op in Euclidean space. No checks.
    #[inline]
    pub(crate) fn project_in_place<T: Scalar>(&self, x: &[T], v: &mut [T]) {
        if self.is_sphere() {
            project_sphere(x, v);
        }
    }

    /// Moves `x` by a tangent `step`: additive in `R^d`, metric projection
    /// `(x + step)/‖x + step‖` on the sphere.
    pub fn retract<T: Scalar>(&self, x: &[T], step: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        if step.len() != x.len() {
            return Err(Error::Config("step and point dimensions differ".into()));
        }
        let mut out = x.to_vec();
        self.retract_in_place(&mut out, step)?;
        Ok(out)
    }

    pub(crate) fn retract_in_place<T: Scalar>(&self, x: &mut [T], step: &[T]) -> Result<()> {
        if step.iter().all(|s| s.is_zero()) {
            return Ok(());
        }
        for (xi, &si) in x.iter_mut().zip(step) {
            *xi += si;
        }
        if self.is_sphere() {
            let n = norm(x);
            if !(n >= T::retraction_floor()) {
                return Err(Error::DegenerateRetraction { norm: n.to_f64_lossy() });
            }
            for xi in x.iter_mut() {
                *xi /= n;
            }
            // One Newton-like correction pulls the norm to within a few ulps of 1.
            let n2 = norm(x);
            if n2 != T::one() {
                for xi in x.iter_mut() {
                    *xi /= n2;
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn project_sphere<T: Scalar>(x: &[T], v: &mut [T]) {
    let c = dot(x, v);
    for (vi, &xi) in v.iter_mut().zip(x) {
        *vi -= c * xi;
    }
    // Second pass removes the residual normal component left by rounding.
    let c2 = dot(x, v);
    for (vi, &xi) in v.iter_mut().zip(x) {
        *vi -= c2 * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normalize(v: Vec<f64>) -> Vec<f64> {
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn projecting_normal_vector_gives_zero() {
        let g = Geometry::sphere(3).unwrap();
        let p = g.tangent_project(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn tangent_vector_is_unchanged() {
        let g = Geometry::sphere(3).unwrap();
        let p = g.tangent_project(&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn projected_unit_vector_has_norm_sqrt_one_minus_z_squared() {
        let g = Geometry::sphere(3).unwrap();
        let p = g.tangent_project(&[1.0f64, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((norm(&p) - 1.0).abs() < 1e-15);
        let y = normalize(vec![0.6, 0.8, 0.0]);
        let p = g.tangent_project(&[1.0, 0.0, 0.0], &y).unwrap();
        assert!((norm(&p) - (1.0f64 - 0.36).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn euclidean_projection_is_identity() {
        let g = Geometry::euclidean(2).unwrap();
        assert_eq!(g.tangent_project(&[3.0, 4.0], &[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn off_sphere_point_is_rejected() {
        let g = Geometry::sphere(3).unwrap();
        let err = g.tangent_project(&[1.0 + 1e-6, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation(_)));
        // within tolerance is fine
        g.tangent_project(&[1.0 + 1e-10, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
    }

    #[test]
    fn retract_examples() {
        let e = Geometry::euclidean(2).unwrap();
        assert_eq!(e.retract(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        let s = Geometry::sphere(2).unwrap();
        let r = s.retract(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((r[0] - h).abs() < 1e-15 && (r[1] - h).abs() < 1e-15);
        let x = normalize(vec![0.3, -0.2, 0.9]);
        let s3 = Geometry::sphere(3).unwrap();
        assert_eq!(s3.retract(&x, &[0.0; 3]).unwrap(), x);
    }

    #[test]
    fn degenerate_retraction() {
        let s = Geometry::sphere(2).unwrap();
        let err = s.retract(&[1.0, 0.0], &[-1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateRetraction { .. }));
    }

    #[test]
    fn invalid_dimensions() {
        assert!(Geometry::euclidean(0).is_err());
        assert!(Geometry::sphere(1).is_err());
        let g = Geometry::euclidean(2).unwrap();
        assert!(matches!(g.check_point(&[1.0f64]), Err(Error::Config(_))));
    }

    #[test]
    fn f32_geometry_works() {
        let s = Geometry::sphere(2).unwrap();
        let r = s.retract(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap();
        assert!((norm(&r) - 1.0).abs() < 1e-6);
    }

    fn sphere_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, d)
            .prop_filter("non-degenerate", |v| norm(v) > 1e-3)
            .prop_map(normalize)
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_tangent(
            x in sphere_point(4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let g = Geometry::sphere(4).unwrap();
            let p1 = g.tangent_project(&x, &v).unwrap();
            let p2 = g.tangent_project(&x, &p1).unwrap();
            for (a, b) in p1.iter().zip(&p2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(dot(&x, &p1).abs() < 1e-12);
        }

        #[test]
        fn retraction_stays_on_sphere(
            x in sphere_point(3),
            v in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let g = Geometry::sphere(3).unwrap();
            let step = g.tangent_project(&x, &v).unwrap();
            let r = g.retract(&x, &step).unwrap();
            prop_assert!((norm(&r) - 1.0).abs() < 1e-12);
        }
    }
}
