//! Weighted point sets: the empirical stand-in for a probability measure.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::Scalar;

/// `n` points in the ambient space of `geometry`, stored row-major, with
/// optional probability weights (uniform when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    geometry: Geometry,
    points: Vec<T>,
    weights: Option<Vec<T>>,
}

impl<T: Scalar> Ensemble<T> {
    /// Builds an ensemble from row-major coordinates.
    pub fn new(geometry: Geometry, points: Vec<T>) -> Result<Self> {
        Self::build(geometry, points, None)
    }

    pub fn with_weights(geometry: Geometry, points: Vec<T>, weights: Vec<T>) -> Result<Self> {
        Self::build(geometry, points, Some(weights))
    }

    pub fn from_rows(geometry: Geometry, rows: &[Vec<T>]) -> Result<Self> {
        let points = rows.iter().flat_map(|r| r.iter().copied()).collect();
        if rows.iter().any(|r| r.len() != geometry.dim()) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::new(geometry, points)
    }

    fn build(geometry: Geometry, points: Vec<T>, weights: Option<Vec<T>>) -> Result<Self> {
        geometry.validate()?;
        let d = geometry.dim();
        if points.is_empty() {
            return Err(Error::InvalidInput("ensemble must contain at least one point".into()));
        }
        if !points.len().is_multiple_of(d) {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form rows of dimension {d}",
                points.len()
            )));
        }
        for row in points.chunks_exact(d) {
            geometry.check_point(row)?;
        }
        if let Some(w) = &weights {
            if w.len() != points.len() / d {
                return Err(Error::InvalidInput("one weight per point required".into()));
            }
            if w.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
                return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
            }
            let total: T = w.iter().copied().sum();
            let tol = T::lit(1e-12).max(T::epsilon() * T::from_usize(8 * w.len()));
            if (total - T::one()).abs() > tol {
                return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
            }
        }
        Ok(Self { geometry, points, weights })
    }

    #[inline]
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len() / self.dim()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, T> {
        self.points.chunks_exact(self.dim())
    }

    /// Row-major coordinates.
    #[inline]
    pub fn as_flat(&self) -> &[T] {
        &self.points
    }

    pub fn into_flat(self) -> Vec<T> {
        self.points
    }

    pub fn weights(&self) -> Option<&[T]> {
        self.weights.as_deref()
    }

    /// Weight of point `i` (`1/n` when uniform).
    #[inline]
    pub fn weight(&self, i: usize) -> T {
        match &self.weights {
            Some(w) => w[i],
            None => T::from_usize(self.len()).recip(),
        }
    }

    /// Replaces the coordinates in place, keeping geometry and weights. The
    /// caller guarantees the geometry constraint.
    pub(crate) fn set_flat_unchecked(&mut self, points: Vec<T>) {
        debug_assert_eq!(points.len(), self.points.len());
        self.points = points;
    }

    /// Subset by row indices (with repetition allowed); weights are dropped.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut pts = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            pts.extend_from_slice(self.point(i));
        }
        Self::new(self.geometry, pts)
    }

    /// Writes `x0,...,x{d-1}[,weight]` CSV with shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        if self.weights.is_some() {
            header.push("weight".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(d + 1);
        for (i, row) in self.iter().enumerate() {
            record.clear();
            record.extend(row.iter().map(|v| format_scalar(*v)));
            if let Some(ws) = &self.weights {
                record.push(format_scalar(ws[i]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the CSV format of [`write_csv`](Self::write_csv). The
    /// dimension comes from the header; on the sphere it must equal the
    /// geometry's ambient dimension.
    pub fn read_csv<R: Read>(reader: R, sphere: bool) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = r.headers()?.clone();
        let has_weight = header.iter().next_back() == Some("weight");
        let d = header.len() - usize::from(has_weight);
        for (j, name) in header.iter().take(d).enumerate() {
            if name != format!("x{j}") {
                return Err(Error::InvalidInput(format!("unexpected CSV column '{name}' at {j}")));
            }
        }
        let geometry = if sphere { Geometry::sphere(d)? } else { Geometry::euclidean(d)? };
        let mut pts = Vec::new();
        let mut ws = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::InvalidInput("CSV row length differs from header".into()));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("cannot parse '{field}' as a number")))?;
                if j < d {
                    pts.push(T::lit(v));
                } else {
                    ws.push(T::lit(v));
                }
            }
        }
        if has_weight {
            Self::with_weights(geometry, pts, ws)
        } else {
            Self::new(geometry, pts)
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, sphere: bool) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), sphere)
    }
}

/// Shortest decimal that round-trips through the scalar's binary format.
pub fn format_scalar<T: Scalar>(v: T) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_empty_and_bad_weights() {
        let g = Geometry::Euclidean { dim: 2 };
        assert!(Ensemble::<f64>::new(g, vec![]).is_err());
        assert!(Ensemble::new(g, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Ensemble::with_weights(g, vec![0.0, 0.0, 1.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(Ensemble::with_weights(g, vec![0.0, 0.0, 1.0, 1.0], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn rejects_off_sphere_points() {
        let g = Geometry::Sphere { dim: 2 };
        assert!(matches!(Ensemble::new(g, vec![0.9, 0.0]), Err(Error::ConstraintViolation(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let g = Geometry::Euclidean { dim: 2 };
        let e = Ensemble::with_weights(g, vec![0.1, -2.0, 3.5, 1e-300], vec![0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x0,x1,weight\n0.1,-2.0,0.5\n3.5,1e-300,0.5\n");
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Ensemble::<f64>::read_csv("x0,x1\n1,abc\n".as_bytes(), false).is_err());
        assert!(Ensemble::<f64>::read_csv("a,b\n1,2\n".as_bytes(), false).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20)
        ) {
            let g = Geometry::Euclidean { dim: 3 };
            let e = Ensemble::from_rows(g, &rows).unwrap();
            let mut buf = Vec::new();
            e.write_csv(&mut buf).unwrap();
            let back = Ensemble::<f64>::read_csv(buf.as_slice(), false).unwrap();
            prop_assert_eq!(back, e);
        }
    }
}
