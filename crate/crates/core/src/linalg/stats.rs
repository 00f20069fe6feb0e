use crate::error::{LordError, Result};
use crate::linalg::matrix::dgemm;
use crate::linalg::Matrix;

/// Streaming first/second moment accumulator over output vectors.
///
/// Holds the token count, the running mean and the *uncentered* sum of outer
/// products `Σ y yᵀ`, all in `f64`. Accumulators over disjoint token sets can
/// be merged, so calibration can be sharded.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputStats {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    moment2: Vec<f64>,
}

impl OutputStats {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "stats dimension must be positive");
        OutputStats { dim, count: 0, mean: vec![0.0; dim], moment2: vec![0.0; dim * dim] }
    }

    /// Rebuild from stored parts (used by the stats container).
    pub fn from_parts(dim: usize, count: u64, mean: Vec<f64>, moment2: Vec<f64>) -> Result<Self> {
        if dim == 0 || mean.len() != dim || moment2.len() != dim * dim {
            return Err(LordError::shape(format!(
                "stats parts do not match dim {dim}: mean {}, moment2 {}",
                mean.len(),
                moment2.len()
            )));
        }
        Ok(OutputStats { dim, count, mean, moment2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `dim × dim` uncentered accumulator `Σ y yᵀ`.
    pub fn moment2(&self) -> &[f64] {
        &self.moment2
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Accumulate the columns of `batch` (`dim × n`).
    pub fn update(&mut self, batch: &Matrix) -> Result<()> {
        let (d, n) = batch.shape();
        if d != self.dim {
            return Err(LordError::shape(format!(
                "batch has {d} rows, stats expect {}",
                self.dim
            )));
        }
        let y = batch.to_f64();
        let yt = batch.transpose().to_f64();
        let outer = dgemm(&y, &yt, d, n, d);
        self.moment2.iter_mut().zip(&outer).for_each(|(m, o)| *m += o);

        let total = self.count + n as u64;
        for i in 0..d {
            let row_sum: f64 = y[i * n..(i + 1) * n].iter().sum();
            self.mean[i] = (self.count as f64 * self.mean[i] + row_sum) / total as f64;
        }
        self.count = total;
        Ok(())
    }

    /// Combine with an accumulator over a disjoint token set.
    pub fn merge(&self, other: &OutputStats) -> Result<OutputStats> {
        if self.dim != other.dim {
            return Err(LordError::shape(format!(
                "cannot merge stats of dim {} and {}",
                self.dim, other.dim
            )));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let total = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let mean = self
            .mean
            .iter()
            .zip(&other.mean)
            .map(|(a, b)| (na * a + nb * b) / total as f64)
            .collect();
        let moment2 = self.moment2.iter().zip(&other.moment2).map(|(a, b)| a + b).collect();
        Ok(OutputStats { dim: self.dim, count: total, mean, moment2 })
    }

    /// Symmetrized population covariance `E[yyᵀ] − E[y]E[y]ᵀ` in `f64`.
    pub fn covariance_f64(&self) -> Result<Vec<f64>> {
        let mut c = self.second_moment_f64()?;
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] -= self.mean[i] * self.mean[j];
            }
        }
        Ok(c)
    }

    /// Symmetrized uncentered second moment `E[yyᵀ]` in `f64`.
    pub fn second_moment_f64(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(LordError::EmptyStats);
        }
        let d = self.dim;
        let n = self.count as f64;
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = 0.5 * (self.moment2[i * d + j] + self.moment2[j * d + i]) / n;
            }
        }
        Ok(c)
    }

    /// Population covariance downcast to `f32`.
    pub fn covariance(&self) -> Result<Matrix> {
        let c = self.covariance_f64()?;
        let m = Matrix::from_f64(self.dim, self.dim, &c)?;
        if !m.all_finite() {
            return Err(LordError::Numerical("covariance has non-finite entries".into()));
        }
        Ok(m)
    }
}

/// Functional form of [`OutputStats::update`].
pub fn stats_update(stats: &OutputStats, batch: &Matrix) -> Result<OutputStats> {
    let mut s = stats.clone();
    s.update(batch)?;
    Ok(s)
}

/// Functional form of [`OutputStats::merge`].
pub fn stats_merge(a: &OutputStats, b: &OutputStats) -> Result<OutputStats> {
    a.merge(b)
}

/// Functional form of [`OutputStats::covariance`].
pub fn covariance(stats: &OutputStats) -> Result<Matrix> {
    stats.covariance()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_has_zero_covariance() {
        let mut s = OutputStats::new(3);
        s.update(&Matrix::new(3, 1, vec![1.0, -2.0, 5.0]).unwrap()).unwrap();
        assert_eq!(s.covariance().unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn two_basis_vectors() {
        let mut s = OutputStats::new(2);
        s.update(&Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let c = s.covariance().unwrap();
        assert_eq!(c.as_slice(), &[0.25, -0.25, -0.25, 0.25]);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut s = OutputStats::new(2);
        s.update(&Matrix::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap()).unwrap();
        let e = OutputStats::new(2);
        assert_eq!(s.merge(&e).unwrap(), s);
        assert_eq!(e.merge(&s).unwrap(), s);
    }

    #[test]
    fn empty_covariance_errors() {
        assert!(matches!(OutputStats::new(2).covariance(), Err(LordError::EmptyStats)));
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = OutputStats::new(2);
        assert!(matches!(s.update(&Matrix::zeros(3, 1)), Err(LordError::Shape(_))));
        assert!(matches!(s.merge(&OutputStats::new(3)), Err(LordError::Shape(_))));
        assert!(OutputStats::from_parts(2, 0, vec![0.0; 2], vec![0.0; 3]).is_err());
    }
}
