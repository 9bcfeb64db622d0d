use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub weight: f64,
}

/// Compact weighted sampling matrix `S ∈ R^{n×s}`: column `j` is
/// `weight_j · e_{index_j}`. Never stored densely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSampleSet {
    source_size: usize,
    samples: Vec<Sample>,
}

impl WeightedSampleSet {
    pub fn new(source_size: usize, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.index >= source_size {
                return Err(Error::IndexOutOfRange {
                    index: s.index,
                    len: source_size,
                });
            }
            if !(s.weight > 0.0 && s.weight.is_finite()) {
                return Err(Error::Parameter(format!(
                    "sample weight {} for index {} must be positive and finite",
                    s.weight, s.index
                )));
            }
        }
        Ok(Self {
            source_size,
            samples,
        })
    }

    pub fn empty(source_size: usize) -> Self {
        Self {
            source_size,
            samples: Vec::new(),
        }
    }

    /// Every index once with unit weight (`S = I_n`).
    pub fn full(source_size: usize) -> Self {
        Self::uniform_weight((0..source_size).collect(), source_size, 1.0)
    }

    pub(crate) fn uniform_weight(indices: Vec<usize>, source_size: usize, weight: f64) -> Self {
        Self {
            source_size,
            samples: indices
                .into_iter()
                .map(|index| Sample { index, weight })
                .collect(),
        }
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.index).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight).collect()
    }

    /// Dense `n×s` form. Test and diagnostic use only.
    pub fn materialize(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.source_size, self.samples.len());
        for (j, s) in self.samples.iter().enumerate() {
            m.set(s.index, j, s.weight);
        }
        m
    }

    /// `Sᵀ M`: the sampled rows of `m`, each scaled by its weight.
    pub fn sketch_rows(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(m.rows(), self.source_size, "sketch_rows: row count mismatch");
        DenseMatrix::from_fn(self.samples.len(), m.cols(), |j, c| {
            let s = self.samples[j];
            s.weight * m.get(s.index, c)
        })
    }

    /// `Sᵀ M S` for square `m`.
    pub fn sketch_gram(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(m.shape(), (self.source_size, self.source_size));
        let s = &self.samples;
        DenseMatrix::from_fn(s.len(), s.len(), |a, b| {
            s[a].weight * s[b].weight * m.get(s[a].index, s[b].index)
        })
    }

    /// `M S` for a matrix with `source_size` columns.
    pub fn sketch_cols(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(m.cols(), self.source_size, "sketch_cols: column count mismatch");
        DenseMatrix::from_fn(m.rows(), self.samples.len(), |r, j| {
            let s = self.samples[j];
            s.weight * m.get(r, s.index)
        })
    }

    /// Re-expresses a sample over positions of `subset` as a sample over the
    /// parent index space, multiplying each weight by `subset_weight`.
    pub(crate) fn lift(&self, subset: &[usize], parent_size: usize, subset_weight: f64) -> Self {
        debug_assert_eq!(self.source_size, subset.len());
        Self {
            source_size: parent_size,
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    index: subset[s.index],
                    weight: s.weight * subset_weight,
                })
                .collect(),
        }
    }

    /// Shifts every index by `offset` into a larger index space.
    pub fn offset(&self, offset: usize, parent_size: usize) -> Result<Self> {
        Self::new(
            parent_size,
            self.samples
                .iter()
                .map(|s| Sample {
                    index: s.index + offset,
                    weight: s.weight,
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn materialize_puts_weight_in_sampled_row() {
        let s = WeightedSampleSet::new(
            4,
            vec![
                Sample { index: 2, weight: 2.0 },
                Sample { index: 0, weight: 0.5 },
            ],
        )
        .unwrap();
        let m = s.materialize();
        assert_eq!(m.shape(), (4, 2));
        assert_eq!(m.get(2, 0), 2.0);
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.frobenius_norm().powi(2), 4.25);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(WeightedSampleSet::new(3, vec![Sample { index: 3, weight: 1.0 }]).is_err());
        assert!(WeightedSampleSet::new(3, vec![Sample { index: 1, weight: 0.0 }]).is_err());
        assert!(WeightedSampleSet::new(3, vec![Sample { index: 1, weight: f64::NAN }]).is_err());
    }

    #[test]
    fn sketches_match_dense_products() {
        let m = DenseMatrix::from_fn(5, 5, |i, j| (i * 5 + j) as f64 * 0.1 + if i == j { 3.0 } else { 0.0 });
        let s = WeightedSampleSet::new(
            5,
            vec![
                Sample { index: 4, weight: 1.5 },
                Sample { index: 1, weight: 0.25 },
                Sample { index: 2, weight: 3.0 },
            ],
        )
        .unwrap();
        let dense = s.materialize();
        let st = dense.transpose();
        let gram = st.matmul(&m).matmul(&dense);
        assert!(gram.sub(&s.sketch_gram(&m)).max_abs() < 1e-12);
        assert!(st.matmul(&m).sub(&s.sketch_rows(&m)).max_abs() < 1e-12);
        assert!(m.matmul(&dense).sub(&s.sketch_cols(&m)).max_abs() < 1e-12);
    }
}
