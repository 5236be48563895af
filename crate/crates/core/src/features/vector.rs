use serde::{Deserialize, Serialize};

/// Sparse real vector: strictly increasing `indices` below `dimension` with
/// parallel finite `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dimension: usize,
}

impl FeatureVector {
    pub fn zeros(dimension: usize) -> Self {
        FeatureVector {
            indices: Vec::new(),
            values: Vec::new(),
            dimension,
        }
    }

    /// Builds from unordered `(index, value)` pairs; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>, dimension: usize) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            assert!(i < dimension, "index {i} out of dimension {dimension}");
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let mut out = FeatureVector {
            indices,
            values,
            dimension,
        };
        out.drop_zeros();
        out
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        FeatureVector {
            indices,
            values,
            dimension: dense.len(),
        }
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != 0.0) {
            return;
        }
        let (indices, values) = self
            .indices
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (*i, *v))
            .unzip();
        self.indices = indices;
        self.values = values;
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// L2 norm of the entries with index below `end`.
    pub fn norm_below(&self, end: usize) -> f64 {
        self.iter()
            .take_while(|(i, _)| *i < end)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out.drop_zeros();
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dimension];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }

    /// Concatenates `other` after this vector's dimension.
    pub fn concat(&self, other: &FeatureVector) -> Self {
        let offset = self.dimension;
        let mut out = self.clone();
        out.indices.extend(other.indices.iter().map(|i| i + offset));
        out.values.extend_from_slice(&other.values);
        out.dimension += other.dimension;
        out
    }

    pub fn is_valid(&self) -> bool {
        self.indices.len() == self.values.len()
            && self.indices.windows(2).all(|w| w[0] < w[1])
            && self.indices.last().is_none_or(|&i| i < self.dimension)
            && self.values.iter().all(|v| v.is_finite())
    }
}
