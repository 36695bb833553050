use serde::{Deserialize, Serialize};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Matrix {
    /// Panics when `data.len() != n_rows * n_cols`.
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "matrix shape mismatch");
        Self { data, n_rows, n_cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { data, n_rows: rows.len(), n_cols }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { data: vec![0.0; n_rows * n_cols], n_rows, n_cols }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, col)).collect()
    }

    /// Appends columns given as per-row values.
    pub fn hstack(&self, extra: &[Vec<f64>]) -> Matrix {
        let k = extra.first().map_or(0, Vec::len);
        assert_eq!(extra.len(), self.n_rows);
        let n_cols = self.n_cols + k;
        let mut data = Vec::with_capacity(self.n_rows * n_cols);
        for (r, e) in extra.iter().enumerate() {
            assert_eq!(e.len(), k);
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(e);
        }
        Matrix { data, n_rows: self.n_rows, n_cols }
    }
}
