use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Numeric rows for one graph slot of a prompt.
///
/// Each row is `feature segment || positional segment`; the positional
/// segment is empty (`lap_dim == 0`) for the hop and center-only layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    rows: Matrix,
    pad_mask: Vec<bool>,
    lap_dim: usize,
}

impl EmbeddingSequence {
    pub fn new(rows: Matrix, pad_mask: Vec<bool>, lap_dim: usize) -> Result<Self> {
        if pad_mask.len() != rows.rows() {
            return Err(Error::shape(format!(
                "pad mask has {} entries for {} rows",
                pad_mask.len(),
                rows.rows()
            )));
        }
        if lap_dim > rows.cols() {
            return Err(Error::shape("positional segment wider than row"));
        }
        if let Some(pos) = rows.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / rows.cols().max(1),
                col: pos % rows.cols().max(1),
            });
        }
        Ok(Self {
            rows,
            pad_mask,
            lap_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows.cols() - self.lap_dim
    }

    pub fn lap_dim(&self) -> usize {
        self.lap_dim
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }
}
