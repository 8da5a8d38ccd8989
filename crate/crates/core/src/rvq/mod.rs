//! Shared-codebook residual vector quantization.
//!
//! A latent `z` is approximated by a sum of `R` entries of one `K×d`
//! codebook, each chosen greedily against what the previous picks left
//! over. The codebook is not trained by gradients; it tracks exponential
//! moving averages of the residuals assigned to each entry, and entries
//! that fall out of use are re-seeded from live latents.

mod codebook;
mod format;
mod quantize;

pub use codebook::Codebook;
pub use format::{decode_codebook, decode_codes, encode_codebook, encode_codes};
pub use quantize::{commitment_loss, dequantize, quantize_residual, straight_through, CommitmentMode, QuantizationResult};

use crate::error::{invalid, Error, Result};

/// `n × R` grid of code indices: row `t` holds the `R` residual picks for
/// latent frame `t`, coarse to fine.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    rows: usize,
    depth: usize,
    indices: Vec<usize>,
}

impl CodeMatrix {
    pub fn new(rows: usize, depth: usize, indices: Vec<usize>) -> Result<Self> {
        if rows == 0 || depth == 0 {
            return invalid("code matrix needs at least one row and one depth");
        }
        if indices.len() != rows * depth {
            return invalid(format!("{} indices for a {rows}×{depth} code matrix", indices.len()));
        }
        Ok(CodeMatrix { rows, depth, indices })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let depth = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != depth) {
            return invalid("ragged code rows");
        }
        Self::new(rows.len(), depth, rows.concat())
    }

    /// Latent length `n`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Residual depth `R`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn get(&self, t: usize, w: usize) -> usize {
        self.indices[t * self.depth + w]
    }

    pub fn set(&mut self, t: usize, w: usize, code: usize) {
        self.indices[t * self.depth + w] = code;
    }

    pub fn row(&self, t: usize) -> &[usize] {
        &self.indices[t * self.depth..(t + 1) * self.depth]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [usize] {
        &mut self.indices[t * self.depth..(t + 1) * self.depth]
    }

    /// First `rows` rows.
    pub fn truncated(&self, rows: usize) -> Result<Self> {
        if rows == 0 || rows > self.rows {
            return invalid(format!("cannot truncate {} rows to {rows}", self.rows));
        }
        Self::new(rows, self.depth, self.indices[..rows * self.depth].to_vec())
    }

    /// Checks every index against a vocabulary of size `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= k) {
            Some(&index) => Err(Error::IndexOutOfRange { index, size: k }),
            None => Ok(()),
        }
    }

    pub fn distinct_codes(&self) -> usize {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_matrix_shape_rules() {
        assert!(CodeMatrix::new(0, 1, vec![]).is_err());
        assert!(CodeMatrix::new(2, 2, vec![0; 3]).is_err());
        let mut m = CodeMatrix::from_rows(&[vec![1, 2], vec![3, 0]]).unwrap();
        assert_eq!(m.get(1, 0), 3);
        m.set(1, 0, 5);
        assert!(m.validate(5).is_err());
        assert!(m.validate(6).is_ok());
        assert_eq!(m.truncated(1).unwrap().indices(), &[1, 2]);
        assert_eq!(m.distinct_codes(), 4);
    }
}
