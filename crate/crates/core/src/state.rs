use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// N×D coefficient matrix compressing a D-channel history; each channel is
/// an independent one-dimensional signal.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    coefficients: Array2<f64>,
    blocks_absorbed: usize,
    tokens_absorbed: usize,
}

impl MemoryState {
    pub fn zeros(order: usize, channels: usize) -> Self {
        Self {
            coefficients: Array2::zeros((order, channels)),
            blocks_absorbed: 0,
            tokens_absorbed: 0,
        }
    }

    pub fn from_parts(
        coefficients: Array2<f64>,
        blocks_absorbed: usize,
        tokens_absorbed: usize,
    ) -> Result<Self> {
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients", "non-finite entry"));
        }
        Ok(Self {
            coefficients,
            blocks_absorbed,
            tokens_absorbed,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn coefficients(&self) -> ArrayView2<'_, f64> {
        self.coefficients.view()
    }

    pub fn into_coefficients(self) -> Array2<f64> {
        self.coefficients
    }

    pub fn blocks_absorbed(&self) -> usize {
        self.blocks_absorbed
    }

    pub fn tokens_absorbed(&self) -> usize {
        self.tokens_absorbed
    }

    /// Length of the history window the coefficients describe. Token j is
    /// held over [j, j+1], so after T tokens the window is [0, T].
    pub fn time_horizon(&self) -> f64 {
        self.tokens_absorbed as f64
    }

    /// SHA-256 over (N, D, blocks, tokens, little-endian coefficients), hex.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [
            self.order(),
            self.channel_count(),
            self.blocks_absorbed,
            self.tokens_absorbed,
        ] {
            hasher.update((v as u64).to_le_bytes());
        }
        for v in self.coefficients.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.coefficients.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn advance(self, coefficients: Array2<f64>, blocks: usize, tokens: usize) -> Self {
        Self {
            coefficients,
            blocks_absorbed: self.blocks_absorbed + blocks,
            tokens_absorbed: self.tokens_absorbed + tokens,
        }
    }
}
