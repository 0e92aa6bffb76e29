//! Per-user generated artifacts shared between the server and devices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// One affine layer: `weights` is `f_out × f_in`, `bias` is `f_out × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn zeros(f_out: usize, f_in: usize) -> Self {
        Self {
            weights: Matrix::zeros(f_out, f_in),
            bias: Matrix::zeros(f_out, 1),
        }
    }

    pub fn f_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn f_out(&self) -> usize {
        self.weights.rows()
    }
}

/// A user's private item embeddings (`d_i × n`) and rating-prediction MLP.
///
/// The same shape also carries gradients with respect to those fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedModel {
    pub item_embeddings: Matrix,
    pub layers: Vec<DenseLayer>,
}

impl GeneratedModel {
    pub fn zeros_like(&self) -> Self {
        Self {
            item_embeddings: Matrix::zeros(
                self.item_embeddings.rows(),
                self.item_embeddings.cols(),
            ),
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.f_out(), l.f_in()))
                .collect(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_embeddings.cols()
    }

    pub fn item_dim(&self) -> usize {
        self.item_embeddings.rows()
    }

    pub fn param_count(&self) -> usize {
        self.item_embeddings.len()
            + self
                .layers
                .iter()
                .map(|l| l.weights.len() + l.bias.len())
                .sum::<usize>()
    }

    /// Checks `other` has exactly the same field shapes.
    pub fn ensure_congruent(&self, other: &GeneratedModel) -> Result<()> {
        other
            .item_embeddings
            .ensure_shape("item embeddings", self.item_embeddings.shape())?;
        if other.layers.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "expected {} layers, found {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            b.weights.ensure_shape("layer weights", a.weights.shape())?;
            b.bias.ensure_shape("layer bias", a.bias.shape())?;
        }
        Ok(())
    }

    /// Validates the MLP chain: first layer reads `d_i`, layers connect, last outputs a scalar.
    pub fn validate(&self) -> Result<()> {
        let mut f_in = self.item_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.f_in() != f_in || layer.bias.shape() != (layer.f_out(), 1) {
                return Err(Error::Dimension(format!(
                    "layer {l} has shape {:?} with bias {:?}, expected input width {f_in}",
                    layer.weights.shape(),
                    layer.bias.shape()
                )));
            }
            f_in = layer.f_out();
        }
        if self.layers.is_empty() || f_in != 1 {
            return Err(Error::Dimension(
                "final layer must produce a single rating".into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.item_embeddings.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weights.is_finite() && l.bias.is_finite())
    }
}
