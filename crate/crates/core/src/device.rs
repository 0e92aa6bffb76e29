//! On-device prediction, local loss and the gradient uploaded to the server.
//!
//! A device only ever sees its own [`GeneratedModel`] and its own shard; it has
//! no access to the meta parameters.

use serde::{Deserialize, Serialize};

use crate::dataset::{Chunk, UserShard};
use crate::error::{Error, Result};
use crate::model::GeneratedModel;
use crate::numkernel::{matvec, matvec_transposed, relu_backward_slice, relu_slice};

#[derive(Debug, Clone)]
pub struct DeviceState<'a> {
    pub user_index: usize,
    pub phi: GeneratedModel,
    pub shard: &'a UserShard,
}

/// dL/dΦ_u for one batch, plus the loss it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalGradient {
    pub grad: GeneratedModel,
    /// Items whose embedding column received gradient, ascending.
    pub touched_items: Vec<usize>,
    pub batch_size: usize,
    pub loss: f64,
}

/// Raw error sums over one chunk, aggregated on the server.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChunkSums {
    pub abs_err: f64,
    pub sq_err: f64,
    pub count: usize,
}

impl ChunkSums {
    pub fn merge(&mut self, other: &ChunkSums) {
        self.abs_err += other.abs_err;
        self.sq_err += other.sq_err;
        self.count += other.count;
    }
}

struct Forward {
    /// Input to each layer; `inputs[0]` is the item embedding.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: f64,
}

impl<'a> DeviceState<'a> {
    pub fn new(phi: GeneratedModel, shard: &'a UserShard) -> Result<Self> {
        phi.validate()?;
        Ok(Self {
            user_index: shard.user_index,
            phi,
            shard,
        })
    }

    fn check_item(&self, item: usize) -> Result<()> {
        let n = self.phi.num_items();
        if item >= n {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: item,
                len: n,
            });
        }
        Ok(())
    }

    fn forward(&self, item: usize) -> Result<Forward> {
        self.check_item(item)?;
        let layers = &self.phi.layers;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len() - 1);
        let mut x = self.phi.item_embeddings.col_to_vec(item);
        for (l, layer) in layers.iter().enumerate() {
            let mut z = matvec(&layer.weights, &x)?;
            for (zi, b) in z.iter_mut().zip(layer.bias.as_slice()) {
                *zi += b;
            }
            inputs.push(x);
            if l + 1 == layers.len() {
                return Ok(Forward {
                    inputs,
                    pre,
                    output: z[0],
                });
            }
            x = relu_slice(&z);
            pre.push(z);
        }
        unreachable!("validated model has at least one layer")
    }

    /// Predicted rating; the output layer is affine and unclipped.
    pub fn predict(&self, item: usize) -> Result<f64> {
        Ok(self.forward(item)?.output)
    }

    /// Mean squared error over `batch`.
    pub fn local_loss(&self, batch: &[(usize, f64)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut sum = 0.0;
        for &(item, r) in batch {
            let residual = r - self.predict(item)?;
            sum += residual * residual;
        }
        Ok(sum / batch.len() as f64)
    }

    /// Exact gradient of [`Self::local_loss`] with respect to every field of Φ_u.
    pub fn local_gradient(&self, batch: &[(usize, f64)]) -> Result<LocalGradient> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let scale = batch.len() as f64;
        let mut grad = self.phi.zeros_like();
        let mut touched = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for &(item, r) in batch {
            let fwd = self.forward(item)?;
            let residual = r - fwd.output;
            loss += residual * residual;
            let mut upstream = vec![2.0 * (fwd.output - r) / scale];
            for l in (0..self.phi.layers.len()).rev() {
                let input = &fwd.inputs[l];
                let g = &mut grad.layers[l];
                let cols = g.weights.cols();
                let w = g.weights.as_mut_slice();
                for (o, &up) in upstream.iter().enumerate() {
                    for (wi, x) in w[o * cols..(o + 1) * cols].iter_mut().zip(input) {
                        *wi += up * x;
                    }
                }
                for (b, up) in g.bias.as_mut_slice().iter_mut().zip(&upstream) {
                    *b += up;
                }
                let back = matvec_transposed(&self.phi.layers[l].weights, &upstream)?;
                upstream = if l > 0 {
                    relu_backward_slice(&fwd.pre[l - 1], &back)
                } else {
                    back
                };
            }
            for (row, d) in upstream.iter().enumerate() {
                let v = grad.item_embeddings.get(row, item) + d;
                grad.item_embeddings.set(row, item, v);
            }
            touched.push(item);
        }
        touched.sort_unstable();
        touched.dedup();
        Ok(LocalGradient {
            grad,
            touched_items: touched,
            batch_size: batch.len(),
            loss: loss / scale,
        })
    }

    /// Absolute and squared error sums over the valid or test chunk.
    pub fn evaluate_local(&self, chunk: Chunk) -> Result<ChunkSums> {
        let mut sums = ChunkSums::default();
        for &(item, r) in self.shard.chunk(chunk) {
            let err = r - self.predict(item)?;
            sums.abs_err += err.abs();
            sums.sq_err += err * err;
            sums.count += 1;
        }
        Ok(sums)
    }
}
