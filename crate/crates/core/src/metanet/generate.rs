use serde::{Deserialize, Serialize};

use super::params::{ItemParams, LayerParams, MetaParams};
use crate::error::{Error, Result};
use crate::model::{DenseLayer, GeneratedModel};
use crate::numkernel::{matmul, matvec, matvec_transposed, relu_slice, Matrix};

/// Intermediates of the item generator for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTape {
    pub pre_left: Vec<f64>,
    pub hidden_left: Vec<f64>,
    pub pre_right: Vec<f64>,
    pub hidden_right: Vec<f64>,
    /// Low-dimensional factor, `s × n`.
    pub low: Matrix,
    /// Rise-dimensional factor, `d_i × s`.
    pub rise: Matrix,
}

/// Intermediates of one layer generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTape {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Everything needed to backpropagate through one user's generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTape {
    pub user_index: usize,
    pub user_embedding: Vec<f64>,
    pub collab: Vec<f64>,
    /// `None` when item embeddings are shared.
    pub items: Option<ItemTape>,
    /// `None` entries when layers are shared.
    pub layers: Vec<Option<LayerTape>>,
}

/// Column `user_index` of the user embedding matrix, as a `d_u × 1` matrix.
pub fn embed_user(theta: &MetaParams, user_index: usize) -> Result<Matrix> {
    let m = theta.user_embeddings.cols();
    if user_index >= m {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: user_index,
            len: m,
        });
    }
    Ok(Matrix::column(theta.user_embeddings.col_to_vec(user_index)))
}

/// `c_u = Mᵀ e_u`: the embedding-weighted sum of the memory rows.
pub fn collaborative_vector(theta: &MetaParams, user_embedding: &Matrix) -> Result<Matrix> {
    user_embedding.ensure_shape("collaborative_vector", (theta.memory.rows(), 1))?;
    Ok(Matrix::column(matvec_transposed(
        &theta.memory,
        user_embedding.as_slice(),
    )?))
}

/// `ReLU(w · x + b)`, returning the pre-activation too.
fn affine_relu(w: &Matrix, b: &Matrix, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pre = matvec(w, x)?;
    for (p, bias) in pre.iter_mut().zip(b.as_slice()) {
        *p += bias;
    }
    let hidden = relu_slice(&pre);
    Ok((pre, hidden))
}

/// Generates `I_u` (`d_i × n`). For shared item embeddings the shared matrix is returned.
pub fn generate_item_embeddings(
    theta: &MetaParams,
    collab: &Matrix,
) -> Result<(Matrix, Option<ItemTape>)> {
    let dims = &theta.dims;
    collab.ensure_shape("generate_item_embeddings", (dims.memory_dim, 1))?;
    match &theta.items {
        ItemParams::Shared(m) => Ok((m.clone(), None)),
        ItemParams::Generated(g) => {
            theta.check_capacity()?;
            let c = collab.as_slice();
            let (pre_left, hidden_left) = affine_relu(&g.w_left, &g.b_left, c)?;
            let low = Matrix::column(matvec(&g.u_left, &hidden_left)?)
                .reshape(dims.low_rank, dims.num_items)?;
            let (pre_right, hidden_right) = affine_relu(&g.w_right, &g.b_right, c)?;
            let rise = Matrix::column(matvec(&g.u_right, &hidden_right)?)
                .reshape(dims.item_dim, dims.low_rank)?;
            let items = matmul(&rise, &low)?;
            Ok((
                items,
                Some(ItemTape {
                    pre_left,
                    hidden_left,
                    pre_right,
                    hidden_right,
                    low,
                    rise,
                }),
            ))
        }
    }
}

/// Generates weights and bias of MLP layer `layer`.
pub fn generate_rp_layer(
    theta: &MetaParams,
    collab: &Matrix,
    layer: usize,
) -> Result<(DenseLayer, Option<LayerTape>)> {
    let shapes = theta.dims.layer_shapes();
    let &(f_out, f_in) = shapes.get(layer).ok_or(Error::IndexOutOfRange {
        what: "layer",
        index: layer,
        len: shapes.len(),
    })?;
    collab.ensure_shape("generate_rp_layer", (theta.dims.memory_dim, 1))?;
    match &theta.layers {
        LayerParams::Shared(ls) => Ok((ls[layer].clone(), None)),
        LayerParams::Generated(gs) => {
            let g = &gs[layer];
            let (pre, hidden) = affine_relu(&g.w_hidden, &g.b_hidden, collab.as_slice())?;
            let mut w = matvec(&g.u_weight, &hidden)?;
            for (x, b) in w.iter_mut().zip(g.b_weight.as_slice()) {
                *x += b;
            }
            let mut b = matvec(&g.u_bias, &hidden)?;
            for (x, bb) in b.iter_mut().zip(g.b_bias.as_slice()) {
                *x += bb;
            }
            Ok((
                DenseLayer {
                    weights: Matrix::from_vec(f_out, f_in, w)?,
                    bias: Matrix::column(b),
                },
                Some(LayerTape { pre, hidden }),
            ))
        }
    }
}

/// Generates the full private model of `user_index` and the tape for backprop.
pub fn generate_model(
    theta: &MetaParams,
    user_index: usize,
) -> Result<(GeneratedModel, GenerationTape)> {
    let e_u = embed_user(theta, user_index)?;
    let c_u = collaborative_vector(theta, &e_u)?;
    let (item_embeddings, item_tape) = generate_item_embeddings(theta, &c_u)?;
    let mut layers = Vec::with_capacity(theta.dims.layer_sizes.len());
    let mut layer_tapes = Vec::with_capacity(layers.capacity());
    for l in 0..theta.dims.layer_sizes.len() {
        let (layer, tape) = generate_rp_layer(theta, &c_u, l)?;
        layers.push(layer);
        layer_tapes.push(tape);
    }
    Ok((
        GeneratedModel {
            item_embeddings,
            layers,
        },
        GenerationTape {
            user_index,
            user_embedding: e_u.into_vec(),
            collab: c_u.into_vec(),
            items: item_tape,
            layers: layer_tapes,
        },
    ))
}
