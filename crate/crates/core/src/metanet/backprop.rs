use rayon::prelude::*;

use super::generate::GenerationTape;
use super::params::{ItemParams, LayerParams, MetaParams};
use crate::error::{Error, Result};
use crate::model::GeneratedModel;
use crate::numkernel::{matmul, matvec, matvec_transposed, relu_backward_slice, Matrix};

/// One user's contribution to the gradient of a single meta tensor.
///
/// Almost every generator gradient is an outer product of a backpropagated
/// signal and a cached activation, so it is kept in factored form until the
/// round's reduction.
#[derive(Debug, Clone, PartialEq)]
pub enum GradPiece {
    /// `left · rightᵀ`
    Outer { left: Vec<f64>, right: Vec<f64> },
    Dense(Matrix),
    /// Non-zero only in column `col`.
    Column { col: usize, values: Vec<f64> },
}

/// Per-user gradient of the meta parameters, one piece per tensor in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserThetaGrad {
    pub user_index: usize,
    pub pieces: Vec<GradPiece>,
}

impl UserThetaGrad {
    /// Materializes the gradient as a dense [`MetaParams`]-shaped value.
    pub fn to_dense(&self, theta: &MetaParams) -> Result<MetaParams> {
        accumulate(theta, std::slice::from_ref(self))
    }
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Vector-Jacobian product of the generation map for one user.
///
/// `grad_phi` holds dL/dΦ_u with the shapes of the generated model.
pub fn user_theta_gradient(
    theta: &MetaParams,
    tape: &GenerationTape,
    grad_phi: &GeneratedModel,
) -> Result<UserThetaGrad> {
    let dims = &theta.dims;
    grad_phi
        .item_embeddings
        .ensure_shape("item embedding gradient", (dims.item_dim, dims.num_items))?;
    let layer_shapes = dims.layer_shapes();
    if grad_phi.layers.len() != layer_shapes.len() || tape.layers.len() != layer_shapes.len() {
        return Err(Error::Dimension(format!(
            "expected {} layers in gradient and tape, got {} and {}",
            layer_shapes.len(),
            grad_phi.layers.len(),
            tape.layers.len()
        )));
    }
    for (g, &(f_out, f_in)) in grad_phi.layers.iter().zip(&layer_shapes) {
        g.weights.ensure_shape("layer weight gradient", (f_out, f_in))?;
        g.bias.ensure_shape("layer bias gradient", (f_out, 1))?;
    }

    let c = &tape.collab;
    let mut d_collab = vec![0.0; dims.memory_dim];
    let mut item_pieces = Vec::new();
    let mut layer_pieces = Vec::new();

    match (&theta.items, &tape.items) {
        (ItemParams::Generated(g), Some(it)) => {
            let d_items = &grad_phi.item_embeddings;
            // I_u = rise · low
            let d_rise = matmul(d_items, &it.low.transpose())?;
            let d_low = matmul(&it.rise.transpose(), d_items)?;
            let d_low = d_low.into_vec();
            let d_rise = d_rise.into_vec();

            let d_hidden_left = matvec_transposed(&g.u_left, &d_low)?;
            let d_pre_left = relu_backward_slice(&it.pre_left, &d_hidden_left);
            add_into(&mut d_collab, &matvec_transposed(&g.w_left, &d_pre_left)?);

            let d_hidden_right = matvec_transposed(&g.u_right, &d_rise)?;
            let d_pre_right = relu_backward_slice(&it.pre_right, &d_hidden_right);
            add_into(&mut d_collab, &matvec_transposed(&g.w_right, &d_pre_right)?);

            item_pieces.push(GradPiece::Outer {
                left: d_pre_left.clone(),
                right: c.clone(),
            });
            item_pieces.push(GradPiece::Dense(Matrix::column(d_pre_left)));
            item_pieces.push(GradPiece::Outer {
                left: d_low,
                right: it.hidden_left.clone(),
            });
            item_pieces.push(GradPiece::Outer {
                left: d_pre_right.clone(),
                right: c.clone(),
            });
            item_pieces.push(GradPiece::Dense(Matrix::column(d_pre_right)));
            item_pieces.push(GradPiece::Outer {
                left: d_rise,
                right: it.hidden_right.clone(),
            });
        }
        (ItemParams::Shared(_), None) => {
            item_pieces.push(GradPiece::Dense(grad_phi.item_embeddings.clone()));
        }
        _ => return Err(Error::Protocol("tape does not match item variant".into())),
    }

    match &theta.layers {
        LayerParams::Generated(gens) => {
            for ((g, lt), dl) in gens.iter().zip(&tape.layers).zip(&grad_phi.layers) {
                let lt = lt
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("tape missing layer intermediates".into()))?;
                let d_w = dl.weights.as_slice();
                let d_b = dl.bias.as_slice();
                let mut d_hidden = matvec_transposed(&g.u_weight, d_w)?;
                add_into(&mut d_hidden, &matvec_transposed(&g.u_bias, d_b)?);
                let d_pre = relu_backward_slice(&lt.pre, &d_hidden);
                add_into(&mut d_collab, &matvec_transposed(&g.w_hidden, &d_pre)?);

                layer_pieces.push(GradPiece::Outer {
                    left: d_pre.clone(),
                    right: c.clone(),
                });
                layer_pieces.push(GradPiece::Dense(Matrix::column(d_pre)));
                layer_pieces.push(GradPiece::Outer {
                    left: d_w.to_vec(),
                    right: lt.hidden.clone(),
                });
                layer_pieces.push(GradPiece::Dense(Matrix::column(d_w.to_vec())));
                layer_pieces.push(GradPiece::Outer {
                    left: d_b.to_vec(),
                    right: lt.hidden.clone(),
                });
                layer_pieces.push(GradPiece::Dense(dl.bias.clone()));
            }
        }
        LayerParams::Shared(_) => {
            if tape.layers.iter().any(Option::is_some) {
                return Err(Error::Protocol("tape does not match layer variant".into()));
            }
            for dl in &grad_phi.layers {
                layer_pieces.push(GradPiece::Dense(dl.weights.clone()));
                layer_pieces.push(GradPiece::Dense(dl.bias.clone()));
            }
        }
    }

    // c_u = Mᵀ e_u, e_u = U[:, u]
    let d_user = matvec(&theta.memory, &d_collab)?;
    let mut pieces = vec![
        GradPiece::Column {
            col: tape.user_index,
            values: d_user,
        },
        GradPiece::Outer {
            left: tape.user_embedding.clone(),
            right: d_collab,
        },
    ];
    pieces.extend(item_pieces);
    pieces.extend(layer_pieces);
    Ok(UserThetaGrad {
        user_index: tape.user_index,
        pieces,
    })
}

/// Dense gradient of the meta parameters given dL/dΦ_u for `user_index`.
pub fn backprop_to_theta(
    theta: &MetaParams,
    tape: &GenerationTape,
    user_index: usize,
    grad_phi: &GeneratedModel,
) -> Result<MetaParams> {
    if tape.user_index != user_index {
        return Err(Error::Protocol(format!(
            "tape belongs to user {}, gradient to user {user_index}",
            tape.user_index
        )));
    }
    user_theta_gradient(theta, tape, grad_phi)?.to_dense(theta)
}

/// Sums per-user gradients into a dense value.
///
/// Every entry is reduced over `grads` in slice order, so the result is
/// bit-identical regardless of how rows are scheduled across threads.
pub fn accumulate(theta: &MetaParams, grads: &[UserThetaGrad]) -> Result<MetaParams> {
    let mut out = theta.zeros_like();
    let n_tensors = out.tensors().len();
    for g in grads {
        if g.pieces.len() != n_tensors {
            return Err(Error::Dimension(format!(
                "gradient of user {} has {} pieces, expected {n_tensors}",
                g.user_index,
                g.pieces.len()
            )));
        }
    }
    for (t, tensor) in out.tensors_mut().into_iter().enumerate() {
        let (rows, cols) = tensor.shape();
        for g in grads {
            check_piece(&g.pieces[t], rows, cols)?;
        }
        if cols == 0 {
            continue;
        }
        tensor
            .as_mut_slice()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(r, acc)| {
                for g in grads {
                    match &g.pieces[t] {
                        GradPiece::Outer { left, right } => {
                            let l = left[r];
                            for (a, rv) in acc.iter_mut().zip(right) {
                                *a += l * rv;
                            }
                        }
                        GradPiece::Dense(m) => add_into(acc, m.row(r)),
                        GradPiece::Column { col, values } => acc[*col] += values[r],
                    }
                }
            });
    }
    Ok(out)
}

fn check_piece(piece: &GradPiece, rows: usize, cols: usize) -> Result<()> {
    let ok = match piece {
        GradPiece::Outer { left, right } => left.len() == rows && right.len() == cols,
        GradPiece::Dense(m) => m.shape() == (rows, cols),
        GradPiece::Column { col, values } => *col < cols && values.len() == rows,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "gradient piece does not fit a {rows}x{cols} tensor"
        )))
    }
}

/// Returns `½‖Θ‖²` and its weighted gradient `λ·Θ`.
pub fn regularization(theta: &MetaParams, lambda: f64) -> Result<(f64, MetaParams)> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("λ must be non-negative, got {lambda}")));
    }
    let mut sum = 0.0;
    for t in theta.tensors() {
        for x in t.as_slice() {
            sum += x * x;
        }
    }
    let mut grad = theta.clone();
    for t in grad.tensors_mut() {
        for x in t.as_mut_slice() {
            *x *= lambda;
        }
    }
    Ok((0.5 * sum, grad))
}
