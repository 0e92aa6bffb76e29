//! Server ↔ device messages and their byte layout.
//!
//! Every integer is little-endian; every real is an IEEE-754 `f64`, little-endian.
//! A matrix is `rows: u32, cols: u32` followed by `rows·cols` reals in row-major order.
//!
//! ```text
//! tag          u8    1 = DeliverModel, 2 = GradientUpload
//! round        u64
//! user_index   u64
//!
//! DeliverModel:
//!   item_embeddings  matrix (d_i × n)
//!   n_layers         u32
//!   per layer:       weights matrix (f_out × f_in), bias matrix (f_out × 1)
//!
//! GradientUpload:
//!   loss             f64
//!   batch_size       u32
//!   item_dim         u32
//!   num_items        u32
//!   n_touched        u32
//!   per touched:     item u32, item_dim × f64 (gradient column)
//!   n_layers         u32
//!   per layer:       weights-gradient matrix, bias-gradient matrix
//! ```
//!
//! Item-embedding gradient columns that the batch did not touch are omitted
//! and decoded as zeros. No field can carry a rating.

use crate::device::LocalGradient;
use crate::error::{Error, Result};
use crate::model::{DenseLayer, GeneratedModel};
use crate::numkernel::Matrix;
use crate::wire::{Reader, Writer};

const TAG_DELIVER: u8 = 1;
const TAG_UPLOAD: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum RoundMessage {
    DeliverModel {
        user_index: usize,
        phi: GeneratedModel,
        round: u64,
    },
    GradientUpload {
        user_index: usize,
        grad: LocalGradient,
        round: u64,
    },
}

impl RoundMessage {
    pub fn round(&self) -> u64 {
        match self {
            RoundMessage::DeliverModel { round, .. } | RoundMessage::GradientUpload { round, .. } => {
                *round
            }
        }
    }

    pub fn user_index(&self) -> usize {
        match self {
            RoundMessage::DeliverModel { user_index, .. }
            | RoundMessage::GradientUpload { user_index, .. } => *user_index,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            RoundMessage::DeliverModel {
                user_index,
                phi,
                round,
            } => {
                w.u8(TAG_DELIVER);
                w.u64(*round);
                w.u64(*user_index as u64);
                w.matrix(&phi.item_embeddings);
                write_layers(&mut w, &phi.layers);
            }
            RoundMessage::GradientUpload {
                user_index,
                grad,
                round,
            } => {
                w.u8(TAG_UPLOAD);
                w.u64(*round);
                w.u64(*user_index as u64);
                w.f64(grad.loss);
                w.u32(grad.batch_size as u32);
                let items = &grad.grad.item_embeddings;
                w.u32(items.rows() as u32);
                w.u32(items.cols() as u32);
                w.u32(grad.touched_items.len() as u32);
                for &item in &grad.touched_items {
                    w.u32(item as u32);
                    w.f64s(&items.col_to_vec(item));
                }
                write_layers(&mut w, &grad.grad.layers);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "round message");
        let tag = r.u8()?;
        let round = r.u64()?;
        let user_index = r.u64()? as usize;
        let msg = match tag {
            TAG_DELIVER => {
                let item_embeddings = r.matrix()?;
                let layers = read_layers(&mut r)?;
                RoundMessage::DeliverModel {
                    user_index,
                    phi: GeneratedModel {
                        item_embeddings,
                        layers,
                    },
                    round,
                }
            }
            TAG_UPLOAD => {
                let loss = r.f64()?;
                let batch_size = r.u32()? as usize;
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let n_touched = r.u32()? as usize;
                let mut items = Matrix::zeros(rows, cols);
                let mut touched_items = Vec::with_capacity(n_touched);
                for _ in 0..n_touched {
                    let item = r.u32()? as usize;
                    if item >= cols || touched_items.last().is_some_and(|&p| p >= item) {
                        return Err(Error::Protocol(format!(
                            "bad touched item {item} in upload from user {user_index}"
                        )));
                    }
                    for (row, v) in r.f64s(rows)?.into_iter().enumerate() {
                        items.set(row, item, v);
                    }
                    touched_items.push(item);
                }
                let layers = read_layers(&mut r)?;
                RoundMessage::GradientUpload {
                    user_index,
                    grad: LocalGradient {
                        grad: GeneratedModel {
                            item_embeddings: items,
                            layers,
                        },
                        touched_items,
                        batch_size,
                        loss,
                    },
                    round,
                }
            }
            other => return Err(Error::Protocol(format!("unknown message tag {other}"))),
        };
        r.finish()?;
        Ok(msg)
    }
}

fn write_layers(w: &mut Writer, layers: &[DenseLayer]) {
    w.u32(layers.len() as u32);
    for l in layers {
        w.matrix(&l.weights);
        w.matrix(&l.bias);
    }
}

fn read_layers(r: &mut Reader<'_>) -> Result<Vec<DenseLayer>> {
    let n = r.u32()? as usize;
    (0..n)
        .map(|_| {
            Ok(DenseLayer {
                weights: r.matrix()?,
                bias: r.matrix()?,
            })
        })
        .collect()
}
