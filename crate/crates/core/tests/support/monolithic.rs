//! Centralized single-graph trainer used as an oracle for the federated pipeline.
//!
//! It composes generation, prediction and loss in one function per user and
//! differentiates the whole chain in place, with no messages, tapes or
//! factored gradients. Loops reduce in the same index order as the library so
//! results can be compared bit-for-bit.

#![allow(clippy::needless_range_loop)]

use metamf::dataset::{sample_rating_batch, EpochSampler, ShardSet};
use metamf::fedruntime::{init_seed, rating_batch_seed, user_sampler_seed, TrainConfig};
use metamf::metanet::{ItemParams, LayerParams, MetaParams, ModelDims, Variant};
use metamf::numkernel::{AdamState, Matrix};

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn mask(pre: f64, g: f64) -> f64 {
    if pre > 0.0 {
        g
    } else {
        0.0
    }
}

/// `w · x + b`, row by row.
fn affine(w: &Matrix, b: Option<&Matrix>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..w.cols() {
                acc += w.get(r, c) * x[c];
            }
            match b {
                Some(b) => acc + b.get(r, 0),
                None => acc,
            }
        })
        .collect()
}

/// `wᵀ · y`.
fn affine_t(w: &Matrix, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for r in 0..w.rows() {
        for c in 0..w.cols() {
            out[c] += w.get(r, c) * y[r];
        }
    }
    out
}

/// Loss and dense dL/dΘ of one user's batch under the full variant.
pub fn user_loss_and_grad(
    theta: &MetaParams,
    user: usize,
    batch: &[(usize, f64)],
) -> (f64, MetaParams) {
    let d: &ModelDims = &theta.dims;
    assert_eq!(theta.variant, Variant::Full);
    let gen = match &theta.items {
        ItemParams::Generated(g) => g,
        _ => unreachable!(),
    };
    let lgens = match &theta.layers {
        LayerParams::Generated(g) => g,
        _ => unreachable!(),
    };
    let (du, di, k, s, n) = (d.user_dim, d.item_dim, d.memory_dim, d.low_rank, d.num_items);

    // forward: user embedding, collaborative vector
    let e: Vec<f64> = (0..du).map(|i| theta.user_embeddings.get(i, user)).collect();
    let mut c = vec![0.0; k];
    for i in 0..du {
        for j in 0..k {
            c[j] += theta.memory.get(i, j) * e[i];
        }
    }

    // item factors and product
    let a_l = affine(&gen.w_left, Some(&gen.b_left), &c);
    let h_l: Vec<f64> = a_l.iter().map(|&v| relu(v)).collect();
    let low_flat = affine(&gen.u_left, None, &h_l);
    let a_r = affine(&gen.w_right, Some(&gen.b_right), &c);
    let h_r: Vec<f64> = a_r.iter().map(|&v| relu(v)).collect();
    let rise_flat = affine(&gen.u_right, None, &h_r);
    let low = |b: usize, j: usize| low_flat[b * n + j];
    let rise = |a: usize, b: usize| rise_flat[a * s + b];
    let mut items = vec![0.0; di * n];
    for a in 0..di {
        for b in 0..s {
            for j in 0..n {
                items[a * n + j] += rise(a, b) * low(b, j);
            }
        }
    }

    // generated layers
    let shapes = d.layer_shapes();
    let mut a_g = Vec::new();
    let mut h_g = Vec::new();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, g) in lgens.iter().enumerate() {
        let a = affine(&g.w_hidden, Some(&g.b_hidden), &c);
        let h: Vec<f64> = a.iter().map(|&v| relu(v)).collect();
        let wf = affine(&g.u_weight, Some(&g.b_weight), &h);
        let bf = affine(&g.u_bias, Some(&g.b_bias), &h);
        let (f_out, f_in) = shapes[l];
        weights.push(Matrix::from_vec(f_out, f_in, wf).unwrap());
        biases.push(bf);
        a_g.push(a);
        h_g.push(h);
    }

    // prediction, loss and gradient w.r.t. generated fields
    let scale = batch.len() as f64;
    let mut loss = 0.0;
    let mut g_items = vec![0.0; di * n];
    let mut g_w: Vec<Matrix> = shapes.iter().map(|&(o, i)| Matrix::zeros(o, i)).collect();
    let mut g_b: Vec<Vec<f64>> = shapes.iter().map(|&(o, _)| vec![0.0; o]).collect();
    let n_layers = shapes.len();
    for &(item, r) in batch {
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        let mut x: Vec<f64> = (0..di).map(|a| items[a * n + item]).collect();
        let mut out = 0.0;
        for l in 0..n_layers {
            let z: Vec<f64> = (0..shapes[l].0)
                .map(|o| {
                    let mut acc = 0.0;
                    for i in 0..shapes[l].1 {
                        acc += weights[l].get(o, i) * x[i];
                    }
                    acc + biases[l][o]
                })
                .collect();
            inputs.push(x.clone());
            if l + 1 == n_layers {
                out = z[0];
            } else {
                x = z.iter().map(|&v| relu(v)).collect();
                pres.push(z);
            }
        }
        let residual = r - out;
        loss += residual * residual;
        let mut up = vec![2.0 * (out - r) / scale];
        for l in (0..n_layers).rev() {
            for o in 0..shapes[l].0 {
                for i in 0..shapes[l].1 {
                    let v = g_w[l].get(o, i) + up[o] * inputs[l][i];
                    g_w[l].set(o, i, v);
                }
                g_b[l][o] += up[o];
            }
            let back = affine_t(&weights[l], &up);
            up = if l > 0 {
                back.iter().zip(&pres[l - 1]).map(|(&g, &p)| mask(p, g)).collect()
            } else {
                back
            };
        }
        for a in 0..di {
            g_items[a * n + item] += up[a];
        }
    }
    loss /= scale;

    // back through the rise-dimensional product
    let mut g_rise = vec![0.0; di * s];
    for a in 0..di {
        for j in 0..n {
            for b in 0..s {
                g_rise[a * s + b] += g_items[a * n + j] * low(b, j);
            }
        }
    }
    let mut g_low = vec![0.0; s * n];
    for b in 0..s {
        for a in 0..di {
            for j in 0..n {
                g_low[b * n + j] += rise(a, b) * g_items[a * n + j];
            }
        }
    }

    let mut grad = theta.zeros_like();
    let mut g_c = vec![0.0; k];

    let gh_l = affine_t(&gen.u_left, &g_low);
    let ga_l: Vec<f64> = gh_l.iter().zip(&a_l).map(|(&g, &p)| mask(p, g)).collect();
    for (j, v) in affine_t(&gen.w_left, &ga_l).into_iter().enumerate() {
        g_c[j] += v;
    }
    let gh_r = affine_t(&gen.u_right, &g_rise);
    let ga_r: Vec<f64> = gh_r.iter().zip(&a_r).map(|(&g, &p)| mask(p, g)).collect();
    for (j, v) in affine_t(&gen.w_right, &ga_r).into_iter().enumerate() {
        g_c[j] += v;
    }
    if let ItemParams::Generated(gg) = &mut grad.items {
        fill_outer(&mut gg.w_left, &ga_l, &c);
        fill_outer(&mut gg.b_left, &ga_l, &[1.0]);
        fill_outer(&mut gg.u_left, &g_low, &h_l);
        fill_outer(&mut gg.w_right, &ga_r, &c);
        fill_outer(&mut gg.b_right, &ga_r, &[1.0]);
        fill_outer(&mut gg.u_right, &g_rise, &h_r);
    }

    let glayers = match &mut grad.layers {
        LayerParams::Generated(g) => g,
        _ => unreachable!(),
    };
    for l in 0..n_layers {
        let g = &lgens[l];
        let dw = g_w[l].as_slice();
        let t1 = affine_t(&g.u_weight, dw);
        let t2 = affine_t(&g.u_bias, &g_b[l]);
        let gh: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let ga: Vec<f64> = gh.iter().zip(&a_g[l]).map(|(&g, &p)| mask(p, g)).collect();
        for (j, v) in affine_t(&g.w_hidden, &ga).into_iter().enumerate() {
            g_c[j] += v;
        }
        let out = &mut glayers[l];
        fill_outer(&mut out.w_hidden, &ga, &c);
        fill_outer(&mut out.b_hidden, &ga, &[1.0]);
        fill_outer(&mut out.u_weight, dw, &h_g[l]);
        fill_outer(&mut out.b_weight, dw, &[1.0]);
        fill_outer(&mut out.u_bias, &g_b[l], &h_g[l]);
        fill_outer(&mut out.b_bias, &g_b[l], &[1.0]);
    }

    // collaborative vector back to memory and user embedding
    fill_outer(&mut grad.memory, &e, &g_c);
    let g_e = affine(&theta.memory, None, &g_c);
    for i in 0..du {
        grad.user_embeddings.set(i, user, g_e[i]);
    }
    (loss, grad)
}

fn fill_outer(m: &mut Matrix, left: &[f64], right: &[f64]) {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            m.set(r, c, left[r] * right[c]);
        }
    }
}

/// Centralized training loop drawing the same users and batches as the federated runtime.
pub struct MonolithicTrainer {
    pub theta: MetaParams,
    pub adam: AdamState,
    pub round: u64,
    config: TrainConfig,
    sampler: EpochSampler,
}

impl MonolithicTrainer {
    pub fn new(dims: &ModelDims, config: TrainConfig, shards: &ShardSet) -> Self {
        let theta = MetaParams::init(dims, config.variant, config.memory_budget, init_seed(config.seed)).unwrap();
        let adam = AdamState::new(theta.shapes(), config.learning_rate);
        let sampler = EpochSampler::new(&shards.users(), config.users_per_round, user_sampler_seed(config.seed)).unwrap();
        Self {
            theta,
            adam,
            round: 0,
            config,
            sampler,
        }
    }

    pub fn step(&mut self, shards: &ShardSet) -> f64 {
        let mut users = self.sampler.next_batch();
        users.sort_unstable();
        let mut total = self.theta.zeros_like();
        let mut loss = 0.0;
        for &u in &users {
            let shard = shards.get(u).unwrap();
            let b = self.config.ratings_per_user.min(shard.train.len()).max(1);
            let batch = sample_rating_batch(shard, b, rating_batch_seed(self.config.seed, self.round, u)).unwrap();
            let (l, g) = user_loss_and_grad(&self.theta, u, &batch);
            loss += l;
            for (acc, gi) in total.tensors_mut().into_iter().zip(g.tensors()) {
                for (a, v) in acc.as_mut_slice().iter_mut().zip(gi.as_slice()) {
                    *a += v;
                }
            }
        }
        let count = users.len() as f64;
        let lambda = self.config.l2_weight;
        for (g, p) in total.tensors_mut().into_iter().zip(self.theta.tensors()) {
            for (gi, pi) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
                *gi = *gi / count + lambda * pi;
            }
        }
        let grads = total.tensors();
        let mut params = self.theta.tensors_mut();
        self.adam.step(&mut params, &grads).unwrap();
        self.round += 1;
        loss / count
    }
}
