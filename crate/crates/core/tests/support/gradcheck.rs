//! Central finite-difference checks of the device and server gradients.

use metamf::dataset::UserShard;
use metamf::device::DeviceState;
use metamf::metanet::{accumulate, generate_model, regularization, user_theta_gradient, MetaParams, ModelDims, Variant};
use metamf::model::GeneratedModel;
use metamf::numkernel::{Matrix, Seed};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

/// Worst disagreement between analytic and numeric derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct Report {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub failures: usize,
}

impl Report {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        self.checked += 1;
        self.worst_abs = self.worst_abs.max(diff);
        let rel = diff / scale.max(ABS_FLOOR);
        self.worst_rel = self.worst_rel.max(rel);
        if rel > REL_TOL {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures == 0
    }
}

fn phi_fields_mut(phi: &mut GeneratedModel) -> Vec<&mut Matrix> {
    let mut out = vec![&mut phi.item_embeddings];
    for layer in &mut phi.layers {
        out.push(&mut layer.weights);
        out.push(&mut layer.bias);
    }
    out
}

fn phi_fields(phi: &GeneratedModel) -> Vec<&Matrix> {
    let mut out = vec![&phi.item_embeddings];
    for layer in &phi.layers {
        out.push(&layer.weights);
        out.push(&layer.bias);
    }
    out
}

fn local_loss(phi: &GeneratedModel, shard: &UserShard, batch: &[(usize, f64)]) -> f64 {
    DeviceState::new(phi.clone(), shard).unwrap().local_loss(batch).unwrap()
}

/// Checks dL/dΦ_u for every entry of the generated model of `shard`'s user.
pub fn check_device(theta: &MetaParams, shard: &UserShard, batch: &[(usize, f64)]) -> Report {
    let (phi, _) = generate_model(theta, shard.user_index).unwrap();
    let analytic = DeviceState::new(phi.clone(), shard).unwrap().local_gradient(batch).unwrap().grad;
    let mut report = Report::default();
    let n_fields = phi_fields(&phi).len();
    for f in 0..n_fields {
        let len = phi_fields(&phi)[f].as_slice().len();
        for i in 0..len {
            let mut plus = phi.clone();
            phi_fields_mut(&mut plus)[f].as_mut_slice()[i] += STEP;
            let mut minus = phi.clone();
            phi_fields_mut(&mut minus)[f].as_mut_slice()[i] -= STEP;
            let numeric = (local_loss(&plus, shard, batch) - local_loss(&minus, shard, batch)) / (2.0 * STEP);
            report.record(phi_fields(&analytic)[f].as_slice()[i], numeric);
        }
    }
    report
}

/// Mean local loss over `users` plus `λ · ½‖Θ‖²`.
pub fn composed_loss(theta: &MetaParams, users: &[(&UserShard, Vec<(usize, f64)>)], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (shard, batch) in users {
        let (phi, _) = generate_model(theta, shard.user_index).unwrap();
        total += local_loss(&phi, shard, batch);
    }
    let (reg, _) = regularization(theta, lambda).unwrap();
    total / users.len() as f64 + lambda * reg
}

/// The server's gradient of [`composed_loss`], computed the way a round does.
pub fn composed_gradient(theta: &MetaParams, users: &[(&UserShard, Vec<(usize, f64)>)], lambda: f64) -> MetaParams {
    let grads: Vec<_> = users
        .iter()
        .map(|(shard, batch)| {
            let (phi, tape) = generate_model(theta, shard.user_index).unwrap();
            let local = DeviceState::new(phi, shard).unwrap().local_gradient(batch).unwrap();
            user_theta_gradient(theta, &tape, &local.grad).unwrap()
        })
        .collect();
    let mut total = accumulate(theta, &grads).unwrap();
    let count = users.len() as f64;
    for (g, p) in total.tensors_mut().into_iter().zip(theta.tensors()) {
        for (gi, pi) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *gi = *gi / count + lambda * pi;
        }
    }
    total
}

/// Checks the server gradient against central differences over every entry of Θ.
pub fn check_server(theta: &MetaParams, users: &[(&UserShard, Vec<(usize, f64)>)], lambda: f64) -> Report {
    let analytic = composed_gradient(theta, users, lambda);
    let mut report = Report::default();
    let n_tensors = theta.tensors().len();
    for t in 0..n_tensors {
        let len = theta.tensors()[t].as_slice().len();
        for i in 0..len {
            let mut plus = theta.clone();
            plus.tensors_mut()[t].as_mut_slice()[i] += STEP;
            let mut minus = theta.clone();
            minus.tensors_mut()[t].as_mut_slice()[i] -= STEP;
            let numeric = (composed_loss(&plus, users, lambda) - composed_loss(&minus, users, lambda)) / (2.0 * STEP);
            report.record(analytic.tensors()[t].as_slice()[i], numeric);
        }
    }
    report
}

pub fn tiny_theta(dims: &ModelDims, variant: Variant, seed: u64) -> MetaParams {
    MetaParams::init(dims, variant, u64::MAX, Seed(seed)).unwrap()
}
