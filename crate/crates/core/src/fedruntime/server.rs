use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::log::{LogRow, Metrics, TrainLog};
use super::message::RoundMessage;
use super::transport::Link;
use crate::dataset::{sample_rating_batch, Chunk, EpochSampler, ShardSet, UserShard};
use crate::device::{ChunkSums, DeviceState};
use crate::error::{Error, Result};
use crate::metanet::{
    accumulate, generate_model, user_theta_gradient, MetaParams, ModelDims, Variant,
    DEFAULT_MEMORY_BUDGET,
};
use crate::model::GeneratedModel;
use crate::numkernel::{AdamState, Seed};

const STREAM_INIT: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_RATINGS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Users sampled per round.
    pub users_per_round: usize,
    /// Ratings each device samples per round, capped by its training set.
    pub ratings_per_user: usize,
    pub learning_rate: f64,
    /// Weight of the L2 term on the meta parameters.
    pub l2_weight: f64,
    pub max_rounds: u64,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    pub eval_every: u64,
    pub variant: Variant,
    pub seed: Seed,
    /// Worker threads for device simulation; 0 uses the global pool.
    pub workers: usize,
    pub memory_budget: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            users_per_round: 64,
            ratings_per_user: 32,
            learning_rate: 1e-4,
            l2_weight: 1e-3,
            max_rounds: 20_000,
            patience: 10,
            eval_every: 50,
            variant: Variant::Full,
            seed: Seed(0),
            workers: 0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("users_per_round", self.users_per_round),
            ("ratings_per_user", self.ratings_per_user),
            ("patience", self.patience),
            ("eval_every", self.eval_every as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.l2_weight.is_nan() || self.l2_weight < 0.0 {
            return Err(Error::Config(format!(
                "l2_weight must be non-negative, got {}",
                self.l2_weight
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Seed of the initial meta parameters.
pub fn init_seed(root: Seed) -> Seed {
    root.derive(STREAM_INIT)
}

/// Seed of the per-round user sampler.
pub fn user_sampler_seed(root: Seed) -> Seed {
    root.derive(STREAM_USERS)
}

/// Seed a device uses to draw its rating batch in `round`.
pub fn rating_batch_seed(root: Seed, round: u64, user: usize) -> Seed {
    root.derive(STREAM_RATINGS).derive(round).derive(user as u64)
}

/// What a device is told besides its model.
#[derive(Debug, Clone, Copy)]
pub struct DeviceContext {
    pub round: u64,
    pub batch_size: usize,
    pub seed: Seed,
}

/// Device-side handler: consumes a serialized delivery, returns a serialized upload.
pub trait DeviceWorker: Sync {
    fn handle(&self, delivery: &[u8], shard: &UserShard, ctx: DeviceContext) -> Result<Vec<u8>>;
}

/// The real device: samples a batch, computes the local gradient, uploads it.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalDevice;

impl DeviceWorker for LocalDevice {
    fn handle(&self, delivery: &[u8], shard: &UserShard, ctx: DeviceContext) -> Result<Vec<u8>> {
        let (user_index, phi, round) = match RoundMessage::decode(delivery)? {
            RoundMessage::DeliverModel {
                user_index,
                phi,
                round,
            } => (user_index, phi, round),
            RoundMessage::GradientUpload { .. } => {
                return Err(Error::Protocol("device received an upload".into()))
            }
        };
        if user_index != shard.user_index || round != ctx.round {
            return Err(Error::Protocol(format!(
                "delivery for user {user_index} round {round} reached user {} in round {}",
                shard.user_index, ctx.round
            )));
        }
        let device = DeviceState::new(phi, shard)?;
        let batch = sample_rating_batch(shard, ctx.batch_size, ctx.seed)?;
        let grad = device.local_gradient(&batch)?;
        Ok(RoundMessage::GradientUpload {
            user_index,
            grad,
            round,
        }
        .encode())
    }
}

/// Everything the server keeps between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub theta: MetaParams,
    pub adam: AdamState,
    pub round: u64,
    pub config: TrainConfig,
    sampler: EpochSampler,
    pool: Option<Arc<rayon::ThreadPool>>,
}

/// Xavier-initializes the meta parameters for `dims` and checks them against the shards.
pub fn init_server(dims: &ModelDims, config: TrainConfig, shards: &ShardSet) -> Result<ServerState> {
    config.validate()?;
    dims.validate()?;
    if shards.is_empty() {
        return Err(Error::Config("no users with training data".into()));
    }
    check_shards(dims, shards)?;
    let theta = MetaParams::init(dims, config.variant, config.memory_budget, init_seed(config.seed))?;
    let adam = AdamState::new(theta.shapes(), config.learning_rate);
    let sampler = EpochSampler::new(
        &shards.users(),
        config.users_per_round,
        user_sampler_seed(config.seed),
    )?;
    let pool = match config.workers {
        0 => None,
        n => Some(Arc::new(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?,
        )),
    };
    Ok(ServerState {
        theta,
        adam,
        round: 0,
        config,
        sampler,
        pool,
    })
}

/// Fails if any shard references a user or item outside `dims`.
pub fn check_shards(dims: &ModelDims, shards: &ShardSet) -> Result<()> {
    for s in shards.iter() {
        if s.user_index >= dims.num_users {
            return Err(Error::Config(format!(
                "shard user {} outside model with {} users",
                s.user_index, dims.num_users
            )));
        }
        let bad = s
            .train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .find(|(item, _)| *item >= dims.num_items);
        if let Some((item, _)) = bad {
            return Err(Error::Config(format!(
                "shard of user {} rates item {item}, model has {} items",
                s.user_index, dims.num_items
            )));
        }
    }
    Ok(())
}

impl ServerState {
    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn evaluate(&self, shards: &ShardSet, chunk: Chunk) -> Result<Metrics> {
        self.install(|| global_evaluate(&self.theta, shards, chunk))
    }
}

/// Runs one round with the in-process [`LocalDevice`].
pub fn run_round(server: &mut ServerState, shards: &ShardSet) -> Result<LogRow> {
    run_round_with(server, shards, &LocalDevice)
}

/// One round: sample users, deliver models, collect uploads, update Θ once.
///
/// On any error the server state is left exactly as it was.
pub fn run_round_with(
    server: &mut ServerState,
    shards: &ShardSet,
    device: &dyn DeviceWorker,
) -> Result<LogRow> {
    let start = Instant::now();
    let mut sampler = server.sampler.clone();
    let users = sampler.next_batch();
    let round = server.round;
    let cfg = &server.config;
    let theta = &server.theta;

    let (grad, loss, bytes_down, bytes_up) = server.install(|| -> Result<_> {
        let downlink = Link::new();
        let uplink = Link::new();

        let generated: Vec<(usize, GeneratedModel, _)> = users
            .par_iter()
            .map(|&u| {
                let (phi, tape) = generate_model(theta, u)?;
                Ok((u, phi, tape))
            })
            .collect::<Result<_>>()?;
        for (u, phi, _) in &generated {
            downlink.send(
                RoundMessage::DeliverModel {
                    user_index: *u,
                    phi: phi.clone(),
                    round,
                }
                .encode(),
            );
        }

        downlink
            .drain()
            .par_iter()
            .map(|frame| {
                let user = peek_user(frame)?;
                let shard = shards.get(user).ok_or(Error::Device {
                    user,
                    message: "no local data".into(),
                })?;
                let ctx = DeviceContext {
                    round,
                    batch_size: cfg.ratings_per_user.min(shard.train.len()).max(1),
                    seed: rating_batch_seed(cfg.seed, round, user),
                };
                let reply = device.handle(frame, shard, ctx).map_err(|e| Error::Device {
                    user,
                    message: e.to_string(),
                })?;
                uplink.send(reply);
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;

        let mut uploads = Vec::with_capacity(users.len());
        for frame in uplink.drain() {
            match RoundMessage::decode(&frame)? {
                RoundMessage::GradientUpload {
                    user_index,
                    grad,
                    round: r,
                } => {
                    if r != round {
                        return Err(Error::Protocol(format!(
                            "upload from user {user_index} tagged round {r}, current round {round}"
                        )));
                    }
                    uploads.push((user_index, grad));
                }
                RoundMessage::DeliverModel { .. } => {
                    return Err(Error::Protocol("server received a delivery".into()))
                }
            }
        }
        uploads.sort_by_key(|(u, _)| *u);
        let mut expected: Vec<usize> = users.clone();
        expected.sort_unstable();
        if uploads.iter().map(|(u, _)| *u).ne(expected.iter().copied()) {
            return Err(Error::Protocol(
                "uploads do not match the round's users".into(),
            ));
        }

        let mut by_user: Vec<_> = generated;
        by_user.sort_by_key(|(u, _, _)| *u);
        let per_user = by_user
            .par_iter()
            .zip(uploads.par_iter())
            .map(|((u, phi, tape), (_, upload))| {
                phi.ensure_congruent(&upload.grad)?;
                if !upload.grad.is_finite() || !upload.loss.is_finite() {
                    return Err(Error::Device {
                        user: *u,
                        message: "non-finite gradient".into(),
                    });
                }
                user_theta_gradient(theta, tape, &upload.grad)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grad = accumulate(theta, &per_user)?;
        let count = per_user.len() as f64;
        let lambda = cfg.l2_weight;
        for (g, p) in grad.tensors_mut().into_iter().zip(theta.tensors()) {
            for (gi, pi) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
                *gi = *gi / count + lambda * pi;
            }
        }
        let mut loss = 0.0;
        for (_, upload) in &uploads {
            loss += upload.loss;
        }
        Ok((grad, loss / count, downlink.bytes_sent(), uplink.bytes_sent()))
    })?;

    let grads = grad.tensors();
    let mut params = server.theta.tensors_mut();
    server.adam.step(&mut params, &grads)?;
    server.sampler = sampler;
    server.round += 1;
    Ok(LogRow {
        round: server.round,
        loss: Some(loss),
        valid: None,
        test: None,
        bytes_down,
        bytes_up,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn peek_user(frame: &[u8]) -> Result<usize> {
    frame
        .get(9..17)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
        .ok_or_else(|| Error::Protocol("frame too short".into()))
}

/// Global MAE and MSE over `chunk`, summed from each device's local error sums.
pub fn global_evaluate(theta: &MetaParams, shards: &ShardSet, chunk: Chunk) -> Result<Metrics> {
    let sums = shards
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|shard| {
            if shard.chunk(chunk).is_empty() {
                return Ok(ChunkSums::default());
            }
            let (phi, _) = generate_model(theta, shard.user_index)?;
            DeviceState::new(phi, shard)?.evaluate_local(chunk)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_metrics(&sums)
}

/// Combines per-device sums in the given order.
pub fn aggregate_metrics(sums: &[ChunkSums]) -> Result<Metrics> {
    let mut total = ChunkSums::default();
    for s in sums {
        total.merge(s);
    }
    if total.count == 0 {
        return Err(Error::Empty("evaluation chunk"));
    }
    Ok(Metrics {
        mae: total.abs_err / total.count as f64,
        mse: total.sq_err / total.count as f64,
        count: total.count,
    })
}

/// Trains until `max_rounds` or until validation MSE stops improving for
/// `patience` evaluations, then restores the best-validation parameters.
pub fn train(server: ServerState, shards: &ShardSet) -> Result<(ServerState, TrainLog)> {
    train_with(server, shards, &LocalDevice)
}

pub fn train_with(
    mut server: ServerState,
    shards: &ShardSet,
    device: &dyn DeviceWorker,
) -> Result<(ServerState, TrainLog)> {
    let mut log = TrainLog::default();
    log.push(LogRow {
        round: server.round,
        loss: None,
        valid: None,
        test: None,
        bytes_down: 0,
        bytes_up: 0,
        seconds: 0.0,
    });
    let valid = server.evaluate(shards, Chunk::Valid)?;
    let test = server.evaluate(shards, Chunk::Test)?;
    log.record_eval(valid, test);
    let mut best_mse = valid.mse;
    let mut best_theta = server.theta.clone();
    log.best_round = server.round;
    let mut stale = 0usize;
    let max_rounds = server.config.max_rounds;
    let eval_every = server.config.eval_every;

    while server.round < max_rounds {
        let row = run_round_with(&mut server, shards, device)?;
        log::debug!("round {} loss {:?}", row.round, row.loss);
        log.push(row);
        if server.round.is_multiple_of(eval_every) || server.round == max_rounds {
            let valid = server.evaluate(shards, Chunk::Valid)?;
            let test = server.evaluate(shards, Chunk::Test)?;
            log.record_eval(valid, test);
            log::info!(
                "round {}: valid mae {:.4} mse {:.4}",
                server.round,
                valid.mae,
                valid.mse
            );
            if valid.mse < best_mse {
                best_mse = valid.mse;
                best_theta = server.theta.clone();
                log.best_round = server.round;
                stale = 0;
            } else {
                stale += 1;
                if stale >= server.config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    server.theta = best_theta;
    Ok((server, log))
}
