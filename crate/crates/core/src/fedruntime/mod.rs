//! Round-based federated training: the server samples users, delivers each a
//! freshly generated model, collects gradient uploads over a byte transport,
//! reduces them in ascending user order and applies one Adam step.

mod log;
mod message;
mod server;
mod transport;

pub use log::{LogRow, Metrics, TrainLog, CSV_HEADER};
pub use message::RoundMessage;
pub use server::{
    aggregate_metrics, check_shards, global_evaluate, init_seed, init_server, rating_batch_seed,
    run_round, run_round_with, train, train_with, user_sampler_seed, DeviceContext, DeviceWorker,
    LocalDevice, ServerState, TrainConfig,
};
pub use transport::Link;
