//! Run configuration: one TOML file, every field defaulted.

use std::path::{Path, PathBuf};

use metamf::dataset::{RatingsFormat, Separator, SplitConfig};
use metamf::fedruntime::TrainConfig;
use metamf::metanet::{ModelDims, Variant, DEFAULT_MEMORY_BUDGET};
use metamf::numkernel::Seed;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const SPLIT_STREAM: u64 = 0x5EED_5B11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub separator: Separator,
    pub has_header: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub min_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub user_dim: usize,
    pub item_dim: usize,
    pub memory_dim: usize,
    pub low_rank: usize,
    pub hidden: usize,
    pub layer_sizes: Vec<usize>,
    pub memory_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Variant,
    pub users_per_round: usize,
    pub ratings_per_user: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub max_rounds: u64,
    pub patience: usize,
    pub eval_every: u64,
    pub workers: usize,
    /// Fill the `seconds` column of the training log. Off by default so logs
    /// from identical runs are byte-identical.
    pub log_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("metamf-out"),
            dataset: DatasetSection::default(),
            split: SplitSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            separator: Separator::Auto,
            has_header: false,
        }
    }
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitConfig::default();
        Self {
            train_frac: d.train_frac,
            valid_frac: d.valid_frac,
            test_frac: d.test_frac,
            min_ratings: d.min_ratings,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelDims::with_defaults(1, 1);
        Self {
            user_dim: d.user_dim,
            item_dim: d.item_dim,
            memory_dim: d.memory_dim,
            low_rank: d.low_rank,
            hidden: d.hidden,
            layer_sizes: d.layer_sizes,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            variant: d.variant,
            users_per_round: d.users_per_round,
            ratings_per_user: d.ratings_per_user,
            learning_rate: d.learning_rate,
            l2_weight: d.l2_weight,
            max_rounds: d.max_rounds,
            patience: d.patience,
            eval_every: d.eval_every,
            workers: d.workers,
            log_wall_time: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub out_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub max_rounds: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Renders the config with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.variant {
            self.train.variant = v;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(p) = &o.dataset {
            self.dataset.path = p.clone();
        }
        if let Some(r) = o.max_rounds {
            self.train.max_rounds = r;
        }
    }

    pub fn ratings_format(&self) -> RatingsFormat {
        RatingsFormat {
            separator: self.dataset.separator,
            has_header: self.dataset.has_header,
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_frac: self.split.train_frac,
            valid_frac: self.split.valid_frac,
            test_frac: self.split.test_frac,
            seed: Seed(self.seed).derive(SPLIT_STREAM),
            min_ratings: self.split.min_ratings,
        }
    }

    pub fn model_dims(&self, num_users: usize, num_items: usize) -> ModelDims {
        ModelDims {
            num_users,
            num_items,
            user_dim: self.model.user_dim,
            item_dim: self.model.item_dim,
            memory_dim: self.model.memory_dim,
            low_rank: self.model.low_rank,
            hidden: self.model.hidden,
            layer_sizes: self.model.layer_sizes.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            users_per_round: t.users_per_round,
            ratings_per_user: t.ratings_per_user,
            learning_rate: t.learning_rate,
            l2_weight: t.l2_weight,
            max_rounds: t.max_rounds,
            patience: t.patience,
            eval_every: t.eval_every,
            variant: t.variant,
            seed: Seed(self.seed),
            workers: t.workers,
            memory_budget: self.model.memory_budget,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.split_config().validate().map_err(CliError::usage)?;
        self.train_config().validate().map_err(CliError::usage)?;
        self.model_dims(1, 1).validate().map_err(CliError::usage)?;
        Ok(())
    }
}
