//! Rating ingestion, dense id remapping, per-user splits and batch sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::Seed;

/// Field separator of a ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Separator {
    /// Picked from the first data line: `::`, then tab, then comma, then whitespace.
    #[default]
    Auto,
    Tab,
    Comma,
    DoubleColon,
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatingsFormat {
    pub separator: Separator,
    /// Skip the first non-empty line.
    pub has_header: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// All ratings with users and items remapped to dense indices.
///
/// Raw ids are assigned indices in sorted order (numeric when every id parses
/// as an integer, lexicographic otherwise), so the remapping does not depend
/// on the order of lines in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub ratings: Vec<Rating>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
}

impl RatingsTable {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_lookup.get(raw).copied()
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.item_lookup.get(raw).copied()
    }

    /// Builds a table from raw-id triples. `origin` is used in error messages.
    pub fn from_triples<I, U, T>(triples: I, origin: &Path) -> Result<Self>
    where
        I: IntoIterator<Item = (U, T, f64)>,
        U: Into<String>,
        T: Into<String>,
    {
        let raw: Vec<(String, String, f64, usize)> = triples
            .into_iter()
            .enumerate()
            .map(|(i, (u, it, r))| (u.into(), it.into(), r, i + 1))
            .collect();
        Self::from_raw(raw, origin)
    }

    fn from_raw(raw: Vec<(String, String, f64, usize)>, origin: &Path) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyTable(origin.to_path_buf()));
        }
        let mut seen = BTreeSet::new();
        for (u, i, _, line) in &raw {
            if !seen.insert((u.as_str(), i.as_str())) {
                return Err(Error::DuplicateRating {
                    user: u.clone(),
                    item: i.clone(),
                    line: *line,
                });
            }
        }
        let user_ids = sorted_ids(raw.iter().map(|r| r.0.as_str()));
        let item_ids = sorted_ids(raw.iter().map(|r| r.1.as_str()));
        let user_lookup: HashMap<String, usize> = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let item_lookup: HashMap<String, usize> = item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let ratings = raw
            .iter()
            .map(|(u, i, r, _)| Rating {
                user: user_lookup[u],
                item: item_lookup[i],
                value: *r,
            })
            .collect();
        Ok(Self {
            user_ids,
            item_ids,
            ratings,
            user_lookup,
            item_lookup,
        })
    }
}

fn sorted_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let unique: BTreeSet<&str> = ids.collect();
    let mut out: Vec<String> = unique.into_iter().map(str::to_owned).collect();
    let numeric: Option<Vec<i128>> = out.iter().map(|s| s.parse::<i128>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(i128, String)> = nums.into_iter().zip(out).collect();
        paired.sort();
        out = paired.into_iter().map(|(_, s)| s).collect();
    }
    out
}

fn detect_separator(line: &str) -> Separator {
    if line.contains("::") {
        Separator::DoubleColon
    } else if line.contains('\t') {
        Separator::Tab
    } else if line.contains(',') {
        Separator::Comma
    } else {
        Separator::Whitespace
    }
}

fn split_fields(line: &str, sep: Separator) -> Vec<&str> {
    match sep {
        Separator::Tab => line.split('\t').map(str::trim).collect(),
        Separator::Comma => line.split(',').map(str::trim).collect(),
        Separator::DoubleColon => line.split("::").map(str::trim).collect(),
        Separator::Whitespace | Separator::Auto => line.split_whitespace().collect(),
    }
}

/// Reads `user item rating [timestamp]` lines into a [`RatingsTable`].
pub fn load_ratings(path: &Path, format: &RatingsFormat) -> Result<RatingsTable> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text, format, path)
}

pub fn parse_ratings(text: &str, format: &RatingsFormat, origin: &Path) -> Result<RatingsTable> {
    let mut sep = format.separator;
    let mut skip_header = format.has_header;
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if skip_header {
            skip_header = false;
            continue;
        }
        if sep == Separator::Auto {
            sep = detect_separator(trimmed);
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let fields = split_fields(trimmed, sep);
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_err(format!(
                "expected 3 or 4 fields (user, item, rating[, timestamp]), found {}",
                fields.len()
            )));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("rating {:?} is not a number", fields[2])))?;
        if !rating.is_finite() {
            return Err(parse_err(format!("rating {:?} is not finite", fields[2])));
        }
        raw.push((fields[0].to_owned(), fields[1].to_owned(), rating, line_no));
    }
    RatingsTable::from_raw(raw, origin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: Seed,
    pub min_ratings: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed: Seed(0),
            min_ratings: 3,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.valid_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1], got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if self.min_ratings < 3 {
            return Err(Error::Config(format!(
                "min_ratings must be at least 3, got {}",
                self.min_ratings
            )));
        }
        Ok(())
    }

    /// `(train, valid, test)` sizes for a user with `count` ratings.
    ///
    /// Valid and test get `floor(frac * count)` but at least one rating each;
    /// train takes the remainder.
    pub fn split_sizes(&self, count: usize) -> (usize, usize, usize) {
        let chunk = |frac: f64| ((frac * count as f64 + 1e-9).floor() as usize).max(1);
        let mut test = chunk(self.test_frac);
        let mut valid = chunk(self.valid_frac);
        while test + valid >= count && (test > 1 || valid > 1) {
            if valid >= test {
                valid -= 1;
            } else {
                test -= 1;
            }
        }
        (count - valid - test, valid, test)
    }
}

/// Which held-out chunk of a shard to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chunk {
    Valid,
    Test,
}

impl std::str::FromStr for Chunk {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Chunk::Valid),
            "test" => Ok(Chunk::Test),
            other => Err(Error::Config(format!(
                "unknown chunk {other:?}, expected valid or test"
            ))),
        }
    }
}

/// One device's private ratings, split into train/valid/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserShard {
    pub user_index: usize,
    pub train: Vec<(usize, f64)>,
    pub valid: Vec<(usize, f64)>,
    pub test: Vec<(usize, f64)>,
}

impl UserShard {
    pub fn chunk(&self, chunk: Chunk) -> &[(usize, f64)] {
        match chunk {
            Chunk::Valid => &self.valid,
            Chunk::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shards of all retained users, in ascending user order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSet {
    shards: Vec<UserShard>,
    position: HashMap<usize, usize>,
}

impl ShardSet {
    pub fn new(mut shards: Vec<UserShard>) -> Self {
        shards.sort_by_key(|s| s.user_index);
        let position = shards
            .iter()
            .enumerate()
            .map(|(i, s)| (s.user_index, i))
            .collect();
        Self { shards, position }
    }

    pub fn get(&self, user: usize) -> Option<&UserShard> {
        self.position.get(&user).map(|&i| &self.shards[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserShard> {
        self.shards.iter()
    }

    pub fn users(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.user_index).collect()
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn chunk_len(&self, chunk: Chunk) -> usize {
        self.shards.iter().map(|s| s.chunk(chunk).len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub shards: ShardSet,
    /// Users with fewer than `min_ratings` ratings.
    pub dropped: Vec<usize>,
    pub seed: Seed,
}

/// Randomly splits each user's ratings, deterministically in `cfg.seed`.
pub fn split_per_user(table: &RatingsTable, cfg: &SplitConfig) -> Result<SplitOutcome> {
    cfg.validate()?;
    let mut per_user: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &table.ratings {
        per_user.entry(r.user).or_default().push((r.item, r.value));
    }
    let mut shards = Vec::with_capacity(per_user.len());
    let mut dropped: Vec<usize> = (0..table.num_users())
        .filter(|u| !per_user.contains_key(u))
        .collect();
    for (user, mut items) in per_user {
        if items.len() < cfg.min_ratings {
            dropped.push(user);
            continue;
        }
        items.sort_by_key(|&(item, _)| item);
        let mut rng = cfg.seed.derive(user as u64).rng();
        items.shuffle(&mut rng);
        let (n_train, n_valid, _) = cfg.split_sizes(items.len());
        let test = items.split_off(n_train + n_valid);
        let valid = items.split_off(n_train);
        shards.push(UserShard {
            user_index: user,
            train: items,
            valid,
            test,
        });
    }
    dropped.sort_unstable();
    if !dropped.is_empty() {
        log::info!(
            "dropped {} users with fewer than {} ratings",
            dropped.len(),
            cfg.min_ratings
        );
    }
    Ok(SplitOutcome {
        shards: ShardSet::new(shards),
        dropped,
        seed: cfg.seed,
    })
}

/// Text manifest: seed line, then one `user_id<TAB>train<TAB>valid<TAB>test` line per user.
pub fn shard_manifest(table: &RatingsTable, outcome: &SplitOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed {}", outcome.seed.0);
    let _ = writeln!(out, "user\ttrain\tvalid\ttest");
    for shard in outcome.shards.iter() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            table.user_ids[shard.user_index],
            shard.train.len(),
            shard.valid.len(),
            shard.test.len()
        );
    }
    for &u in &outcome.dropped {
        let _ = writeln!(out, "# dropped {}", table.user_ids[u]);
    }
    out
}

pub fn write_shard_manifest(
    table: &RatingsTable,
    outcome: &SplitOutcome,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, shard_manifest(table, outcome))?;
    Ok(())
}

fn checked_batch_size(batch_size: usize, population: usize, what: &str) -> Result<usize> {
    if batch_size == 0 {
        return Err(Error::Config(format!("{what} batch size must be at least 1")));
    }
    if batch_size > population {
        log::debug!("{what} batch size {batch_size} clamped to population {population}");
    }
    Ok(batch_size.min(population))
}

fn draw_without_replacement<T: Clone>(pool: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut copy = pool.to_vec();
    let (chosen, _) = copy.partial_shuffle(rng, k);
    chosen.to_vec()
}

/// Uniform sample of `batch_size` distinct users.
pub fn sample_user_batch(users: &[usize], batch_size: usize, seed: Seed) -> Result<Vec<usize>> {
    let k = checked_batch_size(batch_size, users.len(), "user")?;
    Ok(draw_without_replacement(users, k, &mut seed.rng()))
}

/// Uniform sample of `batch_size` distinct training ratings from a shard.
pub fn sample_rating_batch(
    shard: &UserShard,
    batch_size: usize,
    seed: Seed,
) -> Result<Vec<(usize, f64)>> {
    let k = checked_batch_size(batch_size, shard.train.len(), "rating")?;
    Ok(draw_without_replacement(&shard.train, k, &mut seed.rng()))
}

/// Stateful user sampler: walks a random permutation of the population in
/// batch-sized steps and reshuffles once fewer than a full batch remain, so a
/// batch never repeats a user.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(population: &[usize], batch_size: usize, seed: Seed) -> Result<Self> {
        let batch_size = checked_batch_size(batch_size, population.len(), "user")?;
        if population.is_empty() {
            return Err(Error::Empty("user population"));
        }
        let mut order = population.to_vec();
        order.sort_unstable();
        let mut rng = seed.rng();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}

/// Path helper for error reporting when data comes from memory.
pub fn in_memory_origin() -> PathBuf {
    PathBuf::from("<memory>")
}
