//! Chronological train/validation/test splitting and train-set frequency
//! statistics.
//!
//! Playlists dated before the cutoff become training data; the holdout is
//! shuffled with a seeded RNG and divided into validation and test. Frequency
//! tables over the training split feed the per-playlist F_t / F_a statistics
//! used for robustness bucketing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Playlist;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("playlist has no tracks: {0}")]
    EmptyPlaylist(String),
    #[error("need at least 4 entries for quartile buckets, got {0}")]
    TooFewForQuartiles(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("percentile must be in (0, 100), got {0}")]
    BadPercentile(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub cutoff_date: NaiveDate,
    pub val_fraction_of_holdout: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(cutoff_date: NaiveDate, val_fraction_of_holdout: f64, seed: u64) -> Self {
        Self {
            cutoff_date,
            val_fraction_of_holdout,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Vec<Playlist>,
    pub val: Vec<Playlist>,
    pub test: Vec<Playlist>,
    /// (train%, holdout%) of the input corpus.
    pub ratios: (f64, f64),
}

/// Partitions a corpus at the cutoff date. Holdout membership in val vs test
/// is decided by a seeded shuffle, so a given (corpus, config) always yields
/// the same partition.
pub fn chronological_split(ps: &[Playlist], cfg: &SplitConfig) -> Result<SplitResult, SplitError> {
    if !(cfg.val_fraction_of_holdout > 0.0 && cfg.val_fraction_of_holdout < 1.0) {
        return Err(SplitError::InvalidConfig(format!(
            "val_fraction_of_holdout must be in (0,1), got {}",
            cfg.val_fraction_of_holdout
        )));
    }
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for p in ps {
        if p.modified_at < cfg.cutoff_date {
            train.push(p.clone());
        } else {
            holdout.push(p.clone());
        }
    }
    if train.is_empty() {
        return Err(SplitError::DegenerateSplit(
            "no playlists before the cutoff date".into(),
        ));
    }
    if holdout.is_empty() {
        return Err(SplitError::DegenerateSplit(
            "no playlists at or after the cutoff date".into(),
        ));
    }
    let total = ps.len() as f64;
    let ratios = (
        100.0 * train.len() as f64 / total,
        100.0 * holdout.len() as f64 / total,
    );
    // Shuffle on a pid-sorted copy so the outcome does not depend on input order.
    holdout.sort_by(|a, b| a.pid.cmp(&b.pid));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    holdout.shuffle(&mut rng);
    let n_val = ((holdout.len() as f64) * cfg.val_fraction_of_holdout).round() as usize;
    let n_val = n_val.clamp(1, holdout.len() - 1);
    let test = holdout.split_off(n_val);
    Ok(SplitResult {
        train,
        val: holdout,
        test,
        ratios,
    })
}

/// Per-ID occurrence counts over the training split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub track_counts: HashMap<String, u64>,
    pub artist_counts: HashMap<String, u64>,
}

impl FrequencyTable {
    pub fn track_count(&self, id: &str) -> u64 {
        self.track_counts.get(id).copied().unwrap_or(0)
    }

    pub fn artist_count(&self, id: &str) -> u64 {
        self.artist_counts.get(id).copied().unwrap_or(0)
    }

    /// Merges another partial table into this one (counts are additive).
    pub fn merge(&mut self, other: &FrequencyTable) {
        for (k, v) in &other.track_counts {
            *self.track_counts.entry(k.clone()).or_insert(0) += v;
        }
        for (k, v) in &other.artist_counts {
            *self.artist_counts.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// TSV export, `id<TAB>count` sorted by id.
    pub fn write_tsv(&self, track_path: &Path, artist_path: &Path) -> Result<(), SplitError> {
        for (path, counts) in [(track_path, &self.track_counts), (artist_path, &self.artist_counts)]
        {
            let sorted: BTreeMap<_, _> = counts.iter().collect();
            let mut out = String::new();
            for (id, count) in sorted {
                out.push_str(id);
                out.push('\t');
                out.push_str(&count.to_string());
                out.push('\n');
            }
            std::fs::write(path, out)?;
        }
        Ok(())
    }
}

/// Counts track and artist occurrences across the training playlists. Each
/// playlist-track occurrence contributes one count to its track and one to
/// each of its artists.
pub fn build_frequency_table(train: &[Playlist]) -> FrequencyTable {
    let mut table = FrequencyTable::default();
    for p in train {
        for t in &p.tracks {
            *table.track_counts.entry(t.track_id.clone()).or_insert(0) += 1;
            for a in &t.artist_ids {
                *table.artist_counts.entry(a.clone()).or_insert(0) += 1;
            }
        }
    }
    table
}

/// Per-playlist mean train-set frequencies of its tracks (F_t) and its
/// artist occurrences (F_a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub f_t: f64,
    pub f_a: f64,
}

pub fn playlist_frequency_stats(
    p: &Playlist,
    ft: &FrequencyTable,
) -> Result<FrequencyStats, SplitError> {
    if p.tracks.is_empty() {
        return Err(SplitError::EmptyPlaylist(p.pid.clone()));
    }
    let m = p.tracks.len() as f64;
    let track_sum: u64 = p.tracks.iter().map(|t| ft.track_count(&t.track_id)).sum();
    let mut artist_sum: u64 = 0;
    let mut n: u64 = 0;
    for t in &p.tracks {
        for a in &t.artist_ids {
            artist_sum += ft.artist_count(a);
            n += 1;
        }
    }
    Ok(FrequencyStats {
        f_t: track_sum as f64 / m,
        f_a: if n == 0 {
            0.0
        } else {
            artist_sum as f64 / n as f64
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::Q1, Bucket::Q2, Bucket::Q3, Bucket::Q4];

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Q1 => "Q1",
            Bucket::Q2 => "Q2",
            Bucket::Q3 => "Q3",
            Bucket::Q4 => "Q4",
        }
    }
}

/// Assigns each pid to a quartile bucket by ascending value, pid as
/// tiebreak. Sizes differ by at most one; remainders go to the lowest
/// buckets first, so |Q1| >= |Q4|.
pub fn quartile_buckets(
    stats: &[(String, f64)],
) -> Result<HashMap<String, Bucket>, SplitError> {
    if stats.len() < 4 {
        return Err(SplitError::TooFewForQuartiles(stats.len()));
    }
    let mut sorted: Vec<&(String, f64)> = stats.iter().collect();
    sorted.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let n = sorted.len();
    let base = n / 4;
    let rem = n % 4;
    let mut out = HashMap::with_capacity(n);
    let mut idx = 0;
    for (b, bucket) in Bucket::ALL.iter().enumerate() {
        let size = base + usize::from(b < rem);
        for entry in &sorted[idx..idx + size] {
            out.insert(entry.0.clone(), *bucket);
        }
        idx += size;
    }
    Ok(out)
}

/// Drops values strictly above the pct-th percentile, using the nearest-rank
/// definition: the threshold is the value at 1-based sorted index
/// ceil(pct/100 * N).
pub fn trim_percentile(values: &[f64], pct: f64) -> Result<Vec<f64>, SplitError> {
    if values.is_empty() {
        return Err(SplitError::EmptyInput);
    }
    if !(pct > 0.0 && pct < 100.0) {
        return Err(SplitError::BadPercentile(pct));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = ((pct / 100.0) * values.len() as f64).ceil() as usize;
    let threshold = sorted[rank.max(1) - 1];
    Ok(values.iter().copied().filter(|v| *v <= threshold).collect())
}

/// JSON manifest recording exact split membership for reconstitution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub cutoff_date: NaiveDate,
    pub val_fraction_of_holdout: f64,
    pub seed: u64,
    pub ratios: (f64, f64),
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn from_result(result: &SplitResult, cfg: &SplitConfig) -> Self {
        Self {
            cutoff_date: cfg.cutoff_date,
            val_fraction_of_holdout: cfg.val_fraction_of_holdout,
            seed: cfg.seed,
            ratios: result.ratios,
            train: result.train.iter().map(|p| p.pid.clone()).collect(),
            val: result.val.iter().map(|p| p.pid.clone()).collect(),
            test: result.test.iter().map(|p| p.pid.clone()).collect(),
        }
    }
}
