//! Vocabulary construction and playlist encoding.
//!
//! Vocabularies are built only from the training split. Any ID or word not
//! present in the vocabulary encodes to `<UNK>`, which is how newly released
//! tracks are represented at validation/test time.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize_title, Playlist};

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty vocabulary after thresholding (min_count={0})")]
    Empty(usize),
    #[error("empty training split")]
    EmptyTrain,
    #[error("malformed vocab file {path}: {msg}")]
    Malformed { path: String, msg: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<PAD>", "<UNK>", "<BOS>", "<EOS>"];

/// Which ID alphabet feeds the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Track,
    Artist,
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputMode::Track => write!(f, "track"),
            InputMode::Artist => write!(f, "artist"),
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "track" => Ok(InputMode::Track),
            "artist" => Ok(InputMode::Artist),
            other => Err(format!("unknown input mode `{other}` (track|artist)")),
        }
    }
}

/// Bidirectional token<->index map with fixed special tokens on indices 0-3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocab from (token, count) pairs, keeping counts >= min_count,
    /// ordered by descending count then lexicographic token.
    pub fn from_counts(counts: HashMap<String, u64>, min_count: usize) -> Result<Self, VocabError> {
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count as u64)
            .collect();
        if entries.is_empty() {
            return Err(VocabError::Empty(min_count));
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut index_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        index_to_token.extend(entries.into_iter().map(|(t, _)| t));
        let token_to_index = index_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            token_to_index,
            index_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_token.is_empty()
    }

    /// Index for a token, falling back to `<UNK>`.
    pub fn index_of(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_index.contains_key(token)
    }

    pub fn token_at(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(|s| s.as_str())
    }

    /// One token per line, line number = index, trailing newline.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = String::new();
        for token in &self.index_to_token {
            out.push_str(token);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| VocabError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let index_to_token: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if index_to_token.len() < SPECIAL_TOKENS.len() {
            return Err(VocabError::Malformed {
                path: path.display().to_string(),
                msg: "fewer lines than special tokens".into(),
            });
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if index_to_token[i] != *special {
                return Err(VocabError::Malformed {
                    path: path.display().to_string(),
                    msg: format!("line {i} is `{}`, expected `{special}`", index_to_token[i]),
                });
            }
        }
        let token_to_index = index_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            token_to_index,
            index_to_token,
        })
    }
}

/// Iterates the input-ID sequence of a playlist for the given mode: track IDs
/// directly, or each track's artist IDs expanded in order with duplicates
/// preserved across tracks.
pub fn input_ids_of(p: &Playlist, mode: InputMode) -> Vec<&str> {
    match mode {
        InputMode::Track => p.tracks.iter().map(|t| t.track_id.as_str()).collect(),
        InputMode::Artist => p
            .tracks
            .iter()
            .flat_map(|t| t.artist_ids.iter().map(|a| a.as_str()))
            .collect(),
    }
}

pub fn build_input_vocab(
    train: &[Playlist],
    mode: InputMode,
    min_count: usize,
) -> Result<Vocab, VocabError> {
    if train.is_empty() {
        return Err(VocabError::EmptyTrain);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for p in train {
        for id in input_ids_of(p, mode) {
            *counts.entry(id.to_string()).or_insert(0) += 1;
        }
    }
    Vocab::from_counts(counts, min_count)
}

pub fn build_output_vocab(train: &[Playlist], min_count: usize) -> Result<Vocab, VocabError> {
    if train.is_empty() {
        return Err(VocabError::EmptyTrain);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for p in train {
        for word in tokenize_title(&p.title) {
            *counts.entry(word).or_insert(0) += 1;
        }
    }
    Vocab::from_counts(counts, min_count)
}

/// A playlist encoded for the model: input index sequence and BOS..EOS
/// framed target word indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub pid: String,
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
}

pub fn encode(
    p: &Playlist,
    in_vocab: &Vocab,
    out_vocab: &Vocab,
    mode: InputMode,
    max_input_len: usize,
    max_title_len: usize,
) -> EncodedExample {
    let mut input_ids: Vec<usize> = input_ids_of(p, mode)
        .into_iter()
        .map(|id| in_vocab.index_of(id))
        .collect();
    input_ids.truncate(max_input_len);

    let mut target_ids = vec![BOS];
    for word in tokenize_title(&p.title).into_iter().take(max_title_len - 2) {
        target_ids.push(out_vocab.index_of(&word));
    }
    target_ids.push(EOS);

    EncodedExample {
        pid: p.pid.clone(),
        input_ids,
        target_ids,
    }
}

/// Fraction of input token occurrences that are `<UNK>`.
pub fn unk_proportion(examples: &[EncodedExample]) -> f64 {
    let total: usize = examples.iter().map(|e| e.input_ids.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let unks: usize = examples
        .iter()
        .map(|e| e.input_ids.iter().filter(|i| **i == UNK).count())
        .sum();
    unks as f64 / total as f64
}
