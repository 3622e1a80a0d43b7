//! Transformer encoder-decoder for playlist title generation.
//!
//! The encoder consumes track-ID or artist-ID token sequences. By default it
//! applies no positional encoding, so a playlist is treated as an unordered
//! set; the decoder keeps sinusoidal positions since titles are ordered text.
//! Forward and backward passes run on the [`crate::tensor`] tape.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Mat, NodeId, Tape};
use crate::vocab::{EncodedExample, PAD};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite loss (training divergence)")]
    NonFiniteLoss,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io error {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {msg}")]
    Malformed { path: String, msg: String },
    #[error("checkpoint vocab hash mismatch for {0}: trained against a different vocab")]
    VocabHashMismatch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub in_vocab_size: usize,
    pub out_vocab_size: usize,
    pub max_title_len: usize,
    pub use_input_positions: bool,
    pub pre_norm: bool,
}

impl ModelConfig {
    pub fn with_defaults(in_vocab_size: usize, out_vocab_size: usize) -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 512,
            dropout: 0.1,
            in_vocab_size,
            out_vocab_size,
            max_title_len: 16,
            use_input_positions: false,
            pre_norm: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, v) in [
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("in_vocab_size", self.in_vocab_size),
            ("out_vocab_size", self.out_vocab_size),
            ("max_title_len", self.max_title_len),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} must be in [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors plus the seed they were initialized from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStore {
    pub seed: u64,
    pub tensors: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn n_params(&self) -> usize {
        self.tensors.values().map(|m| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Mat::is_finite)
    }
}

/// Whether decoupled weight decay applies to a parameter. Biases and
/// layer-norm gains/offsets are excluded.
pub fn is_decayed(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    !(last.starts_with('b') || last == "gamma" || last == "beta")
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

fn attn_param_names(prefix: &str) -> Vec<String> {
    ["wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"]
        .iter()
        .map(|s| format!("{prefix}.{s}"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Initializes all weights from a scaled uniform distribution,
    /// deterministically for a given seed. Biases start at zero, layer-norm
    /// gains at one.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let mut tensors = BTreeMap::new();
        // Insertion order is fixed by construction order below, not map order,
        // so draw order must not depend on map iteration.
        let mut weight = |tensors: &mut BTreeMap<String, Mat>, name: String, r: usize, c: usize| {
            tensors.insert(name, xavier(&mut rng, r, c));
        };
        weight(&mut tensors, "enc.embed".into(), cfg.in_vocab_size, d);
        weight(&mut tensors, "dec.embed".into(), cfg.out_vocab_size, d);
        for i in 0..cfg.n_enc_layers {
            for name in attn_param_names(&format!("enc.{i}.attn")) {
                if name.rsplit('.').next().unwrap().starts_with('w') {
                    weight(&mut tensors, name, d, d);
                } else {
                    tensors.insert(name, Mat::zeros(1, d));
                }
            }
            tensors.insert(format!("enc.{i}.ln1.gamma"), Mat::from_vec(1, d, vec![1.0; d]));
            tensors.insert(format!("enc.{i}.ln1.beta"), Mat::zeros(1, d));
            weight(&mut tensors, format!("enc.{i}.ff.w1"), d, cfg.d_ff);
            tensors.insert(format!("enc.{i}.ff.b1"), Mat::zeros(1, cfg.d_ff));
            weight(&mut tensors, format!("enc.{i}.ff.w2"), cfg.d_ff, d);
            tensors.insert(format!("enc.{i}.ff.b2"), Mat::zeros(1, d));
            tensors.insert(format!("enc.{i}.ln2.gamma"), Mat::from_vec(1, d, vec![1.0; d]));
            tensors.insert(format!("enc.{i}.ln2.beta"), Mat::zeros(1, d));
        }
        for i in 0..cfg.n_dec_layers {
            for prefix in [format!("dec.{i}.self_attn"), format!("dec.{i}.cross_attn")] {
                for name in attn_param_names(&prefix) {
                    if name.rsplit('.').next().unwrap().starts_with('w') {
                        weight(&mut tensors, name, d, d);
                    } else {
                        tensors.insert(name, Mat::zeros(1, d));
                    }
                }
            }
            for ln in ["ln1", "ln2", "ln3"] {
                tensors.insert(format!("dec.{i}.{ln}.gamma"), Mat::from_vec(1, d, vec![1.0; d]));
                tensors.insert(format!("dec.{i}.{ln}.beta"), Mat::zeros(1, d));
            }
            weight(&mut tensors, format!("dec.{i}.ff.w1"), d, cfg.d_ff);
            tensors.insert(format!("dec.{i}.ff.b1"), Mat::zeros(1, cfg.d_ff));
            weight(&mut tensors, format!("dec.{i}.ff.w2"), cfg.d_ff, d);
            tensors.insert(format!("dec.{i}.ff.b2"), Mat::zeros(1, d));
        }
        if cfg.pre_norm {
            for side in ["enc", "dec"] {
                tensors.insert(format!("{side}.ln_f.gamma"), Mat::from_vec(1, d, vec![1.0; d]));
                tensors.insert(format!("{side}.ln_f.beta"), Mat::zeros(1, d));
            }
        }
        weight(&mut tensors, "out.w".into(), d, cfg.out_vocab_size);
        tensors.insert("out.b".into(), Mat::zeros(1, cfg.out_vocab_size));
        Ok(Self {
            cfg,
            params: ParamStore { seed, tensors },
        })
    }

    /// Encoder latent for one unpadded input sequence (evaluation mode).
    pub fn encode(&self, input_ids: &[usize]) -> Mat {
        let mut tape = Tape::new();
        let tp = self.load_params(&mut tape);
        let z = self.encode_on_tape(&mut tape, &tp, input_ids, &mut None);
        tape.value(z).clone()
    }

    /// Next-token logits at the final prefix position (evaluation mode).
    /// The prefix must start with BOS.
    pub fn decode_step(&self, z: &Mat, prefix: &[usize]) -> Vec<f64> {
        assert!(!prefix.is_empty(), "prefix must contain at least BOS");
        let mut tape = Tape::new();
        let tp = self.load_params(&mut tape);
        let zid = tape.leaf(z.clone());
        let logits = self.decode_on_tape(&mut tape, &tp, zid, prefix, &mut None);
        let v = tape.value(logits);
        v.row(v.rows - 1).to_vec()
    }

    /// Mean NLL over unmasked target positions plus gradients for every
    /// parameter. `dropout_seed` enables training-mode dropout.
    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, BTreeMap<String, Mat>), ModelError> {
        let items = batch.items();
        let total_targets: usize = items.iter().map(|it| it.target_out.len()).sum();
        let per_example: Vec<(f64, BTreeMap<String, Mat>)> = items
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let seed = dropout_seed.map(|s| s.wrapping_add(i as u64));
                self.example_loss_grad(item, seed)
            })
            .collect();
        let mut total_nll = 0.0;
        let mut grads: BTreeMap<String, Mat> = self
            .params
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), Mat::zeros(v.rows, v.cols)))
            .collect();
        for (nll, g) in per_example {
            total_nll += nll;
            for (name, gm) in g {
                let acc = grads.get_mut(&name).expect("grad name");
                for (x, y) in acc.data.iter_mut().zip(&gm.data) {
                    *x += y;
                }
            }
        }
        let scale = 1.0 / total_targets as f64;
        for g in grads.values_mut() {
            for x in g.data.iter_mut() {
                *x *= scale;
            }
        }
        let loss = total_nll * scale;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        Ok((loss, grads))
    }

    /// Mean NLL without gradients or dropout.
    pub fn loss_eval(&self, batch: &Batch) -> Result<f64, ModelError> {
        let items = batch.items();
        let total_targets: usize = items.iter().map(|it| it.target_out.len()).sum();
        // collect preserves item order so the final fold is deterministic
        let losses: Vec<f64> = items
            .par_iter()
            .map(|item| {
                let mut tape = Tape::new();
                let tp = self.load_params(&mut tape);
                let loss = self.example_forward(&mut tape, &tp, item, &mut None);
                tape.value(loss).at(0, 0)
            })
            .collect();
        let total: f64 = losses.iter().sum();
        let loss = total / total_targets as f64;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        Ok(loss)
    }

    fn example_loss_grad(
        &self,
        item: &BatchItem,
        dropout_seed: Option<u64>,
    ) -> (f64, BTreeMap<String, Mat>) {
        let mut tape = Tape::new();
        let tp = self.load_params(&mut tape);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let loss = self.example_forward(&mut tape, &tp, item, &mut rng);
        let grads = tape.backward(loss);
        let nll = tape.value(loss).at(0, 0);
        let named = tp
            .ids
            .iter()
            .filter_map(|(name, id)| grads.get(*id).map(|g| (name.clone(), g.clone())))
            .collect();
        (nll, named)
    }

    fn example_forward(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        item: &BatchItem,
        rng: &mut Option<ChaCha8Rng>,
    ) -> NodeId {
        let z = self.encode_on_tape(tape, tp, &item.input_ids, rng);
        let logits = self.decode_on_tape(tape, tp, z, &item.target_in, rng);
        tape.cross_entropy(logits, &item.target_out)
    }

    fn load_params(&self, tape: &mut Tape) -> TapeParams {
        let ids = self
            .params
            .tensors
            .iter()
            .map(|(name, m)| (name.clone(), tape.leaf(m.clone())))
            .collect();
        TapeParams { ids }
    }

    fn dropout_node(
        &self,
        tape: &mut Tape,
        x: NodeId,
        rng: &mut Option<ChaCha8Rng>,
    ) -> NodeId {
        let p = self.cfg.dropout;
        let Some(rng) = rng.as_mut() else { return x };
        if p == 0.0 {
            return x;
        }
        let v = tape.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask = Mat::from_vec(
            v.rows,
            v.cols,
            (0..v.rows * v.cols)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        );
        tape.mul_const(x, mask)
    }

    fn multi_head_attention(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        prefix: &str,
        queries: NodeId,
        keys_values: NodeId,
        mask: &Mat,
    ) -> NodeId {
        let d_k = self.cfg.d_model / self.cfg.n_heads;
        let scale = 1.0 / (d_k as f64).sqrt();
        let q = tp.linear(tape, prefix, "wq", "bq", queries);
        let k = tp.linear(tape, prefix, "wk", "bk", keys_values);
        let v = tp.linear(tape, prefix, "wv", "bv", keys_values);
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = tape.slice_cols(q, h * d_k, d_k);
            let kh = tape.slice_cols(k, h * d_k, d_k);
            let vh = tape.slice_cols(v, h * d_k, d_k);
            heads.push(tape.attention(qh, kh, vh, scale, mask));
        }
        let joined = tape.concat_cols(&heads);
        tp.linear(tape, prefix, "wo", "bo", joined)
    }

    fn feed_forward(&self, tape: &mut Tape, tp: &TapeParams, prefix: &str, x: NodeId) -> NodeId {
        let h = tp.linear(tape, prefix, "w1", "b1", x);
        let h = tape.relu(h);
        tp.linear(tape, prefix, "w2", "b2", h)
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        input_ids: &[usize],
        rng: &mut Option<ChaCha8Rng>,
    ) -> NodeId {
        assert!(!input_ids.is_empty(), "empty input sequence");
        let embed = tp.id("enc.embed");
        let mut x = tape.gather(embed, input_ids);
        if self.cfg.use_input_positions {
            let pe = sinusoidal_positions(input_ids.len(), self.cfg.d_model);
            x = tape.add_const(x, &pe);
        }
        let n = input_ids.len();
        let no_mask = Mat::zeros(n, n);
        for i in 0..self.cfg.n_enc_layers {
            let attn_prefix = format!("enc.{i}.attn");
            let ff_prefix = format!("enc.{i}.ff");
            if self.cfg.pre_norm {
                let normed = tp.layer_norm(tape, &format!("enc.{i}.ln1"), x);
                let a = self.multi_head_attention(tape, tp, &attn_prefix, normed, normed, &no_mask);
                let a = self.dropout_node(tape, a, rng);
                x = tape.add(x, a);
                let normed = tp.layer_norm(tape, &format!("enc.{i}.ln2"), x);
                let f = self.feed_forward(tape, tp, &ff_prefix, normed);
                let f = self.dropout_node(tape, f, rng);
                x = tape.add(x, f);
            } else {
                let a = self.multi_head_attention(tape, tp, &attn_prefix, x, x, &no_mask);
                let a = self.dropout_node(tape, a, rng);
                let sum = tape.add(x, a);
                x = tp.layer_norm(tape, &format!("enc.{i}.ln1"), sum);
                let f = self.feed_forward(tape, tp, &ff_prefix, x);
                let f = self.dropout_node(tape, f, rng);
                let sum = tape.add(x, f);
                x = tp.layer_norm(tape, &format!("enc.{i}.ln2"), sum);
            }
        }
        if self.cfg.pre_norm {
            x = tp.layer_norm(tape, "enc.ln_f", x);
        }
        x
    }

    fn decode_on_tape(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        z: NodeId,
        target_prefix: &[usize],
        rng: &mut Option<ChaCha8Rng>,
    ) -> NodeId {
        assert!(!target_prefix.is_empty());
        let m = target_prefix.len();
        let n = tape.value(z).rows;
        let embed = tp.id("dec.embed");
        let mut y = tape.gather(embed, target_prefix);
        let pe = sinusoidal_positions(m, self.cfg.d_model);
        y = tape.add_const(y, &pe);
        let mut causal = Mat::zeros(m, m);
        for i in 0..m {
            for j in (i + 1)..m {
                *causal.at_mut(i, j) = f64::NEG_INFINITY;
            }
        }
        let cross_mask = Mat::zeros(m, n);
        for i in 0..self.cfg.n_dec_layers {
            let self_prefix = format!("dec.{i}.self_attn");
            let cross_prefix = format!("dec.{i}.cross_attn");
            let ff_prefix = format!("dec.{i}.ff");
            if self.cfg.pre_norm {
                let normed = tp.layer_norm(tape, &format!("dec.{i}.ln1"), y);
                let a = self.multi_head_attention(tape, tp, &self_prefix, normed, normed, &causal);
                let a = self.dropout_node(tape, a, rng);
                y = tape.add(y, a);
                let normed = tp.layer_norm(tape, &format!("dec.{i}.ln2"), y);
                let c = self.multi_head_attention(tape, tp, &cross_prefix, normed, z, &cross_mask);
                let c = self.dropout_node(tape, c, rng);
                y = tape.add(y, c);
                let normed = tp.layer_norm(tape, &format!("dec.{i}.ln3"), y);
                let f = self.feed_forward(tape, tp, &ff_prefix, normed);
                let f = self.dropout_node(tape, f, rng);
                y = tape.add(y, f);
            } else {
                let a = self.multi_head_attention(tape, tp, &self_prefix, y, y, &causal);
                let a = self.dropout_node(tape, a, rng);
                let sum = tape.add(y, a);
                y = tp.layer_norm(tape, &format!("dec.{i}.ln1"), sum);
                let c = self.multi_head_attention(tape, tp, &cross_prefix, y, z, &cross_mask);
                let c = self.dropout_node(tape, c, rng);
                let sum = tape.add(y, c);
                y = tp.layer_norm(tape, &format!("dec.{i}.ln2"), sum);
                let f = self.feed_forward(tape, tp, &ff_prefix, y);
                let f = self.dropout_node(tape, f, rng);
                let sum = tape.add(y, f);
                y = tp.layer_norm(tape, &format!("dec.{i}.ln3"), sum);
            }
        }
        if self.cfg.pre_norm {
            y = tp.layer_norm(tape, "dec.ln_f", y);
        }
        let w = tp.id("out.w");
        let b = tp.id("out.b");
        let logits = tape.matmul(y, w);
        tape.add_row(logits, b)
    }
}

struct TapeParams {
    ids: BTreeMap<String, NodeId>,
}

impl TapeParams {
    fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    fn linear(&self, tape: &mut Tape, prefix: &str, w: &str, b: &str, x: NodeId) -> NodeId {
        let wx = tape.matmul(x, self.id(&format!("{prefix}.{w}")));
        tape.add_row(wx, self.id(&format!("{prefix}.{b}")))
    }

    fn layer_norm(&self, tape: &mut Tape, prefix: &str, x: NodeId) -> NodeId {
        tape.layer_norm(
            x,
            self.id(&format!("{prefix}.gamma")),
            self.id(&format!("{prefix}.beta")),
            1e-5,
        )
    }
}

/// Standard sinusoidal positional encoding table.
pub fn sinusoidal_positions(len: usize, d_model: usize) -> Mat {
    let mut pe = Mat::zeros(len, d_model);
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            *pe.at_mut(pos, 2 * i) = (pos as f64 * rate).sin();
            if 2 * i + 1 < d_model {
                *pe.at_mut(pos, 2 * i + 1) = (pos as f64 * rate).cos();
            }
        }
    }
    pe
}

/// A PAD-padded batch with masks marking real tokens. The padded layout is
/// the wire contract; the loss only reads unmasked positions, so PAD content
/// never influences results.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input_ids: Vec<Vec<usize>>,
    pub input_mask: Vec<Vec<bool>>,
    pub target_in: Vec<Vec<usize>>,
    pub target_out: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<bool>>,
    pub pids: Vec<String>,
}

/// One unpadded example recovered from a batch.
pub struct BatchItem {
    pub input_ids: Vec<usize>,
    pub target_in: Vec<usize>,
    pub target_out: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[&EncodedExample]) -> Self {
        assert!(!examples.is_empty());
        assert!(
            examples
                .iter()
                .all(|e| !e.input_ids.is_empty() && e.target_ids.len() >= 2),
            "examples must have at least one input token and BOS+EOS targets"
        );
        let n = examples.iter().map(|e| e.input_ids.len()).max().unwrap();
        let m = examples.iter().map(|e| e.target_ids.len() - 1).max().unwrap();
        let mut batch = Batch {
            input_ids: Vec::new(),
            input_mask: Vec::new(),
            target_in: Vec::new(),
            target_out: Vec::new(),
            target_mask: Vec::new(),
            pids: Vec::new(),
        };
        for e in examples {
            let mut ids = e.input_ids.clone();
            let mut mask = vec![true; ids.len()];
            ids.resize(n, PAD);
            mask.resize(n, false);
            batch.input_ids.push(ids);
            batch.input_mask.push(mask);

            let len = e.target_ids.len() - 1;
            let mut tin = e.target_ids[..len].to_vec();
            let mut tout = e.target_ids[1..].to_vec();
            let mut tmask = vec![true; len];
            tin.resize(m, PAD);
            tout.resize(m, PAD);
            tmask.resize(m, false);
            batch.target_in.push(tin);
            batch.target_out.push(tout);
            batch.target_mask.push(tmask);
            batch.pids.push(e.pid.clone());
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Strips padding using the masks.
    pub fn items(&self) -> Vec<BatchItem> {
        (0..self.len())
            .map(|i| {
                let take = |ids: &[usize], mask: &[bool]| {
                    ids.iter()
                        .zip(mask)
                        .filter(|(_, m)| **m)
                        .map(|(id, _)| *id)
                        .collect::<Vec<usize>>()
                };
                BatchItem {
                    input_ids: take(&self.input_ids[i], &self.input_mask[i]),
                    target_in: take(&self.target_in[i], &self.target_mask[i]),
                    target_out: take(&self.target_out[i], &self.target_mask[i]),
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: BTreeMap<String, Mat>,
    pub in_vocab_sha256: String,
    pub out_vocab_sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String, ModelError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl Checkpoint {
    pub fn from_model(model: &Model, in_vocab_sha256: String, out_vocab_sha256: String) -> Self {
        Self {
            config: model.cfg.clone(),
            seed: model.params.seed,
            params: model.params.tensors.clone(),
            in_vocab_sha256,
            out_vocab_sha256,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ModelError::Malformed {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Rebuilds the model, verifying the vocab files it was trained against.
    pub fn into_model(
        self,
        in_vocab_path: &Path,
        out_vocab_path: &Path,
    ) -> Result<Model, ModelError> {
        if sha256_file(in_vocab_path)? != self.in_vocab_sha256 {
            return Err(ModelError::VocabHashMismatch(
                in_vocab_path.display().to_string(),
            ));
        }
        if sha256_file(out_vocab_path)? != self.out_vocab_sha256 {
            return Err(ModelError::VocabHashMismatch(
                out_vocab_path.display().to_string(),
            ));
        }
        Ok(Model {
            cfg: self.config,
            params: ParamStore {
                seed: self.seed,
                tensors: self.params,
            },
        })
    }
}
