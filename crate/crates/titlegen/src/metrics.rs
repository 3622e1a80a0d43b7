//! Evaluation metrics: BLEU-n, ROUGE-N F1, METEOR, distinct-n, embedding
//! similarity metrics, and quartile-bucket robustness reporting.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splitter::{quartile_buckets, Bucket, FrequencyStats, SplitError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("candidate corpus is empty")]
    EmptyCorpus,
    #[error("n must be >= 1")]
    ZeroOrder,
    #[error("no n-grams of order {0} in any candidate")]
    NoNgrams(usize),
    #[error("zero-norm embedding vector")]
    ZeroNorm,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("empty token embedding list")]
    EmptyEmbeddings,
    #[error("non-finite embedding value")]
    NonFiniteEmbedding,
    #[error("missing frequency stats for pids: {}", .0.join(", "))]
    MissingStats(Vec<String>),
    #[error("reference for pid {0} is empty")]
    EmptyReference(String),
    #[error("embeddings provided for {0} of {1} pairs; need all or none")]
    PartialEmbeddings(usize, usize),
    #[error("nll provided for {0} of {1} pairs; need all or none")]
    PartialNll(usize, usize),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad pairs line {0}: {1}")]
    BadPairsLine(usize, String),
    #[error("bad embedding file at line {0}: {1}")]
    BadEmbeddingFile(usize, String),
}

/// One reference/candidate title pair, pre-tokenized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub pid: String,
    pub reference: Vec<String>,
    pub candidate: Vec<String>,
}

/// Per-token embedding vectors for one token list.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddings {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let dim = match vectors.first() {
            Some(v) => v.len(),
            None => return Err(MetricsError::EmptyEmbeddings),
        };
        if dim == 0 {
            return Err(MetricsError::EmptyEmbeddings);
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(MetricsError::DimMismatch(dim, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(MetricsError::NonFiniteEmbedding);
            }
        }
        Ok(Self { dim, vectors })
    }
}

/// Reference and candidate embeddings for one pair.
#[derive(Debug, Clone)]
pub struct PairEmbeddings {
    pub reference: TokenEmbeddings,
    pub candidate: TokenEmbeddings,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU: clipped modified precision for orders 1..=n combined
/// by geometric mean, times the brevity penalty. `smooth` applies add-one
/// smoothing to each order's ratio.
pub fn bleu_n_opt(pairs: &[EvalPair], n: usize, smooth: bool) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let mut matches = 0usize;
        let mut total = 0usize;
        for p in pairs {
            let cand = ngrams(&p.candidate, order);
            let refs = ngrams(&p.reference, order);
            for (gram, c) in &cand {
                total += c;
                matches += (*c).min(refs.get(gram).copied().unwrap_or(0));
            }
        }
        let (num, den) = if smooth {
            (matches + 1, total + 1)
        } else {
            (matches, total)
        };
        if num == 0 || den == 0 {
            return Ok(0.0);
        }
        log_sum += (num as f64 / den as f64).ln() / n as f64;
    }
    let l_ref: usize = pairs.iter().map(|p| p.reference.len()).sum();
    let l_cand: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let bp = if l_cand < l_ref {
        (1.0 - l_ref as f64 / l_cand as f64).exp()
    } else {
        1.0
    };
    Ok(bp * log_sum.exp())
}

pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64, MetricsError> {
    bleu_n_opt(pairs, n, false)
}

fn rouge_pair(reference: &[String], candidate: &[String], n: usize) -> f64 {
    let refs = ngrams(reference, n);
    let cands = ngrams(candidate, n);
    let matches: usize = cands
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let n_cand: usize = cands.values().sum();
    let n_ref: usize = refs.values().sum();
    if n_cand == 0 || n_ref == 0 || matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / n_cand as f64;
    let r = matches as f64 / n_ref as f64;
    2.0 * p * r / (p + r)
}

/// Macro-averaged ROUGE-N F1 over pairs.
pub fn rouge_n_f1(pairs: &[EvalPair], n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| rouge_pair(&p.reference, &p.candidate, n))
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Maximum exact-match unigram alignment size and, among maximum alignments,
/// the minimum number of chunks (runs contiguous in both strings). Solved by
/// memoized search over candidate positions; titles are short.
fn meteor_alignment(reference: &[String], candidate: &[String]) -> (usize, usize) {
    // best (matches, chunk_count) comparing matches desc then chunks asc
    type Key = (usize, u64, usize);
    fn better(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
        if a.0 != b.0 {
            if a.0 > b.0 {
                a
            } else {
                b
            }
        } else if a.1 <= b.1 {
            a
        } else {
            b
        }
    }
    fn go(
        cand_i: usize,
        used: u64,
        last_ref: usize, // ref index matched at cand_i-1, or NONE
        none: usize,
        reference: &[String],
        candidate: &[String],
        memo: &mut HashMap<Key, (usize, usize)>,
    ) -> (usize, usize) {
        if cand_i == candidate.len() {
            return (0, 0);
        }
        let key = (cand_i, used, last_ref);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        // leave this candidate token unmatched
        let mut best = go(cand_i + 1, used, none, none, reference, candidate, memo);
        for j in 0..reference.len() {
            if used & (1 << j) != 0 || reference[j] != candidate[cand_i] {
                continue;
            }
            let continues = last_ref != none && j == last_ref + 1;
            let sub = go(
                cand_i + 1,
                used | (1 << j),
                j,
                none,
                reference,
                candidate,
                memo,
            );
            let chunk_start = usize::from(!continues);
            best = better(best, (sub.0 + 1, sub.1 + chunk_start));
        }
        memo.insert(key, best);
        best
    }
    let none = reference.len();
    let mut memo = HashMap::new();
    go(0, 0, none, none, reference, candidate, &mut memo)
}

/// METEOR score for one pair: exact unigram matching, recall weighted nine
/// times precision, cubic fragmentation penalty capped at 0.5.
pub fn meteor_pair(reference: &[String], candidate: &[String]) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let (m, chunks) = meteor_alignment(reference, candidate);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

/// Macro-averaged METEOR over pairs.
pub fn meteor(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| meteor_pair(&p.reference, &p.candidate))
        .collect();
    Ok(scores.iter().sum::<f64>() / pairs.len() as f64)
}

/// Corpus-wide distinct-n: pooled distinct n-grams over pooled total n-grams.
pub fn distinct_n(candidates: &[Vec<String>], n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let mut seen: HashMap<&[String], ()> = HashMap::new();
    let mut total = 0usize;
    for cand in candidates {
        if cand.len() >= n {
            for w in cand.windows(n) {
                total += 1;
                seen.entry(w).or_insert(());
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::NoNgrams(n));
    }
    Ok(seen.len() as f64 / total as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Greedy-matching embedding F1: each side's tokens take their best cosine
/// against the other side, averaged, combined as a harmonic mean.
pub fn bert_score_f1(
    ref_emb: &TokenEmbeddings,
    cand_emb: &TokenEmbeddings,
) -> Result<f64, MetricsError> {
    if ref_emb.dim != cand_emb.dim {
        return Err(MetricsError::DimMismatch(ref_emb.dim, cand_emb.dim));
    }
    let sims: Vec<Vec<f64>> = ref_emb
        .vectors
        .iter()
        .map(|r| {
            cand_emb
                .vectors
                .iter()
                .map(|c| cosine(r, c))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let recall = sims
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / ref_emb.vectors.len() as f64;
    let precision = (0..cand_emb.vectors.len())
        .map(|j| {
            sims.iter()
                .map(|row| row[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / cand_emb.vectors.len() as f64;
    if precision + recall <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Cosine similarity of the two mean-pooled token embedding lists.
pub fn sentence_cosine(
    ref_emb: &TokenEmbeddings,
    cand_emb: &TokenEmbeddings,
) -> Result<f64, MetricsError> {
    if ref_emb.dim != cand_emb.dim {
        return Err(MetricsError::DimMismatch(ref_emb.dim, cand_emb.dim));
    }
    let mean = |e: &TokenEmbeddings| -> Vec<f64> {
        let mut m = vec![0.0; e.dim];
        for v in &e.vectors {
            for (acc, x) in m.iter_mut().zip(v) {
                *acc += x;
            }
        }
        let k = e.vectors.len() as f64;
        m.iter_mut().for_each(|x| *x /= k);
        m
    };
    cosine(&mean(ref_emb), &mean(cand_emb))
}

/// Metric values over one set of pairs. Embedding and NLL fields appear only
/// when those inputs were supplied.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricBlock {
    pub n_pairs: usize,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub rouge_1_f1: f64,
    pub rouge_2_f1: f64,
    pub meteor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinct_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinct_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinct_3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bert_score_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence_cosine: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pid: String,
    pub rouge_1_f1: f64,
    pub rouge_2_f1: f64,
    pub meteor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bert_score_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence_cosine: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: MetricBlock,
    pub by_bucket_ft: BTreeMap<String, MetricBlock>,
    pub by_bucket_fa: BTreeMap<String, MetricBlock>,
    pub per_pair: Vec<PairMetrics>,
}

fn block_for(
    pairs: &[&EvalPair],
    embeddings: Option<&[&PairEmbeddings]>,
    nll: Option<&[f64]>,
) -> Result<MetricBlock, MetricsError> {
    let owned: Vec<EvalPair> = pairs.iter().map(|p| (*p).clone()).collect();
    let candidates: Vec<Vec<String>> = pairs.iter().map(|p| p.candidate.clone()).collect();
    let mut bert = None;
    let mut sent = None;
    if let Some(embs) = embeddings {
        let b: Result<Vec<f64>, _> = embs
            .iter()
            .map(|e| bert_score_f1(&e.reference, &e.candidate))
            .collect();
        let s: Result<Vec<f64>, _> = embs
            .iter()
            .map(|e| sentence_cosine(&e.reference, &e.candidate))
            .collect();
        let (b, s) = (b?, s?);
        bert = Some(b.iter().sum::<f64>() / b.len() as f64);
        sent = Some(s.iter().sum::<f64>() / s.len() as f64);
    }
    Ok(MetricBlock {
        n_pairs: pairs.len(),
        bleu_1: bleu_n(&owned, 1)?,
        bleu_2: bleu_n(&owned, 2)?,
        rouge_1_f1: rouge_n_f1(&owned, 1)?,
        rouge_2_f1: rouge_n_f1(&owned, 2)?,
        meteor: meteor(&owned)?,
        distinct_1: distinct_n(&candidates, 1).ok(),
        distinct_2: distinct_n(&candidates, 2).ok(),
        distinct_3: distinct_n(&candidates, 3).ok(),
        bert_score_f1: bert,
        sentence_cosine: sent,
        nll: nll.map(|v| v.iter().sum::<f64>() / v.len() as f64),
    })
}

/// Computes every applicable metric corpus-wide and per F_t/F_a quartile
/// bucket. `stats` must cover every pid; embeddings and per-pair NLL are all
/// or nothing.
pub fn evaluate(
    pairs: &[EvalPair],
    stats: &HashMap<String, FrequencyStats>,
    embeddings: Option<&HashMap<String, PairEmbeddings>>,
    nll: Option<&HashMap<String, f64>>,
) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    for p in pairs {
        if p.reference.is_empty() {
            return Err(MetricsError::EmptyReference(p.pid.clone()));
        }
    }
    let mut missing: Vec<String> = pairs
        .iter()
        .filter(|p| !stats.contains_key(&p.pid))
        .map(|p| p.pid.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(MetricsError::MissingStats(missing));
    }
    if let Some(embs) = embeddings {
        let covered = pairs.iter().filter(|p| embs.contains_key(&p.pid)).count();
        if covered != pairs.len() {
            return Err(MetricsError::PartialEmbeddings(covered, pairs.len()));
        }
    }
    if let Some(n) = nll {
        let covered = pairs.iter().filter(|p| n.contains_key(&p.pid)).count();
        if covered != pairs.len() {
            return Err(MetricsError::PartialNll(covered, pairs.len()));
        }
    }

    let select = |bucket_map: &HashMap<String, Bucket>,
                  bucket: Bucket|
     -> (Vec<&EvalPair>, Option<Vec<&PairEmbeddings>>, Option<Vec<f64>>) {
        let subset: Vec<&EvalPair> = pairs
            .iter()
            .filter(|p| bucket_map.get(&p.pid) == Some(&bucket))
            .collect();
        let embs = embeddings.map(|e| subset.iter().map(|p| &e[&p.pid]).collect());
        let n = nll.map(|n| subset.iter().map(|p| n[&p.pid]).collect());
        (subset, embs, n)
    };

    let all: Vec<&EvalPair> = pairs.iter().collect();
    let all_embs: Option<Vec<&PairEmbeddings>> =
        embeddings.map(|e| all.iter().map(|p| &e[&p.pid]).collect());
    let all_nll: Option<Vec<f64>> = nll.map(|n| all.iter().map(|p| n[&p.pid]).collect());
    let corpus = block_for(&all, all_embs.as_deref(), all_nll.as_deref())?;

    let mut by_bucket_ft = BTreeMap::new();
    let mut by_bucket_fa = BTreeMap::new();
    if pairs.len() >= 4 {
        for (target, value_of) in [
            (&mut by_bucket_ft, (|s: &FrequencyStats| s.f_t) as fn(&FrequencyStats) -> f64),
            (&mut by_bucket_fa, |s: &FrequencyStats| s.f_a),
        ] {
            let values: Vec<(String, f64)> = pairs
                .iter()
                .map(|p| (p.pid.clone(), value_of(&stats[&p.pid])))
                .collect();
            let bucket_map = quartile_buckets(&values)?;
            for bucket in Bucket::ALL {
                let (subset, embs, n) = select(&bucket_map, bucket);
                if subset.is_empty() {
                    continue;
                }
                let block = block_for(&subset, embs.as_deref(), n.as_deref())?;
                target.insert(format!("{bucket:?}"), block);
            }
        }
    }

    let per_pair = pairs
        .iter()
        .map(|p| {
            let pe = embeddings.map(|e| &e[&p.pid]);
            Ok(PairMetrics {
                pid: p.pid.clone(),
                rouge_1_f1: rouge_pair(&p.reference, &p.candidate, 1),
                rouge_2_f1: rouge_pair(&p.reference, &p.candidate, 2),
                meteor: meteor_pair(&p.reference, &p.candidate),
                bert_score_f1: pe
                    .map(|e| bert_score_f1(&e.reference, &e.candidate))
                    .transpose()?,
                sentence_cosine: pe
                    .map(|e| sentence_cosine(&e.reference, &e.candidate))
                    .transpose()?,
                nll: nll.map(|n| n[&p.pid]),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    Ok(EvalReport {
        corpus,
        by_bucket_ft,
        by_bucket_fa,
        per_pair,
    })
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<(), MetricsError> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| MetricsError::BadPairsLine(0, format!("report parse: {e}")))
    }

    /// Flat CSV with one row per (section, metric) for plotting.
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut out = String::from("section,metric,value\n");
        let push_block = |name: &str, b: &MetricBlock, out: &mut String| {
            let rows: Vec<(&str, Option<f64>)> = vec![
                ("n_pairs", Some(b.n_pairs as f64)),
                ("bleu_1", Some(b.bleu_1)),
                ("bleu_2", Some(b.bleu_2)),
                ("rouge_1_f1", Some(b.rouge_1_f1)),
                ("rouge_2_f1", Some(b.rouge_2_f1)),
                ("meteor", Some(b.meteor)),
                ("distinct_1", b.distinct_1),
                ("distinct_2", b.distinct_2),
                ("distinct_3", b.distinct_3),
                ("bert_score_f1", b.bert_score_f1),
                ("sentence_cosine", b.sentence_cosine),
                ("nll", b.nll),
            ];
            for (metric, value) in rows {
                if let Some(v) = value {
                    out.push_str(&format!("{name},{metric},{v}\n"));
                }
            }
        };
        push_block("corpus", &self.corpus, &mut out);
        for (bucket, block) in &self.by_bucket_ft {
            push_block(&format!("ft_{bucket}"), block, &mut out);
        }
        for (bucket, block) in &self.by_bucket_fa {
            push_block(&format!("fa_{bucket}"), block, &mut out);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Reads a pairs file: JSONL `{pid, reference, candidate}` with token arrays.
pub fn read_pairs(path: &Path) -> Result<Vec<EvalPair>, MetricsError> {
    let file = std::fs::File::open(path)?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: EvalPair = serde_json::from_str(&line)
            .map_err(|e| MetricsError::BadPairsLine(i + 1, e.to_string()))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[EvalPair]) -> Result<(), MetricsError> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads an embedding file. Format, repeated per pair:
///
/// ```text
/// pid <pid> <dim>
/// <dim floats per reference token, one row per token>
///
/// <dim floats per candidate token, one row per token>
///
/// ```
pub fn read_embeddings(path: &Path) -> Result<HashMap<String, PairEmbeddings>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = HashMap::new();
    let mut i = 0usize;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let header: Vec<&str> = lines[i].split_whitespace().collect();
        if header.len() != 3 || header[0] != "pid" {
            return Err(MetricsError::BadEmbeddingFile(
                i + 1,
                "expected `pid <pid> <dim>`".into(),
            ));
        }
        let pid = header[1].to_string();
        let dim: usize = header[2]
            .parse()
            .map_err(|_| MetricsError::BadEmbeddingFile(i + 1, "bad dimension".into()))?;
        i += 1;
        let parse_section = |i: &mut usize| -> Result<TokenEmbeddings, MetricsError> {
            let mut vectors = Vec::new();
            while *i < lines.len() && !lines[*i].trim().is_empty() {
                let row: Result<Vec<f64>, _> =
                    lines[*i].split_whitespace().map(str::parse).collect();
                let row = row
                    .map_err(|_| MetricsError::BadEmbeddingFile(*i + 1, "bad float".into()))?;
                if row.len() != dim {
                    return Err(MetricsError::DimMismatch(dim, row.len()));
                }
                vectors.push(row);
                *i += 1;
            }
            *i += 1; // skip blank separator
            TokenEmbeddings::new(vectors)
        };
        let reference = parse_section(&mut i)?;
        let candidate = parse_section(&mut i)?;
        out.insert(
            pid,
            PairEmbeddings {
                reference,
                candidate,
            },
        );
    }
    Ok(out)
}

pub fn write_embeddings(
    path: &Path,
    embeddings: &BTreeMap<String, PairEmbeddings>,
) -> Result<(), MetricsError> {
    let mut out = String::new();
    for (pid, pe) in embeddings {
        out.push_str(&format!("pid {pid} {}\n", pe.reference.dim));
        for section in [&pe.reference, &pe.candidate] {
            for v in &section.vectors {
                let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
