//! Pipeline command-line tool: dataset conversion, filtering, chronological
//! splitting, vocabulary building, training, decoding, and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use titlegen::corpus::{
    filter_corpus, ingest, tokenize_title, write_jsonl, AdapterMap, FilterConfig, IngestFormat,
    Playlist, TagList, TagMatchMode,
};
use titlegen::generator::{generate_batch, DecodeConfig};
use titlegen::manifest::RunManifest;
use titlegen::metrics::{
    evaluate, read_embeddings, read_pairs, write_pairs, EvalPair, EvalReport,
};
use titlegen::model::{sha256_file, Batch, Checkpoint, Model, ModelConfig};
use titlegen::splitter::{
    build_frequency_table, chronological_split, playlist_frequency_stats, trim_percentile,
    FrequencyStats, SplitConfig, SplitManifest,
};
use titlegen::synth::{generate_corpus, grammar_words, SynthConfig};
use titlegen::trainer::{train, write_log_csv, TrainConfig};
use titlegen::vocab::{
    build_input_vocab, build_output_vocab, encode, unk_proportion, EncodedExample, InputMode,
    Vocab,
};

#[derive(Parser)]
#[command(
    name = "titlegen",
    about = "Generate and evaluate playlist titles from track or artist ID sequences",
    version
)]
struct Cli {
    /// Cap worker thread parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a source dataset into the normalized playlist JSONL schema.
    Convert(ConvertArgs),
    /// Drop playlists failing the title/track/tag quality criteria.
    Filter(FilterArgs),
    /// Partition a corpus chronologically into train/val/test.
    Split(SplitArgs),
    /// Build input (track or artist ID) and output (title word) vocabularies.
    BuildVocab(BuildVocabArgs),
    /// Train an encoder-decoder model on an encoded split.
    Train(TrainArgs),
    /// Decode titles for a corpus with a trained checkpoint.
    Generate(GenerateArgs),
    /// Score reference/candidate pairs with all metrics.
    Evaluate(EvaluateArgs),
    /// Render an evaluation report into plot-ready CSV data.
    Report(ReportArgs),
    /// Generate a synthetic corpus with a long-tail track distribution.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Source dataset file.
    #[arg(long)]
    input: PathBuf,
    /// Source format.
    #[arg(long, value_parser = parse_format)]
    format: IngestFormat,
    /// JSON file overriding adapter field names.
    #[arg(long)]
    adapter_map: Option<PathBuf>,
    /// Song metadata sidecar (melon format only).
    #[arg(long)]
    song_meta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_format(s: &str) -> Result<IngestFormat, String> {
    match s {
        "normalized-jsonl" => Ok(IngestFormat::NormalizedJsonl),
        "melon" => Ok(IngestFormat::Melon),
        "mpd-slice" => Ok(IngestFormat::MpdSlice),
        other => Err(format!(
            "unknown format `{other}` (expected normalized-jsonl, melon, or mpd-slice)"
        )),
    }
}

#[derive(Args)]
struct FilterArgs {
    /// Normalized playlist JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Tag list file, one tag per line.
    #[arg(long)]
    tags: PathBuf,
    #[arg(long, default_value_t = 3)]
    min_title_tokens: usize,
    #[arg(long, default_value_t = 2.0)]
    min_avg_char_len: f64,
    #[arg(long, default_value_t = 2)]
    min_tracks: usize,
    /// Tag match mode: `token` or `substring`.
    #[arg(long, default_value = "token", value_parser = parse_tag_mode)]
    tag_match: TagMatchMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_tag_mode(s: &str) -> Result<TagMatchMode, String> {
    match s {
        "token" => Ok(TagMatchMode::Token),
        "substring" => Ok(TagMatchMode::Substring),
        other => Err(format!("unknown tag match mode `{other}`")),
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Date boundary: playlists before it train, the rest are held out.
    #[arg(long)]
    cutoff: NaiveDate,
    /// Fraction of the holdout used for validation.
    #[arg(long, default_value_t = 0.5)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for train/val/test JSONL, the split manifest, and train
    /// frequency tables.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Training split JSONL.
    #[arg(long)]
    train: PathBuf,
    /// Input token kind: `track` or `artist`.
    #[arg(long)]
    input_mode: InputMode,
    /// Minimum occurrences to enter a vocabulary.
    #[arg(long, default_value_t = 2)]
    min_count: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    input_mode: InputMode,
    #[arg(long)]
    input_vocab: PathBuf,
    #[arg(long)]
    output_vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Epoch log CSV (default: `<out>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,

    #[arg(long, default_value_t = 128)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    n_heads: usize,
    #[arg(long, default_value_t = 2)]
    enc_layers: usize,
    #[arg(long, default_value_t = 2)]
    dec_layers: usize,
    /// Feed-forward width (default 4 * d_model).
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 16)]
    max_title_len: usize,
    #[arg(long, default_value_t = 64)]
    max_input_len: usize,
    /// Give encoder inputs positional encodings (off treats them as a set).
    #[arg(long)]
    use_input_positions: bool,
    /// Pre-norm transformer blocks instead of post-norm.
    #[arg(long)]
    pre_norm: bool,

    #[arg(long, default_value_t = 0.005)]
    lr_max: f64,
    #[arg(long, default_value_t = 1e-6)]
    lr_min: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Classic L2 regularization instead of decoupled decay.
    #[arg(long)]
    coupled_decay: bool,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to decode (normalized JSONL; titles become references).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    input_vocab: PathBuf,
    #[arg(long)]
    output_vocab: PathBuf,
    #[arg(long)]
    input_mode: InputMode,
    #[arg(long, default_value_t = 4)]
    beam_width: usize,
    /// Maximum generated words (default: checkpoint max_title_len - 2).
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 64)]
    max_input_len: usize,
    /// Pairs JSONL output.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-playlist NLL of the reference title as JSON.
    #[arg(long)]
    nll_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Pairs JSONL from `generate`.
    #[arg(long)]
    pairs: PathBuf,
    /// Training split JSONL (frequency tables for bucketing).
    #[arg(long)]
    train: PathBuf,
    /// Corpus the pairs were decoded from (per-playlist frequency stats).
    #[arg(long)]
    eval_corpus: PathBuf,
    /// Optional per-pair token embedding file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Optional per-pair NLL JSON map from `generate --nll-out`.
    #[arg(long)]
    nll: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Flat CSV output (default: `<out>` with .csv extension).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON from `evaluate`.
    #[arg(long)]
    report: PathBuf,
    /// Training split JSONL for frequency histograms.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Corpus whose playlists feed the frequency histograms.
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
    /// Percentile kept in frequency histograms.
    #[arg(long, default_value_t = 99.0)]
    trim_pct: f64,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n_playlists: usize,
    #[arg(long, default_value_t = 5000)]
    n_tracks: usize,
    #[arg(long, default_value_t = 10)]
    tracks_per_artist: usize,
    #[arg(long, default_value_t = 1)]
    artists_per_track: usize,
    #[arg(long, default_value_t = 1.1)]
    zipf_exponent: f64,
    #[arg(long, default_value_t = 3)]
    min_tracks: usize,
    #[arg(long, default_value_t = 12)]
    max_tracks: usize,
    #[arg(long, default_value = "2018-01-01")]
    start_date: NaiveDate,
    #[arg(long, default_value = "2021-12-31")]
    end_date: NaiveDate,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the title grammar's word list as a tag file.
    #[arg(long)]
    tags_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Convert(a) => cmd_convert(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Split(a) => cmd_split(a),
        Command::BuildVocab(a) => cmd_build_vocab(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single line, `error: <chain>` for machine parsing
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": ").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

/// Status line helper; plain text, honoring NO_COLOR by never adding color
/// unless the environment allows it.
fn status(msg: &str) {
    if std::env::var_os("NO_COLOR").is_none() && std::io::IsTerminal::is_terminal(&std::io::stderr())
    {
        eprintln!("\u{1b}[32m*\u{1b}[0m {msg}");
    } else {
        eprintln!("* {msg}");
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Playlist>> {
    ingest(path, IngestFormat::NormalizedJsonl, &AdapterMap::default(), None)
        .with_context(|| format!("reading corpus {}", path.display()))
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let map = match &a.adapter_map {
        Some(p) => AdapterMap::load(p)?,
        None => AdapterMap::default(),
    };
    let config = serde_json::json!({
        "format": a.format,
        "adapter_map": map,
    });
    let mut manifest = RunManifest::new("convert", &config, a.seed);
    manifest.add_input("source", &a.input);
    if let Some(m) = &a.song_meta {
        manifest.add_input("song_meta", m);
    }
    let playlists = ingest(&a.input, a.format, &map, a.song_meta.as_deref())?;
    write_jsonl(&a.out, &playlists)?;
    status(&format!(
        "converted {} playlists -> {}",
        playlists.len(),
        a.out.display()
    ));
    manifest.add_output("corpus", &a.out);
    manifest.finalize()?;
    manifest.write(&RunManifest::path_for(&a.out))?;
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let cfg = FilterConfig {
        min_title_tokens: a.min_title_tokens,
        min_avg_char_len: a.min_avg_char_len,
        min_tracks: a.min_tracks,
        tag_match_mode: a.tag_match,
    };
    let mut manifest = RunManifest::new("filter", &cfg, a.seed);
    manifest.add_input("corpus", &a.input);
    manifest.add_input("tags", &a.tags);
    let tags = TagList::load(&a.tags)?;
    let playlists = read_corpus(&a.input)?;
    let (kept, stats) = filter_corpus(&playlists, &cfg, &tags);
    write_jsonl(&a.out, &kept)?;
    status(&format!(
        "kept {} of {} (rejected by criterion i-iv: {:?})",
        stats.kept,
        playlists.len(),
        stats.rejected
    ));
    manifest.add_output("corpus", &a.out);
    manifest.finalize()?;
    manifest.write(&RunManifest::path_for(&a.out))?;
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let cfg = SplitConfig::new(a.cutoff, a.val_fraction, a.seed);
    let mut manifest = RunManifest::new("split", &cfg, a.seed);
    manifest.add_input("corpus", &a.input);
    let playlists = read_corpus(&a.input)?;
    let result = chronological_split(&playlists, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;

    let paths: Vec<(&str, PathBuf, &[Playlist])> = vec![
        ("train", a.out_dir.join("train.jsonl"), &result.train),
        ("val", a.out_dir.join("val.jsonl"), &result.val),
        ("test", a.out_dir.join("test.jsonl"), &result.test),
    ];
    for (label, path, split) in &paths {
        write_jsonl(path, split)?;
        manifest.add_output(label, path);
    }

    let split_manifest = SplitManifest::from_result(&result, &cfg);
    let sm_path = a.out_dir.join("split.json");
    let mut text = serde_json::to_string_pretty(&split_manifest)?;
    text.push('\n');
    std::fs::write(&sm_path, text)?;
    manifest.add_output("split_manifest", &sm_path);

    let freq = build_frequency_table(&result.train);
    let track_tsv = a.out_dir.join("train_track_freq.tsv");
    let artist_tsv = a.out_dir.join("train_artist_freq.tsv");
    freq.write_tsv(&track_tsv, &artist_tsv)?;
    manifest.add_output("track_freq", &track_tsv);
    manifest.add_output("artist_freq", &artist_tsv);

    status(&format!(
        "split {} playlists: {} train / {} val / {} test ({:.1}% : {:.1}%)",
        playlists.len(),
        result.train.len(),
        result.val.len(),
        result.test.len(),
        result.ratios.0,
        result.ratios.1
    ));
    manifest.finalize()?;
    manifest.write(&a.out_dir.join("split.manifest.json"))?;
    Ok(())
}

fn vocab_paths(dir: &Path, mode: InputMode) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("input_vocab.{mode}.txt")),
        dir.join("output_vocab.txt"),
    )
}

fn cmd_build_vocab(a: BuildVocabArgs) -> Result<()> {
    let config = serde_json::json!({
        "input_mode": a.input_mode.to_string(),
        "min_count": a.min_count,
    });
    let mut manifest = RunManifest::new("build-vocab", &config, a.seed);
    manifest.add_input("train", &a.train);
    let train = read_corpus(&a.train)?;
    let in_vocab = build_input_vocab(&train, a.input_mode, a.min_count)?;
    let out_vocab = build_output_vocab(&train, a.min_count)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (in_path, out_path) = vocab_paths(&a.out_dir, a.input_mode);
    in_vocab.save(&in_path)?;
    out_vocab.save(&out_path)?;
    status(&format!(
        "vocab sizes: input({}) = {}, output = {}",
        a.input_mode,
        in_vocab.len(),
        out_vocab.len()
    ));
    manifest.add_output("input_vocab", &in_path);
    manifest.add_output("output_vocab", &out_path);
    manifest.finalize()?;
    manifest.write(&in_path.with_extension("manifest.json"))?;
    Ok(())
}

fn encode_corpus(
    playlists: &[Playlist],
    in_vocab: &Vocab,
    out_vocab: &Vocab,
    mode: InputMode,
    max_input_len: usize,
    max_title_len: usize,
) -> Vec<EncodedExample> {
    playlists
        .iter()
        .map(|p| encode(p, in_vocab, out_vocab, mode, max_input_len, max_title_len))
        .filter(|e| !e.input_ids.is_empty())
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let in_vocab = Vocab::load(&a.input_vocab)?;
    let out_vocab = Vocab::load(&a.output_vocab)?;
    let model_cfg = ModelConfig {
        d_model: a.d_model,
        n_heads: a.n_heads,
        n_enc_layers: a.enc_layers,
        n_dec_layers: a.dec_layers,
        d_ff: a.d_ff.unwrap_or(4 * a.d_model),
        dropout: a.dropout,
        in_vocab_size: in_vocab.len(),
        out_vocab_size: out_vocab.len(),
        max_title_len: a.max_title_len,
        use_input_positions: a.use_input_positions,
        pre_norm: a.pre_norm,
    };
    let train_cfg = TrainConfig {
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        weight_decay: a.weight_decay,
        decoupled_decay: !a.coupled_decay,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let config = serde_json::json!({
        "model": model_cfg,
        "train": train_cfg,
        "input_mode": a.input_mode.to_string(),
        "max_input_len": a.max_input_len,
    });
    let mut manifest = RunManifest::new("train", &config, a.seed);
    for (label, path) in [
        ("train", &a.train),
        ("val", &a.val),
        ("input_vocab", &a.input_vocab),
        ("output_vocab", &a.output_vocab),
    ] {
        manifest.add_input(label, path);
    }

    let train_ps = read_corpus(&a.train)?;
    let val_ps = read_corpus(&a.val)?;
    let train_ex = encode_corpus(
        &train_ps,
        &in_vocab,
        &out_vocab,
        a.input_mode,
        a.max_input_len,
        a.max_title_len,
    );
    let val_ex = encode_corpus(
        &val_ps,
        &in_vocab,
        &out_vocab,
        a.input_mode,
        a.max_input_len,
        a.max_title_len,
    );
    status(&format!(
        "training on {} examples, validating on {} (input UNK rate {:.2}%)",
        train_ex.len(),
        val_ex.len(),
        100.0 * unk_proportion(&train_ex)
    ));

    let model = Model::init(model_cfg, a.seed)?;
    let outcome = train(model, &train_ex, &val_ex, &train_cfg)?;
    status(&format!(
        "stopped after {} epochs ({:?}); best val NLL {:.4} at epoch {}",
        outcome.log.len(),
        outcome.stop,
        outcome.best_val_nll,
        outcome.best_epoch
    ));

    let checkpoint = Checkpoint::from_model(
        &outcome.best_model,
        sha256_file(&a.input_vocab)?,
        sha256_file(&a.output_vocab)?,
    );
    checkpoint.save(&a.out)?;
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| a.out.with_extension("log.csv"));
    write_log_csv(&log_path, &outcome.log)?;
    manifest.add_output("checkpoint", &a.out);
    manifest.add_output("log", &log_path);
    manifest.finalize()?;
    manifest.write(&RunManifest::path_for(&a.out))?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let in_vocab = Vocab::load(&a.input_vocab)?;
    let out_vocab = Vocab::load(&a.output_vocab)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let model = checkpoint.into_model(&a.input_vocab, &a.output_vocab)?;
    let decode_cfg = DecodeConfig {
        beam_width: a.beam_width,
        max_len: a
            .max_len
            .unwrap_or_else(|| model.cfg.max_title_len.saturating_sub(2).max(1)),
    };
    let config = serde_json::json!({
        "decode": decode_cfg,
        "input_mode": a.input_mode.to_string(),
        "max_input_len": a.max_input_len,
    });
    let mut manifest = RunManifest::new("generate", &config, a.seed);
    for (label, path) in [
        ("checkpoint", &a.checkpoint),
        ("corpus", &a.input),
        ("input_vocab", &a.input_vocab),
        ("output_vocab", &a.output_vocab),
    ] {
        manifest.add_input(label, path);
    }

    let playlists = read_corpus(&a.input)?;
    let examples = encode_corpus(
        &playlists,
        &in_vocab,
        &out_vocab,
        a.input_mode,
        a.max_input_len,
        model.cfg.max_title_len,
    );
    if examples.is_empty() {
        bail!("no encodable playlists in {}", a.input.display());
    }
    let inputs: Vec<(String, Vec<usize>)> = examples
        .iter()
        .map(|e| (e.pid.clone(), e.input_ids.clone()))
        .collect();
    let generated = generate_batch(&model, &inputs, &out_vocab, &decode_cfg);

    let references: HashMap<&str, Vec<String>> = playlists
        .iter()
        .map(|p| (p.pid.as_str(), tokenize_title(&p.title)))
        .collect();
    let pairs: Vec<EvalPair> = generated
        .iter()
        .map(|g| EvalPair {
            pid: g.pid.clone(),
            reference: references[g.pid.as_str()].clone(),
            candidate: g.title.split_whitespace().map(str::to_string).collect(),
        })
        .collect();
    write_pairs(&a.out, &pairs)?;
    status(&format!(
        "decoded {} titles -> {}",
        pairs.len(),
        a.out.display()
    ));
    manifest.add_output("pairs", &a.out);

    if let Some(nll_path) = &a.nll_out {
        let mut per_pair: BTreeMap<String, f64> = BTreeMap::new();
        for e in &examples {
            let batch = Batch::from_examples(&[e]);
            per_pair.insert(e.pid.clone(), model.loss_eval(&batch)?);
        }
        let mut text = serde_json::to_string_pretty(&per_pair)?;
        text.push('\n');
        std::fs::write(nll_path, text)?;
        manifest.add_output("nll", nll_path);
    }
    manifest.finalize()?;
    manifest.write(&RunManifest::path_for(&a.out))?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let config = serde_json::json!({
        "embeddings": a.embeddings.is_some(),
        "nll": a.nll.is_some(),
    });
    let mut manifest = RunManifest::new("evaluate", &config, a.seed);
    manifest.add_input("pairs", &a.pairs);
    manifest.add_input("train", &a.train);
    manifest.add_input("eval_corpus", &a.eval_corpus);

    let pairs = read_pairs(&a.pairs)?;
    let train_ps = read_corpus(&a.train)?;
    let eval_ps = read_corpus(&a.eval_corpus)?;
    let freq = build_frequency_table(&train_ps);
    let mut stats: HashMap<String, FrequencyStats> = HashMap::new();
    for p in &eval_ps {
        stats.insert(p.pid.clone(), playlist_frequency_stats(p, &freq)?);
    }
    let embeddings = match &a.embeddings {
        Some(path) => {
            manifest.add_input("embeddings", path);
            Some(read_embeddings(path)?)
        }
        None => None,
    };
    let nll: Option<HashMap<String, f64>> = match &a.nll {
        Some(path) => {
            manifest.add_input("nll", path);
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };

    let report = evaluate(&pairs, &stats, embeddings.as_ref(), nll.as_ref())?;
    report.save_json(&a.out)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    report.write_csv(&csv_path)?;
    status(&format!(
        "evaluated {} pairs: BLEU-1 {:.4}, ROUGE-1 {:.4}, METEOR {:.4}",
        report.corpus.n_pairs, report.corpus.bleu_1, report.corpus.rouge_1_f1, report.corpus.meteor
    ));
    manifest.add_output("report", &a.out);
    manifest.add_output("csv", &csv_path);
    manifest.finalize()?;
    manifest.write(&RunManifest::path_for(&a.out))?;
    Ok(())
}

fn write_histogram(path: &Path, values: &[f64], bins: usize) -> Result<()> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        let b_lo = lo + i as f64 * width;
        out.push_str(&format!("{},{},{}\n", b_lo, b_lo + width, c));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let config = serde_json::json!({
        "trim_pct": a.trim_pct,
        "bins": a.bins,
    });
    let mut manifest = RunManifest::new("report", &config, a.seed);
    manifest.add_input("report", &a.report);
    let report = EvalReport::load_json(&a.report)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;

    // bar data: one row per (section, metric)
    let metrics_csv = a.out_dir.join("metrics.csv");
    report.write_csv(&metrics_csv)?;
    manifest.add_output("metrics", &metrics_csv);

    // distinct-n bar data
    let mut distinct = String::from("section,n,value\n");
    let push = |section: &str, block: &titlegen::metrics::MetricBlock, out: &mut String| {
        for (n, v) in [(1, block.distinct_1), (2, block.distinct_2), (3, block.distinct_3)] {
            if let Some(v) = v {
                out.push_str(&format!("{section},{n},{v}\n"));
            }
        }
    };
    push("corpus", &report.corpus, &mut distinct);
    for (bucket, block) in &report.by_bucket_ft {
        push(&format!("ft_{bucket}"), block, &mut distinct);
    }
    let distinct_csv = a.out_dir.join("distinct.csv");
    std::fs::write(&distinct_csv, distinct)?;
    manifest.add_output("distinct", &distinct_csv);

    // trimmed playlist-frequency histograms
    if let (Some(train_path), Some(eval_path)) = (&a.train, &a.eval_corpus) {
        manifest.add_input("train", train_path);
        manifest.add_input("eval_corpus", eval_path);
        let freq = build_frequency_table(&read_corpus(train_path)?);
        let eval_ps = read_corpus(eval_path)?;
        let mut f_t = Vec::new();
        let mut f_a = Vec::new();
        for p in &eval_ps {
            let s = playlist_frequency_stats(p, &freq)?;
            f_t.push(s.f_t);
            f_a.push(s.f_a);
        }
        for (name, values) in [("ft_hist.csv", f_t), ("fa_hist.csv", f_a)] {
            let trimmed = trim_percentile(&values, a.trim_pct)?;
            let path = a.out_dir.join(name);
            write_histogram(&path, &trimmed, a.bins)?;
            manifest.add_output(name.trim_end_matches(".csv"), &path);
        }
    }

    status(&format!("report data written to {}", a.out_dir.display()));
    manifest.finalize()?;
    manifest.write(&a.out_dir.join("report.manifest.json"))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_playlists: a.n_playlists,
        n_tracks: a.n_tracks,
        tracks_per_artist: a.tracks_per_artist,
        artists_per_track: a.artists_per_track,
        zipf_exponent: a.zipf_exponent,
        min_tracks: a.min_tracks,
        max_tracks: a.max_tracks,
        start_date: a.start_date,
        end_date: a.end_date,
        seed: a.seed,
    };
    let mut manifest = RunManifest::new("synth", &cfg, a.seed);
    let corpus = generate_corpus(&cfg)?;
    write_jsonl(&a.out, &corpus)?;
    status(&format!(
        "generated {} synthetic playlists -> {}",
        corpus.len(),
        a.out.display()
    ));
    manifest.add_output("corpus", &a.out);
    if let Some(tags_path) = &a.tags_out {
        let mut text = grammar_words().join("\n");
        text.push('\n');
        std::fs::write(tags_path, text)?;
        manifest.add_output("tags", tags_path);
    }
    manifest.finalize()?;
    manifest.write(&RunManifest::path_for(&a.out))?;
    Ok(())
}
