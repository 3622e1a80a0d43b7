//! Playlist ingestion, normalization, and noise filtering.
//!
//! Raw datasets are converted into a normalized record format at ingest time
//! so downstream stages never see source-specific schemas. Filtering applies
//! four criteria: minimum title token count, minimum average token character
//! length, minimum track count, and a music-tag match against a supplied tag
//! list.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at {path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unparseable date `{0}`")]
    BadDate(String),
    #[error("tag list is empty after normalization: {0}")]
    EmptyTagList(String),
}

/// One track occurrence inside a playlist. A single track may carry
/// multiple artists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRef {
    pub track_id: String,
    pub artist_ids: Vec<String>,
}

/// The unit of all processing: a titled, dated, ordered track list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub pid: String,
    pub title: String,
    pub modified_at: NaiveDate,
    pub tracks: Vec<TrackRef>,
}

/// Normalized set of music tags used by filter criterion (iv).
#[derive(Debug, Clone)]
pub struct TagList {
    tags: BTreeSet<String>,
    pub language: String,
}

impl TagList {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(
        raw: I,
        language: &str,
    ) -> Result<Self, CorpusError> {
        let tags: BTreeSet<String> = raw
            .into_iter()
            .map(|t| normalize_token(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        if tags.is_empty() {
            return Err(CorpusError::EmptyTagList(language.to_string()));
        }
        Ok(Self {
            tags,
            language: language.to_string(),
        })
    }

    /// Loads a tag list file: UTF-8, one tag per line, `#` lines are comments.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let lines = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .filter(|l| !l.trim().is_empty());
        Self::new(lines, &path.display().to_string())
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// How criterion (iv) matches tags against title tokens.
///
/// `Token` requires some title token to equal a tag exactly; `Substring`
/// accepts a tag occurring inside a token, which suits Korean where
/// particles attach to nouns without whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TagMatchMode {
    #[default]
    Token,
    Substring,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_title_tokens: usize,
    pub min_avg_char_len: f64,
    pub min_tracks: usize,
    pub tag_match_mode: TagMatchMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_title_tokens: 3,
            min_avg_char_len: 2.0,
            min_tracks: 2,
            tag_match_mode: TagMatchMode::Token,
        }
    }
}

/// The four filter criteria, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterCriterion {
    /// (i) fewer title tokens than required
    TitleTokens,
    /// (ii) mean token character length below threshold
    AvgCharLen,
    /// (iii) too few tracks
    TrackCount,
    /// (iv) no title token matches the tag list
    TagMatch,
}

impl FilterCriterion {
    pub const ALL: [FilterCriterion; 4] = [
        FilterCriterion::TitleTokens,
        FilterCriterion::AvgCharLen,
        FilterCriterion::TrackCount,
        FilterCriterion::TagMatch,
    ];

    pub fn index(self) -> usize {
        match self {
            FilterCriterion::TitleTokens => 0,
            FilterCriterion::AvgCharLen => 1,
            FilterCriterion::TrackCount => 2,
            FilterCriterion::TagMatch => 3,
        }
    }
}

/// Per-criterion rejection counts from a [`filter_corpus`] run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub rejected: [usize; 4],
    pub kept: usize,
}

impl FilterStats {
    pub fn total_rejected(&self) -> usize {
        self.rejected.iter().sum()
    }
}

/// Unicode NFC normalization, lowercasing, and whitespace trimming.
pub fn normalize_token(raw: &str) -> String {
    raw.trim().nfc().collect::<String>().to_lowercase()
}

/// Whitespace tokenization with per-token normalization; empty tokens dropped.
pub fn tokenize_title(title: &str) -> Vec<String> {
    title
        .split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Applies the four criteria in order; `None` means the playlist passes,
/// `Some(c)` names the first failed criterion.
pub fn passes_filter(p: &Playlist, cfg: &FilterConfig, tags: &TagList) -> Option<FilterCriterion> {
    let tokens = tokenize_title(&p.title);
    if tokens.len() < cfg.min_title_tokens {
        return Some(FilterCriterion::TitleTokens);
    }
    let total_chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
    let avg = total_chars as f64 / tokens.len() as f64;
    if avg < cfg.min_avg_char_len {
        return Some(FilterCriterion::AvgCharLen);
    }
    if p.tracks.len() < cfg.min_tracks {
        return Some(FilterCriterion::TrackCount);
    }
    let tag_hit = match cfg.tag_match_mode {
        TagMatchMode::Token => tokens.iter().any(|t| tags.contains(t)),
        TagMatchMode::Substring => tokens
            .iter()
            .any(|t| tags.iter().any(|tag| t.contains(tag))),
    };
    if !tag_hit {
        return Some(FilterCriterion::TagMatch);
    }
    None
}

/// Filters a corpus, preserving input order in the kept list.
pub fn filter_corpus(
    ps: &[Playlist],
    cfg: &FilterConfig,
    tags: &TagList,
) -> (Vec<Playlist>, FilterStats) {
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for p in ps {
        match passes_filter(p, cfg, tags) {
            None => kept.push(p.clone()),
            Some(c) => stats.rejected[c.index()] += 1,
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}

// ---------------------------------------------------------------------------
// Ingest adapters
// ---------------------------------------------------------------------------

/// Source formats accepted by [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IngestFormat {
    NormalizedJsonl,
    Melon,
    MpdSlice,
}

/// Field-name mappings for the Melon and MPD adapters. Dataset versions vary
/// in field naming, so the defaults can be overridden by a small JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterMap {
    pub melon_id: String,
    pub melon_title: String,
    pub melon_date: String,
    pub melon_songs: String,
    pub melon_song_id: String,
    pub melon_artist_ids: String,
    pub mpd_pid: String,
    pub mpd_title: String,
    pub mpd_date: String,
    pub mpd_tracks: String,
    pub mpd_track_id: String,
    pub mpd_artist_id: String,
}

impl Default for AdapterMap {
    fn default() -> Self {
        Self {
            melon_id: "id".into(),
            melon_title: "plylst_title".into(),
            melon_date: "updt_date".into(),
            melon_songs: "songs".into(),
            melon_song_id: "id".into(),
            melon_artist_ids: "artist_id_basket".into(),
            mpd_pid: "pid".into(),
            mpd_title: "name".into(),
            mpd_date: "modified_at".into(),
            mpd_tracks: "tracks".into(),
            mpd_track_id: "track_uri".into(),
            mpd_artist_id: "artist_uri".into(),
        }
    }
}

impl AdapterMap {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Ingests a dataset file into normalized [`Playlist`] records.
///
/// The Melon adapter needs a `song_meta` sidecar to join artist IDs onto
/// song IDs; pass its path via `melon_song_meta`.
pub fn ingest(
    path: &Path,
    format: IngestFormat,
    map: &AdapterMap,
    melon_song_meta: Option<&Path>,
) -> Result<Vec<Playlist>, CorpusError> {
    match format {
        IngestFormat::NormalizedJsonl => ingest_jsonl(path),
        IngestFormat::Melon => {
            let meta = melon_song_meta.ok_or_else(|| {
                CorpusError::MissingField("melon ingest requires --song-meta".into())
            })?;
            ingest_melon(path, meta, map)
        }
        IngestFormat::MpdSlice => ingest_mpd_slice(path, map),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

#[derive(Deserialize)]
struct JsonlTrack {
    track_id: String,
    artist_ids: Vec<String>,
}

#[derive(Deserialize)]
struct JsonlPlaylist {
    pid: String,
    title: String,
    modified_at: String,
    tracks: Vec<JsonlTrack>,
}

fn parse_iso_date(raw: &str) -> Result<NaiveDate, CorpusError> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| CorpusError::BadDate(raw.to_string()))
}

fn ingest_jsonl(path: &Path) -> Result<Vec<Playlist>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlPlaylist = serde_json::from_str(&line).map_err(|e| {
            if e.to_string().contains("missing field") {
                let field = e
                    .to_string()
                    .split('`')
                    .nth(1)
                    .unwrap_or("?")
                    .to_string();
                CorpusError::Malformed {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: CorpusError::MissingField(field).to_string(),
                }
            } else {
                malformed(path, i + 1, e.to_string())
            }
        })?;
        let date = parse_iso_date(&rec.modified_at)?;
        out.push(Playlist {
            pid: rec.pid,
            title: rec.title,
            modified_at: date,
            tracks: rec
                .tracks
                .into_iter()
                .map(|t| TrackRef {
                    track_id: t.track_id,
                    artist_ids: t.artist_ids,
                })
                .collect(),
        });
    }
    Ok(out)
}

fn get_field<'a>(
    obj: &'a serde_json::Value,
    field: &str,
    path: &Path,
    line: usize,
) -> Result<&'a serde_json::Value, CorpusError> {
    obj.get(field).ok_or_else(|| {
        malformed(
            path,
            line,
            CorpusError::MissingField(field.to_string()).to_string(),
        )
    })
}

fn value_to_id(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn ingest_melon(
    path: &Path,
    song_meta: &Path,
    map: &AdapterMap,
) -> Result<Vec<Playlist>, CorpusError> {
    let meta_text = std::fs::read_to_string(song_meta).map_err(|e| io_err(song_meta, e))?;
    let meta: Vec<serde_json::Value> =
        serde_json::from_str(&meta_text).map_err(|e| malformed(song_meta, e.line(), e.to_string()))?;
    let mut artists_by_song: std::collections::HashMap<String, Vec<String>> =
        std::collections::HashMap::new();
    for (i, song) in meta.iter().enumerate() {
        let id = value_to_id(get_field(song, &map.melon_song_id, song_meta, i + 1)?);
        let basket = get_field(song, &map.melon_artist_ids, song_meta, i + 1)?
            .as_array()
            .ok_or_else(|| malformed(song_meta, i + 1, "artist id basket is not an array"))?
            .iter()
            .map(value_to_id)
            .collect();
        artists_by_song.insert(id, basket);
    }

    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let records: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| malformed(path, e.line(), e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let pid = value_to_id(get_field(rec, &map.melon_id, path, i + 1)?);
        let title = get_field(rec, &map.melon_title, path, i + 1)?
            .as_str()
            .ok_or_else(|| malformed(path, i + 1, "title is not a string"))?
            .to_string();
        let date_raw = get_field(rec, &map.melon_date, path, i + 1)?
            .as_str()
            .ok_or_else(|| malformed(path, i + 1, "date is not a string"))?;
        // Melon timestamps look like "2020-01-01 00:00:00.000"; day resolution suffices.
        let date = parse_iso_date(date_raw.get(..10).unwrap_or(date_raw))?;
        let songs = get_field(rec, &map.melon_songs, path, i + 1)?
            .as_array()
            .ok_or_else(|| malformed(path, i + 1, "songs is not an array"))?;
        let mut tracks = Vec::with_capacity(songs.len());
        for song in songs {
            let sid = value_to_id(song);
            let artist_ids = artists_by_song.get(&sid).cloned().unwrap_or_default();
            if artist_ids.is_empty() {
                return Err(malformed(
                    path,
                    i + 1,
                    format!("song {sid} has no artists in song_meta"),
                ));
            }
            tracks.push(TrackRef {
                track_id: sid,
                artist_ids,
            });
        }
        out.push(Playlist {
            pid,
            title,
            modified_at: date,
            tracks,
        });
    }
    Ok(out)
}

fn ingest_mpd_slice(path: &Path, map: &AdapterMap) -> Result<Vec<Playlist>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let root: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(path, e.line(), e.to_string()))?;
    let playlists = root
        .get("playlists")
        .and_then(|v| v.as_array())
        .ok_or_else(|| malformed(path, 1, "expected top-level `playlists` array"))?;
    let mut out = Vec::new();
    for (i, rec) in playlists.iter().enumerate() {
        let pid = value_to_id(get_field(rec, &map.mpd_pid, path, i + 1)?);
        let title = get_field(rec, &map.mpd_title, path, i + 1)?
            .as_str()
            .ok_or_else(|| malformed(path, i + 1, "name is not a string"))?
            .to_string();
        let epoch = get_field(rec, &map.mpd_date, path, i + 1)?
            .as_i64()
            .ok_or_else(|| malformed(path, i + 1, "modified_at is not an integer"))?;
        let date = chrono::DateTime::from_timestamp(epoch, 0)
            .ok_or_else(|| CorpusError::BadDate(epoch.to_string()))?
            .date_naive();
        let raw_tracks = get_field(rec, &map.mpd_tracks, path, i + 1)?
            .as_array()
            .ok_or_else(|| malformed(path, i + 1, "tracks is not an array"))?;
        let mut tracks = Vec::with_capacity(raw_tracks.len());
        for t in raw_tracks {
            let track_id = value_to_id(get_field(t, &map.mpd_track_id, path, i + 1)?);
            let artist_id = value_to_id(get_field(t, &map.mpd_artist_id, path, i + 1)?);
            tracks.push(TrackRef {
                track_id,
                artist_ids: vec![artist_id],
            });
        }
        out.push(Playlist {
            pid,
            title,
            modified_at: date,
            tracks,
        });
    }
    Ok(out)
}

/// Writes playlists as normalized JSONL, the canonical interchange format.
pub fn write_jsonl(path: &Path, ps: &[Playlist]) -> Result<(), CorpusError> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for p in ps {
        let rec = serde_json::json!({
            "pid": p.pid,
            "title": p.title,
            "modified_at": p.modified_at.format("%Y-%m-%d").to_string(),
            "tracks": p.tracks.iter().map(|t| serde_json::json!({
                "track_id": t.track_id,
                "artist_ids": t.artist_ids,
            })).collect::<Vec<_>>(),
        });
        writeln!(file, "{rec}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}
