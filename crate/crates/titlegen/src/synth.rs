//! Synthetic corpus generator with a Zipf-distributed track long tail,
//! block artist ownership, and artist-correlated titles. Used by tests and
//! the end-to-end pipeline to study frequency effects without real data.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Playlist, TrackRef};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_playlists: usize,
    pub n_tracks: usize,
    /// Each artist owns this many consecutive track IDs, so artist
    /// frequencies stochastically dominate track frequencies.
    pub tracks_per_artist: usize,
    pub artists_per_track: usize,
    pub zipf_exponent: f64,
    pub min_tracks: usize,
    pub max_tracks: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_playlists: 2000,
            n_tracks: 5000,
            tracks_per_artist: 10,
            artists_per_track: 1,
            zipf_exponent: 1.1,
            min_tracks: 3,
            max_tracks: 12,
            start_date: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("n_playlists", self.n_playlists),
            ("n_tracks", self.n_tracks),
            ("tracks_per_artist", self.tracks_per_artist),
            ("artists_per_track", self.artists_per_track),
            ("min_tracks", self.min_tracks),
        ] {
            if v == 0 {
                return Err(SynthError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.max_tracks < self.min_tracks {
            return Err(SynthError::InvalidConfig(
                "max_tracks must be >= min_tracks".into(),
            ));
        }
        if self.end_date < self.start_date {
            return Err(SynthError::InvalidConfig(
                "end_date must be >= start_date".into(),
            ));
        }
        if self.zipf_exponent <= 0.0 {
            return Err(SynthError::InvalidConfig(
                "zipf_exponent must be positive".into(),
            ));
        }
        Ok(())
    }
}

const ADJECTIVES: [&str; 16] = [
    "chill", "late", "early", "golden", "quiet", "loud", "deep", "bright", "slow", "fast",
    "smooth", "raw", "warm", "cold", "lost", "found",
];
const GENRES: [&str; 16] = [
    "jazz", "house", "folk", "soul", "funk", "indie", "metal", "blues", "techno", "pop",
    "ambient", "disco", "punk", "reggae", "lofi", "trance",
];
const NOUNS: [&str; 16] = [
    "morning", "night", "drive", "study", "party", "workout", "summer", "winter", "rain",
    "sunset", "focus", "escape", "session", "weekend", "road", "dreams",
];

/// All words the title grammar can emit, for use as the tag list.
pub fn grammar_words() -> Vec<String> {
    ADJECTIVES
        .iter()
        .chain(GENRES.iter())
        .chain(NOUNS.iter())
        .map(|s| s.to_string())
        .collect()
}

fn artist_of(track: usize, cfg: &SynthConfig) -> usize {
    track / cfg.tracks_per_artist
}

/// The canonical three-word title of an artist. Titles are a pure function
/// of the dominant artist, which makes them learnable from artist IDs.
fn artist_title(artist: usize) -> String {
    let a = ADJECTIVES[artist % ADJECTIVES.len()];
    let g = GENRES[(artist / ADJECTIVES.len()) % GENRES.len()];
    let n = NOUNS[(artist / (ADJECTIVES.len() * GENRES.len())) % NOUNS.len()];
    format!("{a} {g} {n}")
}

/// Generates a deterministic corpus in the normalized playlist schema.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<Playlist>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.n_tracks as u64, cfg.zipf_exponent)
        .map_err(|e| SynthError::InvalidConfig(format!("zipf: {e}")))?;
    let n_days = (cfg.end_date - cfg.start_date).num_days() + 1;
    let n_artists = cfg.n_tracks.div_ceil(cfg.tracks_per_artist);

    let mut playlists = Vec::with_capacity(cfg.n_playlists);
    for i in 0..cfg.n_playlists {
        let len = rng.gen_range(cfg.min_tracks..=cfg.max_tracks);
        let mut track_ids = Vec::with_capacity(len);
        while track_ids.len() < len {
            // Zipf ranks are 1-based; map to 0-based track indices
            let rank = zipf.sample(&mut rng) as usize - 1;
            if !track_ids.contains(&rank) {
                track_ids.push(rank);
            }
        }
        let tracks: Vec<TrackRef> = track_ids
            .iter()
            .map(|&t| {
                let primary = artist_of(t, cfg);
                // secondary credits cycle through neighboring artists
                let artist_ids = (0..cfg.artists_per_track)
                    .map(|k| format!("a{:05}", (primary + k) % n_artists))
                    .collect();
                TrackRef {
                    track_id: format!("t{t:06}"),
                    artist_ids,
                }
            })
            .collect();

        // dominant artist: most owned tracks in this playlist, lowest id wins ties
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &t in &track_ids {
            let a = artist_of(t, cfg);
            match counts.iter_mut().find(|(id, _)| *id == a) {
                Some((_, c)) => *c += 1,
                None => counts.push((a, 1)),
            }
        }
        let dominant = counts
            .iter()
            .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)))
            .map(|(id, _)| *id)
            .expect("playlist is non-empty");

        let offset = rng.gen_range(0..n_days);
        playlists.push(Playlist {
            pid: format!("synth-{i:06}"),
            title: artist_title(dominant),
            modified_at: cfg.start_date + chrono::Duration::days(offset),
            tracks,
        });
    }
    Ok(playlists)
}
