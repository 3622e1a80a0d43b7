//! Playlist title generation toolkit.
//!
//! Pipeline stages: ingest raw playlist datasets, filter noisy playlists,
//! split chronologically, build vocabularies, train an encoder-decoder
//! transformer on track-ID or artist-ID input sequences, generate titles,
//! and evaluate with n-gram, embedding-based, and diversity metrics.

pub mod corpus;
pub mod generator;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod splitter;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod vocab;
