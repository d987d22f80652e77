//! Playlist continuation toolkit.
//!
//! The crate bundles three pieces that together form an offline playlist
//! continuation experiment:
//!
//! * [`matchnet`] — a feature-based playlist-song match classifier: a shared
//!   feature transformation applied to every song, mean-pooled over the
//!   playlist, and a discriminator that scores how well a candidate song fits.
//! * [`wmf`] — baselines: weighted matrix factorization over the binary
//!   playlist-song matrix, fit by alternating least squares, plus a random
//!   scorer.
//! * [`evaluation`] — the ranking experiment: withheld continuations are
//!   ranked among all candidate songs and summarized by median rank, MAP and
//!   recall at fixed cutoffs, with a breakdown by training-frequency bucket.
//!
//! Supporting modules: [`dataset`] (playlist/feature files, filtering,
//! weak/strong splits, synthetic data) and [`sampling`] (derivation of
//! balanced match/mismatch training pairs).
//!
//! The `playcont` binary drives the full pipeline; see the guide under
//! `book/` for a narrative walkthrough.

pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod guide;
pub mod matchnet;
pub mod sampling;
pub mod wmf;

mod rng;
