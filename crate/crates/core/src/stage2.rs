//! Second-stage association of the tracks and detections left over by stage 1,
//! scored by a pluggable appearance similarity.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{MotsError, Result};
use crate::track::Track;
use crate::types::{AssociationResult, Detection};

/// Similarity between a track and a detection, in `[0, 1]`.
///
/// Implementations must be deterministic and safe to share across threads.
pub trait SimilarityProvider: Send + Sync {
    fn score(&self, track: &Track, detection: &Detection) -> Result<f64>;
}

/// Cosine similarity mapped to `[0, 1]`, maximized over the track's gallery.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineProvider;

impl SimilarityProvider for CosineProvider {
    fn score(&self, track: &Track, detection: &Detection) -> Result<f64> {
        let emb = detection.embedding.as_ref().ok_or(MotsError::MissingEmbedding {
            frame: detection.frame,
            det_index: detection.source_index,
        })?;
        let best = track
            .gallery
            .iter()
            .map(|g| {
                g.iter()
                    .zip(emb)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        Ok(((1.0 + best) / 2.0).clamp(0.0, 1.0))
    }
}

/// `(frame, det_index)` of one detection.
type DetKey = (u32, usize);

/// Scores exported offline, keyed by detection pairs `(frame, det_index)`.
///
/// A track is scored by the best entry between any of its recent matched
/// detections and the candidate; unknown pairs score 0.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedProvider {
    scores: HashMap<(DetKey, DetKey), f64>,
}

impl PrecomputedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a symmetric score, clamped to `[0, 1]`.
    pub fn insert(&mut self, a: (u32, usize), b: (u32, usize), score: f64) {
        let s = score.clamp(0.0, 1.0);
        self.scores.insert((a, b), s);
        self.scores.insert((b, a), s);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl SimilarityProvider for PrecomputedProvider {
    fn score(&self, track: &Track, detection: &Detection) -> Result<f64> {
        let key = (detection.frame, detection.source_index);
        Ok(track
            .observations
            .iter()
            .filter_map(|obs| self.scores.get(&(*obs, key)).copied())
            .fold(0.0, f64::max))
    }
}

/// Returns the same score for every pair.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProvider(pub f64);

impl SimilarityProvider for ConstantProvider {
    fn score(&self, _track: &Track, _detection: &Detection) -> Result<f64> {
        Ok(self.0.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Config {
    pub sim_min: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config { sim_min: 0.5 }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sim_min) {
            return Err(MotsError::Config(format!(
                "stage2.sim_min must be in [0, 1], got {}",
                self.sim_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
}

pub fn build_similarity_matrix(
    tracks: &[&Track],
    detections: &[&Detection],
    provider: &dyn SimilarityProvider,
) -> Result<SimilarityMatrix> {
    let mut values = DMatrix::zeros(tracks.len(), detections.len());
    for (j, track) in tracks.iter().enumerate() {
        for (i, det) in detections.iter().enumerate() {
            values[(j, i)] = provider.score(track, det)?;
        }
    }
    Ok(SimilarityMatrix { values })
}

/// Greedy global matching: repeatedly takes the highest remaining score at or
/// above `sim_min` and removes its row and column. Equal scores resolve to the
/// lowest `(row, column)`.
pub fn fine_match(sim: &SimilarityMatrix, cfg: &Stage2Config) -> AssociationResult {
    let (m, n) = sim.values.shape();
    let mut candidates: Vec<(f64, usize, usize)> = (0..m)
        .flat_map(|j| (0..n).map(move |i| (j, i)))
        .map(|(j, i)| (sim.values[(j, i)], j, i))
        .filter(|&(v, _, _)| v >= cfg.sim_min)
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    let mut matches = Vec::new();
    for (_, j, i) in candidates {
        if !row_used[j] && !col_used[i] {
            row_used[j] = true;
            col_used[i] = true;
            matches.push((j, i));
        }
    }
    AssociationResult::from_matches(matches, m, n)
}
