//! Online frame loop: predict, stage 1, stage 2, lifecycle, new tracks.

use std::time::{Duration, Instant};

use tracing::{debug, trace};

use crate::assignment::{hungarian_solve, AssignmentProblem};
use crate::config::{Stage1Mode, TrackerConfig};
use crate::error::{MotsError, Result};
use crate::io::SequenceInput;
use crate::kalman;
use crate::lifecycle::{new_track, on_match, on_miss};
use crate::metrics::{coverage_ratios, Stage1Counters, TrackRow};
use crate::stage1::{adaptive_match, build_iou_matrix, clamp_and_normalize, record_matched_iou, update_base_iou};
use crate::stage2::{build_similarity_matrix, fine_match, SimilarityProvider};
use crate::track::{Track, TrackStatus};
use crate::types::{iou, AssociationResult, BoundingBox, Detection};

/// Where each detection of a frame ended up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameStats {
    pub frame: u32,
    pub detections: usize,
    pub tracks: usize,
    pub stage1_matches: usize,
    pub stage2_matches: usize,
    pub new_tracks: usize,
    pub discarded: usize,
}

/// Online tracker state for one sequence.
pub struct Tracker<'p> {
    config: TrackerConfig,
    provider: Option<&'p dyn SimilarityProvider>,
    tracks: Vec<Track>,
    next_id: u64,
    counters: Stage1Counters,
}

impl<'p> Tracker<'p> {
    pub fn new(config: TrackerConfig, provider: Option<&'p dyn SimilarityProvider>) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            provider,
            tracks: Vec::new(),
            next_id: 1,
            counters: Stage1Counters::default(),
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn counters(&self) -> Stage1Counters {
        self.counters
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Ids handed out so far.
    pub fn tracks_created(&self) -> u64 {
        self.next_id - 1
    }

    /// Processes one frame and returns the boxes of confirmed tracks matched on it.
    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<(Vec<TrackRow>, FrameStats)> {
        self.step_inner(frame, detections)
            .map_err(|e| MotsError::Frame { frame, source: Box::new(e) })
    }

    fn step_inner(&mut self, frame: u32, detections: &[Detection]) -> Result<(Vec<TrackRow>, FrameStats)> {
        let dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.confidence >= self.config.min_confidence)
            .collect();
        let mut stats = FrameStats {
            frame,
            detections: detections.len(),
            tracks: self.tracks.len(),
            discarded: detections.len() - dets.len(),
            ..Default::default()
        };

        let mut predicted = Vec::with_capacity(self.tracks.len());
        for t in &mut self.tracks {
            t.kalman_state = kalman::predict(&t.kalman_state);
            predicted.push(kalman::state_to_bbox(&t.kalman_state)?);
        }
        let det_boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();

        let first = self.first_stage(&predicted, &det_boxes);
        stats.stage1_matches = first.matches.len();
        if self.config.stage1_mode != Stage1Mode::Off {
            self.counters.total_matchs_num += first.matches.len() as u64;
            self.counters.total_tracks_num += self.tracks.len() as u64;
        }
        self.counters.total_detects_num += dets.len() as u64;

        let mut matches = first.matches.clone();
        let mut unmatched_tracks = first.unmatched_tracks;
        let mut unmatched_dets = first.unmatched_detections;
        if let Some(provider) = self.provider {
            if !unmatched_tracks.is_empty() && !unmatched_dets.is_empty() {
                let t_refs: Vec<&Track> = unmatched_tracks.iter().map(|&j| &self.tracks[j]).collect();
                let d_refs: Vec<&Detection> = unmatched_dets.iter().map(|&i| dets[i]).collect();
                let sim = build_similarity_matrix(&t_refs, &d_refs, provider)?;
                let second = fine_match(&sim, &self.config.stage2);
                stats.stage2_matches = second.matches.len();
                matches.extend(second.matches.iter().map(|&(a, b)| (unmatched_tracks[a], unmatched_dets[b])));
                unmatched_tracks = second.unmatched_tracks.iter().map(|&a| unmatched_tracks[a]).collect();
                unmatched_dets = second.unmatched_detections.iter().map(|&b| unmatched_dets[b]).collect();
            }
        }
        trace!(frame, stage1 = stats.stage1_matches, stage2 = stats.stage2_matches, "associated");

        let stage1_cfg = self.config.stage1;
        let life_cfg = self.config.lifecycle;
        for &(j, i) in &matches {
            let track = &mut self.tracks[j];
            let raw = iou(&predicted[j], &dets[i].bbox);
            let recorded = record_matched_iou(track.motion_stats.last_iou, raw, false, &stage1_cfg);
            update_base_iou(&mut track.motion_stats, recorded, &stage1_cfg);
            on_match(track, dets[i], &life_cfg);
        }
        for &j in &unmatched_tracks {
            on_miss(&mut self.tracks[j], &life_cfg);
        }
        for &i in &unmatched_dets {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(new_track(id, dets[i], &stage1_cfg, &life_cfg));
        }
        stats.new_tracks = unmatched_dets.len();

        let before = self.tracks.len();
        self.tracks.retain(|t| !t.is_deleted());
        if before != self.tracks.len() {
            debug!(frame, deleted = before - self.tracks.len(), "tracks deleted");
        }

        let mut rows = Vec::new();
        for t in &self.tracks {
            if t.status == TrackStatus::Confirmed && t.time_since_update == 0 {
                rows.push(TrackRow {
                    frame,
                    id: t.id,
                    bbox: kalman::state_to_bbox(&t.kalman_state)?,
                });
            }
        }
        Ok((rows, stats))
    }

    fn first_stage(&self, predicted: &[BoundingBox], dets: &[BoundingBox]) -> AssociationResult {
        match self.config.stage1_mode {
            Stage1Mode::Off => AssociationResult::unmatched(predicted.len(), dets.len()),
            Stage1Mode::Adaptive => {
                let raw = build_iou_matrix(predicted, dets);
                let bases: Vec<f64> = self.tracks.iter().map(|t| t.motion_stats.base_iou).collect();
                let norm = clamp_and_normalize(&raw, &bases, &self.config.stage1);
                adaptive_match(&norm, &self.config.stage1)
            }
            Stage1Mode::Hungarian => {
                let raw = build_iou_matrix(predicted, dets);
                hungarian_solve(&AssignmentProblem::from_iou(&raw, self.config.baseline_gate))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub rows: Vec<TrackRow>,
    pub counters: Stage1Counters,
    pub frame_stats: Vec<FrameStats>,
    /// Wall-clock time spent in association, excluding file I/O.
    pub association_time: Duration,
    pub frames: usize,
    pub tracks_created: u64,
    pub stage1_enabled: bool,
}

impl SequenceOutput {
    pub fn fps(&self) -> Option<f64> {
        let secs = self.association_time.as_secs_f64();
        (secs > 0.0).then(|| self.frames as f64 / secs)
    }

    /// `(m_det, m_track)`, or `None` when stage 1 was off or there were no detections.
    pub fn coverage(&self) -> Option<(f64, f64)> {
        if !self.stage1_enabled {
            return None;
        }
        coverage_ratios(&self.counters).ok()
    }
}

/// Runs the tracker over every frame of `input`.
pub fn run_sequence(
    input: &SequenceInput,
    config: &TrackerConfig,
    provider: Option<&dyn SimilarityProvider>,
) -> Result<SequenceOutput> {
    let mut config = config.clone();
    if config.lifecycle.image_size.is_none() {
        config.lifecycle.image_size = input.image_size;
    }
    let mut tracker = Tracker::new(config, provider)?;
    let mut rows = Vec::new();
    let mut frame_stats = Vec::with_capacity(input.frames.len());
    let mut association_time = Duration::ZERO;
    for (idx, dets) in input.frames.iter().enumerate() {
        let frame = idx as u32 + 1;
        let start = Instant::now();
        let (frame_rows, stats) = tracker.step(frame, dets)?;
        association_time += start.elapsed();
        rows.extend(frame_rows);
        frame_stats.push(stats);
    }
    Ok(SequenceOutput {
        rows,
        counters: tracker.counters(),
        frame_stats,
        association_time,
        frames: input.frames.len(),
        tracks_created: tracker.tracks_created(),
        stage1_enabled: tracker.config().stage1_mode != Stage1Mode::Off,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage2::{ConstantProvider, CosineProvider};

    fn det(frame: u32, idx: usize, x: f64, y: f64) -> Detection {
        Detection::new(frame, BoundingBox::new(x, y, 20.0, 40.0).unwrap(), 0.9, idx)
    }

    fn config() -> TrackerConfig {
        let mut c = TrackerConfig::default();
        c.lifecycle.image_size = Some((640.0, 480.0));
        c
    }

    #[test]
    fn static_target_confirms_on_second_frame() {
        let mut t = Tracker::new(config(), None).unwrap();
        let (rows, stats) = t.step(1, &[det(1, 0, 100., 100.)]).unwrap();
        assert!(rows.is_empty());
        assert_eq!(stats.new_tracks, 1);
        let (rows, stats) = t.step(2, &[det(2, 0, 101., 100.)]).unwrap();
        assert_eq!(stats.stage1_matches, 1);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].id, 1);
    }

    #[test]
    fn empty_frames_are_fine() {
        let mut t = Tracker::new(config(), None).unwrap();
        let (rows, stats) = t.step(1, &[]).unwrap();
        assert!(rows.is_empty());
        assert_eq!(stats, FrameStats { frame: 1, ..Default::default() });
        let out = run_sequence(&SequenceInput::default(), &config(), None).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.coverage(), None);
    }

    #[test]
    fn low_confidence_detections_are_discarded() {
        let mut c = config();
        c.min_confidence = 0.95;
        let mut t = Tracker::new(c, None).unwrap();
        let (_, stats) = t.step(1, &[det(1, 0, 100., 100.)]).unwrap();
        assert_eq!((stats.discarded, stats.new_tracks), (1, 0));
    }

    #[test]
    fn stage2_bridges_a_jump() {
        let mut t = Tracker::new(config(), Some(&ConstantProvider(0.9))).unwrap();
        t.step(1, &[det(1, 0, 100., 100.)]).unwrap();
        t.step(2, &[det(2, 0, 100., 100.)]).unwrap();
        // far jump: no overlap, only the appearance stage can link it
        let (rows, stats) = t.step(3, &[det(3, 0, 400., 300.)]).unwrap();
        assert_eq!((stats.stage1_matches, stats.stage2_matches), (0, 1));
        assert_eq!(rows[0].id, 1);
    }

    #[test]
    fn missing_embedding_is_reported_with_frame() {
        let mut t = Tracker::new(config(), Some(&CosineProvider)).unwrap();
        t.step(1, &[det(1, 0, 100., 100.)]).unwrap();
        let err = t.step(2, &[det(2, 0, 400., 300.)]).unwrap_err();
        match err {
            MotsError::Frame { frame, source } => {
                assert_eq!(frame, 2);
                assert!(matches!(*source, MotsError::MissingEmbedding { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = config();
        c.lifecycle.image_size = None;
        assert!(Tracker::new(c, None).is_err());
    }
}
