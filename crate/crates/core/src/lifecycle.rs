//! Track creation, update on match, and velocity-aware deletion on miss.
//!
//! An unmatched track is classified every missed frame: if its predicted
//! center is within `boundary_factor` times its mean velocity of the image
//! border it is heading toward, it is treated as leaving the scene and deleted
//! after `throd_del2` misses; otherwise it is kept for `throd_del1` misses.

use std::collections::VecDeque;

use crate::error::{MotsError, Result};
use crate::kalman;
use crate::stage1::{record_matched_iou, update_base_iou, Stage1Config};
use crate::track::{LostKind, Track, TrackMotionStats, TrackStatus};
use crate::types::Detection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifecycleConfig {
    /// Consecutive matches needed to confirm a track.
    pub init_hits: u32,
    /// Number of displacements averaged into the mean velocity.
    pub t_n2: usize,
    pub throd_del1: u32,
    pub throd_del2: u32,
    pub boundary_factor: f64,
    /// `(width, height)` in pixels; required when `mv_aware` is on.
    pub image_size: Option<(f64, f64)>,
    pub mv_aware: bool,
    /// Fixed deletion age used when `mv_aware` is off.
    pub max_age: u32,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        LifecycleConfig {
            init_hits: 2,
            t_n2: 5,
            throd_del1: 30,
            throd_del2: 3,
            boundary_factor: 2.0,
            image_size: None,
            mv_aware: true,
            max_age: 30,
        }
    }
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_hits < 1 || self.t_n2 < 1 || self.max_age < 1 {
            return Err(MotsError::Config(
                "lifecycle.init_hits, lifecycle.t_n2 and lifecycle.max_age must be positive".into(),
            ));
        }
        if !(self.throd_del1 > self.throd_del2 && self.throd_del2 >= 1) {
            return Err(MotsError::Config(format!(
                "need lifecycle.throd_del1 > lifecycle.throd_del2 >= 1, got {} and {}",
                self.throd_del1, self.throd_del2
            )));
        }
        if !(self.boundary_factor > 0.0) {
            return Err(MotsError::Config("lifecycle.boundary_factor must be positive".into()));
        }
        if self.mv_aware {
            match self.image_size {
                Some((w, h)) if w > 0.0 && h > 0.0 => {}
                Some(_) => return Err(MotsError::Config("image size must be positive".into())),
                None => {
                    return Err(MotsError::Config(
                        "mv-aware deletion needs the image size (--image-size or seqinfo.ini)".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Starts a tentative track from an unmatched detection.
pub fn new_track(id: u64, detection: &Detection, stage1: &Stage1Config, cfg: &LifecycleConfig) -> Track {
    let mut motion_stats = TrackMotionStats::new(stage1.base_prior());
    update_base_iou(&mut motion_stats, record_matched_iou(0.0, 0.0, true, stage1), stage1);
    motion_stats.push_center(detection.bbox.center(), cfg.t_n2);
    let mut track = Track {
        id,
        kalman_state: kalman::initiate(&detection.bbox),
        status: if cfg.init_hits <= 1 {
            TrackStatus::Confirmed
        } else {
            TrackStatus::Tentative
        },
        hits: 1,
        time_since_update: 0,
        lost_kind: None,
        motion_stats,
        gallery: VecDeque::new(),
        observations: VecDeque::new(),
    };
    track.push_observation(detection.frame, detection.source_index);
    if let Some(e) = &detection.embedding {
        track.push_embedding(e.clone());
    }
    track
}

/// Applies a matched detection to a (non-deleted) track.
pub fn on_match(track: &mut Track, detection: &Detection, cfg: &LifecycleConfig) {
    debug_assert!(!track.is_deleted());
    track.kalman_state = kalman::update(&track.kalman_state, &detection.bbox);
    track.hits += 1;
    track.time_since_update = 0;
    track.lost_kind = None;
    track.status = match track.status {
        TrackStatus::Tentative if track.hits >= cfg.init_hits => TrackStatus::Confirmed,
        TrackStatus::Tentative => TrackStatus::Tentative,
        TrackStatus::Confirmed | TrackStatus::TemporarilyLost => TrackStatus::Confirmed,
        TrackStatus::Deleted => TrackStatus::Deleted,
    };
    track.motion_stats.push_center(detection.bbox.center(), cfg.t_n2);
    track.push_observation(detection.frame, detection.source_index);
    if let Some(e) = &detection.embedding {
        track.push_embedding(e.clone());
    }
}

/// Decides whether an unmatched track is leaving the image.
///
/// Per axis, the track is exiting when the distance from its predicted center
/// to the border its velocity points toward is at most `boundary_factor`
/// times that velocity component. A center already outside the image is
/// exiting; a track without a velocity estimate is not.
pub fn classify_lost(track: &Track, cfg: &LifecycleConfig) -> LostKind {
    let Some((width, height)) = cfg.image_size else {
        return LostKind::TemporarilyLost;
    };
    let (cx, cy) = track.kalman_state.center();
    if cx < 0.0 || cx > width || cy < 0.0 || cy > height {
        return LostKind::Exiting;
    }
    let Some((vx, vy)) = track.motion_stats.mean_velocity else {
        return LostKind::TemporarilyLost;
    };
    let axis_exiting = |pos: f64, extent: f64, v: f64| {
        if v > 0.0 {
            extent - pos <= cfg.boundary_factor * v
        } else if v < 0.0 {
            pos <= cfg.boundary_factor * -v
        } else {
            false
        }
    };
    if axis_exiting(cx, width, vx) || axis_exiting(cy, height, vy) {
        LostKind::Exiting
    } else {
        LostKind::TemporarilyLost
    }
}

/// Applies a missed frame to a track whose Kalman state has already been
/// predicted for this frame. Tentative tracks are deleted on their first miss.
pub fn on_miss(track: &mut Track, cfg: &LifecycleConfig) {
    if track.is_deleted() {
        return;
    }
    track.time_since_update += 1;
    track.hits = 0;
    if track.status == TrackStatus::Tentative {
        track.status = TrackStatus::Deleted;
        return;
    }
    track.motion_stats.push_center(track.kalman_state.center(), cfg.t_n2);
    let expired = if cfg.mv_aware {
        let kind = classify_lost(track, cfg);
        track.lost_kind = Some(kind);
        match kind {
            LostKind::Exiting => track.time_since_update > cfg.throd_del2,
            LostKind::TemporarilyLost => track.time_since_update > cfg.throd_del1,
        }
    } else {
        track.lost_kind = Some(LostKind::TemporarilyLost);
        track.time_since_update > cfg.max_age
    };
    track.status = if expired {
        TrackStatus::Deleted
    } else {
        TrackStatus::TemporarilyLost
    };
}

/// Legal status transitions over one frame; `Deleted` is absorbing.
pub fn transition_allowed(from: TrackStatus, to: TrackStatus) -> bool {
    use TrackStatus::*;
    matches!(
        (from, to),
        (Tentative, Tentative | Confirmed | Deleted)
            | (Confirmed, Confirmed | TemporarilyLost)
            | (TemporarilyLost, TemporarilyLost | Confirmed | Deleted)
            | (Deleted, Deleted)
    )
}
