use std::collections::VecDeque;

use crate::kalman::KalmanState;

/// Appearance gallery capacity per track.
pub const GALLERY_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    TemporarilyLost,
    Deleted,
}

/// How an unmatched track is expected to behave while it has no detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LostKind {
    /// Occluded or missed; kept alive for the long deletion window.
    TemporarilyLost,
    /// Heading out of the image; deleted after the short window.
    Exiting,
}

/// Motion statistics feeding the adaptive IOU threshold and the exit test.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMotionStats {
    /// Recent matched IOU values, newest last.
    pub iou_history: VecDeque<f64>,
    /// Mean of the nonzero entries of `iou_history`, or the configured prior.
    pub base_iou: f64,
    /// IOU recorded at the previous matched frame.
    pub last_iou: f64,
    /// Recent box centers, newest last.
    pub center_history: VecDeque<(f64, f64)>,
    pub mean_velocity: Option<(f64, f64)>,
}

impl TrackMotionStats {
    pub fn new(base_prior: f64) -> Self {
        TrackMotionStats {
            iou_history: VecDeque::new(),
            base_iou: base_prior,
            last_iou: 0.0,
            center_history: VecDeque::new(),
            mean_velocity: None,
        }
    }

    /// Appends a center, keeping at most `window + 1` entries so the mean
    /// velocity spans at most `window` displacements.
    pub fn push_center(&mut self, center: (f64, f64), window: usize) {
        self.center_history.push_back(center);
        while self.center_history.len() > window + 1 {
            self.center_history.pop_front();
        }
        self.mean_velocity = match (self.center_history.front(), self.center_history.back()) {
            (Some(first), Some(last)) if self.center_history.len() >= 2 => {
                let n = (self.center_history.len() - 1) as f64;
                Some(((last.0 - first.0) / n, (last.1 - first.1) / n))
            }
            _ => None,
        };
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub kalman_state: KalmanState,
    pub status: TrackStatus,
    /// Consecutive matched frames.
    pub hits: u32,
    pub time_since_update: u32,
    /// Classification from the most recent miss; `None` while matched.
    pub lost_kind: Option<LostKind>,
    pub motion_stats: TrackMotionStats,
    pub gallery: VecDeque<Vec<f32>>,
    /// `(frame, source_index)` of recent matched detections, newest last.
    pub observations: VecDeque<(u32, usize)>,
}

impl Track {
    pub fn push_embedding(&mut self, embedding: Vec<f32>) {
        self.gallery.push_back(embedding);
        while self.gallery.len() > GALLERY_SIZE {
            self.gallery.pop_front();
        }
    }

    pub fn push_observation(&mut self, frame: u32, source_index: usize) {
        self.observations.push_back((frame, source_index));
        while self.observations.len() > GALLERY_SIZE {
            self.observations.pop_front();
        }
    }

    pub fn is_deleted(&self) -> bool {
        self.status == TrackStatus::Deleted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_window_is_bounded() {
        let mut s = TrackMotionStats::new(0.7);
        assert!(s.mean_velocity.is_none());
        s.push_center((0.0, 0.0), 5);
        assert!(s.mean_velocity.is_none());
        for t in 1..20 {
            s.push_center((t as f64 * 2.0, -(t as f64)), 5);
            assert!(s.center_history.len() <= 6);
        }
        assert_eq!(s.mean_velocity, Some((2.0, -1.0)));
    }

    #[test]
    fn velocity_averages_last_displacements() {
        let mut s = TrackMotionStats::new(0.7);
        // displacements: 10 then five displacements of 1
        for x in [0.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0] {
            s.push_center((x, 0.0), 5);
        }
        assert_eq!(s.mean_velocity, Some((1.0, 0.0)));
    }
}
