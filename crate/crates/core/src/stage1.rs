//! First-stage association: IOU matrix normalized by each track's own
//! recent matched IOU, followed by an unambiguous mutual-maximum match.
//!
//! Pairs that are not clearly resolved here are left unmatched and handed to
//! the appearance-based second stage.

use nalgebra::DMatrix;

use crate::error::{MotsError, Result};
use crate::track::TrackMotionStats;
use crate::types::{iou, AssociationResult, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Config {
    /// Number of recent matched IOU values averaged into the base IOU.
    pub t_n1: usize,
    /// Raw IOU values below this are zeroed before normalization.
    pub throd_min: f64,
    /// Minimum normalized score for a match; also the ambiguity bound for runner-up values.
    pub match_min: f64,
    /// Upper clamp on normalized values.
    pub norm_cap: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            t_n1: 5,
            throd_min: 0.4,
            match_min: 0.85,
            norm_cap: 2.5,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.throd_min > 0.0 && self.throd_min < 1.0) {
            return Err(MotsError::Config(format!(
                "stage1.throd_min must be in (0, 1), got {}",
                self.throd_min
            )));
        }
        if !(self.match_min > 0.0) {
            return Err(MotsError::Config(format!(
                "stage1.match_min must be positive, got {}",
                self.match_min
            )));
        }
        if self.t_n1 < 1 {
            return Err(MotsError::Config("stage1.t_n1 must be at least 1".into()));
        }
        if !(self.norm_cap > 0.0) {
            return Err(MotsError::Config(format!(
                "stage1.norm_cap must be positive, got {}",
                self.norm_cap
            )));
        }
        Ok(())
    }

    /// Base IOU used before a track has any nonzero matched IOU: midway between
    /// `throd_min` and 1.
    pub fn base_prior(&self) -> f64 {
        self.throd_min + (1.0 - self.throd_min) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedIouMatrix {
    pub values: DMatrix<f64>,
    pub raw: DMatrix<f64>,
}

/// IOU between every predicted track box (rows) and detection (columns).
pub fn build_iou_matrix(tracks: &[BoundingBox], detections: &[BoundingBox]) -> DMatrix<f64> {
    DMatrix::from_fn(tracks.len(), detections.len(), |j, i| iou(&tracks[j], &detections[i]))
}

/// Records a matched IOU value and recomputes the track's base IOU.
///
/// Zero entries (the value at the initialization frame) are not averaged; a
/// track with no nonzero entry keeps the prior from [`Stage1Config::base_prior`].
pub fn update_base_iou(stats: &mut TrackMotionStats, new_iou: f64, cfg: &Stage1Config) {
    stats.last_iou = new_iou;
    if new_iou > 0.0 {
        stats.iou_history.push_back(new_iou);
        while stats.iou_history.len() > cfg.t_n1 {
            stats.iou_history.pop_front();
        }
    }
    stats.base_iou = if stats.iou_history.is_empty() {
        cfg.base_prior()
    } else {
        stats.iou_history.iter().sum::<f64>() / stats.iou_history.len() as f64
    };
}

/// Zeroes values below `throd_min` and divides the rest by the row's base IOU,
/// clamped to `norm_cap`.
pub fn clamp_and_normalize(raw: &DMatrix<f64>, bases: &[f64], cfg: &Stage1Config) -> NormalizedIouMatrix {
    assert_eq!(raw.nrows(), bases.len(), "one base IOU per track row");
    let values = DMatrix::from_fn(raw.nrows(), raw.ncols(), |j, i| {
        let v = raw[(j, i)];
        if v < cfg.throd_min {
            return 0.0;
        }
        let base = if bases[j] > 0.0 { bases[j] } else { cfg.base_prior() };
        (v / base).min(cfg.norm_cap)
    });
    NormalizedIouMatrix {
        values,
        raw: raw.clone(),
    }
}

#[derive(Debug, Clone, Copy)]
struct TopTwo {
    best: f64,
    best_index: usize,
    // Largest value among the other entries; equals `best` on a tie.
    second: f64,
}

impl TopTwo {
    fn new() -> Self {
        TopTwo {
            best: f64::NEG_INFINITY,
            best_index: usize::MAX,
            second: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, value: f64, index: usize) {
        if value > self.best {
            self.second = self.best;
            self.best = value;
            self.best_index = index;
        } else if value > self.second {
            self.second = value;
        }
    }
}

/// Matches `(j, i)` only when its value is the strict maximum of both row `j`
/// and column `i`, reaches `match_min`, and both runner-up values in that row
/// and column stay below `match_min`. Ties are never matched.
pub fn adaptive_match(norm: &NormalizedIouMatrix, cfg: &Stage1Config) -> AssociationResult {
    let (m, n) = norm.values.shape();
    let mut rows = vec![TopTwo::new(); m];
    let mut cols = vec![TopTwo::new(); n];
    for j in 0..m {
        for i in 0..n {
            let v = norm.values[(j, i)];
            rows[j].push(v, i);
            cols[i].push(v, j);
        }
    }
    let below = |x: f64| x < cfg.match_min;
    let matches = rows
        .iter()
        .enumerate()
        .filter_map(|(j, row)| {
            if m == 0 || n == 0 || row.best_index == usize::MAX {
                return None;
            }
            let i = row.best_index;
            let col = &cols[i];
            let accepted = col.best_index == j
                && row.best >= cfg.match_min
                && row.second < row.best
                && col.second < col.best
                && below(row.second)
                && below(col.second);
            accepted.then_some((j, i))
        })
        .collect();
    AssociationResult::from_matches(matches, m, n)
}

/// The IOU attributed to a matched track at this frame: 0 at its
/// initialization frame, the raw IOU when it clears `throd_min`, otherwise the
/// previous value carried forward.
pub fn record_matched_iou(prev: f64, raw_iou_of_match: f64, is_init_frame: bool, cfg: &Stage1Config) -> f64 {
    if is_init_frame {
        0.0
    } else if raw_iou_of_match >= cfg.throd_min {
        raw_iou_of_match
    } else {
        prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn norm_of(rows: &[&[f64]]) -> NormalizedIouMatrix {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let values = DMatrix::from_fn(m, n, |j, i| rows[j][i]);
        NormalizedIouMatrix {
            raw: values.clone(),
            values,
        }
    }

    #[test]
    fn iou_matrix_examples() {
        let cfg = Stage1Config::default();
        let single = build_iou_matrix(&[bb(0., 0., 10., 10.)], &[bb(0., 0., 10., 10.)]);
        assert_eq!(single, DMatrix::from_element(1, 1, 1.0));

        let empty = build_iou_matrix(&[], &[bb(0., 0., 1., 1.), bb(5., 5., 1., 1.), bb(9., 9., 1., 1.)]);
        assert_eq!(empty.shape(), (0, 3));
        let r = adaptive_match(&clamp_and_normalize(&empty, &[], &cfg), &cfg);
        assert_eq!(r.unmatched_detections, vec![0, 1, 2]);
        assert!(r.matches.is_empty());

        // Hand geometry: t1 overlaps d0 by a 5x10 strip (1/3), touches d1 at an edge.
        let m = build_iou_matrix(
            &[bb(0., 0., 10., 10.), bb(10., 0., 10., 10.)],
            &[bb(5., 0., 10., 10.), bb(0., 0., 10., 10.)],
        );
        let expected = [[1.0 / 3.0, 1.0], [1.0 / 3.0, 0.0]];
        for j in 0..2 {
            for i in 0..2 {
                assert!((m[(j, i)] - expected[j][i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn base_iou_examples() {
        let cfg = Stage1Config::default();
        let mut s = TrackMotionStats::new(cfg.base_prior());
        for _ in 0..5 {
            update_base_iou(&mut s, 0.6, &cfg);
        }
        update_base_iou(&mut s, 0.6, &cfg);
        assert!((s.base_iou - 0.6).abs() < 1e-12);

        let mut s = TrackMotionStats::new(cfg.base_prior());
        for v in [0.4, 0.5, 0.6, 0.7] {
            update_base_iou(&mut s, v, &cfg);
        }
        update_base_iou(&mut s, 0.8, &cfg);
        assert!((s.base_iou - 0.6).abs() < 1e-12);

        let mut s = TrackMotionStats::new(cfg.base_prior());
        update_base_iou(&mut s, 0.5, &cfg);
        assert!((s.base_iou - 0.5).abs() < 1e-12);
    }

    #[test]
    fn base_iou_window_evicts_oldest() {
        let cfg = Stage1Config::default();
        let mut s = TrackMotionStats::new(cfg.base_prior());
        for v in [0.9, 0.5, 0.5, 0.5, 0.5, 0.5] {
            update_base_iou(&mut s, v, &cfg);
        }
        assert_eq!(s.iou_history.len(), 5);
        assert!((s.base_iou - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fresh_track_uses_prior() {
        let cfg = Stage1Config::default();
        assert!((cfg.base_prior() - 0.7).abs() < 1e-12);
        let mut s = TrackMotionStats::new(cfg.base_prior());
        update_base_iou(&mut s, record_matched_iou(0.0, 0.9, true, &cfg), &cfg);
        assert!((s.base_iou - 0.7).abs() < 1e-12);
        assert!(s.iou_history.is_empty());
    }

    #[test]
    fn normalization_examples() {
        let cfg = Stage1Config::default();
        let raw = DMatrix::from_row_slice(1, 3, &[0.3, 0.6, 0.9]);
        let n = clamp_and_normalize(&raw, &[0.6], &cfg);
        assert_eq!(n.values[(0, 0)], 0.0);
        assert!((n.values[(0, 1)] - 1.0).abs() < 1e-6);
        let n = clamp_and_normalize(&DMatrix::from_element(1, 1, 0.9), &[0.3], &cfg);
        assert!((n.values[(0, 0)] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn adaptive_match_examples() {
        let cfg = Stage1Config::default();
        let r = adaptive_match(&norm_of(&[&[1.2, 0.3], &[0.2, 1.1]]), &cfg);
        assert_eq!(r.matches, vec![(0, 0), (1, 1)]);

        let r = adaptive_match(&norm_of(&[&[1.2, 0.9], &[0.2, 1.1]]), &cfg);
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_tracks, vec![0, 1]);
        assert_eq!(r.unmatched_detections, vec![0, 1]);

        let r = adaptive_match(&norm_of(&[&[0.0]]), &cfg);
        assert!(r.matches.is_empty());
        assert_eq!((r.unmatched_tracks.len(), r.unmatched_detections.len()), (1, 1));
    }

    #[test]
    fn ties_go_to_second_stage() {
        let cfg = Stage1Config::default();
        let r = adaptive_match(&norm_of(&[&[1.0, 1.0]]), &cfg);
        assert!(r.matches.is_empty());
        let r = adaptive_match(&norm_of(&[&[1.0], &[1.0]]), &cfg);
        assert!(r.matches.is_empty());
    }

    #[test]
    fn recorded_iou_examples() {
        let cfg = Stage1Config::default();
        assert_eq!(record_matched_iou(0.5, 0.9, true, &cfg), 0.0);
        assert_eq!(record_matched_iou(0.5, 0.7, false, &cfg), 0.7);
        assert_eq!(record_matched_iou(0.55, 0.2, false, &cfg), 0.55);
    }

    #[test]
    fn config_validation() {
        assert!(Stage1Config::default().validate().is_ok());
        let bad = Stage1Config { throd_min: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = Stage1Config { t_n1: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
        (0usize..6, 0usize..6).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(0.0..=1.0f64, m * n),
                proptest::collection::vec(0.05..=1.0f64, m),
            )
                .prop_map(move |(vals, bases)| (DMatrix::from_row_slice(m, n, &vals), bases))
        })
    }

    proptest! {
        #[test]
        fn normalized_values_are_bounded((raw, bases) in arb_matrix()) {
            let cfg = Stage1Config::default();
            let n = clamp_and_normalize(&raw, &bases, &cfg);
            for j in 0..raw.nrows() {
                for i in 0..raw.ncols() {
                    let v = n.values[(j, i)];
                    prop_assert!((0.0..=cfg.norm_cap).contains(&v));
                    if raw[(j, i)] < cfg.throd_min {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }

        #[test]
        fn adaptive_match_is_one_to_one_and_conservative((raw, bases) in arb_matrix()) {
            let cfg = Stage1Config::default();
            let n = clamp_and_normalize(&raw, &bases, &cfg);
            let r = adaptive_match(&n, &cfg);
            prop_assert!(r.is_partition(raw.nrows(), raw.ncols()));
            for &(j, i) in &r.matches {
                prop_assert!(n.values[(j, i)] >= cfg.match_min);
            }
        }

        #[test]
        fn recorded_iou_is_safe(prev in 0.0..=1.0f64, raw in 0.0..=1.0f64, init: bool) {
            let cfg = Stage1Config::default();
            let v = record_matched_iou(prev, raw, init, &cfg);
            prop_assert!(v >= 0.0);
            if !init && raw >= cfg.throd_min {
                prop_assert!(v >= cfg.throd_min);
            }
        }
    }
}
