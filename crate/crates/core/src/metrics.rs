//! CLEAR-MOT and identity metrics, plus the stage-1 coverage ratios.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;

use crate::assignment::{hungarian_solve, solve_rectangular, AssignmentProblem};
use crate::error::{MotsError, Result};
use crate::types::{iou, BoundingBox};

/// Default IOU needed for a ground-truth box and a hypothesis box to correspond.
pub const DEFAULT_IOU_GATE: f64 = 0.5;
const MOSTLY_TRACKED: f64 = 0.8;
const MOSTLY_LOST: f64 = 0.2;

/// One box of one trajectory at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow {
    pub frame: u32,
    pub id: u64,
    pub bbox: BoundingBox,
}

/// Stage-1 bookkeeping accumulated over a sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stage1Counters {
    /// Pairs resolved by the first stage.
    pub total_matchs_num: u64,
    /// Detections seen, over all frames.
    pub total_detects_num: u64,
    /// Live tracks entering association, summed over frames.
    pub total_tracks_num: u64,
}

/// Fraction of detections and of track instances resolved by the first stage.
pub fn coverage_ratios(counters: &Stage1Counters) -> Result<(f64, f64)> {
    if counters.total_detects_num == 0 {
        return Err(MotsError::EmptySequence);
    }
    let matched = counters.total_matchs_num as f64;
    let m_det = matched / counters.total_detects_num as f64;
    let m_track = if counters.total_tracks_num == 0 {
        0.0
    } else {
        matched / counters.total_tracks_num as f64
    };
    Ok((m_det, m_track))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mota: f64,
    pub idf1: f64,
    pub mt: usize,
    pub ml: usize,
    pub ids: usize,
    pub fp: usize,
    pub fn_: usize,
    pub num_gt: usize,
    pub num_gt_ids: usize,
    /// `None` when the first stage did not run.
    pub m_det: Option<f64>,
    pub m_track: Option<f64>,
    /// Association-only throughput; `None` when not measured.
    pub fps: Option<f64>,
}

impl MetricsReport {
    pub fn with_coverage(mut self, coverage: Option<(f64, f64)>) -> Self {
        self.m_det = coverage.map(|c| c.0);
        self.m_track = coverage.map(|c| c.1);
        self
    }

    pub fn with_fps(mut self, fps: Option<f64>) -> Self {
        self.fps = fps;
        self
    }

    /// One `name=value` line per metric. Unavailable values are written as `\`.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "\\".to_string(), |x| format!("{x:.6}"));
        let mut out = String::new();
        out.push_str(&format!("mota={:.6}\n", self.mota));
        out.push_str(&format!("idf1={:.6}\n", self.idf1));
        out.push_str(&format!("mt={}\n", self.mt));
        out.push_str(&format!("ml={}\n", self.ml));
        out.push_str(&format!("ids={}\n", self.ids));
        out.push_str(&format!("fp={}\n", self.fp));
        out.push_str(&format!("fn={}\n", self.fn_));
        out.push_str(&format!("num_gt={}\n", self.num_gt));
        out.push_str(&format!("m_det={}\n", opt(self.m_det)));
        out.push_str(&format!("m_track={}\n", opt(self.m_track)));
        out.push_str(&format!("fps={}\n", opt(self.fps)));
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "\\".to_string(), |x| format!("{:.2}", 100.0 * x));
        writeln!(
            f,
            "{:>8} {:>8} {:>5} {:>5} {:>6} {:>7} {:>7} {:>8} {:>8} {:>8}",
            "MOTA", "IDF1", "MT", "ML", "IDS", "FP", "FN", "M-det", "M-track", "FPS"
        )?;
        write!(
            f,
            "{:>8.2} {:>8.2} {:>5} {:>5} {:>6} {:>7} {:>7} {:>8} {:>8} {:>8}",
            100.0 * self.mota,
            100.0 * self.idf1,
            self.mt,
            self.ml,
            self.ids,
            self.fp,
            self.fn_,
            pct(self.m_det),
            pct(self.m_track),
            self.fps.map_or_else(|| "\\".to_string(), |x| format!("{x:.1}")),
        )
    }
}

type FrameIndex<'a> = BTreeMap<u32, Vec<&'a TrackRow>>;

fn index_by_frame<'a>(rows: &'a [TrackRow], what: &str) -> Result<FrameIndex<'a>> {
    let mut frames: FrameIndex<'a> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in rows {
        if !seen.insert((r.frame, r.id)) {
            return Err(MotsError::Malformed(format!(
                "{what}: id {} appears twice in frame {}",
                r.id, r.frame
            )));
        }
        frames.entry(r.frame).or_default().push(r);
    }
    for v in frames.values_mut() {
        v.sort_by_key(|r| r.id);
    }
    Ok(frames)
}

/// Scores hypothesis trajectories against ground truth.
///
/// Per frame, correspondences from the previous frame are kept while their IOU
/// stays at or above `iou_gate`; the rest are assigned by Hungarian matching on
/// `1 - iou`. An identity switch is counted when a ground-truth trajectory is
/// matched to a different hypothesis id than at its last matched frame.
pub fn evaluate(gt: &[TrackRow], hyp: &[TrackRow], iou_gate: f64) -> Result<MetricsReport> {
    let gt_frames = index_by_frame(gt, "ground truth")?;
    let hyp_frames = index_by_frame(hyp, "hypothesis")?;
    if gt.is_empty() {
        return Err(MotsError::EmptySequence);
    }

    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut ids = 0usize;
    let mut prev_frame_match: HashMap<u64, u64> = HashMap::new();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut gt_len: BTreeMap<u64, usize> = BTreeMap::new();
    let mut gt_matched: BTreeMap<u64, usize> = BTreeMap::new();

    let frames: BTreeSet<u32> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();
    for frame in frames {
        let g = gt_frames.get(&frame).unwrap_or(&empty);
        let h = hyp_frames.get(&frame).unwrap_or(&empty);
        for r in g {
            *gt_len.entry(r.id).or_default() += 1;
        }

        let mut gt_used = vec![false; g.len()];
        let mut hyp_used = vec![false; h.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        for (gi, gr) in g.iter().enumerate() {
            let Some(&hid) = prev_frame_match.get(&gr.id) else { continue };
            if let Some(hi) = h.iter().position(|hr| hr.id == hid) {
                if !hyp_used[hi] && iou(&gr.bbox, &h[hi].bbox) >= iou_gate {
                    gt_used[gi] = true;
                    hyp_used[hi] = true;
                    pairs.push((gi, hi));
                }
            }
        }

        let free_g: Vec<usize> = (0..g.len()).filter(|&i| !gt_used[i]).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&i| !hyp_used[i]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let cost = DMatrix::from_fn(free_g.len(), free_h.len(), |a, b| {
                1.0 - iou(&g[free_g[a]].bbox, &h[free_h[b]].bbox)
            });
            let solved = hungarian_solve(&AssignmentProblem {
                cost,
                gate: 1.0 - iou_gate,
            });
            for (a, b) in solved.matches {
                // The gate compares costs, so re-check in IOU space to avoid rounding at the boundary.
                if iou(&g[free_g[a]].bbox, &h[free_h[b]].bbox) >= iou_gate {
                    pairs.push((free_g[a], free_h[b]));
                }
            }
        }

        prev_frame_match.clear();
        for &(gi, hi) in &pairs {
            let (gid, hid) = (g[gi].id, h[hi].id);
            if let Some(&last) = last_match.get(&gid) {
                if last != hid {
                    ids += 1;
                }
            }
            last_match.insert(gid, hid);
            prev_frame_match.insert(gid, hid);
            *gt_matched.entry(gid).or_default() += 1;
        }
        fn_ += g.len() - pairs.len();
        fp += h.len() - pairs.len();
    }

    let num_gt = gt.len();
    let mota = 1.0 - (fn_ + fp + ids) as f64 / num_gt as f64;
    let mut mt = 0;
    let mut ml = 0;
    for (id, &len) in &gt_len {
        let ratio = gt_matched.get(id).copied().unwrap_or(0) as f64 / len as f64;
        if ratio >= MOSTLY_TRACKED {
            mt += 1;
        } else if ratio <= MOSTLY_LOST {
            ml += 1;
        }
    }

    Ok(MetricsReport {
        mota,
        idf1: idf1(&gt_frames, &hyp_frames, gt.len(), hyp.len(), iou_gate),
        mt,
        ml,
        ids,
        fp,
        fn_,
        num_gt,
        num_gt_ids: gt_len.len(),
        m_det: None,
        m_track: None,
        fps: None,
    })
}

/// Frames on which each (gt id, hyp id) pair overlaps at or above the gate.
pub fn identity_overlaps(gt: &[TrackRow], hyp: &[TrackRow], iou_gate: f64) -> Result<BTreeMap<(u64, u64), usize>> {
    let g = index_by_frame(gt, "ground truth")?;
    let h = index_by_frame(hyp, "hypothesis")?;
    Ok(overlap_counts(&g, &h, iou_gate))
}

fn overlap_counts(gt: &FrameIndex<'_>, hyp: &FrameIndex<'_>, iou_gate: f64) -> BTreeMap<(u64, u64), usize> {
    let mut counts = BTreeMap::new();
    for (frame, g) in gt {
        let Some(h) = hyp.get(frame) else { continue };
        for gr in g {
            for hr in h {
                if iou(&gr.bbox, &hr.bbox) >= iou_gate {
                    *counts.entry((gr.id, hr.id)).or_default() += 1;
                }
            }
        }
    }
    counts
}

// Identity F1 from the one-to-one id matching that maximizes co-occurring frames.
fn idf1(gt: &FrameIndex<'_>, hyp: &FrameIndex<'_>, num_gt: usize, num_hyp: usize, iou_gate: f64) -> f64 {
    if num_gt + num_hyp == 0 {
        return 1.0;
    }
    let counts = overlap_counts(gt, hyp, iou_gate);
    let gt_ids: Vec<u64> = counts.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
    let hyp_ids: Vec<u64> = counts.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
    if gt_ids.is_empty() {
        return 0.0;
    }
    let max = counts.values().copied().max().unwrap_or(0) as f64;
    let cost = DMatrix::from_fn(gt_ids.len(), hyp_ids.len(), |a, b| {
        max - counts.get(&(gt_ids[a], hyp_ids[b])).copied().unwrap_or(0) as f64
    });
    let idtp: usize = solve_rectangular(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(a, b)| b.map(|b| counts.get(&(gt_ids[a], hyp_ids[b])).copied().unwrap_or(0)))
        .sum();
    2.0 * idtp as f64 / (num_gt + num_hyp) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u32, id: u64, x: f64) -> TrackRow {
        TrackRow {
            frame,
            id,
            bbox: BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap(),
        }
    }

    /// Two gt trajectories over five frames, ten boxes in total.
    fn gt_fixture() -> Vec<TrackRow> {
        (1..=5).flat_map(|f| [row(f, 1, 0.0), row(f, 2, 100.0)]).collect()
    }

    #[test]
    fn perfect_tracking() {
        let gt = gt_fixture();
        let r = evaluate(&gt, &gt, DEFAULT_IOU_GATE).unwrap();
        assert_eq!(r.mota, 1.0);
        assert_eq!(r.idf1, 1.0);
        assert_eq!((r.ids, r.fp, r.fn_, r.mt, r.ml), (0, 0, 0, 2, 0));
    }

    #[test]
    fn hand_counted_mota() {
        let gt = gt_fixture();
        let mut hyp: Vec<TrackRow> = (1..=5).map(|f| row(f, 10, 0.0)).collect();
        hyp.extend([row(1, 20, 100.0), row(2, 20, 100.0)]);
        // id 30 takes over gt 2 at frame 3 (switch); frame 4 missing (miss)
        hyp.extend([row(3, 30, 100.0), row(5, 30, 100.0)]);
        // spurious box far from everything
        hyp.push(row(1, 40, 500.0));
        let r = evaluate(&gt, &hyp, DEFAULT_IOU_GATE).unwrap();
        assert_eq!((r.fn_, r.fp, r.ids), (1, 1, 1));
        assert!((r.mota - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_hypothesis() {
        let gt = gt_fixture();
        let r = evaluate(&gt, &[], DEFAULT_IOU_GATE).unwrap();
        assert_eq!(r.mota, 0.0);
        assert_eq!((r.fn_, r.fp, r.ids), (10, 0, 0));
        assert_eq!(r.idf1, 0.0);
        assert_eq!(r.ml, 2);
    }

    #[test]
    fn persistence_keeps_previous_correspondence() {
        // Two hypotheses overlap gt equally well at frame 2; the earlier one is kept.
        let gt: Vec<TrackRow> = (1..=2).map(|f| row(f, 1, 0.0)).collect();
        let hyp = vec![row(1, 7, 1.0), row(2, 7, 1.0), row(2, 3, 0.0)];
        let r = evaluate(&gt, &hyp, DEFAULT_IOU_GATE).unwrap();
        assert_eq!(r.ids, 0);
        assert_eq!(r.fp, 1);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let gt = vec![row(1, 1, 0.0), row(1, 1, 50.0)];
        assert!(matches!(evaluate(&gt, &[], 0.5), Err(MotsError::Malformed(_))));
        assert!(matches!(evaluate(&[], &[], 0.5), Err(MotsError::EmptySequence)));
    }

    #[test]
    fn coverage_examples() {
        let c = Stage1Counters { total_matchs_num: 88, total_detects_num: 100, total_tracks_num: 100 };
        let (d, t) = coverage_ratios(&c).unwrap();
        assert!((d - 0.88).abs() < 1e-12 && (t - 0.88).abs() < 1e-12);
        let c = Stage1Counters { total_matchs_num: 0, total_detects_num: 50, total_tracks_num: 10 };
        assert_eq!(coverage_ratios(&c).unwrap(), (0.0, 0.0));
        assert!(matches!(coverage_ratios(&Stage1Counters::default()), Err(MotsError::EmptySequence)));
    }

    #[test]
    fn disabled_stage1_renders_backslash() {
        let r = evaluate(&gt_fixture(), &gt_fixture(), 0.5).unwrap().with_coverage(None);
        let kv = r.to_key_values();
        assert!(kv.contains("m_det=\\\n"));
        assert!(kv.contains("mota=1.000000\n"));
        assert!(r.to_string().contains('\\'));
    }
}
