//! Geometric observations and association outputs shared by every stage.

use crate::error::{MotsError, Result};

/// Axis-aligned box in pixel coordinates, stored as top-left corner plus size.
///
/// Width and height are strictly positive and all coordinates are finite;
/// `new` is the only way to build one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(MotsError::InvalidBox(format!(
                "non-finite coordinates ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(MotsError::InvalidBox(format!(
                "non-positive size {w}x{h}"
            )));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
}

/// Intersection over union of two boxes. Symmetric, 1 for identical boxes, 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A single detector output on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Appearance vector, unit L2 norm when present.
    pub embedding: Option<Vec<f32>>,
    /// Position of this detection within its frame, as listed in the input file.
    pub source_index: usize,
}

impl Detection {
    pub fn new(frame: u32, bbox: BoundingBox, confidence: f64, source_index: usize) -> Self {
        Detection {
            frame,
            bbox,
            confidence: confidence.clamp(0.0, 1.0),
            embedding: None,
            source_index,
        }
    }

    /// Attaches an embedding, normalizing it to unit length. Zero vectors are dropped.
    pub fn with_embedding(mut self, embedding: Vec<f32>) -> Self {
        self.embedding = normalize_embedding(embedding);
        self
    }
}

pub(crate) fn normalize_embedding(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Some(v)
}

/// Output of any matcher: matched pairs plus the leftovers of both sides.
///
/// Indices refer to positions in the track and detection slices handed to
/// the matcher, so the pipeline can map them back to track ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationResult {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl AssociationResult {
    /// Builds a result from the matched pairs, deriving both unmatched lists.
    pub fn from_matches(mut matches: Vec<(usize, usize)>, num_tracks: usize, num_dets: usize) -> Self {
        matches.sort_unstable();
        let mut track_used = vec![false; num_tracks];
        let mut det_used = vec![false; num_dets];
        for &(t, d) in &matches {
            debug_assert!(!track_used[t] && !det_used[d], "matcher assigned twice");
            track_used[t] = true;
            det_used[d] = true;
        }
        AssociationResult {
            matches,
            unmatched_tracks: (0..num_tracks).filter(|&t| !track_used[t]).collect(),
            unmatched_detections: (0..num_dets).filter(|&d| !det_used[d]).collect(),
        }
    }

    pub fn unmatched(num_tracks: usize, num_dets: usize) -> Self {
        AssociationResult::from_matches(Vec::new(), num_tracks, num_dets)
    }

    /// True when matches and leftovers partition `0..num_tracks` and `0..num_dets` exactly.
    pub fn is_partition(&self, num_tracks: usize, num_dets: usize) -> bool {
        let mut tracks = vec![0u32; num_tracks];
        let mut dets = vec![0u32; num_dets];
        for &(t, d) in &self.matches {
            if t >= num_tracks || d >= num_dets {
                return false;
            }
            tracks[t] += 1;
            dets[d] += 1;
        }
        for &t in &self.unmatched_tracks {
            if t >= num_tracks {
                return false;
            }
            tracks[t] += 1;
        }
        for &d in &self.unmatched_detections {
            if d >= num_dets {
                return false;
            }
            dets[d] += 1;
        }
        tracks.iter().chain(dets.iter()).all(|&c| c == 1)
    }
}
