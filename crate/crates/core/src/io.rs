//! File formats: MOT Challenge CSV (detections, ground truth, results),
//! `seqinfo.ini`, the binary embedding sidecar and precomputed score tables.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tracing::warn;

use crate::error::{MotsError, Result};
use crate::metrics::TrackRow;
use crate::stage2::PrecomputedProvider;
use crate::types::{normalize_embedding, BoundingBox, Detection};

/// Magic bytes opening an embedding sidecar file.
pub const SIDECAR_MAGIC: &[u8; 7] = b"TREID1\0";
/// Magic bytes plus the little-endian `u32` embedding dimension.
pub const SIDECAR_HEADER_LEN: usize = 11;

/// One sequence worth of detections, indexed by frame (frame 1 is `frames[0]`).
#[derive(Debug, Clone, Default)]
pub struct SequenceInput {
    pub name: String,
    pub frames: Vec<Vec<Detection>>,
    pub image_size: Option<(f64, f64)>,
    pub frame_rate: Option<f64>,
    /// Rows dropped at load time for a non-positive width or height.
    pub rejected_rows: usize,
}

impl SequenceInput {
    pub fn num_detections(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flatten()
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MotsError::io(path, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str], idx: usize, what: &str) -> Result<T> {
    let raw = fields
        .get(idx)
        .ok_or_else(|| MotsError::format(path, line, format!("missing {what} column")))?;
    raw.trim()
        .parse::<T>()
        .map_err(|_| MotsError::format(path, line, format!("bad {what} value {raw:?}")))
}

/// Yields `(line_number, fields)` for every non-empty, non-comment line.
fn csv_records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split(',').collect()))
        }
    })
}

/// Parses `frame,id,x,y,w,h,conf,...` detection rows.
///
/// Each detection's `source_index` is its ordinal among the rows of its frame
/// in file order, counting rejected rows, so sidecar indices stay aligned with
/// the file. Rows with non-positive width or height are skipped and counted.
pub fn load_mot_detections(path: &Path) -> Result<SequenceInput> {
    let text = read_to_string(path)?;
    let mut by_frame: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    let mut per_frame_rows: HashMap<u32, usize> = HashMap::new();
    let mut rejected = 0;
    for (line, fields) in csv_records(&text) {
        if fields.len() < 7 {
            return Err(MotsError::format(path, line, format!("expected at least 7 columns, got {}", fields.len())));
        }
        let frame_f: f64 = parse_field(path, line, &fields, 0, "frame")?;
        if frame_f < 1.0 || frame_f.fract() != 0.0 {
            return Err(MotsError::format(path, line, format!("frame must be a positive integer, got {frame_f}")));
        }
        let frame = frame_f as u32;
        let x: f64 = parse_field(path, line, &fields, 2, "x")?;
        let y: f64 = parse_field(path, line, &fields, 3, "y")?;
        let w: f64 = parse_field(path, line, &fields, 4, "width")?;
        let h: f64 = parse_field(path, line, &fields, 5, "height")?;
        let conf: f64 = parse_field(path, line, &fields, 6, "confidence")?;
        let ordinal = per_frame_rows.entry(frame).or_insert(0);
        let source_index = *ordinal;
        *ordinal += 1;
        if !(w > 0.0 && h > 0.0) {
            rejected += 1;
            continue;
        }
        let bbox = BoundingBox::new(x, y, w, h).map_err(|e| MotsError::format(path, line, e.to_string()))?;
        by_frame
            .entry(frame)
            .or_default()
            .push(Detection::new(frame, bbox, conf, source_index));
    }
    if rejected > 0 {
        warn!(path = %path.display(), rejected, "skipped detections with non-positive size");
    }
    let num_frames = by_frame.keys().next_back().copied().unwrap_or(0) as usize;
    let mut frames = vec![Vec::new(); num_frames];
    for (f, dets) in by_frame {
        frames[f as usize - 1] = dets;
    }
    Ok(SequenceInput {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        frames,
        image_size: None,
        frame_rate: None,
        rejected_rows: rejected,
    })
}

/// Parses trajectory rows (`frame,id,x,y,w,h[,flag,...]`) as used by ground
/// truth and tracker results. Ground-truth rows whose seventh column is 0 are
/// marked as not to be evaluated and are skipped.
pub fn load_mot_tracks(path: &Path) -> Result<Vec<TrackRow>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line, fields) in csv_records(&text) {
        if fields.len() < 6 {
            return Err(MotsError::format(path, line, format!("expected at least 6 columns, got {}", fields.len())));
        }
        let frame_f: f64 = parse_field(path, line, &fields, 0, "frame")?;
        let id_f: f64 = parse_field(path, line, &fields, 1, "id")?;
        if frame_f < 1.0 || frame_f.fract() != 0.0 || id_f < 0.0 || id_f.fract() != 0.0 {
            return Err(MotsError::format(path, line, "frame and id must be non-negative integers"));
        }
        if fields.len() >= 7 {
            let flag: f64 = parse_field(path, line, &fields, 6, "flag")?;
            if flag == 0.0 {
                continue;
            }
        }
        let x: f64 = parse_field(path, line, &fields, 2, "x")?;
        let y: f64 = parse_field(path, line, &fields, 3, "y")?;
        let w: f64 = parse_field(path, line, &fields, 4, "width")?;
        let h: f64 = parse_field(path, line, &fields, 5, "height")?;
        let bbox = BoundingBox::new(x, y, w, h).map_err(|e| MotsError::format(path, line, e.to_string()))?;
        rows.push(TrackRow {
            frame: frame_f as u32,
            id: id_f as u64,
            bbox,
        });
    }
    Ok(rows)
}

/// Formats rows as `frame,id,x,y,w,h,1,-1,-1,-1`, sorted by frame then id.
pub fn format_results(rows: &[TrackRow]) -> String {
    let mut sorted: Vec<&TrackRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in sorted {
        let b = &r.bbox;
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},1,-1,-1,-1\n",
            r.frame,
            r.id,
            b.x(),
            b.y(),
            b.w(),
            b.h()
        ));
    }
    out
}

pub fn write_results(rows: &[TrackRow], path: &Path) -> Result<()> {
    fs::write(path, format_results(rows)).map_err(|e| MotsError::io(path, e))
}

/// Writes detections in MOT detection format (`id` = -1).
pub fn write_detections(frames: &[Vec<Detection>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for d in frames.iter().flatten() {
        let b = &d.bbox;
        out.push_str(&format!(
            "{},-1,{:.3},{:.3},{:.3},{:.3},{:.4},-1,-1,-1\n",
            d.frame,
            b.x(),
            b.y(),
            b.w(),
            b.h(),
            d.confidence
        ));
    }
    fs::write(path, out).map_err(|e| MotsError::io(path, e))
}

/// Writes ground truth with the evaluate flag, class and visibility set to 1.
pub fn write_ground_truth(rows: &[TrackRow], path: &Path) -> Result<()> {
    let mut sorted: Vec<&TrackRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in sorted {
        let b = &r.bbox;
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3},{:.3},1,1,1\n",
            r.frame,
            r.id,
            b.x(),
            b.y(),
            b.w(),
            b.h()
        ));
    }
    fs::write(path, out).map_err(|e| MotsError::io(path, e))
}

/// Embedding vectors keyed by `(frame, det_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingSidecar {
    pub dim: u32,
    pub records: BTreeMap<(u32, u32), Vec<f32>>,
}

impl EmbeddingSidecar {
    pub fn new(dim: u32) -> Self {
        EmbeddingSidecar {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let rec_len = 8 + 4 * self.dim as usize;
        let mut buf = Vec::with_capacity(SIDECAR_HEADER_LEN + rec_len * self.records.len());
        buf.extend_from_slice(SIDECAR_MAGIC);
        buf.extend_from_slice(&self.dim.to_le_bytes());
        for (&(frame, det), v) in &self.records {
            buf.extend_from_slice(&frame.to_le_bytes());
            buf.extend_from_slice(&det.to_le_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    /// Decodes a sidecar; `path` is only used in error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < SIDECAR_HEADER_LEN || &bytes[..7] != SIDECAR_MAGIC {
            return Err(MotsError::format(path, 0, "missing TREID1 header"));
        }
        let dim = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes"));
        if dim == 0 {
            return Err(MotsError::format(path, 0, "embedding dimension is 0"));
        }
        let rec_len = 8 + 4 * dim as usize;
        let body = &bytes[SIDECAR_HEADER_LEN..];
        if !body.len().is_multiple_of(rec_len) {
            return Err(MotsError::format(
                path,
                0,
                format!("body of {} bytes is not a whole number of {rec_len}-byte records", body.len()),
            ));
        }
        let mut records = BTreeMap::new();
        for (n, rec) in body.chunks_exact(rec_len).enumerate() {
            let frame = u32::from_le_bytes(rec[0..4].try_into().expect("4 bytes"));
            let det = u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes"));
            let v: Vec<f32> = rec[8..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if records.insert((frame, det), v).is_some() {
                return Err(MotsError::format(
                    path,
                    n + 1,
                    format!("duplicate record for frame {frame}, detection {det}"),
                ));
            }
        }
        Ok(EmbeddingSidecar { dim, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MotsError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| MotsError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.encode())
            .and_then(|_| w.flush())
            .map_err(|e| MotsError::io(path, e))
    }

    /// Sets each detection's embedding from its `(frame, source_index)` record.
    /// Returns how many detections received one.
    pub fn attach(&self, input: &mut SequenceInput) -> usize {
        let mut attached = 0;
        for d in input.frames.iter_mut().flatten() {
            if let Some(v) = self.records.get(&(d.frame, d.source_index as u32)) {
                d.embedding = normalize_embedding(v.clone());
                attached += d.embedding.is_some() as usize;
            }
        }
        attached
    }
}

/// Reads `frame_a,det_a,frame_b,det_b,score` rows into a score table.
pub fn load_scores(path: &Path) -> Result<PrecomputedProvider> {
    let text = read_to_string(path)?;
    let mut provider = PrecomputedProvider::new();
    for (line, fields) in csv_records(&text) {
        if fields.len() != 5 {
            return Err(MotsError::format(path, line, format!("expected 5 columns, got {}", fields.len())));
        }
        let fa: u32 = parse_field(path, line, &fields, 0, "frame_a")?;
        let da: usize = parse_field(path, line, &fields, 1, "det_a")?;
        let fb: u32 = parse_field(path, line, &fields, 2, "frame_b")?;
        let db: usize = parse_field(path, line, &fields, 3, "det_b")?;
        let score: f64 = parse_field(path, line, &fields, 4, "score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(MotsError::format(path, line, format!("score {score} outside [0, 1]")));
        }
        provider.insert((fa, da), (fb, db), score);
    }
    Ok(provider)
}

/// Sequence metadata from a MOT `seqinfo.ini`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeqInfo {
    pub name: Option<String>,
    pub image_size: Option<(f64, f64)>,
    pub frame_rate: Option<f64>,
}

pub fn load_seqinfo(path: &Path) -> Result<SeqInfo> {
    let text = read_to_string(path)?;
    let mut kv = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('[') || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let num = |k: &str| kv.get(k).and_then(|v| v.parse::<f64>().ok());
    Ok(SeqInfo {
        name: kv.get("name").cloned(),
        image_size: num("imwidth").zip(num("imheight")),
        frame_rate: num("framerate"),
    })
}

/// Looks for `seqinfo.ini` beside the detection file or one or two levels up
/// (MOT layout: `SEQ/det/det.txt` with `SEQ/seqinfo.ini`).
pub fn find_seqinfo(dets_path: &Path) -> Option<PathBuf> {
    dets_path
        .ancestors()
        .skip(1)
        .take(3)
        .map(|d| d.join("seqinfo.ini"))
        .find(|p| p.is_file())
}
