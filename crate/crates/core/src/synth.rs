//! Seeded synthetic sequences with known ground truth.
//!
//! Targets follow constant-speed paths with a small constant turn rate, so
//! trajectories range from straight lines to gentle arcs. Each target is hidden
//! in random gaps of 1..=`max_gap` frames; hidden frames produce neither a
//! detection nor a ground-truth row, the way benchmark annotations leave out
//! fully occluded targets. Visible frames yield a jittered detection carrying a
//! noisy copy of the target's identity embedding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::io::{EmbeddingSidecar, SequenceInput};
use crate::metrics::TrackRow;
use crate::types::{BoundingBox, Detection};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_targets: usize,
    pub num_frames: u32,
    pub image_size: (f64, f64),
    /// Target fraction of frames on which a visible target has no detection.
    pub dropout: f64,
    /// Longest detection gap, in frames.
    pub max_gap: u32,
    /// Position noise standard deviation, pixels.
    pub jitter: f64,
    pub speed_range: (f64, f64),
    /// Maximum absolute turn rate, radians per frame.
    pub max_turn: f64,
    pub width_range: (f64, f64),
    pub embedding_dim: usize,
    /// Per-detection embedding noise, as a fraction of the unit identity vector.
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_targets: 20,
            num_frames: 300,
            image_size: (1920.0, 1080.0),
            dropout: 0.10,
            max_gap: 4,
            jitter: 1.0,
            speed_range: (0.5, 3.0),
            max_turn: 0.004,
            width_range: (30.0, 60.0),
            embedding_dim: 128,
            embedding_noise: 0.15,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub input: SequenceInput,
    pub gt: Vec<TrackRow>,
    /// Detection frames that were dropped while the target was inside the image.
    pub dropped: usize,
}

impl SyntheticSequence {
    /// The detections' embeddings as a sidecar, keyed by `(frame, source_index)`.
    pub fn sidecar(&self) -> EmbeddingSidecar {
        let dim = self
            .input
            .detections()
            .find_map(|d| d.embedding.as_ref().map(Vec::len))
            .unwrap_or(0) as u32;
        let mut s = EmbeddingSidecar::new(dim);
        for d in self.input.detections() {
            if let Some(e) = &d.embedding {
                s.records.insert((d.frame, d.source_index as u32), e.clone());
            }
        }
        s
    }
}

struct Target {
    id: u64,
    pos: (f64, f64),
    heading: f64,
    speed: f64,
    turn: f64,
    size: (f64, f64),
    identity: Vec<f64>,
    gap_left: u32,
    // Gaps never start right after another, so every gap stays within max_gap.
    seen_last_frame: bool,
    gone: bool,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (width, height) = cfg.image_size;
    let jitter = Normal::new(0.0, cfg.jitter.max(1e-12)).expect("finite jitter");
    let mean_gap = (1.0 + cfg.max_gap.max(1) as f64) / 2.0;
    let gap_start = if cfg.dropout > 0.0 && cfg.dropout < 1.0 {
        cfg.dropout / ((1.0 - cfg.dropout) * mean_gap)
    } else {
        0.0
    };

    let mut targets: Vec<Target> = (0..cfg.num_targets)
        .map(|n| {
            let w = rng.gen_range(cfg.width_range.0..=cfg.width_range.1);
            let h = w * rng.gen_range(2.0..2.6);
            Target {
                id: n as u64 + 1,
                pos: (
                    rng.gen_range(0.1 * width..0.9 * width),
                    rng.gen_range(0.15 * height..0.85 * height),
                ),
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
                speed: rng.gen_range(cfg.speed_range.0..=cfg.speed_range.1),
                turn: rng.gen_range(-cfg.max_turn..=cfg.max_turn),
                size: (w, h),
                identity: random_unit(&mut rng, cfg.embedding_dim),
                gap_left: 0,
                seen_last_frame: true,
                gone: false,
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.num_frames as usize);
    let mut gt = Vec::new();
    let mut dropped = 0;
    for frame in 1..=cfg.num_frames {
        let mut dets = Vec::new();
        for t in targets.iter_mut() {
            if frame > 1 {
                t.heading += t.turn;
                t.pos.0 += t.speed * t.heading.cos();
                t.pos.1 += t.speed * t.heading.sin();
            }
            if t.gone {
                continue;
            }
            if t.pos.0 < 0.0 || t.pos.0 > width || t.pos.1 < 0.0 || t.pos.1 > height {
                t.gone = true;
                continue;
            }
            if t.gap_left == 0 && t.seen_last_frame && frame > 1 && rng.gen_bool(gap_start.min(1.0)) {
                t.gap_left = rng.gen_range(1..=cfg.max_gap.max(1));
            }
            if t.gap_left > 0 {
                t.gap_left -= 1;
                t.seen_last_frame = false;
                dropped += 1;
                continue;
            }
            t.seen_last_frame = true;
            let bbox = BoundingBox::from_center(t.pos.0, t.pos.1, t.size.0, t.size.1).expect("positive size");
            gt.push(TrackRow { frame, id: t.id, bbox });
            let noisy = BoundingBox::from_center(
                t.pos.0 + jitter.sample(&mut rng),
                t.pos.1 + jitter.sample(&mut rng),
                t.size.0,
                t.size.1,
            )
            .expect("positive size");
            let noise_scale = cfg.embedding_noise / (cfg.embedding_dim.max(1) as f64).sqrt();
            let emb: Vec<f32> = t
                .identity
                .iter()
                .map(|&x| (x + noise_scale * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            let conf = rng.gen_range(0.6..1.0);
            dets.push((noisy, conf, emb));
        }
        let dets = dets
            .into_iter()
            .enumerate()
            .map(|(idx, (bbox, conf, emb))| Detection::new(frame, bbox, conf, idx).with_embedding(emb))
            .collect();
        frames.push(dets);
    }

    SyntheticSequence {
        input: SequenceInput {
            name: format!("synthetic-{}", cfg.seed),
            frames,
            image_size: Some(cfg.image_size),
            frame_rate: Some(30.0),
            rejected_rows: 0,
        },
        gt,
        dropped,
    }
}
