//! SSD post-processing: prior boxes, box decoding, NMS and per-class
//! detection extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Corner-form box, normalised or pixel coordinates depending on context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin).max(0.0) * (self.ymax - self.ymin).max(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.xmax > self.xmin && self.ymax > self.ymin)
    }

    pub fn clamp_unit(&self) -> Self {
        BBox {
            xmin: self.xmin.clamp(0.0, 1.0),
            ymin: self.ymin.clamp(0.0, 1.0),
            xmax: self.xmax.clamp(0.0, 1.0),
            ymax: self.ymax.clamp(0.0, 1.0),
        }
    }

    pub fn scale(&self, width: f64, height: f64) -> Self {
        BBox {
            xmin: self.xmin * width,
            ymin: self.ymin * height,
            xmax: self.xmax * width,
            ymax: self.ymax * height,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

/// Intersection over union with continuous coordinates; 0 when both boxes
/// are empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Centre-form prior in normalised image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PriorBox {
    pub fn corners(&self) -> BBox {
        BBox::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    fn from_corners(b: &BBox) -> Self {
        PriorBox {
            cx: (b.xmin + b.xmax) / 2.0,
            cy: (b.ymin + b.ymax) / 2.0,
            w: b.xmax - b.xmin,
            h: b.ymax - b.ymin,
        }
    }
}

pub const DEFAULT_VARIANCES: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// Prior-box parameters shared by every head.
///
/// Head k of m gets scale s_k = min + (max − min)(k − 1)/(m − 1), plus an
/// extra square box of side sqrt(s_k · s_{k+1}) with s_{m+1} = 1. A head with
/// `b` boxes per cell uses aspect ratios {1, extra, 2, 1/2, 3, 1/3, …} cut to
/// length `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub min_scale: f64,
    pub max_scale: f64,
    pub variances: [f64; 4],
    /// Clip prior corners to the unit square.
    pub clip: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            min_scale: 0.2,
            max_scale: 0.9,
            variances: DEFAULT_VARIANCES,
            clip: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("head {head}: {boxes} boxes per cell is not 2 + 2·n")]
    BoxesPerCell { head: usize, boxes: usize },
    #[error("{what}: expected {expected} values, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("need at least 2 classes (background + 1), got {0}")]
    NumClasses(usize),
}

/// Priors for heads given as (H, W, boxes per cell), in head order, then
/// row-major cells, then ratio order.
pub fn generate_priors(heads: &[(usize, usize, usize)], cfg: &PriorConfig) -> Result<Vec<PriorBox>, DetectionError> {
    let m = heads.len();
    let scale = |k: usize| {
        if k >= m {
            1.0
        } else if m == 1 {
            cfg.min_scale
        } else {
            cfg.min_scale + (cfg.max_scale - cfg.min_scale) * k as f64 / (m - 1) as f64
        }
    };
    let mut priors = Vec::with_capacity(heads.iter().map(|&(h, w, b)| h * w * b).sum());
    for (k, &(fh, fw, boxes)) in heads.iter().enumerate() {
        if boxes < 2 || boxes % 2 != 0 {
            return Err(DetectionError::BoxesPerCell { head: k, boxes });
        }
        let s = scale(k);
        let extra = (s * scale(k + 1)).sqrt();
        let mut shapes = vec![(s, s), (extra, extra)];
        for r in 2..=(boxes / 2) {
            let sr = (r as f64).sqrt();
            shapes.push((s * sr, s / sr));
            shapes.push((s / sr, s * sr));
        }
        for i in 0..fh {
            for j in 0..fw {
                let cx = (j as f64 + 0.5) / fw as f64;
                let cy = (i as f64 + 0.5) / fh as f64;
                for &(w, h) in &shapes {
                    let p = PriorBox { cx, cy, w, h };
                    priors.push(if cfg.clip {
                        PriorBox::from_corners(&p.corners().clamp_unit())
                    } else {
                        p
                    });
                }
            }
        }
    }
    Ok(priors)
}

/// Applies regression offsets (4 per prior) and clamps to the unit square.
pub fn decode_boxes(loc: &[f32], priors: &[PriorBox], variances: [f64; 4]) -> Result<Vec<BBox>, DetectionError> {
    if loc.len() != priors.len() * 4 {
        return Err(DetectionError::Length {
            what: "loc",
            expected: priors.len() * 4,
            actual: loc.len(),
        });
    }
    Ok(priors
        .iter()
        .zip(loc.chunks_exact(4))
        .map(|(p, l)| {
            let cx = p.cx + f64::from(l[0]) * variances[0] * p.w;
            let cy = p.cy + f64::from(l[1]) * variances[1] * p.h;
            let w = p.w * (f64::from(l[2]) * variances[2]).exp();
            let h = p.h * (f64::from(l[3]) * variances[3]).exp();
            BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).clamp_unit()
        })
        .collect())
}

/// Greedy NMS. Visits boxes by descending score (lower index first on
/// ties), keeps a box iff its IoU with every kept box is ≤ `iou_threshold`,
/// stops after `top_k` keeps. Returns indices in keep order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64, top_k: usize) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.len() >= top_k {
            break;
        }
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    /// Normalised corner box.
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    /// Cap per class after NMS.
    pub top_k: usize,
    /// Cap over all classes.
    pub keep_top_k: usize,
    pub variances: [f64; 4],
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            score_threshold: 0.01,
            iou_threshold: 0.45,
            top_k: 200,
            keep_top_k: 200,
            variances: DEFAULT_VARIANCES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostprocessOutput {
    /// Sorted by score descending, then class, then prior index.
    pub detections: Vec<Detection>,
    /// Priors whose decoded box had zero area and were skipped.
    pub degenerate: usize,
}

/// Softmax over each prior's logits, in f64 with the maximum subtracted.
pub fn softmax_rows(logits: &[f32], num_classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(num_classes) {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f64> = row.iter().map(|&v| f64::from(v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

/// Turns concatenated head outputs into detections. Class 0 is background.
pub fn postprocess(
    loc: &[f32],
    conf: &[f32],
    priors: &[PriorBox],
    num_classes: usize,
    cfg: &PostprocessConfig,
) -> Result<PostprocessOutput, DetectionError> {
    if num_classes < 2 {
        return Err(DetectionError::NumClasses(num_classes));
    }
    if conf.len() != priors.len() * num_classes {
        return Err(DetectionError::Length {
            what: "conf",
            expected: priors.len() * num_classes,
            actual: conf.len(),
        });
    }
    let boxes = decode_boxes(loc, priors, cfg.variances)?;
    let valid: Vec<bool> = boxes.iter().map(|b| !b.is_degenerate()).collect();
    let degenerate = valid.iter().filter(|v| !**v).count();
    let probs = softmax_rows(conf, num_classes);

    let per_class: Vec<Vec<(usize, Detection)>> = (1..num_classes)
        .into_par_iter()
        .map(|c| {
            let cand: Vec<usize> = (0..priors.len())
                .filter(|&i| valid[i] && probs[i * num_classes + c] > cfg.score_threshold)
                .collect();
            let b: Vec<BBox> = cand.iter().map(|&i| boxes[i]).collect();
            let s: Vec<f64> = cand.iter().map(|&i| probs[i * num_classes + c]).collect();
            nms(&b, &s, cfg.iou_threshold, cfg.top_k)
                .into_iter()
                .map(|k| {
                    (
                        cand[k],
                        Detection {
                            class_id: c,
                            score: s[k],
                            bbox: b[k],
                        },
                    )
                })
                .collect()
        })
        .collect();

    let mut all: Vec<(usize, Detection)> = per_class.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.1.class_id.cmp(&b.1.class_id))
            .then(a.0.cmp(&b.0))
    });
    all.truncate(cfg.keep_top_k);
    Ok(PostprocessOutput {
        detections: all.into_iter().map(|(_, d)| d).collect(),
        degenerate,
    })
}
