//! VOC-style detection evaluation by greedy IoU matching and per-class
//! average precision. The COCO-style mode averages over IoU thresholds.
//!
//! Ground truth and detections are JSON lines with pixel corner boxes:
//!
//! ```text
//! {"image": "000001", "class": "dog", "bbox": [48, 240, 195, 371], "difficult": false}
//! {"image": "000001", "class": "dog", "score": 0.93, "bbox": [50, 238, 190, 380]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{iou, BBox};

/// Class names of PASCAL VOC, in the conventional order (background excluded).
pub const VOC_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: String,
    pub class: String,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    pub class: String,
    pub score: f64,
    pub bbox: [f64; 4],
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("detection class {0:?} does not appear in the ground truth")]
    UnknownClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Tp,
    Fp,
    /// Matched a difficult ground truth; excluded from precision and recall.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMode {
    Voc11,
    Area,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Voc11,
    Area,
    /// Area AP averaged over IoU thresholds 0.50, 0.55, ..., 0.95.
    Coco,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "voc11" => Ok(EvalMode::Voc11),
            "area" => Ok(EvalMode::Area),
            "coco" => Ok(EvalMode::Coco),
            _ => Err(format!("unknown mode {s:?} (expected voc11, area or coco)")),
        }
    }
}

fn to_box(b: &[f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

/// Labels one class's detections, which must be sorted by descending score.
/// Each detection takes the highest-IoU ground truth of its image that no
/// earlier detection has claimed (lowest index on ties).
pub fn match_detections(dets: &[DetectionRecord], gts: &[GroundTruth], iou_threshold: f64) -> Vec<Label> {
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image.as_str()).or_default().push(i);
    }
    let mut claimed = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let db = to_box(&d.bbox);
            let mut best: Option<(usize, f64)> = None;
            for &g in by_image.get(d.image.as_str()).map_or(&[][..], |v| v.as_slice()) {
                if claimed[g] {
                    continue;
                }
                let o = iou(&db, &to_box(&gts[g].bbox));
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, o)) if o >= iou_threshold => {
                    if gts[g].difficult {
                        Label::Ignored
                    } else {
                        claimed[g] = true;
                        Label::Tp
                    }
                }
                _ => Label::Fp,
            }
        })
        .collect()
}

/// (precision, recall) after each counted detection.
pub fn pr_curve(labels: &[Label], num_gt: usize) -> Vec<(f64, f64)> {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        match l {
            Label::Tp => tp += 1,
            Label::Fp => fp += 1,
            Label::Ignored => continue,
        }
        let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
        out.push((tp as f64 / (tp + fp) as f64, recall));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApResult {
    pub ap: f64,
    /// False when there was no ground truth to recall; `ap` is then 0.
    pub defined: bool,
}

pub fn average_precision(labels: &[Label], num_gt: usize, mode: ApMode) -> ApResult {
    if num_gt == 0 {
        return ApResult {
            ap: 0.0,
            defined: false,
        };
    }
    let curve = pr_curve(labels, num_gt);
    let ap = match mode {
        ApMode::Voc11 => {
            let sum: f64 = (0..=10)
                .map(|t| {
                    let r = t as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|(_, rec)| *rec >= r)
                        .map(|(p, _)| *p)
                        .fold(0.0, f64::max)
                })
                .sum();
            sum / 11.0
        }
        ApMode::Area => {
            // precision envelope, swept from the right
            let mut env: Vec<f64> = curve.iter().map(|(p, _)| *p).collect();
            for i in (0..env.len().saturating_sub(1)).rev() {
                env[i] = env[i].max(env[i + 1]);
            }
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (i, (_, r)) in curve.iter().enumerate() {
                area += (r - prev_recall) * env[i];
                prev_recall = *r;
            }
            area
        }
    };
    ApResult { ap, defined: true }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub ap: f64,
    /// Non-difficult ground truths.
    pub num_gt: usize,
    pub num_detections: usize,
    /// At IoU 0.5.
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes with at least one non-difficult ground truth.
    pub map: f64,
}

pub const VOC_IOU: f64 = 0.5;

pub fn evaluate_map(dets: &[DetectionRecord], gts: &[GroundTruth], mode: EvalMode) -> Result<EvalReport, EvalError> {
    let classes: BTreeSet<&str> = gts.iter().map(|g| g.class.as_str()).collect();
    if let Some(d) = dets.iter().find(|d| !classes.contains(d.class.as_str())) {
        return Err(EvalError::UnknownClass(d.class.clone()));
    }
    let mut gt_by_class: BTreeMap<&str, Vec<GroundTruth>> = BTreeMap::new();
    for g in gts {
        gt_by_class.entry(&g.class).or_default().push(g.clone());
    }
    let mut det_by_class: BTreeMap<&str, Vec<DetectionRecord>> = BTreeMap::new();
    for d in dets {
        det_by_class.entry(&d.class).or_default().push(d.clone());
    }

    let classes: Vec<&str> = classes.into_iter().collect();
    let reports: Vec<ClassReport> = classes
        .par_iter()
        .map(|&class| {
            let g = &gt_by_class[class];
            let mut d = det_by_class.get(class).cloned().unwrap_or_default();
            // stable: equal scores keep file order
            d.sort_by(|a, b| b.score.total_cmp(&a.score));
            let num_gt = g.iter().filter(|x| !x.difficult).count();
            let labels = match_detections(&d, g, VOC_IOU);
            let ap = match mode {
                EvalMode::Voc11 => average_precision(&labels, num_gt, ApMode::Voc11).ap,
                EvalMode::Area => average_precision(&labels, num_gt, ApMode::Area).ap,
                EvalMode::Coco => {
                    let sum: f64 = (0..10)
                        .map(|i| {
                            let l = match_detections(&d, g, 0.5 + 0.05 * i as f64);
                            average_precision(&l, num_gt, ApMode::Area).ap
                        })
                        .sum();
                    sum / 10.0
                }
            };
            ClassReport {
                class: class.to_string(),
                ap,
                num_gt,
                num_detections: d.len(),
                true_positives: labels.iter().filter(|l| **l == Label::Tp).count(),
                false_positives: labels.iter().filter(|l| **l == Label::Fp).count(),
            }
        })
        .collect();

    let counted: Vec<f64> = reports.iter().filter(|r| r.num_gt > 0).map(|r| r.ap).collect();
    let map = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok(EvalReport {
        mode,
        classes: reports,
        map,
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    r: impl BufRead,
    check: impl Fn(&T) -> Option<String>,
) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: T = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(message) = check(&v) {
            return Err(EvalError::Parse { line: i + 1, message });
        }
        out.push(v);
    }
    Ok(out)
}

fn check_box(b: &[f64; 4]) -> Option<String> {
    if b.iter().any(|v| !v.is_finite()) || b[2] < b[0] || b[3] < b[1] {
        Some(format!("invalid box {b:?}"))
    } else {
        None
    }
}

pub fn read_ground_truth(r: impl BufRead) -> Result<Vec<GroundTruth>, EvalError> {
    read_jsonl(r, |g: &GroundTruth| check_box(&g.bbox))
}

pub fn read_detections(r: impl BufRead) -> Result<Vec<DetectionRecord>, EvalError> {
    read_jsonl(r, |d: &DetectionRecord| {
        if !d.score.is_finite() {
            Some(format!("invalid score {}", d.score))
        } else {
            check_box(&d.bbox)
        }
    })
}

pub fn write_detections(mut w: impl Write, dets: &[DetectionRecord]) -> std::io::Result<()> {
    for d in dets {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
