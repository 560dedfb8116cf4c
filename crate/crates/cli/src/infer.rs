//! JPEG → model inputs → forward pass → SSD post-processing → JSON lines.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dctdet_core::codec::Layout;
use dctdet_core::detection::{postprocess, PostprocessConfig};
use dctdet_core::evaluation::{DetectionRecord, VOC_CLASSES};
use dctdet_core::graph::{read_weights, seed_weights};
use dctdet_core::zoo::{build_with, ArchitectureId, BuildOptions, BuiltModel, InputKind};
use dctdet_core::{full_decode, partial_decode, run_graph, DctImage, Shape, Tensor, Weights};
use image::imageops::{resize, FilterType};

use crate::{read_file, CliError, Result};

/// Per-channel means subtracted from RGB inputs.
pub const RGB_MEAN: [f32; 3] = [123.0, 117.0, 104.0];

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    File(PathBuf),
    Seed(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    pub arch: ArchitectureId,
    pub weights: WeightSource,
    pub post: PostprocessConfig,
    pub num_classes: usize,
    pub l2norm: Option<bool>,
}

pub fn class_name(num_classes: usize, id: usize) -> String {
    if num_classes == VOC_CLASSES.len() + 1 {
        VOC_CLASSES[id - 1].to_string()
    } else {
        format!("class{id}")
    }
}

fn expect_shape(what: &str, got: Shape, want: Shape) -> Result<()> {
    if got != want {
        return Err(CliError::Input(format!(
            "{what} plane is {}x{} blocks, the model needs {}x{} (use a {}x{} image)",
            got.w,
            got.h,
            want.w,
            want.h,
            want.w * 8,
            want.h * 8
        )));
    }
    Ok(())
}

/// Input tensors for a DCT model: `y` and, unless Y-only, `cbcr`.
pub fn dct_inputs(model: &BuiltModel, img: &DctImage) -> Result<HashMap<String, Tensor>> {
    let mut out = HashMap::new();
    for spec in &model.inputs {
        let t = match spec.name.as_str() {
            "y" => Tensor::from_dct_plane(&img.y),
            "cbcr" => {
                if img.layout != Layout::Yuv420 {
                    return Err(CliError::Unsupported(format!(
                        "{} needs 4:2:0 chroma, the file is {}",
                        model.id,
                        img.layout.name()
                    )));
                }
                let cb = Tensor::from_dct_plane(img.cb.as_ref().expect("4:2:0 has chroma"));
                let cr = Tensor::from_dct_plane(img.cr.as_ref().expect("4:2:0 has chroma"));
                Tensor::concat(&[&cb, &cr]).map_err(|e| CliError::Input(e.to_string()))?
            }
            other => unreachable!("DCT models have no input {other}"),
        };
        expect_shape(&spec.name, t.shape, spec.shape)?;
        out.insert(spec.name.clone(), t);
    }
    Ok(out)
}

fn rgb_input(model: &BuiltModel, bytes: &[u8], path: &Path) -> Result<HashMap<String, Tensor>> {
    let spec = &model.inputs[0];
    let img = full_decode(bytes).map_err(|e| CliError::codec(path, e))?;
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data)
        .expect("decoder returns width*height*3 bytes");
    let resized = resize(&buf, spec.shape.w as u32, spec.shape.h as u32, FilterType::Triangle);
    let data = resized
        .pixels()
        .flat_map(|p| (0..3).map(move |c| f32::from(p.0[c]) - RGB_MEAN[c]))
        .collect();
    let t = Tensor::from_vec(spec.shape, data).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(HashMap::from([(spec.name.clone(), t)]))
}

pub fn load_weights(model: &BuiltModel, source: &WeightSource) -> Result<Weights> {
    match source {
        WeightSource::Seed(s) => Ok(seed_weights(&model.graph, *s)),
        WeightSource::File(p) => {
            let bytes = read_file(p)?;
            read_weights(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

/// Detections for one image, boxes in pixels of the original image.
pub fn infer(path: &Path, opts: &InferOptions) -> Result<Vec<DetectionRecord>> {
    if !opts.arch.is_detector() {
        return Err(CliError::Usage(format!(
            "{} is a classification backbone, not a detector",
            opts.arch
        )));
    }
    if opts.num_classes < 2 {
        return Err(CliError::Usage("--num-classes must be at least 2".into()));
    }
    let model = build_with(
        opts.arch,
        &BuildOptions {
            num_classes: opts.num_classes,
            l2norm: opts.l2norm,
        },
    );
    let bytes = read_file(path)?;
    let (inputs, width, height) = match opts.arch.input_kind() {
        InputKind::Rgb => {
            let s = dctdet_core::codec::parse_markers(&bytes).map_err(|e| CliError::codec(path, e))?;
            (
                rgb_input(&model, &bytes, path)?,
                f64::from(s.frame.width),
                f64::from(s.frame.height),
            )
        }
        InputKind::Dct | InputKind::DctYOnly => {
            let img = partial_decode(&bytes).map_err(|e| CliError::codec(path, e))?;
            (dct_inputs(&model, &img)?, img.width as f64, img.height as f64)
        }
    };
    let weights = load_weights(&model, &opts.weights)?;
    let outputs = run_graph(&model.graph, &weights, &inputs).map_err(|e| CliError::Input(e.to_string()))?;
    let (loc, conf) = model
        .collect_predictions(&outputs)
        .expect("every head is a graph output");
    let priors = model.prior_boxes();
    let result =
        postprocess(&loc, &conf, &priors, opts.num_classes, &opts.post).map_err(|e| CliError::Input(e.to_string()))?;
    if result.degenerate > 0 {
        eprintln!("{}: skipped {} degenerate boxes", path.display(), result.degenerate);
    }
    let image = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(result
        .detections
        .iter()
        .map(|d| DetectionRecord {
            image: image.clone(),
            class: class_name(opts.num_classes, d.class_id),
            score: d.score,
            bbox: d.bbox.scale(width, height).to_array(),
        })
        .collect())
}
