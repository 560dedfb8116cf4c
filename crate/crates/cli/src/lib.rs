//! Implementation of the `dctdet` subcommands. Each command returns the bytes
//! it wants on standard output, so tests can call them without a process.

use std::fs;
use std::path::Path;

use dctdet_core::codec::{parse_markers, tensor_file, JpegStructure};
use dctdet_core::evaluation::{read_detections, read_ground_truth};
use dctdet_core::graph::flop_count;
use dctdet_core::zoo::{build, ArchitectureId};
use dctdet_core::{evaluate_map, full_decode, partial_decode, CodecError, EvalMode};
use serde::Serialize;
use serde_json::json;

pub mod bench;
pub mod infer;

pub use bench::{bench_decode, BenchConfig, BenchReport};
pub use infer::{infer, InferOptions, WeightSource};

/// Error with the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Unsupported(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Unsupported(_) => 3,
        }
    }

    fn codec(path: &Path, e: CodecError) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.is_unsupported() {
            CliError::Unsupported(msg)
        } else {
            CliError::Input(msg)
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Reads `DCTDET_THREADS`: `None` when unset, an error when not a positive integer.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("DCTDET_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "DCTDET_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

pub fn parse_arch(s: &str) -> Result<ArchitectureId> {
    s.parse().map_err(|_| {
        let ids: Vec<&str> = ArchitectureId::ALL.iter().map(|a| a.as_str()).collect();
        CliError::Usage(format!("unknown architecture {s:?}; valid ids: {}", ids.join(", ")))
    })
}

fn component_name(layout_gray: bool, index: usize) -> &'static str {
    match (layout_gray, index) {
        (true, _) | (false, 0) => "Y",
        (false, 1) => "Cb",
        _ => "Cr",
    }
}

#[derive(Serialize)]
struct ComponentInfo {
    id: u8,
    name: &'static str,
    h: u8,
    v: u8,
    quant_table: u8,
    dc_table: Option<u8>,
    ac_table: Option<u8>,
    blocks_wide: usize,
    blocks_high: usize,
}

fn structure_json(path: &Path, s: &JpegStructure<'_>) -> serde_json::Value {
    let gray = s.frame.components.len() == 1;
    let components: Vec<ComponentInfo> = s
        .frame
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let sc = s.scan.components.iter().find(|x| x.id == c.id);
            let (bw, bh) = s.frame.component_blocks(i);
            ComponentInfo {
                id: c.id,
                name: component_name(gray, i),
                h: c.h,
                v: c.v,
                quant_table: c.quant_table,
                dc_table: sc.map(|x| x.dc_table),
                ac_table: sc.map(|x| x.ac_table),
                blocks_wide: bw,
                blocks_high: bh,
            }
        })
        .collect();
    let quant: Vec<_> = s
        .quant_tables
        .iter()
        .flatten()
        .map(|q| json!({"id": q.id, "natural": q.natural().to_vec()}))
        .collect();
    let huffman: Vec<_> = s
        .dc_tables
        .iter()
        .chain(s.ac_tables.iter())
        .flatten()
        .map(|t| json!({"class": t.class.name(), "id": t.id, "symbols": t.symbols.len()}))
        .collect();
    let markers: Vec<_> = s
        .segments
        .iter()
        .map(|m| json!({"marker": m.name(), "offset": m.offset, "length": m.length}))
        .collect();
    json!({
        "file": path.display().to_string(),
        "width": s.frame.width,
        "height": s.frame.height,
        "precision": s.frame.precision,
        "layout": s.frame.layout().name(),
        "components": components,
        "restart_interval": s.restart_interval,
        "quant_tables": quant,
        "huffman_tables": huffman,
        "markers": markers,
        "entropy_bytes": s.entropy_data.len(),
    })
}

pub fn cmd_inspect(path: &Path, as_json: bool) -> Result<String> {
    let bytes = read_file(path)?;
    let s = parse_markers(&bytes).map_err(|e| CliError::codec(path, e))?;
    let v = structure_json(path, &s);
    if as_json {
        return Ok(format!("{v}\n"));
    }
    let mut out = String::new();
    out += &format!(
        "{}: {}x{} baseline, {}, {} component(s)\n",
        path.display(),
        s.frame.width,
        s.frame.height,
        s.frame.layout().name(),
        s.frame.components.len()
    );
    let grids: Vec<String> = v["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            format!(
                "{}: {}×{}",
                c["name"].as_str().unwrap(),
                c["blocks_wide"],
                c["blocks_high"]
            )
        })
        .collect();
    out += &format!("DCT planes (blocks): {}\n", grids.join(", "));
    for c in v["components"].as_array().unwrap() {
        out += &format!(
            "  component {} ({}) sampling {}x{} quant {} dc {} ac {}\n",
            c["id"],
            c["name"].as_str().unwrap(),
            c["h"],
            c["v"],
            c["quant_table"],
            c["dc_table"],
            c["ac_table"]
        );
    }
    out += &format!("restart interval: {}\n", s.restart_interval);
    for t in v["huffman_tables"].as_array().unwrap() {
        out += &format!(
            "  huffman {} {}: {} symbols\n",
            t["class"].as_str().unwrap(),
            t["id"],
            t["symbols"]
        );
    }
    for q in s.quant_tables.iter().flatten() {
        out += &format!("  quant {}: {:?}\n", q.id, &q.natural()[..8]);
    }
    out += "markers:\n";
    for m in &s.segments {
        out += &format!("  {:>6} {:<5} len {}\n", m.offset, m.name(), m.length);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DecodeMode {
    /// Dequantized DCT planes as a DCTT tensor file.
    Partial,
    /// RGB pixels as binary PPM.
    Full,
}

pub fn cmd_decode(path: &Path, mode: DecodeMode, out: &Path, as_json: bool) -> Result<String> {
    let bytes = read_file(path)?;
    let summary = match mode {
        DecodeMode::Partial => {
            let img = partial_decode(&bytes).map_err(|e| CliError::codec(path, e))?;
            let planes = img.planes();
            let data = tensor_file::write_tensor_file(&planes).map_err(|e| CliError::codec(path, e))?;
            write_file(out, &data)?;
            let shapes: Vec<_> = planes
                .iter()
                .map(|p| json!({"id": p.component_id, "blocks_wide": p.blocks_wide, "blocks_high": p.blocks_high}))
                .collect();
            json!({"mode": "partial", "out": out.display().to_string(), "bytes": data.len(), "planes": shapes})
        }
        DecodeMode::Full => {
            let img = full_decode(&bytes).map_err(|e| CliError::codec(path, e))?;
            let data = img.to_ppm();
            write_file(out, &data)?;
            json!({"mode": "full", "out": out.display().to_string(), "bytes": data.len(),
                   "width": img.width, "height": img.height})
        }
    };
    Ok(if as_json {
        format!("{summary}\n")
    } else {
        format!("wrote {} ({} bytes)\n", out.display(), summary["bytes"])
    })
}

#[derive(Serialize)]
struct FlopRow {
    arch: &'static str,
    detector: bool,
    macs: u64,
    elementwise: u64,
    input_elements: usize,
    inputs: Vec<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<Vec<serde_json::Value>>,
}

pub fn cmd_flops(arch: Option<ArchitectureId>, per_layer: bool) -> Result<String> {
    let ids: Vec<ArchitectureId> = match arch {
        Some(a) => vec![a],
        None => ArchitectureId::ALL.to_vec(),
    };
    let rows: Vec<FlopRow> = ids
        .into_iter()
        .map(|id| {
            let m = build(id);
            let report = flop_count(&m.graph);
            FlopRow {
                arch: id.as_str(),
                detector: id.is_detector(),
                macs: report.total_macs,
                elementwise: report.total_elementwise,
                input_elements: m.graph.input_elements(),
                inputs: m
                    .inputs
                    .iter()
                    .map(|i| json!({"name": i.name, "shape": [i.shape.h, i.shape.w, i.shape.c]}))
                    .collect(),
                layers: per_layer.then(|| {
                    report
                        .layers
                        .iter()
                        .map(|l| json!({"name": l.name, "kind": l.kind, "macs": l.macs, "elementwise": l.elementwise}))
                        .collect()
                }),
            }
        })
        .collect();
    Ok(format!("{}\n", json!({ "architectures": rows })))
}

pub fn cmd_eval(dets: &Path, gt: &Path, mode: EvalMode) -> Result<String> {
    let open = |p: &Path| {
        fs::File::open(p)
            .map(std::io::BufReader::new)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    };
    let gts = read_ground_truth(open(gt)?).map_err(|e| CliError::Input(format!("{}: {e}", gt.display())))?;
    let ds = read_detections(open(dets)?).map_err(|e| CliError::Input(format!("{}: {e}", dets.display())))?;
    let report = evaluate_map(&ds, &gts, mode).map_err(|e| CliError::Input(e.to_string()))?;
    let v = serde_json::to_string(&report).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(format!("{v}\n"))
}
