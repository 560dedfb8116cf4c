//! Decode throughput: partial (to DCT planes) against full (to RGB).
//!
//! All files are read before timing starts. Each run decodes `per_run`
//! images, cycling through the corpus, in batches of `batch` spread over the
//! worker pool. Warmup runs are timed but left out of the statistics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dctdet_core::codec::parse_markers;
use dctdet_core::{full_decode, partial_decode};
use rayon::prelude::*;
use serde::Serialize;

use crate::{read_file, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchConfig {
    pub runs: usize,
    pub batch: usize,
    pub per_run: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            runs: 10,
            batch: 8,
            per_run: 200,
            warmup: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusInfo {
    pub directory: String,
    pub files: usize,
    pub total_bytes: usize,
    /// (width, height) per file, in file-name order.
    pub dims: Vec<(u16, u16)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeTiming {
    pub run_seconds: Vec<f64>,
    pub images_per_sec_mean: f64,
    pub images_per_sec_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub corpus: CorpusInfo,
    pub config: BenchConfig,
    pub threads: usize,
    pub partial_dct: ModeTiming,
    pub full_rgb: ModeTiming,
    /// Total full-decode time over total partial-decode time.
    pub speedup: f64,
}

fn timing(run_seconds: Vec<f64>, per_run: usize) -> ModeTiming {
    let rates: Vec<f64> = run_seconds.iter().map(|s| per_run as f64 / s).collect();
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    // sample standard deviation; runs >= 2 is enforced
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    ModeTiming {
        run_seconds,
        images_per_sec_mean: mean,
        images_per_sec_std: var.sqrt(),
    }
}

fn time_run<F>(files: &[Vec<u8>], cfg: &BenchConfig, decode: F) -> f64
where
    F: Fn(&[u8]) -> usize + Sync,
{
    let order: Vec<usize> = (0..cfg.per_run).map(|i| i % files.len()).collect();
    let start = Instant::now();
    let mut sink = 0usize;
    for batch in order.chunks(cfg.batch) {
        sink += batch.par_iter().map(|&i| decode(&files[i])).sum::<usize>();
    }
    let t = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    t
}

pub fn list_jpegs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("jpg") || x.eq_ignore_ascii_case("jpeg"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn bench_decode(dir: &Path, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.runs < 2 {
        return Err(CliError::Usage("--runs must be at least 2".into()));
    }
    if cfg.batch == 0 || cfg.per_run == 0 {
        return Err(CliError::Usage("--batch and --per-run must be positive".into()));
    }
    let paths = list_jpegs(dir)?;
    if paths.is_empty() {
        return Err(CliError::Input(format!("{}: no .jpg files", dir.display())));
    }
    let mut files = Vec::with_capacity(paths.len());
    let mut dims = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = read_file(p)?;
        // both decoders must accept every file, or the comparison is meaningless
        let s = parse_markers(&bytes).map_err(|e| CliError::codec(p, e))?;
        dims.push((s.frame.width, s.frame.height));
        partial_decode(&bytes).map_err(|e| CliError::codec(p, e))?;
        full_decode(&bytes).map_err(|e| CliError::codec(p, e))?;
        files.push(bytes);
    }

    let partial = |b: &[u8]| partial_decode(b).map(|d| d.y.blocks.len()).unwrap_or(0);
    let full = |b: &[u8]| full_decode(b).map(|d| d.data.len()).unwrap_or(0);
    let (mut tp, mut tf) = (Vec::new(), Vec::new());
    for run in 0..cfg.warmup + cfg.runs {
        // alternate which mode goes first so drift affects both equally
        let (p, f) = if run % 2 == 0 {
            let p = time_run(&files, cfg, partial);
            (p, time_run(&files, cfg, full))
        } else {
            let f = time_run(&files, cfg, full);
            (time_run(&files, cfg, partial), f)
        };
        if run >= cfg.warmup {
            tp.push(p);
            tf.push(f);
        }
    }
    let speedup = tf.iter().sum::<f64>() / tp.iter().sum::<f64>();
    Ok(BenchReport {
        corpus: CorpusInfo {
            directory: dir.display().to_string(),
            files: files.len(),
            total_bytes: files.iter().map(Vec::len).sum(),
            dims,
        },
        config: *cfg,
        threads: rayon::current_num_threads(),
        partial_dct: timing(tp, cfg.per_run),
        full_rgb: timing(tf, cfg.per_run),
        speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_statistics() {
        let t = timing(vec![1.0, 2.0], 100);
        assert_eq!(t.images_per_sec_mean, 75.0);
        // sample std of {100, 50}
        assert!((t.images_per_sec_std - 35.355_339_059_327_38).abs() < 1e-9);
    }
}
