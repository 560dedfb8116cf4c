//! Layer parameters, seeded initialisation and the WTS1 file format.
//!
//! Parameter names are `<layer>.<suffix>` with suffixes `kernel`, `bias`,
//! `bn_gamma`, `bn_beta`, `bn_mean`, `bn_var` and `l2_scale`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, GraphError, LayerKind};

const MAGIC: &[u8; 4] = b"WTS1";

/// Initial per-channel scale of L2-normalised features.
pub const L2_SCALE_INIT: f32 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        ParamTensor { dims, data }
    }

    pub fn filled(dims: Vec<usize>, v: f32) -> Self {
        let n = dims.iter().product();
        ParamTensor { dims, data: vec![v; n] }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Weights {
    pub params: BTreeMap<String, ParamTensor>,
}

impl Weights {
    pub fn get(&self, name: &str) -> Result<&ParamTensor, GraphError> {
        self.params
            .get(name)
            .ok_or_else(|| GraphError::MissingWeight(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: ParamTensor) {
        self.params.insert(name.into(), t);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.data.len()).sum()
    }

    /// Checks that every learnable layer of `graph` has correctly shaped
    /// parameters and that variances are non-negative.
    pub fn validate(&self, graph: &Graph) -> Result<(), GraphError> {
        for (name, dims) in expected_params(graph) {
            let t = self.get(&name)?;
            if t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(GraphError::WeightShape {
                    name,
                    expected: dims,
                    actual: t.dims.clone(),
                });
            }
            if name.ends_with(".bn_var") && t.data.iter().any(|&v| v < 0.0) {
                return Err(GraphError::NegativeVariance(name));
            }
        }
        Ok(())
    }
}

/// Every parameter `graph` needs, with its dimensions, in layer order.
pub fn expected_params(graph: &Graph) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for l in graph.layers() {
        let cin = l.inputs.first().map(|&i| graph.shape(i).c).unwrap_or(0);
        let n = &l.name;
        match &l.kind {
            LayerKind::Conv(p) => {
                out.push((format!("{n}.kernel"), vec![p.kernel.0, p.kernel.1, cin, p.out_channels]));
                out.push((format!("{n}.bias"), vec![p.out_channels]));
            }
            LayerKind::Deconv {
                out_channels, kernel, ..
            } => {
                out.push((format!("{n}.kernel"), vec![*kernel, *kernel, *out_channels, cin]));
                out.push((format!("{n}.bias"), vec![*out_channels]));
            }
            LayerKind::BatchNorm { .. } => {
                for s in ["bn_gamma", "bn_beta", "bn_mean", "bn_var"] {
                    out.push((format!("{n}.{s}"), vec![l.shape.c]));
                }
            }
            LayerKind::L2Norm { .. } => out.push((format!("{n}.l2_scale"), vec![l.shape.c])),
            _ => {}
        }
    }
    out
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// He-normal kernels (variance 2 / fan-in), zero biases, identity batch norm,
/// L2 scales at [`L2_SCALE_INIT`].
///
/// Every kernel draws from its own ChaCha8 stream keyed by the layer name, so
/// a layer gets the same values in every graph that contains it.
pub fn seed_weights(graph: &Graph, seed: u64) -> Weights {
    let mut w = Weights::default();
    for (name, dims) in expected_params(graph) {
        let suffix = name.rsplit('.').next().unwrap_or_default();
        let t = match suffix {
            "kernel" => {
                let layer = &name[..name.len() - ".kernel".len()];
                // conv: kh·kw·cin; deconv (kernel = stride): cin
                let fan_in = match graph.find(layer).map(|id| &graph.layer(id).kind) {
                    Some(LayerKind::Deconv { .. }) => dims[3],
                    _ => dims[0] * dims[1] * dims[2],
                };
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(fnv1a(layer));
                let n: usize = dims.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
                ParamTensor::new(dims, data)
            }
            "bn_gamma" | "bn_var" => ParamTensor::filled(dims, 1.0),
            "l2_scale" => ParamTensor::filled(dims, L2_SCALE_INIT),
            _ => ParamTensor::filled(dims, 0.0),
        };
        w.insert(name, t);
    }
    w
}

pub fn write_weights(weights: &Weights) -> Result<Vec<u8>, GraphError> {
    let bad = |m: String| GraphError::WeightFile(m);
    let count = u32::try_from(weights.params.len()).map_err(|_| bad("too many records".into()))?;
    let mut out = Vec::with_capacity(8 + weights.parameter_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &weights.params {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| bad(format!("rank too large: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| bad(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_weights(bytes: &[u8]) -> Result<Weights, GraphError> {
    let bad = |m: &str| GraphError::WeightFile(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], GraphError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut weights = Weights::default();
    for _ in 0..count {
        let len = usize::from(u16::from_le_bytes(take(2)?.try_into().unwrap()));
        let name = std::str::from_utf8(take(len)?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let rank = usize::from(take(1)?[0]);
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("size overflow"))?;
        let raw = take(n.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if weights
            .params
            .insert(name.clone(), ParamTensor { dims, data })
            .is_some()
        {
            return Err(GraphError::WeightFile(format!("duplicate record {name}")));
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(weights)
}
