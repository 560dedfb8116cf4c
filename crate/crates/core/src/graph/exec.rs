use std::collections::{BTreeMap, HashMap};

use super::{ops, Graph, GraphError, LayerKind, Tensor, Weights};

/// Runs `graph` on named inputs and returns its marked outputs by layer name
/// (the last layer if none are marked).
///
/// Layers run in insertion order. Intermediate tensors are dropped as soon as
/// their last consumer has run.
pub fn run_graph(
    graph: &Graph,
    weights: &Weights,
    inputs: &HashMap<String, Tensor>,
) -> Result<BTreeMap<String, Tensor>, GraphError> {
    weights.validate(graph)?;
    let layers = graph.layers();
    let outputs: Vec<usize> = if graph.outputs().is_empty() {
        layers.len().checked_sub(1).into_iter().collect()
    } else {
        graph.outputs().to_vec()
    };

    let mut remaining = vec![0usize; layers.len()];
    for l in layers {
        for &i in &l.inputs {
            remaining[i] += 1;
        }
    }
    for &o in &outputs {
        remaining[o] += 1;
    }

    let mut values: Vec<Option<Tensor>> = vec![None; layers.len()];
    for (id, l) in layers.iter().enumerate() {
        let args: Vec<&Tensor> = l
            .inputs
            .iter()
            .map(|&i| values[i].as_ref().expect("inputs are computed before use"))
            .collect();
        let param = |suffix: &str| weights.get(&format!("{}.{suffix}", l.name)).map(|t| t.data.as_slice());
        let out = match &l.kind {
            LayerKind::Input { shape } => {
                let t = inputs
                    .get(&l.name)
                    .ok_or_else(|| GraphError::MissingInput(l.name.clone()))?;
                if t.shape != *shape {
                    return Err(GraphError::ShapeMismatch {
                        layer: l.name.clone(),
                        expected: *shape,
                        actual: t.shape,
                    });
                }
                if t.data.len() != t.shape.elements() {
                    return Err(GraphError::DataLength {
                        shape: t.shape,
                        len: t.data.len(),
                    });
                }
                t.clone()
            }
            LayerKind::Conv(p) => ops::conv2d(args[0], p, param("kernel")?, param("bias")?)?,
            LayerKind::Deconv { out_channels, .. } => {
                ops::deconv2d(args[0], *out_channels, param("kernel")?, param("bias")?)?
            }
            LayerKind::BatchNorm { epsilon } => ops::batchnorm(
                args[0],
                param("bn_gamma")?,
                param("bn_beta")?,
                param("bn_mean")?,
                param("bn_var")?,
                *epsilon,
            )?,
            LayerKind::Relu => ops::relu(args[0]),
            LayerKind::MaxPool { pool, stride, padding } => ops::maxpool(args[0], *pool, *stride, *padding)?,
            LayerKind::Concat => Tensor::concat(&args)?,
            LayerKind::L2Norm { epsilon } => ops::l2norm(args[0], param("l2_scale")?, *epsilon)?,
            LayerKind::GlobalAvgPool => ops::global_avg_pool(args[0]),
            LayerKind::Add => ops::add(args[0], args[1])?,
            LayerKind::Slice { start, len } => ops::slice_channels(args[0], *start, *len)?,
        };
        debug_assert_eq!(out.shape, l.shape, "layer {}", l.name);
        values[id] = Some(out);
        for &i in &l.inputs {
            remaining[i] -= 1;
            if remaining[i] == 0 {
                values[i] = None;
            }
        }
    }

    Ok(outputs
        .into_iter()
        .map(|o| (layers[o].name.clone(), values[o].take().expect("outputs are kept")))
        .collect())
}
