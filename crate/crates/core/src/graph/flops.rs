use super::{Graph, LayerKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    /// Multiply-accumulates (conv / deconv only).
    pub macs: u64,
    /// Per-element operations of batch norm, ReLU, pooling, L2 norm and adds.
    pub elementwise: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_elementwise: u64,
}

/// Static cost of one forward pass.
///
/// Conv: kh·kw·cin·cout·Hout·Wout MACs. Deconv: kh·kw·cin·cout·Hin·Win MACs.
/// Max pooling counts pool² comparisons per output element; the other
/// non-learned layers count one operation per output element. Concat and
/// slice are free.
pub fn flop_count(graph: &Graph) -> FlopReport {
    let mut report = FlopReport::default();
    for l in graph.layers() {
        let cin = l.inputs.first().map(|&i| graph.shape(i).c as u64).unwrap_or(0);
        let out = l.shape.elements() as u64;
        let (macs, elementwise) = match &l.kind {
            LayerKind::Conv(p) => ((p.kernel.0 * p.kernel.1) as u64 * cin * out, 0),
            LayerKind::Deconv { kernel, .. } => {
                let input = graph.shape(l.inputs[0]);
                (
                    (kernel * kernel) as u64 * cin * (input.h * input.w * l.shape.c) as u64,
                    0,
                )
            }
            LayerKind::MaxPool { pool, .. } => (0, (pool * pool) as u64 * out),
            LayerKind::GlobalAvgPool => (0, graph.shape(l.inputs[0]).elements() as u64),
            LayerKind::BatchNorm { .. } | LayerKind::Relu | LayerKind::L2Norm { .. } | LayerKind::Add => (0, out),
            LayerKind::Input { .. } | LayerKind::Concat | LayerKind::Slice { .. } => (0, 0),
        };
        report.total_macs += macs;
        report.total_elementwise += elementwise;
        report.layers.push(LayerCost {
            name: l.name.clone(),
            kind: l.kind.name(),
            macs,
            elementwise,
        });
    }
    report
}
