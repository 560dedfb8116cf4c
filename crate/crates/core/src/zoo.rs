//! Builders for the SSD detectors and their classification backbones.
//!
//! RGB detectors take a 300×300 image. DCT detectors take the luma plane as
//! `y` (38,38,64) and, unless Y-only, both chroma planes stacked as `cbcr`
//! (19,19,128). Classification backbones use 224×224 RGB or (28,28,64) and
//! (14,14,128) DCT inputs and end in global average pooling plus a 1000-way
//! linear layer.
//!
//! Every SSD variant predicts from six feature maps of 38, 19, 10, 5, 3 and 1
//! cells with 4, 6, 6, 6, 4, 4 boxes per cell.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::detection::{generate_priors, PriorBox, PriorConfig};
use crate::graph::{ConvParams, Graph, NodeId, Padding, Shape, Tensor};

macro_rules! architectures {
    ($($variant:ident => $name:literal,)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ArchitectureId {
            $($variant,)*
        }

        impl ArchitectureId {
            pub const ALL: &'static [ArchitectureId] = &[$(ArchitectureId::$variant,)*];

            /// Stable identifier used on the command line and in file names.
            pub fn as_str(self) -> &'static str {
                match self {
                    $(ArchitectureId::$variant => $name,)*
                }
            }
        }
    };
}

architectures! {
    Ssd300Rgb => "SSD300_RGB",
    SsdDct => "SSD_DCT",
    SsdDctY => "SSD_DCT_Y",
    SsdDctDeconv => "SSD_DCT_DECONV",
    SsdResnet50Rgb => "SSD_RESNET50_RGB",
    SsdLcrfa => "SSD_LCRFA",
    SsdLcrfaY => "SSD_LCRFA_Y",
    SsdLcrfaThinner => "SSD_LCRFA_THINNER",
    SsdLcrfaThinnerY => "SSD_LCRFA_THINNER_Y",
    SsdDeconvRfa => "SSD_DECONV_RFA",
    Vgg16 => "VGG16",
    VggDct => "VGG_DCT",
    VggDctY => "VGG_DCT_Y",
    VggDctDeconv => "VGG_DCT_DECONV",
    Resnet50 => "RESNET50",
    Lcrfa => "LCRFA",
    LcrfaY => "LCRFA_Y",
    LcrfaThinner => "LCRFA_THINNER",
    LcrfaThinnerY => "LCRFA_THINNER_Y",
    DeconvRfa => "DECONV_RFA",
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownArchitecture(pub String);

impl fmt::Display for UnknownArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown architecture {:?}", self.0)
    }
}

impl std::error::Error for UnknownArchitecture {}

impl FromStr for ArchitectureId {
    type Err = UnknownArchitecture;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == up)
            .ok_or_else(|| UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Rgb,
    Dct,
    DctYOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Vgg,
    Resnet,
    Lcrfa { thinner: bool },
    DeconvRfa,
}

impl ArchitectureId {
    pub fn is_detector(self) -> bool {
        self.as_str().starts_with("SSD")
    }

    pub fn input_kind(self) -> InputKind {
        use ArchitectureId::*;
        match self {
            Ssd300Rgb | SsdResnet50Rgb | Vgg16 | Resnet50 => InputKind::Rgb,
            SsdDctY | SsdLcrfaY | SsdLcrfaThinnerY | VggDctY | LcrfaY | LcrfaThinnerY => InputKind::DctYOnly,
            _ => InputKind::Dct,
        }
    }

    /// VGG-derived variants carry the L2-normalised first head by default.
    pub fn is_vgg(self) -> bool {
        self.family() == Family::Vgg
    }

    fn family(self) -> Family {
        use ArchitectureId::*;
        match self {
            Ssd300Rgb | SsdDct | SsdDctY | SsdDctDeconv | Vgg16 | VggDct | VggDctY | VggDctDeconv => Family::Vgg,
            SsdResnet50Rgb | Resnet50 => Family::Resnet,
            SsdLcrfa | SsdLcrfaY | Lcrfa | LcrfaY => Family::Lcrfa { thinner: false },
            SsdLcrfaThinner | SsdLcrfaThinnerY | LcrfaThinner | LcrfaThinnerY => Family::Lcrfa { thinner: true },
            SsdDeconvRfa | DeconvRfa => Family::DeconvRfa,
        }
    }

    fn uses_deconv(self) -> bool {
        use ArchitectureId::*;
        matches!(self, SsdDctDeconv | SsdDeconvRfa | VggDctDeconv | DeconvRfa)
    }

    /// The YCbCr model a Y-only variant is cut from.
    pub fn full_counterpart(self) -> Option<ArchitectureId> {
        use ArchitectureId::*;
        match self {
            SsdDctY => Some(SsdDct),
            SsdLcrfaY => Some(SsdLcrfa),
            SsdLcrfaThinnerY => Some(SsdLcrfaThinner),
            VggDctY => Some(VggDct),
            LcrfaY => Some(Lcrfa),
            LcrfaThinnerY => Some(LcrfaThinner),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub name: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// Feature layer the predictors read from.
    pub feature: String,
    pub loc: String,
    pub conf: String,
    pub h: usize,
    pub w: usize,
    pub boxes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    /// Including background.
    pub num_classes: usize,
    /// L2-normalise the first head's features; `None` means "on for VGG".
    pub l2norm: Option<bool>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            num_classes: 21,
            l2norm: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub id: ArchitectureId,
    pub graph: Graph,
    pub inputs: Vec<InputSpec>,
    /// Empty for classification backbones.
    pub heads: Vec<Head>,
    pub num_classes: usize,
    pub priors: Option<PriorConfig>,
}

impl BuiltModel {
    pub fn head_geometry(&self) -> Vec<(usize, usize, usize)> {
        head_geometry(self)
    }

    pub fn prior_boxes(&self) -> Vec<PriorBox> {
        match &self.priors {
            Some(cfg) => generate_priors(&self.head_geometry(), cfg).expect("builder head geometry is valid"),
            None => Vec::new(),
        }
    }

    /// Concatenates head outputs in prior order: (loc, conf).
    pub fn collect_predictions(&self, outputs: &BTreeMap<String, Tensor>) -> Option<(Vec<f32>, Vec<f32>)> {
        let mut loc = Vec::new();
        let mut conf = Vec::new();
        for h in &self.heads {
            loc.extend_from_slice(&outputs.get(&h.loc)?.data);
            conf.extend_from_slice(&outputs.get(&h.conf)?.data);
        }
        Some((loc, conf))
    }
}

/// (H, W, boxes per cell) of every prediction head, in order.
pub fn head_geometry(model: &BuiltModel) -> Vec<(usize, usize, usize)> {
    model.heads.iter().map(|h| (h.h, h.w, h.boxes)).collect()
}

pub fn build(id: ArchitectureId) -> BuiltModel {
    build_with(id, &BuildOptions::default())
}

pub fn build_with(id: ArchitectureId, opts: &BuildOptions) -> BuiltModel {
    let mut n = Net::default();
    let detector = id.is_detector();
    let (rgb_side, y_side, c_side) = if detector { (300, 38, 19) } else { (224, 28, 14) };

    let mut inputs = Vec::new();
    let mut input = |n: &mut Net, name: &str, shape: Shape| {
        inputs.push(InputSpec {
            name: name.to_string(),
            shape,
        });
        n.g.input(name, shape).expect("fresh input")
    };
    let (rgb, y, cbcr) = match id.input_kind() {
        InputKind::Rgb => (
            Some(input(&mut n, "rgb", Shape::new(rgb_side, rgb_side, 3))),
            None,
            None,
        ),
        InputKind::Dct => (
            None,
            Some(input(&mut n, "y", Shape::new(y_side, y_side, 64))),
            Some(input(&mut n, "cbcr", Shape::new(c_side, c_side, 128))),
        ),
        InputKind::DctYOnly => (None, Some(input(&mut n, "y", Shape::new(y_side, y_side, 64))), None),
    };

    let l2 = opts.l2norm.unwrap_or(id.is_vgg());
    let (first, second) = match id.family() {
        Family::Vgg => vgg_body(&mut n, id, detector, rgb, y, cbcr, l2),
        Family::Resnet => resnet_body(&mut n, detector, rgb.expect("rgb input")),
        Family::Lcrfa { thinner } => lcrfa_body(&mut n, detector, thinner, y.expect("y input"), cbcr),
        Family::DeconvRfa => deconv_rfa_body(&mut n, detector, y.expect("y input"), cbcr.expect("cbcr input")),
    };

    let mut model = BuiltModel {
        id,
        graph: Graph::new(),
        inputs,
        heads: Vec::new(),
        num_classes: if detector { opts.num_classes } else { 1000 },
        priors: None,
    };
    if detector {
        // L2 norm on the first head for non-VGG models is opt-in
        let first = if l2 && !id.is_vgg() {
            n.l2norm_head(first)
        } else {
            first
        };
        let feats = extras(&mut n, first, second);
        for (feat, boxes) in feats.into_iter().zip([4, 6, 6, 6, 4, 4]) {
            let name = n.g.layer(feat).name.clone();
            let s = n.g.shape(feat);
            let loc = n.conv(&format!("{name}_mbox_loc"), feat, ConvParams::new(boxes * 4, 3, 1));
            let conf = n.conv(
                &format!("{name}_mbox_conf"),
                feat,
                ConvParams::new(boxes * opts.num_classes, 3, 1),
            );
            n.g.mark_output(loc);
            n.g.mark_output(conf);
            model.heads.push(Head {
                feature: name.clone(),
                loc: format!("{name}_mbox_loc"),
                conf: format!("{name}_mbox_conf"),
                h: s.h,
                w: s.w,
                boxes,
            });
        }
        model.priors = Some(PriorConfig::default());
    } else {
        let gap = n.g.global_avg_pool("gap", second).expect("gap");
        let logits = n.conv("logits", gap, ConvParams::new(1000, 1, 1));
        n.g.mark_output(logits);
    }
    model.graph = n.g;
    model
}

/// Graph plus the naming conventions shared by the builders. Builders are
/// total: a failed `add` is a bug, hence the `expect`s.
#[derive(Default)]
struct Net {
    g: Graph,
}

impl Net {
    fn conv(&mut self, name: &str, x: NodeId, p: ConvParams) -> NodeId {
        self.g.conv(name, x, p).unwrap_or_else(|e| panic!("{e}"))
    }

    fn conv_relu(&mut self, name: &str, x: NodeId, p: ConvParams) -> NodeId {
        let c = self.conv(name, x, p);
        self.g.relu(format!("{name}_relu"), c).unwrap_or_else(|e| panic!("{e}"))
    }

    fn bn(&mut self, name: &str, x: NodeId) -> NodeId {
        self.g.batchnorm(name, x).unwrap_or_else(|e| panic!("{e}"))
    }

    fn pool(&mut self, name: &str, x: NodeId, size: usize, stride: usize, padding: Padding) -> NodeId {
        self.g
            .maxpool(name, x, size, stride, padding)
            .unwrap_or_else(|e| panic!("{e}"))
    }

    fn concat(&mut self, name: &str, xs: &[NodeId]) -> NodeId {
        self.g.concat(name, xs).unwrap_or_else(|e| panic!("{e}"))
    }

    fn l2norm_head(&mut self, x: NodeId) -> NodeId {
        let name = format!("{}_norm", self.g.layer(x).name);
        self.g.l2norm(name, x).unwrap_or_else(|e| panic!("{e}"))
    }

    /// conv → BN → (ReLU).
    fn unit(&mut self, name: &str, x: NodeId, p: ConvParams, relu: bool) -> NodeId {
        let c = self.conv(name, x, p);
        let b = self.bn(&format!("{name}_bn"), c);
        if relu {
            self.g.relu(format!("{name}_relu"), b).unwrap_or_else(|e| panic!("{e}"))
        } else {
            b
        }
    }

    /// Bottleneck with a projection shortcut: 1×1 (stride) → k×k → 1×1 to
    /// `out` channels, bottleneck width `out / 4`.
    fn conv_block(&mut self, name: &str, x: NodeId, out: usize, kernel: usize, stride: usize) -> NodeId {
        let mid = out / 4;
        let a = self.unit(&format!("{name}_2a"), x, ConvParams::new(mid, 1, stride), true);
        let b = self.unit(&format!("{name}_2b"), a, ConvParams::new(mid, kernel, 1), true);
        let c = self.unit(&format!("{name}_2c"), b, ConvParams::new(out, 1, 1), false);
        let s = self.unit(&format!("{name}_1"), x, ConvParams::new(out, 1, stride), false);
        let sum = self
            .g
            .residual_add(format!("{name}_add"), c, s)
            .unwrap_or_else(|e| panic!("{e}"));
        self.g
            .relu(format!("{name}_relu"), sum)
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Bottleneck with an identity shortcut; width follows the input.
    fn identity_block(&mut self, name: &str, x: NodeId, kernel: usize) -> NodeId {
        let out = self.g.shape(x).c;
        let mid = out / 4;
        let a = self.unit(&format!("{name}_2a"), x, ConvParams::new(mid, 1, 1), true);
        let b = self.unit(&format!("{name}_2b"), a, ConvParams::new(mid, kernel, 1), true);
        let c = self.unit(&format!("{name}_2c"), b, ConvParams::new(out, 1, 1), false);
        let sum = self
            .g
            .residual_add(format!("{name}_add"), c, x)
            .unwrap_or_else(|e| panic!("{e}"));
        self.g
            .relu(format!("{name}_relu"), sum)
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// `count` identity blocks named `{prefix}_1..`; the first uses `first_kernel`.
    fn identity_blocks(&mut self, prefix: &str, mut x: NodeId, count: usize, first_kernel: usize) -> NodeId {
        for i in 1..=count {
            x = self.identity_block(&format!("{prefix}_{i}"), x, if i == 1 { first_kernel } else { 3 });
        }
        x
    }

    /// Splits the stacked chroma input and upsamples Cb and Cr separately.
    fn chroma_deconv(&mut self, cbcr: NodeId) -> (NodeId, NodeId) {
        let cb = self.g.slice("cb", cbcr, 0, 64).unwrap_or_else(|e| panic!("{e}"));
        let cr = self.g.slice("cr", cbcr, 64, 64).unwrap_or_else(|e| panic!("{e}"));
        let cb = self.g.deconv("cb_deconv", cb, 64).unwrap_or_else(|e| panic!("{e}"));
        let cr = self.g.deconv("cr_deconv", cr, 64).unwrap_or_else(|e| panic!("{e}"));
        (cb, cr)
    }
}

fn vgg_block(n: &mut Net, block: usize, mut x: NodeId, convs: usize, channels: usize) -> NodeId {
    for j in 1..=convs {
        x = n.conv_relu(&format!("conv{block}_{j}"), x, ConvParams::new(channels, 3, 1));
    }
    x
}

/// Returns (first head feature, last backbone feature).
fn vgg_body(
    n: &mut Net,
    id: ArchitectureId,
    detector: bool,
    rgb: Option<NodeId>,
    y: Option<NodeId>,
    cbcr: Option<NodeId>,
    l2: bool,
) -> (NodeId, NodeId) {
    // blocks 1-3 on RGB, or their DCT replacement
    let block4_in = if let Some(rgb) = rgb {
        let x = vgg_block(n, 1, rgb, 2, 64);
        let x = n.pool("pool1", x, 2, 2, Padding::Same);
        let x = vgg_block(n, 2, x, 2, 128);
        let x = n.pool("pool2", x, 2, 2, Padding::Same);
        let x = vgg_block(n, 3, x, 3, 256);
        n.pool("pool3", x, 2, 2, Padding::Same)
    } else if id.uses_deconv() {
        let (cb, cr) = n.chroma_deconv(cbcr.expect("cbcr input"));
        let cat = n.concat("concat_ycbcr", &[y.expect("y input"), cb, cr]);
        n.bn("concat_ycbcr_bn", cat)
    } else {
        let x = n.bn("y_bn", y.expect("y input"));
        n.conv_relu("y_conv", x, ConvParams::new(256, 3, 1))
    };

    let conv4 = vgg_block(n, 4, block4_in, 3, 512);
    let head1 = if l2 && detector { n.l2norm_head(conv4) } else { conv4 };
    let mut x = n.pool("pool4", conv4, 2, 2, Padding::Same);
    if let (Some(cbcr), false) = (cbcr, id.uses_deconv()) {
        let c = n.bn("cbcr_bn", cbcr);
        x = n.concat("concat_cbcr", &[x, c]);
    }
    let conv5 = vgg_block(n, 5, x, 3, 512);
    if detector {
        let x = n.pool("pool5", conv5, 3, 1, Padding::Same);
        let x = n.conv_relu("fc6", x, ConvParams::new(1024, 3, 1).dilated(6));
        let fc7 = n.conv_relu("fc7", x, ConvParams::new(1024, 1, 1));
        (head1, fc7)
    } else {
        let x = n.pool("pool5", conv5, 2, 2, Padding::Same);
        let x = n.conv_relu("fc6", x, ConvParams::new(4096, 7, 1).valid());
        let fc7 = n.conv_relu("fc7", x, ConvParams::new(4096, 1, 1));
        (head1, fc7)
    }
}

fn resnet_body(n: &mut Net, detector: bool, rgb: NodeId) -> (NodeId, NodeId) {
    let x = n.unit("conv1", rgb, ConvParams::new(64, 7, 2), true);
    let x = n.pool("pool1", x, 3, 2, Padding::Same);
    let x = n.conv_block("cb2", x, 256, 3, 1);
    let x = n.identity_blocks("ib2", x, 2, 3);
    let x = n.conv_block("cb3", x, 512, 3, 2);
    let head1 = n.identity_blocks("ib3", x, 3, 3);
    let x = n.conv_block("cb4", head1, 1024, 3, 2);
    let x = n.identity_blocks("ib4", x, 5, 3);
    let x = n.conv_block("cb5", x, 2048, 3, if detector { 1 } else { 2 });
    let last = n.identity_blocks("ib5", x, 2, 3);
    (head1, last)
}

fn lcrfa_body(n: &mut Net, detector: bool, thinner: bool, y: NodeId, cbcr: Option<NodeId>) -> (NodeId, NodeId) {
    let (w_in, w_mid, w_down, w_chroma) = if thinner {
        (384, 384, 768, 256)
    } else {
        (1024, 512, 512, 512)
    };
    // without chroma the luma branch alone must reach the 1024 channels the
    // shared stage expects
    let w_down = if cbcr.is_some() { w_down } else { 1024 };

    let x = n.bn("y_bn", y);
    let x = n.conv_block("y_cb4", x, w_in, 1, 1);
    let x = n.identity_blocks("y_ib4", x, 2, 2);
    let x = n.conv_block("y_cb3", x, w_mid, 3, 1);
    let head1 = n.identity_blocks("y_ib3", x, 3, 3);
    let mut x = n.conv_block("y_cb3_down", head1, w_down, 3, 2);
    if let Some(cbcr) = cbcr {
        let c = n.bn("cbcr_bn", cbcr);
        let c = n.conv_block("cbcr_cb3", c, w_chroma, 1, 1);
        x = n.concat("concat_cbcr", &[x, c]);
    }
    let x = n.identity_blocks("ib4", x, 5, 3);
    let x = n.conv_block("cb5", x, 2048, 3, if detector { 1 } else { 2 });
    let last = n.identity_blocks("ib5", x, 2, 3);
    (head1, last)
}

fn deconv_rfa_body(n: &mut Net, detector: bool, y: NodeId, cbcr: NodeId) -> (NodeId, NodeId) {
    let (cb, cr) = n.chroma_deconv(cbcr);
    let x = n.concat("concat_ycbcr", &[y, cb, cr]);
    let x = n.conv_block("cb4_in", x, 1024, 1, 1);
    let x = n.identity_blocks("ib4_in", x, 2, 2);
    let x = n.conv_block("cb3", x, 512, 3, 1);
    let head1 = n.identity_blocks("ib3", x, 3, 3);
    let x = n.conv_block("cb4", head1, 1024, 3, 2);
    let x = n.identity_blocks("ib4", x, 5, 3);
    let x = n.conv_block("cb5", x, 2048, 3, if detector { 1 } else { 2 });
    let last = n.identity_blocks("ib5", x, 2, 3);
    (head1, last)
}

/// Extra feature layers after the 19×19 map; returns all six head features.
fn extras(n: &mut Net, first: NodeId, second: NodeId) -> Vec<NodeId> {
    let x = n.conv_relu("conv6_1", second, ConvParams::new(256, 1, 1));
    let c6 = n.conv_relu("conv6_2", x, ConvParams::new(512, 3, 2));
    let x = n.conv_relu("conv7_1", c6, ConvParams::new(128, 1, 1));
    let c7 = n.conv_relu("conv7_2", x, ConvParams::new(256, 3, 2));
    let x = n.conv_relu("conv8_1", c7, ConvParams::new(128, 1, 1));
    let c8 = n.conv_relu("conv8_2", x, ConvParams::new(256, 3, 1).valid());
    let x = n.conv_relu("conv9_1", c8, ConvParams::new(128, 1, 1));
    let c9 = n.conv_relu("conv9_2", x, ConvParams::new(256, 3, 1).valid());
    vec![first, second, c6, c7, c8, c9]
}
