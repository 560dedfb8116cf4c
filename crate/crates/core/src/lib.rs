//! Object detection straight from JPEG DCT coefficients.
//!
//! The crate is organised along the data path:
//!
//! * [`codec`] parses baseline JPEG and stops at dequantized DCT planes
//!   ([`codec::partial_decode`]), with a full RGB decode and a baseline
//!   encoder alongside for testing.
//! * [`transform`] holds the 8×8 DCT, zigzag and colour arithmetic.
//! * [`graph`] is a small forward-only inference engine with FLOP accounting.
//! * [`zoo`] builds the SSD / classification architectures on top of it.
//! * [`detection`] generates priors, decodes boxes and runs NMS.
//! * [`evaluation`] computes VOC/COCO-style average precision.

pub mod codec;
pub mod detection;
pub mod evaluation;
pub mod graph;
pub mod transform;
pub mod zoo;

pub use codec::{full_decode, partial_decode, CodecError, DctImage, DctPlane, JpegStructure, QuantizedPlane, RgbImage};
pub use detection::{BBox, Detection, PriorBox, PriorConfig};
pub use evaluation::{evaluate_map, DetectionRecord, EvalMode, EvalReport, GroundTruth};
pub use graph::{run_graph, Graph, Shape, Tensor, Weights};
pub use zoo::{build, ArchitectureId, BuiltModel};
