//! Student and teacher network descriptions, shape tracing, analytic
//! parameter/FLOP accounting and model instantiation.

mod count;
mod network;
mod shape;
mod spec;

pub use count::{
    comparison_csv, comparison_text, count_flops, count_parameters, parameter_reduction, CountReport,
    StageCount,
};
pub use network::{attach_hash_head, HashModel, Network};
pub use shape::shape_trace;
pub use spec::{
    alexnet_spec, resnet50_spec, small_cnn_spec, student_spec, BlockKind, BlockSpec, ModelSpec, StageSpec,
    StudentLayout, StudentVariant, TensorShape, MODEL_SPEC_VERSION, STUDENT_BLOCKS_PER_LAYER,
};
