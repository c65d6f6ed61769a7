use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Schema version written into every serialized [`ModelSpec`].
pub const MODEL_SPEC_VERSION: u32 = 1;

/// Channel-first activation shape of a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        TensorShape {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for TensorShape {
    /// Rendered height-first, e.g. `112x112x64`; a flat vector renders as its length.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.height == 1 && self.width == 1 {
            write!(f, "{}", self.channels)
        } else {
            write!(f, "{}x{}x{}", self.height, self.width, self.channels)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// 7x7 stride-2 convolution, normalization, activation.
    InitialModule,
    MaxPool,
    /// Two shape-preserving 3x3 convolutions around an identity shortcut.
    BasicBlock,
    PlainConv,
    /// 1x1 / 3x3 / 1x1 residual unit with a 4x channel expansion.
    Bottleneck,
    GlobalAvgPool,
    Flatten,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Output channels (or output features for `linear`); zero for
    /// channel-preserving blocks.
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_norm: bool,
    pub has_activation: bool,
    #[serde(default)]
    pub has_bias: bool,
}

impl BlockSpec {
    pub fn initial_module(filters: usize) -> Self {
        BlockSpec {
            kind: BlockKind::InitialModule,
            filters,
            kernel: 7,
            stride: 2,
            padding: 3,
            has_norm: true,
            has_activation: true,
            has_bias: false,
        }
    }

    pub fn basic_block(filters: usize) -> Self {
        BlockSpec {
            kind: BlockKind::BasicBlock,
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
            has_norm: true,
            has_activation: true,
            has_bias: false,
        }
    }

    /// Convolution followed by normalization, no activation, no bias.
    pub fn conv_norm(filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        BlockSpec {
            kind: BlockKind::PlainConv,
            filters,
            kernel,
            stride,
            padding,
            has_norm: true,
            has_activation: false,
            has_bias: false,
        }
    }

    /// Biased convolution followed by an activation, no normalization.
    pub fn conv_relu(filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        BlockSpec {
            kind: BlockKind::PlainConv,
            filters,
            kernel,
            stride,
            padding,
            has_norm: false,
            has_activation: true,
            has_bias: true,
        }
    }

    pub fn with_activation(mut self, on: bool) -> Self {
        self.has_activation = on;
        self
    }

    pub fn max_pool(kernel: usize, stride: usize, padding: usize) -> Self {
        BlockSpec {
            kind: BlockKind::MaxPool,
            filters: 0,
            kernel,
            stride,
            padding,
            has_norm: false,
            has_activation: false,
            has_bias: false,
        }
    }

    pub fn bottleneck(filters: usize, stride: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Bottleneck,
            filters,
            kernel: 3,
            stride,
            padding: 1,
            has_norm: true,
            has_activation: true,
            has_bias: false,
        }
    }

    pub fn global_avg_pool() -> Self {
        BlockSpec {
            kind: BlockKind::GlobalAvgPool,
            filters: 0,
            kernel: 1,
            stride: 1,
            padding: 0,
            has_norm: false,
            has_activation: false,
            has_bias: false,
        }
    }

    pub fn flatten() -> Self {
        BlockSpec {
            kind: BlockKind::Flatten,
            ..BlockSpec::global_avg_pool()
        }
    }

    pub fn linear(features: usize, activation: bool) -> Self {
        BlockSpec {
            kind: BlockKind::Linear,
            filters: features,
            kernel: 1,
            stride: 1,
            padding: 0,
            has_norm: false,
            has_activation: activation,
            has_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{:?} block: {msg}", self.kind)));
        match self.kind {
            BlockKind::BasicBlock => {
                if (self.kernel, self.stride, self.padding) != (3, 1, 1) {
                    return bad("basic blocks use 3x3 kernels, stride 1, padding 1");
                }
            }
            BlockKind::InitialModule => {
                if (self.kernel, self.stride, self.padding) != (7, 2, 3) {
                    return bad("the initial module uses a 7x7 kernel, stride 2, padding 3");
                }
            }
            BlockKind::Bottleneck => {
                if self.filters % 4 != 0 {
                    return bad("bottleneck filters must be divisible by the expansion 4");
                }
            }
            _ => {}
        }
        let needs_filters = !matches!(
            self.kind,
            BlockKind::MaxPool | BlockKind::GlobalAvgPool | BlockKind::Flatten
        );
        if needs_filters && self.filters == 0 {
            return bad("filters must be positive");
        }
        if self.kernel == 0 || self.stride == 0 {
            return bad("kernel and stride must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub blocks: Vec<BlockSpec>,
}

impl StageSpec {
    pub fn new(name: impl Into<String>, blocks: Vec<BlockSpec>) -> Self {
        StageSpec {
            name: name.into(),
            blocks,
        }
    }
}

/// Declarative network description. Instantiated models, parameter counts
/// and FLOP counts are all derived from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub format_version: u32,
    pub name: String,
    /// Native input shape; `feature_dim` is defined at this shape.
    pub input: TensorShape,
    pub feature_dim: usize,
    #[serde(default)]
    pub blocks_per_layer: Vec<usize>,
    #[serde(default)]
    pub layer_filters: Vec<usize>,
    pub stages: Vec<StageSpec>,
}

impl ModelSpec {
    pub fn blocks(&self) -> impl Iterator<Item = (&str, &BlockSpec)> {
        self.stages
            .iter()
            .flat_map(|s| s.blocks.iter().map(move |b| (s.name.as_str(), b)))
    }

    /// Checks block invariants and that the declared feature length matches
    /// the flattened output at the native input.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_SPEC_VERSION {
            return Err(Error::Config(format!(
                "model spec version {} is not supported (expected {MODEL_SPEC_VERSION})",
                self.format_version
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::Config(format!("model `{}` has no stages", self.name)));
        }
        for (_, b) in self.blocks() {
            b.validate()?;
        }
        let trace = super::shape_trace(self, self.input)?;
        let out = trace.last().expect("non-empty").1;
        if out.numel() != self.feature_dim {
            return Err(Error::Config(format!(
                "model `{}` declares feature_dim {} but produces {}",
                self.name,
                self.feature_dim,
                out.numel()
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format {
            what: "model spec",
            detail: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::Format {
            what: "model spec",
            detail: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentVariant {
    V1,
    V2,
}

/// Parameters of the five-layer residual student topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentLayout {
    pub name: String,
    pub input: TensorShape,
    pub stem_filters: usize,
    pub blocks_per_layer: Vec<usize>,
    pub layer_filters: Vec<usize>,
    /// Filters of the stride-2 convolution after each layer but the last.
    pub transition_filters: Vec<usize>,
}

pub const STUDENT_BLOCKS_PER_LAYER: [usize; 5] = [2, 3, 5, 3, 2];

impl StudentLayout {
    pub fn for_variant(variant: StudentVariant) -> Self {
        let last = match variant {
            StudentVariant::V1 => 128,
            StudentVariant::V2 => 256,
        };
        StudentLayout {
            name: match variant {
                StudentVariant::V1 => "student_v1".into(),
                StudentVariant::V2 => "student_v2".into(),
            },
            input: TensorShape::new(3, 224, 224),
            stem_filters: 64,
            blocks_per_layer: STUDENT_BLOCKS_PER_LAYER.to_vec(),
            layer_filters: vec![64, 64, 128, 128, last],
            transition_filters: vec![64, 128, 128, 128],
        }
    }

    pub fn to_spec(&self) -> Result<ModelSpec> {
        let layers = self.blocks_per_layer.len();
        if layers == 0
            || self.layer_filters.len() != layers
            || self.transition_filters.len() + 1 != layers
        {
            return Err(Error::Config(format!(
                "student `{}`: {} layers need {} layer filters and {} transition filters",
                self.name,
                layers,
                layers,
                layers.saturating_sub(1)
            )));
        }
        let mut stages = vec![
            StageSpec::new("initial_module", vec![BlockSpec::initial_module(self.stem_filters)]),
            StageSpec::new("max_pool", vec![BlockSpec::max_pool(3, 2, 1)]),
        ];
        for i in 0..layers {
            let blocks = (0..self.blocks_per_layer[i])
                .map(|_| BlockSpec::basic_block(self.layer_filters[i]))
                .collect();
            stages.push(StageSpec::new(format!("layer_{}", i + 1), blocks));
            if i + 1 < layers {
                stages.push(StageSpec::new(
                    format!("conv_2d_{}", i + 1),
                    vec![BlockSpec::conv_norm(self.transition_filters[i], 3, 2, 1)],
                ));
            }
        }
        stages.push(StageSpec::new("flatten", vec![BlockSpec::flatten()]));
        let mut spec = ModelSpec {
            format_version: MODEL_SPEC_VERSION,
            name: self.name.clone(),
            input: self.input,
            feature_dim: 0,
            blocks_per_layer: self.blocks_per_layer.clone(),
            layer_filters: self.layer_filters.clone(),
            stages,
        };
        let trace = super::shape_trace(&spec, spec.input)?;
        spec.feature_dim = trace.last().expect("non-empty").1.numel();
        spec.validate()?;
        Ok(spec)
    }
}

/// Declarative description of a student variant at 3x224x224.
pub fn student_spec(variant: StudentVariant) -> ModelSpec {
    StudentLayout::for_variant(variant)
        .to_spec()
        .expect("built-in student layouts are valid")
}

/// ResNet-50 backbone up to its pooled 2048-d feature (classifier excluded).
pub fn resnet50_spec() -> ModelSpec {
    let mut stages = vec![
        StageSpec::new("conv1", vec![BlockSpec::initial_module(64)]),
        StageSpec::new("max_pool", vec![BlockSpec::max_pool(3, 2, 1)]),
    ];
    let plan = [(3usize, 256usize, 1usize), (4, 512, 2), (6, 1024, 2), (3, 2048, 2)];
    for (i, &(count, filters, stride)) in plan.iter().enumerate() {
        let blocks = (0..count)
            .map(|j| BlockSpec::bottleneck(filters, if j == 0 { stride } else { 1 }))
            .collect();
        stages.push(StageSpec::new(format!("layer{}", i + 1), blocks));
    }
    stages.push(StageSpec::new("avg_pool", vec![BlockSpec::global_avg_pool()]));
    stages.push(StageSpec::new("flatten", vec![BlockSpec::flatten()]));
    ModelSpec {
        format_version: MODEL_SPEC_VERSION,
        name: "resnet50".into(),
        input: TensorShape::new(3, 224, 224),
        feature_dim: 2048,
        blocks_per_layer: plan.iter().map(|p| p.0).collect(),
        layer_filters: plan.iter().map(|p| p.1).collect(),
        stages,
    }
}

/// AlexNet up to the second 4096-d fully-connected layer (classifier excluded).
pub fn alexnet_spec() -> ModelSpec {
    let stages = vec![
        StageSpec::new(
            "features_1",
            vec![BlockSpec::conv_relu(64, 11, 4, 2), BlockSpec::max_pool(3, 2, 0)],
        ),
        StageSpec::new(
            "features_2",
            vec![BlockSpec::conv_relu(192, 5, 1, 2), BlockSpec::max_pool(3, 2, 0)],
        ),
        StageSpec::new("features_3", vec![BlockSpec::conv_relu(384, 3, 1, 1)]),
        StageSpec::new("features_4", vec![BlockSpec::conv_relu(256, 3, 1, 1)]),
        StageSpec::new(
            "features_5",
            vec![BlockSpec::conv_relu(256, 3, 1, 1), BlockSpec::max_pool(3, 2, 0)],
        ),
        StageSpec::new("flatten", vec![BlockSpec::flatten()]),
        StageSpec::new("fc6", vec![BlockSpec::linear(4096, true)]),
        StageSpec::new("fc7", vec![BlockSpec::linear(4096, true)]),
    ];
    ModelSpec {
        format_version: MODEL_SPEC_VERSION,
        name: "alexnet".into(),
        input: TensorShape::new(3, 224, 224),
        feature_dim: 4096,
        blocks_per_layer: Vec::new(),
        layer_filters: Vec::new(),
        stages,
    }
}

/// A small plain CNN used as a stand-in teacher at desk scale.
///
/// Three conv/norm/relu stages (the first two followed by 2x2 max pooling),
/// global average pooling and a ReLU-activated projection to `feature_dim`.
pub fn small_cnn_spec(name: &str, input: TensorShape, widths: [usize; 3], feature_dim: usize) -> ModelSpec {
    let conv = |f| BlockSpec::conv_norm(f, 3, 1, 1).with_activation(true);
    let spec = ModelSpec {
        format_version: MODEL_SPEC_VERSION,
        name: name.into(),
        input,
        feature_dim,
        blocks_per_layer: Vec::new(),
        layer_filters: widths.to_vec(),
        stages: vec![
            StageSpec::new("conv_1", vec![conv(widths[0]), BlockSpec::max_pool(2, 2, 0)]),
            StageSpec::new("conv_2", vec![conv(widths[1]), BlockSpec::max_pool(2, 2, 0)]),
            StageSpec::new("conv_3", vec![conv(widths[2]), BlockSpec::global_avg_pool()]),
            StageSpec::new("flatten", vec![BlockSpec::flatten()]),
            StageSpec::new("fc", vec![BlockSpec::linear(feature_dim, true)]),
        ],
    };
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn students_differ_only_in_the_fifth_layer() {
        let a = StudentLayout::for_variant(StudentVariant::V1);
        let b = StudentLayout::for_variant(StudentVariant::V2);
        assert_eq!(a.blocks_per_layer, vec![2, 3, 5, 3, 2]);
        assert_eq!(a.blocks_per_layer, b.blocks_per_layer);
        assert_eq!(a.layer_filters[..4], b.layer_filters[..4]);
        assert_ne!(a.layer_filters[4], b.layer_filters[4]);
        assert_eq!(a.transition_filters, b.transition_filters);
    }

    #[test]
    fn feature_dims() {
        assert_eq!(student_spec(StudentVariant::V1).feature_dim, 2048);
        assert_eq!(student_spec(StudentVariant::V2).feature_dim, 4096);
        resnet50_spec().validate().unwrap();
        alexnet_spec().validate().unwrap();
    }

    #[test]
    fn block_invariants_are_enforced() {
        let mut b = BlockSpec::basic_block(8);
        b.stride = 2;
        assert!(b.validate().is_err());
        let mut m = BlockSpec::initial_module(8);
        m.padding = 1;
        assert!(m.validate().is_err());
        assert!(BlockSpec::basic_block(0).validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = student_spec(StudentVariant::V2);
        let text = spec.to_toml().unwrap();
        assert!(text.contains("format_version = 1"));
        assert_eq!(ModelSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn rejects_wrong_feature_dim_and_version() {
        let mut spec = student_spec(StudentVariant::V1);
        spec.feature_dim = 100;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = student_spec(StudentVariant::V1);
        spec.format_version = 9;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn shape_display() {
        assert_eq!(TensorShape::new(64, 112, 112).to_string(), "112x112x64");
        assert_eq!(TensorShape::new(2048, 1, 1).to_string(), "2048");
    }
}
