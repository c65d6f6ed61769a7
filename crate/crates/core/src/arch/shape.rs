use super::spec::{BlockKind, BlockSpec, ModelSpec, TensorShape};
use crate::nn::conv_out_len;
use crate::{Error, Result};

/// Output shape of one block, or the stride that could not be applied.
pub(crate) fn block_output(block: &BlockSpec, input: TensorShape) -> std::result::Result<TensorShape, usize> {
    let window = |k: usize, s: usize, p: usize| -> std::result::Result<(usize, usize), usize> {
        if input.height < s || input.width < s {
            return Err(s);
        }
        match (
            conv_out_len(input.height, k, s, p),
            conv_out_len(input.width, k, s, p),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok((h, w)),
            _ => Err(s),
        }
    };
    Ok(match block.kind {
        BlockKind::InitialModule | BlockKind::PlainConv => {
            let (h, w) = window(block.kernel, block.stride, block.padding)?;
            TensorShape::new(block.filters, h, w)
        }
        BlockKind::MaxPool => {
            let (h, w) = window(block.kernel, block.stride, block.padding)?;
            TensorShape::new(input.channels, h, w)
        }
        BlockKind::BasicBlock => TensorShape::new(block.filters, input.height, input.width),
        BlockKind::Bottleneck => {
            let (h, w) = window(3, block.stride, 1)?;
            TensorShape::new(block.filters, h, w)
        }
        BlockKind::GlobalAvgPool => TensorShape::new(input.channels, 1, 1),
        BlockKind::Flatten => TensorShape::new(input.numel(), 1, 1),
        BlockKind::Linear => TensorShape::new(block.filters, 1, 1),
    })
}

/// Per-stage output shapes for `input`.
///
/// A strided stage that receives a spatial extent smaller than its stride
/// can no longer downsample; that stage is reported as the collapse point.
pub fn shape_trace(spec: &ModelSpec, input: TensorShape) -> Result<Vec<(String, TensorShape)>> {
    if input.channels == 0 || input.height == 0 || input.width == 0 {
        return Err(Error::Shape(format!("input shape {input:?} has a zero dimension")));
    }
    if input.channels != spec.input.channels {
        return Err(Error::Shape(format!(
            "model `{}` expects {} input channels, got {}",
            spec.name, spec.input.channels, input.channels
        )));
    }
    let mut shape = input;
    let mut trace = Vec::with_capacity(spec.stages.len());
    for stage in &spec.stages {
        for block in &stage.blocks {
            if block.kind == BlockKind::Linear && (shape.height, shape.width) != (1, 1) {
                return Err(Error::Shape(format!(
                    "stage `{}`: fully-connected block needs a flat input, got {shape}",
                    stage.name
                )));
            }
            shape = block_output(block, shape).map_err(|stride| Error::SpatialCollapse {
                stage: stage.name.clone(),
                input: shape.height.min(shape.width),
                stride,
            })?;
        }
        trace.push((stage.name.clone(), shape));
    }
    Ok(trace)
}
