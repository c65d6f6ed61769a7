use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::shape::block_output;
use super::spec::{BlockKind, BlockSpec, ModelSpec, TensorShape};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub parameters: u64,
    pub flops: u64,
}

/// Trainable parameters and multiply-accumulate count of a model.
///
/// One multiply-accumulate counts as one FLOP. Only convolution and
/// fully-connected stages contribute; normalization, activations, pooling
/// and residual additions are free. Normalization layers carry two trainable
/// parameters per channel and convolutions followed by normalization carry
/// no bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub model: String,
    pub input: TensorShape,
    pub trainable_parameters: u64,
    pub flops: u64,
    pub per_stage: Vec<StageCount>,
}

fn conv(k: usize, cin: usize, cout: usize, out_hw: usize) -> (u64, u64) {
    let w = (k * k * cin * cout) as u64;
    (w, w * out_hw as u64)
}

fn block_counts(block: &BlockSpec, input: TensorShape, output: TensorShape) -> (u64, u64) {
    let cin = input.channels;
    let f = block.filters;
    let out_hw = output.height * output.width;
    let norm = |c: usize| if block.has_norm { 2 * c as u64 } else { 0 };
    match block.kind {
        BlockKind::InitialModule | BlockKind::PlainConv => {
            let (p, fl) = conv(block.kernel, cin, f, out_hw);
            let bias = if block.has_bias { f as u64 } else { 0 };
            (p + bias + norm(f), fl)
        }
        BlockKind::BasicBlock => {
            let (p1, f1) = conv(3, cin, f, out_hw);
            let (p2, f2) = conv(3, f, f, out_hw);
            let (pp, fp) = if cin != f {
                let (p, fl) = conv(1, cin, f, out_hw);
                (p + 2 * f as u64, fl)
            } else {
                (0, 0)
            };
            (p1 + p2 + 4 * f as u64 + pp, f1 + f2 + fp)
        }
        BlockKind::Bottleneck => {
            let mid = f / 4;
            let in_hw = input.height * input.width;
            let (p1, f1) = conv(1, cin, mid, in_hw);
            let (p2, f2) = conv(3, mid, mid, out_hw);
            let (p3, f3) = conv(1, mid, f, out_hw);
            let (pp, fp) = if block.stride != 1 || cin != f {
                let (p, fl) = conv(1, cin, f, out_hw);
                (p + 2 * f as u64, fl)
            } else {
                (0, 0)
            };
            let bn = 2 * (2 * mid + f) as u64;
            (p1 + p2 + p3 + bn + pp, f1 + f2 + f3 + fp)
        }
        BlockKind::Linear => {
            let w = (input.numel() * f) as u64;
            let bias = if block.has_bias { f as u64 } else { 0 };
            (w + bias, w)
        }
        BlockKind::MaxPool | BlockKind::GlobalAvgPool | BlockKind::Flatten => (0, 0),
    }
}

/// Analytic counts at `input`.
pub fn count_flops(spec: &ModelSpec, input: TensorShape) -> Result<CountReport> {
    // Surfaces collapse / channel errors with stage names.
    super::shape_trace(spec, input)?;
    let mut shape = input;
    let mut per_stage = Vec::with_capacity(spec.stages.len());
    for stage in &spec.stages {
        let (mut params, mut flops) = (0u64, 0u64);
        for block in &stage.blocks {
            let out = block_output(block, shape).expect("validated by shape_trace");
            let (p, f) = block_counts(block, shape, out);
            params += p;
            flops += f;
            shape = out;
        }
        per_stage.push(StageCount {
            stage: stage.name.clone(),
            parameters: params,
            flops,
        });
    }
    Ok(CountReport {
        model: spec.name.clone(),
        input,
        trainable_parameters: per_stage.iter().map(|s| s.parameters).sum(),
        flops: per_stage.iter().map(|s| s.flops).sum(),
        per_stage,
    })
}

/// Analytic counts at the model's native input shape.
pub fn count_parameters(spec: &ModelSpec) -> CountReport {
    count_flops(spec, spec.input).expect("model spec is valid at its native input")
}

/// Fractional reduction of trainable parameters from `teacher` to `student`.
pub fn parameter_reduction(student: &CountReport, teacher: &CountReport) -> f64 {
    1.0 - student.trainable_parameters as f64 / teacher.trainable_parameters as f64
}

impl CountReport {
    pub fn giga_flops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    /// Per-stage breakdown as CSV with a trailing total row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,trainable_parameters,flops\n");
        for s in &self.per_stage {
            let _ = writeln!(out, "{},{},{}", s.stage, s.parameters, s.flops);
        }
        let _ = writeln!(out, "total,{},{}", self.trainable_parameters, self.flops);
        out
    }
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Model / Trainable Parameters / FLOPs comparison, as CSV.
pub fn comparison_csv(reports: &[&CountReport]) -> String {
    let mut out = String::from("model,trainable_parameters,giga_flops\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{:.3}", r.model, r.trainable_parameters, r.giga_flops());
    }
    out
}

/// Model / Trainable Parameters / FLOPs comparison, as aligned text.
pub fn comparison_text(reports: &[&CountReport]) -> String {
    let rows: Vec<[String; 3]> = reports
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                group_thousands(r.trainable_parameters),
                format!("{:.3} Giga", r.giga_flops()),
            ]
        })
        .collect();
    let header = ["Model".to_string(), "Trainable Parameters".into(), "FLOPs".into()];
    let widths: Vec<usize> = (0..3)
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:>w2$}",
            row[0],
            row[1],
            row[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::spec::{StageSpec, MODEL_SPEC_VERSION};

    fn single(block: BlockSpec, input: TensorShape) -> ModelSpec {
        ModelSpec {
            format_version: MODEL_SPEC_VERSION,
            name: "single".into(),
            input,
            feature_dim: 0,
            blocks_per_layer: vec![],
            layer_filters: vec![],
            stages: vec![StageSpec::new("only", vec![block])],
        }
    }

    #[test]
    fn three_by_three_conv_without_bias_or_norm() {
        let mut b = BlockSpec::conv_norm(1, 3, 1, 1);
        b.has_norm = false;
        let r = count_parameters(&single(b, TensorShape::new(3, 5, 5)));
        assert_eq!(r.trainable_parameters, 27);
    }

    #[test]
    fn pointwise_conv_macs() {
        let mut b = BlockSpec::conv_norm(1, 1, 1, 0);
        b.has_norm = false;
        let r = count_flops(&single(b, TensorShape::new(1, 4, 4)), TensorShape::new(1, 4, 4)).unwrap();
        assert_eq!(r.flops, 16);
    }

    #[test]
    fn breakdown_sums_to_totals_and_csv_has_total_row() {
        let spec = crate::arch::student_spec(crate::arch::StudentVariant::V1);
        let r = count_parameters(&spec);
        assert_eq!(r.per_stage.iter().map(|s| s.parameters).sum::<u64>(), r.trainable_parameters);
        assert_eq!(r.per_stage.iter().map(|s| s.flops).sum::<u64>(), r.flops);
        assert!(r.to_csv().ends_with(&format!("total,{},{}\n", r.trainable_parameters, r.flops)));
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(3437568), "3,437,568");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(1000), "1,000");
    }
}
