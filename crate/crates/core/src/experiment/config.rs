use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{
    alexnet_spec, resnet50_spec, small_cnn_spec, ModelSpec, StudentLayout, StudentVariant, TensorShape,
    STUDENT_BLOCKS_PER_LAYER,
};
use crate::data::Preprocess;
use crate::distill::DistillConfig;
use crate::hashing::{FinetuneConfig, Framework};
use crate::optim::OptimizerConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Distill,
    Finetune,
    Encode,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Distill => "distill",
            Stage::Finetune => "finetune",
            Stage::Encode => "encode",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "distill" => Ok(Stage::Distill),
            "finetune" => Ok(Stage::Finetune),
            "encode" => Ok(Stage::Encode),
            "evaluate" => Ok(Stage::Evaluate),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
    Nuswide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Side length of the square model input.
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    /// Normalize with ImageNet channel statistics.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Overrides the data root environment variable.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Multi-hot manifest, relative to the data root.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Split seed; defaults to the experiment seed.
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

fn default_input_size() -> usize {
    224
}

fn default_true() -> bool {
    true
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match (self.kind, &self.synthetic) {
            (DatasetKind::Synthetic, Some(s)) => format!("synthetic-{}x{}-s{}", s.classes, s.images_per_class, s.seed),
            (DatasetKind::Synthetic, None) => "synthetic".into(),
            (DatasetKind::Cifar10, _) => "cifar10".into(),
            (DatasetKind::Nuswide, _) => "nuswide".into(),
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        if self.normalize {
            Preprocess::imagenet(self.input_size)
        } else {
            Preprocess {
                size: self.input_size,
                mean: [0.0; 3],
                std: [1.0; 3],
            }
        }
    }

    pub fn input_shape(&self) -> TensorShape {
        TensorShape::new(3, self.input_size, self.input_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherId {
    Resnet50,
    Alexnet,
    SmallCnn,
}

impl TeacherId {
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherId::Resnet50 => "resnet50",
            TeacherId::Alexnet => "alexnet",
            TeacherId::SmallCnn => "small-cnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub id: TeacherId,
    /// Teacher checkpoint; defaults to `teacher.ckpt` in the output directory.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Conv widths of the small CNN.
    #[serde(default)]
    pub widths: Option<[usize; 3]>,
    /// Output features of the small CNN.
    #[serde(default)]
    pub feature_dim: Option<usize>,
    /// Classification pretraining of the small CNN on a separate synthetic set.
    #[serde(default)]
    pub pretrain: Option<PretrainSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Seed of the synthetic source dataset; must differ from the target's.
    pub source_seed: u64,
}

fn default_batch() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentKind {
    V1,
    V2,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub variant: StudentKind,
    #[serde(default)]
    pub stem_filters: Option<usize>,
    #[serde(default)]
    pub blocks_per_layer: Option<Vec<usize>>,
    #[serde(default)]
    pub layer_filters: Option<Vec<usize>>,
    #[serde(default)]
    pub transition_filters: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augment: bool,
    /// Precompute teacher features once and keep them on disk.
    #[serde(default)]
    pub cache_features: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            optimizer: d.optimizer,
            augment: d.augment,
            cache_features: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub framework: Framework,
    pub n_bits: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub lambda_q: Option<f64>,
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Start from random student weights instead of the distilled ones.
    #[serde(default)]
    pub from_scratch: bool,
}

fn default_gamma() -> f64 {
    20.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Per-query nearest-neighbour listing length; none when unset.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_top_n() -> usize {
    5000
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            top_n: default_top_n(),
            top_k: None,
            batch_size: default_batch(),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub stage: Option<Stage>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub finetune: Option<FinetuneSection>,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Parses `text` after applying `path = value` overrides, where `path`
    /// is dotted (`finetune.n_bits`) and `value` is a TOML literal; bare
    /// words are taken as strings.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (path, raw) in overrides {
            set_dotted(&mut doc, path, parse_literal(raw))?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 over the configuration with `stage` and `output_dir`
    /// cleared, so every stage of one experiment shares a hash.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.stage = None;
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn split_seed(&self) -> u64 {
        self.dataset.split_seed.unwrap_or(self.seed)
    }

    pub fn teacher_weights(&self) -> PathBuf {
        self.teacher
            .weights
            .clone()
            .unwrap_or_else(|| self.output_dir.join("teacher.ckpt"))
    }

    pub fn student_layout(&self) -> Result<StudentLayout> {
        let s = &self.student;
        let mut layout = match s.variant {
            StudentKind::V1 => StudentLayout::for_variant(StudentVariant::V1),
            StudentKind::V2 => StudentLayout::for_variant(StudentVariant::V2),
            StudentKind::Custom => StudentLayout {
                name: format!("student_custom_{}", self.name),
                input: self.dataset.input_shape(),
                stem_filters: 64,
                blocks_per_layer: STUDENT_BLOCKS_PER_LAYER.to_vec(),
                layer_filters: Vec::new(),
                transition_filters: Vec::new(),
            },
        };
        let overridden = s.stem_filters.is_some()
            || s.blocks_per_layer.is_some()
            || s.layer_filters.is_some()
            || s.transition_filters.is_some();
        if overridden && s.variant != StudentKind::Custom {
            return Err(Error::Config("student filter overrides need variant = \"custom\"".into()));
        }
        if s.variant == StudentKind::Custom {
            if let Some(v) = s.stem_filters {
                layout.stem_filters = v;
            }
            if let Some(v) = &s.blocks_per_layer {
                layout.blocks_per_layer = v.clone();
            }
            layout.layer_filters = s
                .layer_filters
                .clone()
                .ok_or_else(|| Error::Config("custom student needs layer_filters".into()))?;
            layout.transition_filters = s
                .transition_filters
                .clone()
                .ok_or_else(|| Error::Config("custom student needs transition_filters".into()))?;
        }
        layout.input = self.dataset.input_shape();
        Ok(layout)
    }

    pub fn student_spec(&self) -> Result<ModelSpec> {
        self.student_layout()?.to_spec()
    }

    pub fn teacher_spec(&self) -> Result<ModelSpec> {
        let t = &self.teacher;
        let input = self.dataset.input_shape();
        match t.id {
            TeacherId::Resnet50 | TeacherId::Alexnet => {
                let spec = if t.id == TeacherId::Resnet50 { resnet50_spec() } else { alexnet_spec() };
                if spec.input != input {
                    return Err(Error::Config(format!(
                        "teacher {} expects {} inputs, dataset.input_size gives {}",
                        t.id.as_str(),
                        spec.input,
                        input
                    )));
                }
                if t.widths.is_some() || t.feature_dim.is_some() || t.pretrain.is_some() {
                    return Err(Error::Config(format!(
                        "widths, feature_dim and pretrain only apply to the small-cnn teacher, not {}",
                        t.id.as_str()
                    )));
                }
                Ok(spec)
            }
            TeacherId::SmallCnn => {
                let widths = t.widths.ok_or_else(|| Error::Config("small-cnn teacher needs widths".into()))?;
                let dim = t
                    .feature_dim
                    .ok_or_else(|| Error::Config("small-cnn teacher needs feature_dim".into()))?;
                let spec = small_cnn_spec("small_cnn", input, widths, dim);
                spec.validate()?;
                Ok(spec)
            }
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            optimizer: self.distill.optimizer.clone(),
            epochs: self.distill.epochs,
            batch_size: self.distill.batch_size,
            seed: self.seed,
            augment: self.distill.augment,
        }
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        let f = self.finetune_section()?;
        Ok(FinetuneConfig {
            framework: f.framework,
            n_bits: f.n_bits,
            optimizer: f.optimizer.clone(),
            epochs: f.epochs,
            batch_size: f.batch_size,
            seed: self.seed,
            gamma: f.gamma,
            lambda_q: f.lambda_q,
            augment: f.augment,
        })
    }

    pub fn finetune_section(&self) -> Result<&FinetuneSection> {
        self.finetune
            .as_ref()
            .ok_or_else(|| Error::Config("missing [finetune] section".into()))
    }

    /// Checks everything `stage` needs before any data is touched.
    pub fn validate_for(&self, stage: Stage) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("experiment name is empty".into()));
        }
        if self.dataset.input_size == 0 {
            return Err(Error::Config("dataset.input_size must be positive".into()));
        }
        match (self.dataset.kind, &self.dataset.synthetic) {
            (DatasetKind::Synthetic, None) => {
                return Err(Error::Config("synthetic dataset needs a [dataset.synthetic] section".into()))
            }
            (DatasetKind::Synthetic, Some(s)) => {
                if s.classes < 2 || s.images_per_class < 6 || s.image_size == 0 {
                    return Err(Error::Config(
                        "synthetic dataset needs >= 2 classes, >= 6 images per class and a positive image size".into(),
                    ));
                }
            }
            (_, Some(_)) => return Err(Error::Config("[dataset.synthetic] only applies to kind = \"synthetic\"".into())),
            (DatasetKind::Nuswide, None) if self.dataset.manifest.is_none() => {
                return Err(Error::Config("nuswide dataset needs a manifest".into()))
            }
            _ => {}
        }
        let student = self.student_spec()?;
        match stage {
            Stage::Pretrain => {
                self.teacher_spec()?;
                super::runner::check_pretrainable(self)?;
            }
            Stage::Distill => {
                let teacher = self.teacher_spec()?;
                if teacher.feature_dim != student.feature_dim {
                    return Err(Error::Config(format!(
                        "teacher feature dim {} != student feature dim {}",
                        teacher.feature_dim, student.feature_dim
                    )));
                }
                self.distill_config().validate()?;
            }
            Stage::Finetune => {
                self.finetune_config()?.validate()?;
            }
            Stage::Encode | Stage::Evaluate => {
                let f = self.finetune_section()?;
                if f.n_bits == 0 {
                    return Err(Error::Config("n_bits must be positive".into()));
                }
                if self.evaluate.top_n == 0 || self.evaluate.batch_size == 0 {
                    return Err(Error::Config("evaluate.top_n and evaluate.batch_size must be positive".into()));
                }
                if self.evaluate.top_k == Some(0) {
                    return Err(Error::Config("evaluate.top_k must be positive when set".into()));
                }
            }
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?}: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
name = "desk"
seed = 3
output_dir = "runs/desk"

[dataset]
kind = "synthetic"
input_size = 64

[dataset.synthetic]
classes = 10
images_per_class = 60
image_size = 32
seed = 7

[teacher]
id = "small-cnn"
widths = [8, 16, 32]
feature_dim = 32

[student]
variant = "custom"
stem_filters = 8
layer_filters = [8, 8, 16, 16, 32]
transition_filters = [8, 16, 16, 16]

[distill]
epochs = 2
optimizer = { kind = "adam", learning_rate = 1e-3 }

[finetune]
framework = "csq"
n_bits = 16
epochs = 2
optimizer = { kind = "rmsprop", learning_rate = 1e-4 }
"#;

    #[test]
    fn parses_and_validates_every_stage() {
        let c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        for stage in [Stage::Distill, Stage::Finetune, Stage::Encode, Stage::Evaluate] {
            c.validate_for(stage).unwrap();
        }
        assert_eq!(c.student_spec().unwrap().feature_dim, 32);
        assert_eq!(c.teacher_weights(), PathBuf::from("runs/desk/teacher.ckpt"));
        assert_eq!(c.finetune_config().unwrap().lambda_q(), 1e-4);
    }

    #[test]
    fn hash_ignores_stage_and_output_dir_only() {
        let a = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let mut b = a.clone();
        b.stage = Some(Stage::Evaluate);
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stage_specific_failures() {
        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.teacher.feature_dim = Some(31);
        assert!(c.validate_for(Stage::Distill).is_err());
        assert!(c.validate_for(Stage::Finetune).is_ok());
        c.finetune = None;
        assert!(c.validate_for(Stage::Finetune).is_err());
        assert!(c.validate_for(Stage::Evaluate).is_err());

        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.dataset.input_size = 32;
        // The narrow student collapses before its last transition at 32x32.
        assert!(matches!(c.validate_for(Stage::Finetune), Err(Error::SpatialCollapse { .. })));

        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.teacher.id = TeacherId::Resnet50;
        assert!(c.validate_for(Stage::Distill).is_err());
        assert!(ExperimentConfig::from_toml(&EXAMPLE.replace("seed = 3", "seed = 3\nbogus = 1")).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = ExperimentConfig::from_toml_with_overrides(
            EXAMPLE,
            &[
                o("finetune.n_bits", "32"),
                o("output_dir", "other"),
                o("distill.optimizer.learning_rate", "5e-4"),
                o("evaluate.top_k", "5"),
            ],
        )
        .unwrap();
        assert_eq!(c.finetune.as_ref().unwrap().n_bits, 32);
        assert_eq!(c.output_dir, PathBuf::from("other"));
        assert_eq!(c.distill.optimizer.learning_rate, 5e-4);
        assert_eq!(c.evaluate.top_k, Some(5));
        assert!(ExperimentConfig::from_toml_with_overrides(EXAMPLE, &[o("seed.x", "1")]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(EXAMPLE, &[o("finetune.n_bits", "many")]).is_err());
    }

    #[test]
    fn dch_48_bits_is_accepted() {
        let text = EXAMPLE.replace("framework = \"csq\"", "framework = \"dch\"").replace("n_bits = 16", "n_bits = 48");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        c.validate_for(Stage::Finetune).unwrap();
        assert_eq!(c.finetune_config().unwrap().lambda_q(), 0.1);
    }
}
