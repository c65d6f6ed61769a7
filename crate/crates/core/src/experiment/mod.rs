//! Two-stage pipeline orchestration: configs, checkpoints, run directories,
//! metrics reports and result tables.

mod audit;
mod checkpoint;
mod config;
mod report;
mod runner;

pub use audit::{AuditEntry, AuditLog};
pub use checkpoint::{Checkpoint, CheckpointHeader, OptimizerHeader, StageTag, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    DatasetConfig, DatasetKind, DistillSection, EvaluateSection, ExperimentConfig, FinetuneSection, PretrainSection,
    Stage, StudentConfig, StudentKind, SyntheticConfig, TeacherConfig, TeacherId,
};
pub use report::{report_tables, Fingerprint, MapSummary, MapTable, MetricsReport, Provenance, METRICS_FORMAT_VERSION};
pub use runner::{
    collect_reports, run_distill, run_encode, run_encode_and_evaluate, run_evaluate, run_finetune, run_pretrain_teacher,
    LoadedData, RoleData, RunOptions, RunPaths,
};
