use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hashdistill::arch::{
    alexnet_spec, comparison_csv, comparison_text, count_flops, parameter_reduction, resnet50_spec, shape_trace,
    student_spec, CountReport, ModelSpec, StudentVariant,
};
use hashdistill::experiment::{
    collect_reports, report_tables, run_distill, run_encode, run_encode_and_evaluate, run_evaluate, run_finetune,
    run_pretrain_teacher, ExperimentConfig, MetricsReport, RunOptions, Stage,
};
use hashdistill::hashing::HashCenterSet;
use hashdistill::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hashdistill", version, about = "Distill a frozen teacher into a compact student and fine-tune it for hashing-based retrieval")]
pub struct Cli {
    /// Log filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pretrain the small-CNN stand-in teacher on a synthetic source set.
    PretrainTeacher(StageArgs),
    /// Stage one: feature distillation from the frozen teacher.
    Distill(TrainArgs),
    /// Stage two: hash-head fine-tuning with CSQ or DCH.
    Finetune(FinetuneArgs),
    /// Write binary codes of the query and database sets.
    Encode(StageArgs),
    /// mAP@N over stored codes, plus an optional top-k listing.
    Evaluate(EvaluateArgs),
    /// mAP tables across finished runs.
    Report(ReportArgs),
    /// Parameter and FLOP accounting of students and teachers.
    Arch(ArchArgs),
    /// Generate and print a hash center set.
    Centers(CentersArgs),
}

#[derive(Args, Debug)]
pub struct StageArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set finetune.n_bits=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Dataset root directory.
    #[arg(long, env = "HASHDISTILL_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from this stage's checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long, value_parser = ["csq", "dch"])]
    pub framework: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Encode query and database sets first.
    #[arg(long)]
    pub encode: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories or metrics JSON files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write to a file instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Which {
    V1,
    V2,
    Both,
}

#[derive(Args, Debug)]
pub struct ArchArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub student: Which,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Also print the per-stage output shapes.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct CentersArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub bits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn split_override(raw: &str) -> Result<(String, String)> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not KEY=VALUE")))
}

fn load_config(args: &StageArgs, extra: Vec<(String, String)>) -> Result<(ExperimentConfig, RunOptions)> {
    if !args.config.exists() {
        return Err(Error::Config(format!("config file {} not found", args.config.display())));
    }
    let text = std::fs::read_to_string(&args.config)?;
    let mut overrides: Vec<(String, String)> = args.overrides.iter().map(|o| split_override(o)).collect::<Result<_>>()?;
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(dir) = &args.output_dir {
        overrides.push(("output_dir".into(), toml_string(&dir.display().to_string())));
    }
    overrides.extend(extra);
    let config = ExperimentConfig::from_toml_with_overrides(&text, &overrides)?;
    let opts = RunOptions {
        resume: false,
        data_root: args.data_root.clone(),
    };
    Ok((config, opts))
}

fn toml_string(s: &str) -> String {
    format!("{s:?}")
}

fn print_training(report: &MetricsReport, stage: Stage, out: &mut impl Write) -> Result<()> {
    if let (Some(first), Some(last)) = (report.first_loss(), report.final_loss()) {
        writeln!(
            out,
            "{stage}: {} epochs, loss {first:.6} -> {last:.6}, {:.2}s/epoch",
            report.epochs.len(),
            report.mean_epoch_seconds().unwrap_or(0.0)
        )?;
    }
    Ok(())
}

fn metrics_path(config: &ExperimentConfig, stage: Stage) -> String {
    hashdistill::experiment::RunPaths::new(&config.output_dir).metrics(stage).display().to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::PretrainTeacher(args) => {
            let (config, opts) = load_config(&args, Vec::new())?;
            let report = run_pretrain_teacher(&config, &opts)?;
            print_training(&report, Stage::Pretrain, &mut out)?;
            if let Some(acc) = report.train_accuracy {
                writeln!(out, "teacher train accuracy {acc:.4}")?;
            }
            writeln!(out, "teacher weights {}", config.teacher_weights().display())?;
        }
        Command::Distill(args) => {
            let mut extra = Vec::new();
            if let Some(e) = args.epochs {
                extra.push(("distill.epochs".into(), e.to_string()));
            }
            let (config, mut opts) = load_config(&args.stage, extra)?;
            opts.resume = args.resume;
            let report = run_distill(&config, &opts)?;
            print_training(&report, Stage::Distill, &mut out)?;
            let (b, a) = (
                report.teacher_checksum_before.clone().unwrap_or_default(),
                report.teacher_checksum_after.clone().unwrap_or_default(),
            );
            writeln!(
                out,
                "teacher checksum {} ({})",
                &b[..b.len().min(16)],
                if a == b { "unchanged" } else { "CHANGED" }
            )?;
            writeln!(out, "metrics {}", metrics_path(&config, Stage::Distill))?;
        }
        Command::Finetune(args) => {
            let mut extra = Vec::new();
            if let Some(e) = args.train.epochs {
                extra.push(("finetune.epochs".into(), e.to_string()));
            }
            if let Some(b) = args.bits {
                extra.push(("finetune.n_bits".into(), b.to_string()));
            }
            if let Some(f) = &args.framework {
                extra.push(("finetune.framework".into(), toml_string(f)));
            }
            let (config, mut opts) = load_config(&args.train.stage, extra)?;
            opts.resume = args.train.resume;
            let report = run_finetune(&config, &opts)?;
            print_training(&report, Stage::Finetune, &mut out)?;
            writeln!(out, "metrics {}", metrics_path(&config, Stage::Finetune))?;
        }
        Command::Encode(args) => {
            let (config, opts) = load_config(&args, Vec::new())?;
            run_encode(&config, &opts)?;
            let paths = hashdistill::experiment::RunPaths::new(&config.output_dir);
            writeln!(out, "codes {} {}", paths.query_codes().display(), paths.database_codes().display())?;
        }
        Command::Evaluate(args) => {
            let mut extra = Vec::new();
            if let Some(n) = args.top_n {
                extra.push(("evaluate.top_n".into(), n.to_string()));
            }
            if let Some(k) = args.top_k {
                extra.push(("evaluate.top_k".into(), k.to_string()));
            }
            let (config, opts) = load_config(&args.stage, extra)?;
            let report = if args.encode {
                run_encode_and_evaluate(&config, &opts)?
            } else {
                run_evaluate(&config, &opts)?
            };
            let m = report.map.as_ref().expect("evaluate fills map");
            writeln!(
                out,
                "mAP@{} {:.6} (random baseline {:.6}, {} queries, {} database items)",
                m.top_n, m.map, m.random_baseline, m.queries, m.database
            )?;
            writeln!(out, "metrics {}", metrics_path(&config, Stage::Evaluate))?;
        }
        Command::Report(args) => {
            let mut reports = Vec::new();
            for input in &args.inputs {
                if input.is_dir() {
                    reports.extend(collect_reports(input)?);
                } else {
                    reports.push(MetricsReport::load(input)?);
                }
            }
            let tables = report_tables(&reports);
            let mut doc = String::new();
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    doc.push('\n');
                }
                doc.push_str(&match args.format {
                    Format::Text => t.to_text(),
                    Format::Csv => t.to_csv(),
                });
            }
            if tables.is_empty() {
                log::warn!("no evaluation results among {} reports", reports.len());
            }
            emit(&doc, args.output.as_deref(), &mut out)?;
        }
        Command::Arch(args) => {
            let teachers = [resnet50_spec(), alexnet_spec()];
            let students: Vec<(ModelSpec, usize)> = match args.student {
                Which::V1 => vec![(student_spec(StudentVariant::V1), 0)],
                Which::V2 => vec![(student_spec(StudentVariant::V2), 1)],
                Which::Both => vec![(student_spec(StudentVariant::V1), 0), (student_spec(StudentVariant::V2), 1)],
            };
            let mut doc = String::new();
            for (s, t) in &students {
                let teacher = &teachers[*t];
                let sc = count_flops(s, s.input)?;
                let tc = count_flops(teacher, teacher.input)?;
                let pair: [&CountReport; 2] = [&sc, &tc];
                doc.push_str(&match args.format {
                    Format::Text => comparison_text(&pair),
                    Format::Csv => comparison_csv(&pair),
                });
                if matches!(args.format, Format::Text) {
                    doc.push_str(&format!(
                        "parameter reduction {:.2}%\n",
                        100.0 * parameter_reduction(&sc, &tc)
                    ));
                }
                if args.trace {
                    for (stage, shape) in shape_trace(s, s.input)? {
                        doc.push_str(&format!("{stage}\t{shape}\n"));
                    }
                }
                doc.push('\n');
            }
            emit(&doc, None, &mut out)?;
        }
        Command::Centers(args) => {
            let set = HashCenterSet::generate(args.classes, args.bits, args.seed)?;
            log::info!(
                "{} centers, {} bits, min distance {}, mean distance {:.3}",
                set.num_classes(),
                set.k_bits(),
                set.min_distance(),
                set.average_distance()
            );
            emit(&set.to_string(), args.output.as_deref(), &mut out)?;
        }
    }
    Ok(())
}

fn emit(doc: &str, path: Option<&Path>, out: &mut impl Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, doc)?,
        None => out.write_all(doc.as_bytes())?,
    }
    Ok(())
}
