use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array4;

use super::audit::AuditLog;
use super::checkpoint::{Checkpoint, StageTag};
use super::config::{DatasetKind, ExperimentConfig, Stage, TeacherId};
use super::report::{MapSummary, MetricsReport, Provenance};
use crate::arch::{attach_hash_head, count_flops, HashModel, Network};
use crate::data::cifar::{cifar10_split_from_labels, load_cifar10};
use crate::data::nuswide::make_nuswide_split;
use crate::data::{
    make_synthetic, DatasetSplit, FileSource, ImageSet, ImageSource, InMemorySource, Preprocess, Quota,
    SyntheticSpec, DATA_ROOT_ENV,
};
use crate::distill::pretrain::{pretrain_classifier, PretrainConfig};
use crate::distill::{train_kd_resumable, FeatureCache, FrozenTeacher, KdProgress, Teacher};
use crate::hashing::{finetune_retrieval_resumable, FinetuneProgress};
use crate::nn::Mode;
use crate::retrieval::{map_at_n, random_baseline_map, top_k_listing, CodeMatrix};
use crate::{Error, Result};

/// Per-invocation switches that are not part of the experiment identity.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from the stage's own checkpoint instead of starting over.
    pub resume: bool,
    /// Overrides both the config and the environment data root.
    pub data_root: Option<PathBuf>,
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.tsv")
    }

    pub fn audit(&self) -> AuditLog {
        AuditLog::new(self.root.join("audit.log"))
    }

    pub fn distill_checkpoint(&self) -> PathBuf {
        self.root.join("distill.ckpt")
    }

    pub fn finetune_checkpoint(&self) -> PathBuf {
        self.root.join("finetune.ckpt")
    }

    pub fn centers(&self) -> PathBuf {
        self.root.join("centers.txt")
    }

    pub fn query_codes(&self) -> PathBuf {
        self.root.join("codes").join("query.cukd")
    }

    pub fn database_codes(&self) -> PathBuf {
        self.root.join("codes").join("database.cukd")
    }

    pub fn top_k(&self) -> PathBuf {
        self.root.join("topk.csv")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn metrics(&self, stage: Stage) -> PathBuf {
        self.root.join("metrics").join(format!("{stage}.json"))
    }
}

enum Pixels {
    Memory(ImageSet),
    Files(PathBuf),
}

/// A dataset split plus access to its pixels.
pub struct LoadedData {
    pub split: DatasetSplit,
    pixels: Pixels,
    preprocess: Preprocess,
    position: HashMap<u64, usize>,
}

/// Images, labels and ids of one role of the split.
pub struct RoleData<'a> {
    pub source: Box<dyn ImageSource + 'a>,
    pub labels: Vec<Vec<u32>>,
    pub ids: Vec<u64>,
}

fn data_root(config: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    opts.data_root
        .clone()
        .or_else(|| config.dataset.root.clone())
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config(format!(
                "no data root: set dataset.root, pass --data-root or export {DATA_ROOT_ENV}"
            ))
        })
}

impl LoadedData {
    pub fn load(config: &ExperimentConfig, opts: &RunOptions) -> Result<Self> {
        let seed = config.split_seed();
        let (split, pixels) = match config.dataset.kind {
            DatasetKind::Synthetic => {
                let s = config.dataset.synthetic.as_ref().expect("validated");
                let spec = SyntheticSpec::new(s.classes, s.images_per_class, s.image_size, s.seed);
                let data = make_synthetic(&spec)?;
                let split = DatasetSplit::from_items(
                    &config.dataset.name(),
                    data.split.items.clone(),
                    s.classes,
                    Quota {
                        query_per_class: spec.query_per_class,
                        train_per_class: spec.train_per_class,
                    },
                    seed,
                )?;
                (split, Pixels::Memory(data.images))
            }
            DatasetKind::Cifar10 => {
                let root = data_root(config, opts)?;
                let set = load_cifar10(&root, None)?;
                let labels: Vec<u32> = set.labels.iter().map(|l| l[0]).collect();
                (cifar10_split_from_labels(&labels, seed)?, Pixels::Memory(set))
            }
            DatasetKind::Nuswide => {
                let root = data_root(config, opts)?;
                let manifest = root.join(config.dataset.manifest.as_ref().expect("validated"));
                (make_nuswide_split(&manifest, seed)?, Pixels::Files(root))
            }
        };
        split.check_disjoint()?;
        let position = match &pixels {
            Pixels::Memory(set) => set.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect(),
            Pixels::Files(_) => split.items.iter().enumerate().map(|(i, it)| (it.id, i)).collect(),
        };
        Ok(LoadedData {
            split,
            pixels,
            preprocess: config.dataset.preprocess(),
            position,
        })
    }

    pub fn role(&self, ids: &[u64]) -> Result<RoleData<'_>> {
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.position
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("split references unknown id {id}")))
            })
            .collect::<Result<_>>()?;
        let item_of: HashMap<u64, usize> = self.split.items.iter().enumerate().map(|(i, it)| (it.id, i)).collect();
        let labels = ids
            .iter()
            .map(|id| self.split.items[item_of[id]].labels.clone())
            .collect();
        let source: Box<dyn ImageSource> = match &self.pixels {
            Pixels::Memory(set) => Box::new(InMemorySource::with_rows(&set.images, rows, self.preprocess.clone())?),
            Pixels::Files(root) => Box::new(FileSource::new(
                root,
                rows.iter().map(|&r| self.split.items[r].path.clone()).collect(),
                self.preprocess.clone(),
            )),
        };
        Ok(RoleData {
            source,
            labels,
            ids: ids.to_vec(),
        })
    }

    pub fn all_ids(&self) -> Vec<u64> {
        self.split.items.iter().map(|i| i.id).collect()
    }
}

fn prepare_run_dir(config: &ExperimentConfig, stage: Stage) -> Result<RunPaths> {
    config.validate_for(stage)?;
    let paths = RunPaths::new(&config.output_dir);
    std::fs::create_dir_all(&paths.root)?;
    let mut stored = config.clone();
    stored.stage = Some(stage);
    std::fs::write(paths.config(), stored.to_toml()?)?;
    Ok(paths)
}

/// Loads the dataset and pins its split to the run directory; later stages
/// reuse the stored split.
fn load_data(config: &ExperimentConfig, opts: &RunOptions, paths: &RunPaths) -> Result<LoadedData> {
    let data = LoadedData::load(config, opts)?;
    let path = paths.split();
    if path.exists() {
        let stored = DatasetSplit::load(&path)?;
        if stored != data.split {
            return Err(Error::Dataset(format!(
                "{} differs from the split this config produces",
                path.display()
            )));
        }
    } else {
        data.split.save(&path)?;
    }
    Ok(data)
}

fn load_teacher(config: &ExperimentConfig, paths: &RunPaths, stage: Stage) -> Result<Network> {
    let path = config.teacher_weights();
    let ck = Checkpoint::load(&path)?;
    ck.expect_stage(StageTag::Teacher)?;
    let expected = config.teacher_spec()?;
    if ck.header.model != expected {
        return Err(Error::Checkpoint(format!(
            "{} holds `{}`, config describes `{}`",
            path.display(),
            ck.header.model.name,
            expected.name
        )));
    }
    let net = ck.network()?;
    paths.audit().record(stage.as_str(), "teacher", &path, &net.checksum())?;
    Ok(net)
}

/// Classification pretraining of the small-CNN stand-in teacher on a
/// synthetic source set generated with a different seed than the target.
pub fn run_pretrain_teacher(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    let _ = opts;
    let paths = prepare_run_dir(config, Stage::Pretrain)?;
    let pre = config
        .teacher
        .pretrain
        .as_ref()
        .ok_or_else(|| Error::Config("missing [teacher.pretrain] section".into()))?;
    let s = config.dataset.synthetic.as_ref().expect("validated");
    let source = make_synthetic(&SyntheticSpec::new(s.classes, s.images_per_class, s.image_size, pre.source_seed))?;
    let labels: Vec<usize> = source.images.labels.iter().map(|l| l[0] as usize).collect();
    let mut net = Network::build(&config.teacher_spec()?, config.seed ^ 0x7eac)?;
    let out = pretrain_classifier(
        &mut net,
        &InMemorySource::new(&source.images.images, config.dataset.preprocess()),
        &labels,
        s.classes,
        &PretrainConfig {
            optimizer: pre.optimizer.clone(),
            epochs: pre.epochs,
            batch_size: pre.batch_size,
            seed: config.seed,
        },
    )?;
    let path = config.teacher_weights();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Checkpoint::from_network(StageTag::Teacher, &config.config_hash(), &net, &out.history, None).save(&path)?;
    let mut report = MetricsReport::new(config, Stage::Pretrain);
    report.epochs = out.history;
    report.train_accuracy = Some(out.train_accuracy);
    report.teacher_checksum_after = Some(net.checksum());
    report.counts = vec![count_flops(net.spec(), net.spec().input)?];
    report.save(&paths.metrics(Stage::Pretrain))?;
    Ok(report)
}

/// Stage one: regress the frozen teacher's features over every image of the
/// dataset, labels unused.
pub fn run_distill(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    let paths = prepare_run_dir(config, Stage::Distill)?;
    let hash = config.config_hash();
    let data = load_data(config, opts, &paths)?;
    let teacher_net = load_teacher(config, &paths, Stage::Distill)?;
    let before = teacher_net.checksum();
    let kd = config.distill_config();

    let ck_path = paths.distill_checkpoint();
    let (mut student, mut progress) = if opts.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        ck.expect_stage(StageTag::Distill)?;
        ck.expect_config_hash(&hash)?;
        let net = ck.network()?;
        let optimizer = ck.optimizer(&net.params())?;
        log::info!("resuming distillation after epoch {}", ck.header.epochs_completed);
        (net, KdProgress { optimizer, history: ck.header.history.clone() })
    } else {
        (Network::build(&config.student_spec()?, config.seed)?, KdProgress::new(&kd))
    };

    let all = data.role(&data.all_ids())?;
    let mut teacher = if config.distill.cache_features && !kd.augment {
        let identity = format!("{}-{}", config.teacher.id.as_str(), &before[..12]);
        let dataset_key = format!("{}-{}px", config.dataset.name(), config.dataset.input_size);
        let cache_path = FeatureCache::path_for(&paths.cache_dir(), &dataset_key, &identity);
        let cache = if cache_path.exists() {
            FeatureCache::load(&cache_path)?
        } else {
            let mut net = teacher_net.clone();
            let features = crate::distill::forward_chunked(&mut net, all.source.as_ref(), kd.batch_size)?;
            let cache = FeatureCache { features };
            std::fs::create_dir_all(paths.cache_dir())?;
            cache.save(&cache_path)?;
            cache
        };
        Teacher::Cached { identity, cache }
    } else {
        Teacher::Model(FrozenTeacher::new(teacher_net.clone()))
    };

    let mut save = |net: &Network, p: &KdProgress| {
        Checkpoint::from_network(StageTag::Distill, &hash, net, &p.history, Some(&p.optimizer)).save(&ck_path)
    };
    train_kd_resumable(&mut teacher, &mut student, all.source.as_ref(), &kd, &mut progress, &mut save)?;
    let after = match &teacher {
        Teacher::Model(t) => t.checksum(),
        Teacher::Cached { .. } => teacher_net.checksum(),
    };

    let mut report = MetricsReport::new(config, Stage::Distill);
    report.epochs = progress.history;
    report.teacher_checksum_before = Some(before);
    report.teacher_checksum_after = Some(after);
    report.counts = vec![
        count_flops(student.spec(), student.spec().input)?,
        count_flops(teacher_net.spec(), teacher_net.spec().input)?,
    ];
    report.save(&paths.metrics(Stage::Distill))?;
    Ok(report)
}

/// Stage two: attach a hash head to the distilled student and train both
/// with the configured retrieval loss. The teacher is never loaded.
pub fn run_finetune(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    let paths = prepare_run_dir(config, Stage::Finetune)?;
    let hash = config.config_hash();
    let section = config.finetune_section()?.clone();
    let ft = config.finetune_config()?;
    let data = load_data(config, opts, &paths)?;
    let train = data.role(&data.split.train)?;

    let ck_path = paths.finetune_checkpoint();
    let mut input = None;
    let (mut model, mut progress) = if opts.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        ck.expect_stage(StageTag::Finetune)?;
        ck.expect_config_hash(&hash)?;
        let model = ck.hash_model()?;
        let optimizer = ck.optimizer(&model.params())?;
        log::info!("resuming fine-tuning after epoch {}", ck.header.epochs_completed);
        (model, FinetuneProgress { optimizer, history: ck.header.history.clone() })
    } else {
        let backbone = if section.from_scratch {
            Network::build(&config.student_spec()?, config.seed)?
        } else {
            let src = paths.distill_checkpoint();
            let ck = Checkpoint::load(&src)?;
            ck.expect_stage(StageTag::Distill)?;
            let expected = config.student_spec()?;
            if ck.header.model != expected {
                return Err(Error::Checkpoint(format!(
                    "{} holds `{}`, config describes `{}`",
                    src.display(),
                    ck.header.model.name,
                    expected.name
                )));
            }
            let net = ck.network()?;
            paths.audit().record(Stage::Finetune.as_str(), "student", &src, &net.checksum())?;
            input = Some(Provenance {
                path: src.display().to_string(),
                config_hash: ck.header.config_hash.clone(),
            });
            net
        };
        (attach_hash_head(backbone, ft.n_bits, config.seed)?, FinetuneProgress::new(&ft))
    };

    let num_classes = data.split.num_classes;
    let mut save = |m: &HashModel, p: &FinetuneProgress| {
        Checkpoint::from_hash_model(&hash, m, &p.history, Some(&p.optimizer)).save(&ck_path)
    };
    let outcome = finetune_retrieval_resumable(
        &mut model,
        train.source.as_ref(),
        &train.labels,
        num_classes,
        &ft,
        &mut progress,
        &mut save,
    )?;
    if let Some(centers) = &outcome.centers {
        centers.save(&paths.centers())?;
    }

    let mut report = MetricsReport::new(config, Stage::Finetune);
    report.epochs = outcome.history;
    report.input = input;
    report.counts = vec![count_flops(model.backbone.spec(), model.backbone.spec().input)?];
    report.save(&paths.metrics(Stage::Finetune))?;
    Ok(report)
}

fn encode_role(model: &mut HashModel, role: &RoleData<'_>, batch_size: usize) -> Result<CodeMatrix> {
    let n = role.source.len();
    let mut h = ndarray::Array2::zeros((n, model.n_bits()));
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let x: Array4<f32> = role.source.batch(&(start..end).collect::<Vec<_>>())?;
        let out = model.forward(&x, Mode::Eval)?;
        h.slice_mut(ndarray::s![start..end, ..]).assign(&out);
        start = end;
    }
    CodeMatrix::from_features(h.view(), role.ids.clone(), role.labels.clone())
}

fn load_finetuned(config: &ExperimentConfig, paths: &RunPaths, stage: Stage) -> Result<(HashModel, Provenance)> {
    let src = paths.finetune_checkpoint();
    let ck = Checkpoint::load(&src)?;
    ck.expect_stage(StageTag::Finetune)?;
    let want = config.finetune_section()?.n_bits;
    if ck.header.n_bits != Some(want) {
        return Err(Error::Checkpoint(format!(
            "{} has a {}-bit head, evaluation asks for {want} bits",
            src.display(),
            ck.header.n_bits.unwrap_or(0)
        )));
    }
    let model = ck.hash_model()?;
    paths.audit().record(stage.as_str(), "hash_model", &src, &model.backbone.checksum())?;
    Ok((
        model,
        Provenance {
            path: src.display().to_string(),
            config_hash: ck.header.config_hash,
        },
    ))
}

/// Binarizes query and database images with the fine-tuned model and writes
/// both code files.
pub fn run_encode(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    let paths = prepare_run_dir(config, Stage::Encode)?;
    let data = load_data(config, opts, &paths)?;
    let (mut model, input) = load_finetuned(config, &paths, Stage::Encode)?;
    let bs = config.evaluate.batch_size;
    let queries = encode_role(&mut model, &data.role(&data.split.query)?, bs)?;
    let database = encode_role(&mut model, &data.role(&data.split.database)?, bs)?;
    std::fs::create_dir_all(paths.query_codes().parent().expect("has parent"))?;
    queries.save(&paths.query_codes())?;
    database.save(&paths.database_codes())?;
    let mut report = MetricsReport::new(config, Stage::Encode);
    report.input = Some(input);
    report.save(&paths.metrics(Stage::Encode))?;
    Ok(report)
}

/// mAP@N over the stored code files, the analytic random baseline and the
/// optional nearest-neighbour listing.
pub fn run_evaluate(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    let _ = opts;
    let paths = prepare_run_dir(config, Stage::Evaluate)?;
    let queries = CodeMatrix::load(&paths.query_codes())?;
    let database = CodeMatrix::load(&paths.database_codes())?;
    let bits = config.finetune_section()?.n_bits;
    if queries.k_bits() != bits || database.k_bits() != bits {
        return Err(Error::Config(format!(
            "code files hold {}/{}-bit codes, config asks for {bits}",
            queries.k_bits(),
            database.k_bits()
        )));
    }
    let n = config.evaluate.top_n;
    if n > database.len() {
        return Err(Error::Config(format!(
            "evaluate.top_n = {n} exceeds the database size {}",
            database.len()
        )));
    }
    let result = map_at_n(&queries, &database, n)?;
    let baseline = random_baseline_map(&queries, &database, n)?;
    if let Some(k) = config.evaluate.top_k {
        std::fs::write(paths.top_k(), top_k_listing(&queries, &database, k.min(database.len()))?)?;
    }
    let mut report = MetricsReport::new(config, Stage::Evaluate);
    report.map = Some(MapSummary {
        top_n: n,
        map: result.map,
        random_baseline: baseline,
        queries: queries.len(),
        database: database.len(),
    });
    report.input = Some(Provenance {
        path: paths.query_codes().display().to_string(),
        config_hash: config.config_hash(),
    });
    report.save(&paths.metrics(Stage::Evaluate))?;
    Ok(report)
}

pub fn run_encode_and_evaluate(config: &ExperimentConfig, opts: &RunOptions) -> Result<MetricsReport> {
    run_encode(config, opts)?;
    run_evaluate(config, opts)
}

/// Every stage report found under a run directory.
pub fn collect_reports(run_dir: &Path) -> Result<Vec<MetricsReport>> {
    let dir = run_dir.join("metrics");
    if !dir.is_dir() {
        return Err(Error::Missing(dir));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| MetricsReport::load(p)).collect()
}

/// Only the small CNN can be pretrained here; real teachers arrive as
/// checkpoints.
pub(crate) fn check_pretrainable(config: &ExperimentConfig) -> Result<()> {
    if config.teacher.id != TeacherId::SmallCnn || config.dataset.kind != DatasetKind::Synthetic {
        return Err(Error::Config(
            "teacher pretraining needs teacher.id = \"small-cnn\" and a synthetic dataset".into(),
        ));
    }
    let pre = config
        .teacher
        .pretrain
        .as_ref()
        .ok_or_else(|| Error::Config("missing [teacher.pretrain] section".into()))?;
    let target = config.dataset.synthetic.as_ref().expect("synthetic").seed;
    if pre.source_seed == target {
        return Err(Error::Config(
            "teacher.pretrain.source_seed must differ from the target dataset seed".into(),
        ));
    }
    if pre.epochs == 0 || pre.batch_size == 0 || !(pre.optimizer.learning_rate > 0.0) {
        return Err(Error::Config("teacher pretraining needs positive epochs, batch size and learning rate".into()));
    }
    Ok(())
}
