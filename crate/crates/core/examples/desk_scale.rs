//! Small end-to-end run on synthetic data: pretrain a stand-in teacher,
//! distill it into a narrow student, fine-tune with CSQ and evaluate.

use hashdistill::arch::{attach_hash_head, small_cnn_spec, Network, StudentLayout, TensorShape};
use hashdistill::data::{make_synthetic, InMemorySource, Preprocess, SyntheticSpec};
use hashdistill::distill::pretrain::{pretrain_classifier, PretrainConfig};
use hashdistill::distill::{train_kd, DistillConfig, FrozenTeacher, Teacher};
use hashdistill::hashing::{finetune_retrieval, FinetuneConfig, Framework};
use hashdistill::nn::Mode;
use hashdistill::optim::OptimizerConfig;
use hashdistill::retrieval::{map_at_n, random_baseline_map, CodeMatrix};
use std::time::Instant;

fn main() -> hashdistill::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kd_epochs: usize = args.get(1).map_or(30, |s| s.parse().unwrap());
    let ft_epochs: usize = args.get(2).map_or(30, |s| s.parse().unwrap());
    let size = 64;
    let input = TensorShape::new(3, size, size);
    let pre = Preprocess::imagenet(size);
    let t0 = Instant::now();

    let source = make_synthetic(&SyntheticSpec::new(10, 60, 32, 1007))?;
    let mut teacher = Network::build(&small_cnn_spec("teacher", input, [16, 32, 64], 64), 1)?;
    let labels: Vec<usize> = source.images.labels.iter().map(|l| l[0] as usize).collect();
    let out = pretrain_classifier(
        &mut teacher,
        &InMemorySource::new(&source.images.images, pre.clone()),
        &labels,
        10,
        &PretrainConfig { optimizer: OptimizerConfig::adam(1e-3), epochs: 15, batch_size: 32, seed: 1 },
    )?;
    println!("teacher acc {:.3} ({:.1}s)", out.train_accuracy, t0.elapsed().as_secs_f64());

    let target = make_synthetic(&SyntheticSpec::new(10, 60, 32, 7))?;
    let layout = StudentLayout {
        name: "student_desk".into(),
        input,
        stem_filters: 16,
        blocks_per_layer: vec![2, 3, 5, 3, 2],
        layer_filters: vec![16, 16, 32, 32, 64],
        transition_filters: vec![16, 32, 32, 32],
    };
    let mut student = Network::build(&layout.to_spec()?, 2)?;
    let all = InMemorySource::new(&target.images.images, pre.clone());
    let mut t = Teacher::Model(FrozenTeacher::new(teacher));
    let kd = train_kd(
        &mut t,
        &mut student,
        &all,
        &DistillConfig { optimizer: OptimizerConfig::adam(1e-3), epochs: kd_epochs, batch_size: 64, seed: 3, augment: false },
    )?;
    for r in &kd.history {
        println!("kd {} {:.5} {:.2}s", r.epoch, r.loss, r.seconds);
    }

    let split = &target.split;
    let train_pos = target.images.positions_of(&split.train).unwrap();
    let train = target.images.subset(&train_pos);
    let mut model = attach_hash_head(student, 16, 4)?;
    let mut cfg = FinetuneConfig::new(Framework::Csq, 16);
    cfg.optimizer = OptimizerConfig::rmsprop(1e-4);
    cfg.epochs = ft_epochs;
    cfg.batch_size = 32;
    let ft = finetune_retrieval(&mut model, &InMemorySource::new(&train.images, pre.clone()), &train.labels, 10, &cfg)?;
    for r in &ft.history {
        println!("ft {} {:.5} {:.2}s", r.epoch, r.loss, r.seconds);
    }

    let encode = |ids: &[u64], model: &mut hashdistill::arch::HashModel| -> hashdistill::Result<CodeMatrix> {
        let pos = target.images.positions_of(ids).unwrap();
        let set = target.images.subset(&pos);
        let x = pre.apply(&set.images);
        let h = model.forward(&x, Mode::Eval)?;
        CodeMatrix::from_features(h.view(), set.ids.clone(), set.labels.clone())
    };
    let q = encode(&split.query, &mut model)?;
    let db = encode(&split.database, &mut model)?;
    let m = map_at_n(&q, &db, 100)?;
    let base = random_baseline_map(&q, &db, 100)?;
    println!("mAP@100 {:.4} baseline {:.4} total {:.1}s", m.map, base, t0.elapsed().as_secs_f64());
    Ok(())
}
