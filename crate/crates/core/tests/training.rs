use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cvrkd_core::data::{build_synthetic_dataset, DatasetConfig, Sample, SyntheticDataset};
use cvrkd_core::metrics::{evaluate, EvalOptions};
use cvrkd_core::model::{init_params, ArchConfig};
use cvrkd_core::train::{
    distill_step, distill_student, teacher_step, train_teacher, Checkpoint, NarMode, Stage, TrainConfig,
};
use cvrkd_core::{AdamConfig, Error};

fn dataset() -> SyntheticDataset {
    build_synthetic_dataset(&DatasetConfig {
        images: 8,
        test_images: 4,
        distortions_per_image: 2,
        pool_images: 3,
        height: 64,
        width: 64,
        seed: 11,
    })
    .unwrap()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        arch: ArchConfig::tiny(),
        epochs,
        batch_size: 4,
        adam: AdamConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        seed: 5,
        ..TrainConfig::default()
    }
}

fn refs(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().collect()
}

#[test]
fn teacher_loss_decreases() {
    let ds = dataset();
    let (ckpt, report) = train_teacher(&ds.train, &tiny_config(6)).unwrap();
    let losses = report.label_losses();
    assert_eq!(losses.len(), 6);
    assert!(losses[5] < losses[0], "{losses:?}");
    assert_eq!(ckpt.stage, Stage::Teacher);
    assert_eq!(ckpt.epoch, 6);
    assert!(report.to_csv().starts_with("epoch,label_loss,distill_loss,total_loss\n1,"));
}

#[test]
fn zero_epochs_keeps_initialization() {
    let ds = dataset();
    let cfg = tiny_config(0);
    let (ckpt, report) = train_teacher(&ds.train, &cfg).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(ckpt.params, init_params(&cfg.arch, cfg.seed).unwrap());
}

#[test]
fn training_is_deterministic() {
    let ds = dataset();
    let (a, ra) = train_teacher(&ds.train, &tiny_config(2)).unwrap();
    let (b, rb) = train_teacher(&ds.train, &tiny_config(2)).unwrap();
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_eq!(ra.epochs, rb.epochs);
    let mut other = tiny_config(2);
    other.seed = 6;
    let (c, _) = train_teacher(&ds.train, &other).unwrap();
    assert_ne!(a.params.checksum(), c.params.checksum());
}

#[test]
fn teacher_is_frozen_during_distillation() {
    let ds = dataset();
    let (teacher, _) = train_teacher(&ds.train, &tiny_config(1)).unwrap();
    let before = teacher.params.clone();
    let (student, report) = distill_student(&ds.train, Some(&ds.pool), &teacher, &tiny_config(2)).unwrap();
    assert_eq!(teacher.params, before);
    assert_eq!(student.stage, Stage::Student);
    assert_ne!(student.params, before);
    assert!(report.distill_losses().iter().all(|&d| d > 0.0));
}

#[test]
fn teacher_and_student_share_lq_crops() {
    let ds = dataset();
    let cfg = tiny_config(1);
    let teacher = init_params(&cfg.arch, 1).unwrap();
    let student = init_params(&cfg.arch, 2).unwrap();
    let batch = refs(&ds.train[..3]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let out = distill_step(&cfg, &teacher, &student, &batch, Some(&ds.pool), &mut rng).unwrap();
    assert_eq!(out.teacher_lq.len(), 3);
    assert_eq!(out.teacher_lq, out.student_lq);
}

#[test]
fn total_loss_recomposes() {
    let ds = dataset();
    let batch = refs(&ds.train[..4]);
    for w in [0.0f32, 0.5, 2.0] {
        let mut cfg = tiny_config(1);
        cfg.distill_weight = w;
        let teacher = init_params(&cfg.arch, 1).unwrap();
        let student = init_params(&cfg.arch, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = distill_step(&cfg, &teacher, &student, &batch, Some(&ds.pool), &mut rng).unwrap();
        let expect = w * out.distill_loss + out.label_loss;
        assert!((out.total_loss - expect).abs() <= 1e-5 * expect.abs().max(1.0), "w={w}");
        assert!(out.distill_loss > 0.0);
    }
    let mut cfg = tiny_config(1);
    cfg.kd_enabled = false;
    let p = init_params(&cfg.arch, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = distill_step(&cfg, &p, &p, &batch, Some(&ds.pool), &mut rng).unwrap();
    assert_eq!(out.distill_loss, 0.0);
    assert_eq!(out.total_loss, out.label_loss);
    assert!(out.teacher_lq.is_empty());
}

#[test]
fn identical_networks_on_aligned_pairs_have_zero_distillation_loss() {
    let ds = dataset();
    let mut cfg = tiny_config(1);
    cfg.nar_mode = NarMode::AlignedFr;
    let p = init_params(&cfg.arch, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = distill_step(&cfg, &p, &p, &refs(&ds.train[..4]), None, &mut rng).unwrap();
    assert_eq!(out.distill_loss, 0.0);
}

#[test]
fn teacher_step_reports_label_loss_only() {
    let ds = dataset();
    let cfg = tiny_config(1);
    let p = init_params(&cfg.arch, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = teacher_step(&cfg, &p, &refs(&ds.train[..2]), &mut rng).unwrap();
    assert_eq!(out.total_loss, out.label_loss);
    assert_eq!(out.grads.len(), p.len());
    assert!(out.grads.iter().all(Option::is_some));
}

#[test]
fn distillation_rejects_wrong_inputs() {
    let ds = dataset();
    let cfg = tiny_config(1);
    let student_ckpt = Checkpoint {
        arch: cfg.arch.clone(),
        stage: Stage::Student,
        epoch: 0,
        seed: 0,
        final_loss: 0.0,
        nar_mode: NarMode::ContentVariant,
        params: init_params(&cfg.arch, 0).unwrap(),
    };
    assert!(matches!(
        distill_student(&ds.train, Some(&ds.pool), &student_ckpt, &cfg),
        Err(Error::Checkpoint { .. })
    ));
    let mut teacher = student_ckpt.clone();
    teacher.stage = Stage::Teacher;
    assert!(matches!(distill_student(&ds.train, None, &teacher, &cfg), Err(Error::Data(_))));
    let mut other = cfg.clone();
    other.arch.depth_diff = 3;
    assert!(matches!(
        distill_student(&ds.train, Some(&ds.pool), &teacher, &other),
        Err(Error::Config(_))
    ));
    let mut no_fr = ds.train.clone();
    no_fr[0].fr = None;
    assert!(matches!(train_teacher(&no_fr, &cfg), Err(Error::Data(_))));
}

#[test]
fn no_reference_baseline_trains_and_evaluates_without_variance() {
    let ds = dataset();
    let cfg = tiny_config(1).no_reference();
    let teacher = Checkpoint {
        arch: ArchConfig::tiny(),
        stage: Stage::Teacher,
        epoch: 0,
        seed: 0,
        final_loss: 0.0,
        nar_mode: NarMode::AlignedFr,
        params: init_params(&ArchConfig::tiny(), 0).unwrap(),
    };
    let (student, _) = distill_student(&ds.train, None, &teacher, &cfg).unwrap();
    let opts = EvalOptions {
        shuffles: 3,
        ..EvalOptions::default()
    };
    let rep = evaluate(&cfg.arch, &student.params, &ds.test, None, &opts).unwrap();
    assert_eq!(rep.srcc_std, 0.0);
    assert_eq!(rep.per_shuffle.len(), 3);
}

#[test]
fn evaluation_is_deterministic_and_single_shuffle_has_no_spread() {
    let ds = dataset();
    let arch = ArchConfig::tiny();
    let p = init_params(&arch, 3).unwrap();
    let one = EvalOptions {
        shuffles: 1,
        ..EvalOptions::default()
    };
    let r1 = evaluate(&arch, &p, &ds.test, Some(&ds.pool), &one).unwrap();
    assert_eq!(r1.srcc_std, 0.0);
    assert_eq!(r1.srcc, r1.srcc_mean);
    let many = EvalOptions {
        shuffles: 4,
        ..EvalOptions::default()
    };
    let a = evaluate(&arch, &p, &ds.test, Some(&ds.pool), &many).unwrap();
    let b = evaluate(&arch, &p, &ds.test, Some(&ds.pool), &many).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_shuffle[0], r1.per_shuffle[0]);
    assert_eq!(a.predictions.len(), ds.test.len());
}
