use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, Stage};
use super::config::{NarMode, TrainConfig};
use super::report::{EpochStats, TrainReport};
use crate::data::{augment, derive_seed, sample_aligned_patches, sample_reference_patches, PatchSet, ReferencePool, Sample};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{init_params, Network};
use crate::optim::{adam_step, AdamState};
use crate::params::ModelParams;
use crate::tensor::Tensor;

const TEACHER_STREAM: u64 = 0x7465_6163_6865_72;
const STUDENT_STREAM: u64 = 0x7374_7564_656e_74;

/// Called after every epoch with the stats so far and the current parameters.
pub type EpochObserver<'a> = &'a mut dyn FnMut(&EpochStats, &ModelParams) -> Option<f64>;

/// Losses of one optimizer step, plus the exact tensors each network consumed.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub label_loss: f32,
    pub distill_loss: f32,
    pub total_loss: f32,
    /// Per image: the LQ patches given to the teacher and to the student.
    pub teacher_lq: Vec<Tensor>,
    pub student_lq: Vec<Tensor>,
    pub grads: Vec<Option<Vec<f32>>>,
}

fn targets(g: &mut Graph<f32>, batch: &[&Sample]) -> Result<Var> {
    let t: Vec<f32> = batch.iter().map(|s| s.mos as f32).collect();
    Ok(g.constant(Tensor::new(&[t.len()], t)?))
}

/// One teacher step: aligned crops, pairwise augmentation, L1 on the scores.
pub fn teacher_step<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    params: &ModelParams,
    batch: &[&Sample],
    rng: &mut R,
) -> Result<StepOutcome> {
    let arch = &cfg.arch;
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, true);
    let net = Network::new(arch, &bound);
    let mut scores = Vec::with_capacity(batch.len());
    let mut inputs = Vec::with_capacity(batch.len());
    for s in batch {
        let (mut lq, mut fr) = sample_aligned_patches(s, arch.patches, arch.patch_size, rng)?;
        if cfg.augment {
            augment(&mut lq, Some(&mut fr), rng)?;
        }
        let x = g.constant(lq.patches.clone());
        let r = g.constant(fr.patches);
        scores.push(net.forward(&mut g, x, Some(r))?.score);
        inputs.push(lq.patches);
    }
    let pred = g.concat(&scores, 0)?;
    let target = targets(&mut g, batch)?;
    let loss = g.l1_loss(pred, target)?;
    let mut grads = g.backward(loss)?;
    let value = g.value(loss).item();
    Ok(StepOutcome {
        label_loss: value,
        distill_loss: 0.0,
        total_loss: value,
        teacher_lq: inputs,
        student_lq: Vec::new(),
        grads: bound.collect(&mut grads),
    })
}

fn check_teacher_data(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.fr.is_none()) {
        return Err(Error::Data(format!(
            "sample `{}` has no aligned reference; the teacher needs one for every sample",
            s.id
        )));
    }
    Ok(())
}

/// Shared epoch loop: shuffles, batches, steps and records mean losses.
fn run_epochs(
    cfg: &TrainConfig,
    params: &mut ModelParams,
    samples: &[Sample],
    stream: u64,
    mut step: impl FnMut(&ModelParams, &[&Sample], &mut ChaCha8Rng) -> Result<StepOutcome>,
    mut observer: Option<EpochObserver<'_>>,
) -> Result<TrainReport> {
    let mut adam = AdamState::new(params, cfg.adam);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ stream, epoch as u64));
        order.shuffle(&mut rng);
        let (mut label, mut distill, mut total) = (0.0f64, 0.0f64, 0.0f64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let out = step(params, &batch, &mut rng)?;
            adam_step(params, &out.grads, &mut adam)?;
            let w = batch.len() as f64;
            label += out.label_loss as f64 * w;
            distill += out.distill_loss as f64 * w;
            total += out.total_loss as f64 * w;
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch,
            label: label / n,
            distill: distill / n,
            total: total / n,
        };
        report.epochs.push(stats);
        if let Some(obs) = observer.as_mut() {
            if let Some(v) = obs(&stats, params) {
                report.snapshots.push((epoch, v));
            }
        }
    }
    Ok(report)
}

/// Trains the full-reference teacher with an L1 label loss.
pub fn train_teacher(samples: &[Sample], cfg: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    train_teacher_observed(samples, cfg, None)
}

pub fn train_teacher_observed(
    samples: &[Sample],
    cfg: &TrainConfig,
    observer: Option<EpochObserver<'_>>,
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    if !cfg.arch.reference_path {
        return Err(Error::Config("the teacher needs reference_path = true".into()));
    }
    check_teacher_data(samples)?;
    let mut params = init_params(&cfg.arch, cfg.seed)?;
    let report = run_epochs(
        cfg,
        &mut params,
        samples,
        TEACHER_STREAM,
        |p, batch, rng| teacher_step(cfg, p, batch, rng),
        observer,
    )?;
    let ckpt = Checkpoint {
        arch: cfg.arch.clone(),
        stage: Stage::Teacher,
        epoch: cfg.epochs,
        seed: cfg.seed,
        final_loss: report.epochs.last().map_or(0.0, |e| e.label as f32),
        nar_mode: NarMode::AlignedFr,
        params,
    };
    Ok((ckpt, report))
}

/// Inputs of one image within a distillation step.
struct DistillItem {
    lq: PatchSet,
    fr: Option<PatchSet>,
    reference: Option<PatchSet>,
}

fn prepare_item<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    sample: &Sample,
    pool: Option<&ReferencePool>,
    rng: &mut R,
) -> Result<DistillItem> {
    let (m, p) = (cfg.arch.patches, cfg.arch.patch_size);
    let needs_fr = cfg.kd_enabled || cfg.nar_mode == NarMode::AlignedFr;
    let (mut lq, mut fr) = if needs_fr {
        let (lq, fr) = sample_aligned_patches(sample, m, p, rng)?;
        (lq, Some(fr))
    } else {
        (PatchSet::crop_random(&sample.lq, &sample.id, m, p, rng)?, None)
    };
    if cfg.augment {
        augment(&mut lq, fr.as_mut(), rng)?;
    }
    let reference = match cfg.nar_mode {
        NarMode::None => None,
        NarMode::AlignedFr => fr.clone(),
        NarMode::ContentVariant | NarMode::ContentSimilar => {
            let mode = cfg.nar_mode.as_reference_mode().unwrap();
            let mut r = sample_reference_patches(sample, pool, m, p, rng, mode)?;
            if cfg.augment {
                augment(&mut r, None, rng)?;
            }
            Some(r)
        }
    };
    Ok(DistillItem { lq, fr, reference })
}

/// One student step. With KD enabled the frozen teacher runs forward-only on
/// the aligned pair in its own graph; its difference-encoder features enter the
/// student graph as constants, so no gradient can reach the teacher.
pub fn distill_step<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    teacher: &ModelParams,
    student: &ModelParams,
    batch: &[&Sample],
    pool: Option<&ReferencePool>,
    rng: &mut R,
) -> Result<StepOutcome> {
    let arch = &cfg.arch;
    let mut g = Graph::<f32>::new();
    let bound = student.bind(&mut g, true);
    let net = Network::new(arch, &bound);

    let mut tg = Graph::<f32>::new();
    let teacher_bound = teacher.bind(&mut tg, false);
    let teacher_arch = {
        let mut a = arch.clone();
        a.reference_path = true;
        a
    };
    let teacher_net = Network::new(&teacher_arch, &teacher_bound);
    let teacher_base = tg.len();

    let k = arch.depth_diff;
    let mut scores = Vec::with_capacity(batch.len());
    let mut student_feats: Vec<Vec<Var>> = alloc::vec![Vec::new(); k];
    let mut teacher_feats: Vec<Vec<Var>> = alloc::vec![Vec::new(); k];
    let mut teacher_lq = Vec::new();
    let mut student_lq = Vec::with_capacity(batch.len());
    for s in batch {
        let item = prepare_item(cfg, s, pool, rng)?;
        let x = g.constant(item.lq.patches.clone());
        let r = item.reference.map(|r| g.constant(r.patches));
        let out = net.forward(&mut g, x, r)?;
        scores.push(out.score);
        student_lq.push(item.lq.patches.clone());

        if cfg.kd_enabled {
            let fr = item.fr.expect("aligned crops are drawn whenever KD is enabled");
            let tx = tg.constant(item.lq.patches.clone());
            let tr = tg.constant(fr.patches);
            let tout = teacher_net.forward(&mut tg, tx, Some(tr))?;
            if tout.diff_features.len() != k || out.diff_features.len() != k {
                return Err(Error::DistillationWiring {
                    layer: tout.diff_features.len().min(out.diff_features.len()),
                    detail: format!(
                        "teacher yields {} features, student {}",
                        tout.diff_features.len(),
                        out.diff_features.len()
                    ),
                });
            }
            for j in 0..k {
                let tf = tg.value(tout.diff_features[j]);
                if tg.requires_grad(tout.diff_features[j]) {
                    return Err(Error::Internal("teacher features are attached to a gradient path".into()));
                }
                let n = tf.numel();
                let c = g.constant(tf.reshape(&[1, n])?);
                teacher_feats[j].push(c);
                student_feats[j].push(g.reshape(out.diff_features[j], &[1, n])?);
            }
            teacher_lq.push(tg.value(tx).clone());
            tg.truncate(teacher_base);
        }
    }

    let pred = g.concat(&scores, 0)?;
    let target = targets(&mut g, batch)?;
    let label = g.l1_loss(pred, target)?;
    let (total, distill_value) = if cfg.kd_enabled {
        let fa: Vec<Var> = student_feats.iter().map(|v| g.concat(v, 0)).collect::<Result<_>>()?;
        let fb: Vec<Var> = teacher_feats.iter().map(|v| g.concat(v, 0)).collect::<Result<_>>()?;
        let d = g.feature_l2_loss(&fa, &fb, cfg.distill_squared)?;
        let dv = g.value(d).item();
        let wd = g.scale(d, cfg.distill_weight)?;
        (g.add(wd, label)?, dv)
    } else {
        (label, 0.0)
    };
    let mut grads = g.backward(total)?;
    Ok(StepOutcome {
        label_loss: g.value(label).item(),
        distill_loss: distill_value,
        total_loss: g.value(total).item(),
        teacher_lq,
        student_lq,
        grads: bound.collect(&mut grads),
    })
}

/// Trains a student against a frozen teacher checkpoint.
pub fn distill_student(
    samples: &[Sample],
    pool: Option<&ReferencePool>,
    teacher: &Checkpoint,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    distill_student_observed(samples, pool, teacher, cfg, None)
}

pub fn distill_student_observed(
    samples: &[Sample],
    pool: Option<&ReferencePool>,
    teacher: &Checkpoint,
    cfg: &TrainConfig,
    observer: Option<EpochObserver<'_>>,
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    if teacher.stage != Stage::Teacher {
        return Err(Error::checkpoint("stage", format!("expected a teacher checkpoint, got {}", teacher.stage)));
    }
    if !teacher.arch.same_backbone_and_encoders(&cfg.arch) || !teacher.arch.reference_path {
        return Err(Error::Config(
            "teacher checkpoint architecture differs from the student configuration".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let needs_fr = cfg.kd_enabled || matches!(cfg.nar_mode, NarMode::AlignedFr | NarMode::ContentSimilar);
    if needs_fr {
        check_teacher_data(samples)?;
    }
    if cfg.nar_mode == NarMode::ContentVariant {
        let pool = pool.ok_or_else(|| Error::Data("content-variant training needs a reference pool".into()))?;
        pool.check_patch_size(cfg.arch.patch_size)?;
    }

    let before = teacher.params.checksum();
    let mut params = init_params(&cfg.arch, cfg.seed)?;
    let report = run_epochs(
        cfg,
        &mut params,
        samples,
        STUDENT_STREAM,
        |p, batch, rng| distill_step(cfg, &teacher.params, p, batch, pool, rng),
        observer,
    )?;
    if teacher.params.checksum() != before {
        return Err(Error::Internal("teacher parameters changed during distillation".into()));
    }
    let ckpt = Checkpoint {
        arch: cfg.arch.clone(),
        stage: Stage::Student,
        epoch: cfg.epochs,
        seed: cfg.seed,
        final_loss: report.epochs.last().map_or(0.0, |e| e.total as f32),
        nar_mode: cfg.nar_mode,
        params,
    };
    Ok((ckpt, report))
}
