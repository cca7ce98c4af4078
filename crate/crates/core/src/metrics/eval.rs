use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::logistic::{plcc, FitOptions};
use super::rank::{krcc, srcc};
use crate::data::{derive_seed, sample_reference_patches, PatchSet, ReferencePool, Sample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{ArchConfig, Network};
use crate::params::ModelParams;
use crate::tensor::Tensor;
use crate::train::NarMode;

const REFERENCE_STREAM: u64 = 0x7265_6665_7265_6e63;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Number of independent reference draws.
    pub shuffles: usize,
    pub seed: u64,
    pub reference: NarMode,
    pub fit: FitOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            shuffles: 10,
            seed: 0,
            reference: NarMode::ContentVariant,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleMetrics {
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Metrics of the first shuffle.
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub per_shuffle: Vec<ShuffleMetrics>,
    pub srcc_mean: f64,
    /// Population standard deviation of the per-shuffle SRCC.
    pub srcc_std: f64,
    pub plcc_mean: f64,
    pub krcc_mean: f64,
    /// Predictions of the first shuffle, in sample order.
    pub predictions: Vec<f64>,
}

impl EvalReport {
    pub fn from_shuffles(per_shuffle: Vec<ShuffleMetrics>, predictions: Vec<f64>) -> Result<Self> {
        let Some(first) = per_shuffle.first().copied() else {
            return Err(Error::Contract("an evaluation needs at least one shuffle".into()));
        };
        let n = per_shuffle.len() as f64;
        // Sums run over offsets from the first shuffle, so identical shuffles
        // give exactly their value and a zero std.
        let offset_mean = |f: fn(&ShuffleMetrics) -> f64| per_shuffle.iter().map(|s| f(s) - f(&first)).sum::<f64>() / n;
        let mean = |f: fn(&ShuffleMetrics) -> f64| f(&first) + offset_mean(f);
        let srcc_mean = mean(|s| s.srcc);
        let shift = offset_mean(|s| s.srcc);
        let var = per_shuffle
            .iter()
            .map(|s| {
                let d = s.srcc - first.srcc - shift;
                d * d
            })
            .sum::<f64>()
            / n;
        Ok(EvalReport {
            n_samples: predictions.len(),
            srcc: first.srcc,
            plcc: first.plcc,
            krcc: first.krcc,
            srcc_mean,
            srcc_std: libm::sqrt(var),
            plcc_mean: mean(|s| s.plcc),
            krcc_mean: mean(|s| s.krcc),
            per_shuffle,
            predictions,
        })
    }

    /// `shuffle,srcc,plcc,krcc` rows followed by `summary,<mean>,<std>,-`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shuffle,srcc,plcc,krcc\n");
        for (i, s) in self.per_shuffle.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", s.srcc, s.plcc, s.krcc));
        }
        out.push_str(&format!("summary,{:.6},{:.6},-\n", self.srcc_mean, self.srcc_std));
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "SRCC={:.3}±{:.3} PLCC={:.3} KRCC={:.3}",
            self.srcc_mean, self.srcc_std, self.plcc_mean, self.krcc_mean
        )
    }
}

/// Correlations of one prediction vector against the labels.
pub fn score_metrics(pred: &[f64], gt: &[f64], fit: &FitOptions) -> Result<ShuffleMetrics> {
    Ok(ShuffleMetrics {
        srcc: srcc(pred, gt)?,
        plcc: plcc(pred, gt, fit)?.0,
        krcc: krcc(pred, gt)?,
    })
}

/// Scores every sample `opts.shuffles` times with freshly drawn references.
///
/// LQ crops depend only on `(seed, sample)`, so a network without a reference
/// path yields identical shuffles. References depend on `(seed, shuffle, sample)`.
pub fn evaluate(
    arch: &ArchConfig,
    params: &ModelParams,
    samples: &[Sample],
    pool: Option<&ReferencePool>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    arch.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate: no samples".into()));
    }
    if opts.shuffles == 0 {
        return Err(Error::Config("shuffles must be >= 1".into()));
    }
    let mode = if arch.reference_path { opts.reference } else { NarMode::None };
    if arch.reference_path && mode == NarMode::None {
        return Err(Error::Config("this network needs a reference; nar_mode = none is not allowed".into()));
    }
    if mode == NarMode::ContentVariant && pool.is_none() {
        return Err(Error::Data("content-variant evaluation needs a reference pool".into()));
    }
    let (m, p) = (arch.patches, arch.patch_size);

    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, false);
    let net = Network::new(arch, &bound);
    let base = g.len();

    // The LQ path does not depend on the reference; run it once per sample.
    let mut lq_sets = Vec::with_capacity(samples.len());
    let mut lq_cache: Vec<(Tensor, Tensor)> = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, i as u64));
        let lq = PatchSet::crop_random(&s.lq, &s.id, m, p, &mut rng)?;
        let x = g.constant(lq.patches.clone());
        let (tokens, v) = net.lq_path(&mut g, x)?;
        lq_cache.push((g.value(tokens).clone(), g.value(v).clone()));
        g.truncate(base);
        lq_sets.push(lq);
    }

    let gt: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    let mut per_shuffle = Vec::with_capacity(opts.shuffles);
    let mut first_predictions = Vec::new();
    for shuffle in 0..opts.shuffles {
        let stream = derive_seed(opts.seed ^ REFERENCE_STREAM, shuffle as u64);
        let mut pred = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let reference = match mode {
                NarMode::None => None,
                NarMode::AlignedFr => {
                    let fr = s.fr.as_ref().ok_or_else(|| {
                        Error::Data(format!("sample `{}` has no aligned reference", s.id))
                    })?;
                    Some(PatchSet::crop_at(fr, &s.source, &lq_sets[i].coords, p)?)
                }
                NarMode::ContentVariant | NarMode::ContentSimilar => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, i as u64));
                    let rm = mode.as_reference_mode().unwrap();
                    Some(sample_reference_patches(s, pool, m, p, &mut rng, rm)?)
                }
            };
            let tokens = g.constant(lq_cache[i].0.clone());
            let v = g.constant(lq_cache[i].1.clone());
            let r = reference.map(|r| g.constant(r.patches));
            let out = net.reference_head(&mut g, tokens, v, r)?;
            pred.push(g.value(out.score).item() as f64);
            g.truncate(base);
        }
        per_shuffle.push(score_metrics(&pred, &gt, &opts.fit)?);
        if shuffle == 0 {
            first_predictions = pred;
        }
    }
    EvalReport::from_shuffles(per_shuffle, first_predictions)
}
