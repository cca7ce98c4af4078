use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use super::distort::{apply_distortion, synthetic_mos, DistortionKind, DistortionSpec};
use super::image::{Image, CHANNELS};
use crate::error::{Error, Result};

pub const MIN_SYNTHETIC_SIDE: usize = 64;

/// Procedural pristine image: smooth colour gradients, band-limited texture
/// and a few hard-edged shapes.
pub fn generate_synthetic_hq(seed: u64, height: usize, width: usize) -> Result<Image> {
    if height < MIN_SYNTHETIC_SIDE || width < MIN_SYNTHETIC_SIDE {
        return Err(Error::Data(format!(
            "synthetic images need at least {MIN_SYNTHETIC_SIDE}x{MIN_SYNTHETIC_SIDE}, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f32, width as f32);
    let mut data = vec![0.0f32; CHANNELS * height * width];

    // Low-frequency background per channel.
    for c in 0..CHANNELS {
        let base: f32 = rng.random_range(0.2..0.8);
        let gy: f32 = rng.random_range(-0.3..0.3);
        let gx: f32 = rng.random_range(-0.3..0.3);
        let freq: f32 = rng.random_range(0.5..2.0);
        let phase: f32 = rng.random_range(0.0..2.0 * PI);
        let amp: f32 = rng.random_range(0.05..0.15);
        let plane = &mut data[c * height * width..(c + 1) * height * width];
        for y in 0..height {
            for x in 0..width {
                let (v, u) = (y as f32 / hf, x as f32 / wf);
                plane[y * width + x] = base + gy * (v - 0.5) + gx * (u - 0.5)
                    + amp * libm::sinf(2.0 * PI * freq * (u + v) + phase);
            }
        }
    }

    // Band-limited texture shared across channels with per-channel gains.
    for _ in 0..6 {
        let freq: f32 = rng.random_range(4.0..12.0);
        let angle: f32 = rng.random_range(0.0..PI);
        let phase: f32 = rng.random_range(0.0..2.0 * PI);
        let amp: f32 = rng.random_range(0.02..0.07);
        let gains: [f32; CHANNELS] = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
        let (ca, sa) = (libm::cosf(angle), libm::sinf(angle));
        for y in 0..height {
            for x in 0..width {
                let t = (x as f32 / wf) * ca + (y as f32 / hf) * sa;
                let v = amp * libm::sinf(2.0 * PI * freq * t + phase);
                for (c, g) in gains.iter().enumerate() {
                    data[(c * height + y) * width + x] += g * v;
                }
            }
        }
    }

    // Hard-edged rectangles and discs.
    let shapes = rng.random_range(2..5);
    for _ in 0..shapes {
        let colour: [f32; CHANNELS] = [rng.random(), rng.random(), rng.random()];
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let ry = rng.random_range(0.08..0.25) * hf;
        let rx = rng.random_range(0.08..0.25) * wf;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f32 - cy) / ry;
                let dx = (x as f32 - cx) / rx;
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    for (c, &v) in colour.iter().enumerate() {
                        data[(c * height + y) * width + x] = v;
                    }
                }
            }
        }
    }
    Ok(Image::from_clamped(height, width, data))
}

/// One labelled image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// Identifier of the pristine content this sample derives from.
    pub source: String,
    pub lq: Image,
    /// Pixel-aligned original of `lq`, when known.
    pub fr: Option<Arc<Image>>,
    /// Quality score in `[0, 100]`.
    pub mos: f64,
    pub distortion: Option<DistortionSpec>,
}

impl Sample {
    pub fn new(id: String, source: String, lq: Image, fr: Option<Arc<Image>>, mos: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&mos) {
            return Err(Error::Data(format!("sample `{id}`: mos {mos} outside [0, 100]")));
        }
        if let Some(fr) = &fr {
            if (fr.height(), fr.width()) != (lq.height(), lq.width()) {
                return Err(Error::Data(format!(
                    "sample `{id}`: reference is {}x{} but image is {}x{}",
                    fr.height(),
                    fr.width(),
                    lq.height(),
                    lq.width()
                )));
            }
        }
        Ok(Sample {
            id,
            source,
            lq,
            fr,
            mos,
            distortion: None,
        })
    }
}

/// High-quality images from which non-aligned references are drawn.
#[derive(Debug, Clone)]
pub struct ReferencePool {
    images: Vec<(String, Arc<Image>)>,
}

impl ReferencePool {
    pub fn new(images: Vec<(String, Arc<Image>)>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("reference pool is empty".into()));
        }
        Ok(ReferencePool { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, i: usize) -> (&str, &Arc<Image>) {
        let (id, img) = &self.images[i];
        (id, img)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Image>)> {
        self.images.iter().map(|(id, img)| (id.as_str(), img))
    }

    /// Every image must admit a `p×p` crop.
    pub fn check_patch_size(&self, p: usize) -> Result<()> {
        match self.images.iter().find(|(_, img)| img.height() < p || img.width() < p) {
            Some((id, img)) => Err(Error::Data(format!(
                "reference `{id}` is {}x{}, smaller than patch size {p}",
                img.height(),
                img.width()
            ))),
            None => Ok(()),
        }
    }

    /// The same pool with every image degraded at `severity` by a randomly
    /// chosen distortion kind.
    pub fn degraded(&self, severity: f64, seed: u64) -> Result<Self> {
        let mut images = Vec::with_capacity(self.images.len());
        for (i, (id, img)) in self.images.iter().enumerate() {
            let s = derive_seed(seed, i as u64);
            let kind = DistortionKind::ALL[(s % 4) as usize];
            let spec = DistortionSpec::new(kind, severity, s)?;
            images.push((id.clone(), Arc::new(apply_distortion(img, &spec))));
        }
        ReferencePool::new(images)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    /// Pristine images shared between train and test (by content).
    pub images: usize,
    /// Of `images`, how many go to the test split.
    pub test_images: usize,
    pub distortions_per_image: usize,
    /// Extra pristine images forming the reference pool.
    pub pool_images: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            images: 400,
            test_images: 100,
            distortions_per_image: 4,
            pool_images: 50,
            height: 64,
            width: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub pool: ReferencePool,
    /// Pristine images in content order, train contents first.
    pub pristine: Vec<(String, Arc<Image>)>,
}

impl SyntheticDataset {
    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.test)
    }
}

/// Pristine content ids are `img####`, distorted samples `img####_d#`, pool
/// entries `ref####`. Splitting is by content, so no pristine image is
/// shared between train and test.
pub fn build_synthetic_dataset(cfg: &DatasetConfig) -> Result<SyntheticDataset> {
    if cfg.images == 0 {
        return Err(Error::Data("a synthetic dataset needs at least 1 pristine image".into()));
    }
    if cfg.test_images >= cfg.images {
        return Err(Error::Data(format!(
            "test_images must be in 0..{}, got {}",
            cfg.images, cfg.test_images
        )));
    }
    if cfg.pool_images == 0 {
        return Err(Error::Data("pool_images must be >= 1".into()));
    }
    let n_train = cfg.images - cfg.test_images;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut pristine = Vec::with_capacity(cfg.images);
    for i in 0..cfg.images {
        let source = format!("img{i:04}");
        let hq = Arc::new(generate_synthetic_hq(derive_seed(cfg.seed, i as u64), cfg.height, cfg.width)?);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5eed_d157, i as u64));
        for k in 0..cfg.distortions_per_image {
            let kind = DistortionKind::ALL[rng.random_range(0..DistortionKind::ALL.len())];
            let severity: f64 = rng.random_range(0.0..1.0);
            let spec = DistortionSpec::new(kind, severity, rng.random())?;
            let mut sample = Sample::new(
                format!("{source}_d{k}"),
                source.clone(),
                apply_distortion(&hq, &spec),
                Some(hq.clone()),
                synthetic_mos(&spec),
            )?;
            sample.distortion = Some(spec);
            if i < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
        pristine.push((source, hq));
    }
    let mut refs = Vec::with_capacity(cfg.pool_images);
    for j in 0..cfg.pool_images {
        let img = generate_synthetic_hq(derive_seed(cfg.seed ^ 0x0000_9001, j as u64), cfg.height, cfg.width)?;
        refs.push((format!("ref{j:04}"), Arc::new(img)));
    }
    Ok(SyntheticDataset {
        train,
        test,
        pool: ReferencePool::new(refs)?,
        pristine,
    })
}
