use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::image::{bilinear, reflect, Image, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DistortionKind {
    GaussianNoise,
    GaussianBlur,
    DownUpResample,
    BlockQuantize,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::GaussianNoise,
        DistortionKind::GaussianBlur,
        DistortionKind::DownUpResample,
        DistortionKind::BlockQuantize,
    ];

    /// Curvature of the pseudo-MOS curve for this kind.
    pub fn mos_exponent(self) -> f64 {
        match self {
            DistortionKind::GaussianNoise => 1.0,
            DistortionKind::GaussianBlur => 0.8,
            DistortionKind::DownUpResample => 1.2,
            DistortionKind::BlockQuantize => 0.9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::GaussianNoise => "gaussian_noise",
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::DownUpResample => "down_up_resample",
            DistortionKind::BlockQuantize => "block_quantize",
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown distortion kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// In `[0, 1]`; 0 is the identity.
    pub severity: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, severity: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::Data(format!("severity {severity} outside [0, 1]")));
        }
        Ok(DistortionSpec { kind, severity, seed })
    }
}

/// Pseudo-MOS `100·(1 − severity)^γ` with a per-kind exponent.
pub fn synthetic_mos(spec: &DistortionSpec) -> f64 {
    100.0 * libm::pow(1.0 - spec.severity, spec.kind.mos_exponent())
}

const BLOCK: usize = 8;

/// Applies `spec` to `img`. Severity 0 returns an exact copy.
pub fn apply_distortion(img: &Image, spec: &DistortionSpec) -> Image {
    if spec.severity <= 0.0 {
        return img.clone();
    }
    let sev = spec.severity as f32;
    let (h, w) = (img.height(), img.width());
    let data = match spec.kind {
        DistortionKind::GaussianNoise => {
            let sigma = 0.25 * sev;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            img.data()
                .iter()
                .map(|&v| {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    v + sigma * z
                })
                .collect()
        }
        DistortionKind::GaussianBlur => blur(img, 3.0 * sev),
        DistortionKind::DownUpResample => {
            let factor = 1.0 + 3.0 * sev;
            let dh = ((libm::roundf(h as f32 / factor)) as usize).max(1);
            let dw = ((libm::roundf(w as f32 / factor)) as usize).max(1);
            let mut out = Vec::with_capacity(img.data().len());
            for c in 0..CHANNELS {
                let small = resize_plane(img.plane(c), h, w, dh, dw);
                out.extend(resize_plane(&small, dh, dw, h, w));
            }
            out
        }
        DistortionKind::BlockQuantize => {
            let mut out = img.data().to_vec();
            for c in 0..CHANNELS {
                let plane = &mut out[c * h * w..(c + 1) * h * w];
                for by in (0..h).step_by(BLOCK) {
                    for bx in (0..w).step_by(BLOCK) {
                        let (ey, ex) = ((by + BLOCK).min(h), (bx + BLOCK).min(w));
                        let mut sum = 0.0;
                        for y in by..ey {
                            sum += plane[y * w + bx..y * w + ex].iter().sum::<f32>();
                        }
                        let mean = sum / ((ey - by) * (ex - bx)) as f32;
                        for y in by..ey {
                            for v in &mut plane[y * w + bx..y * w + ex] {
                                *v = (1.0 - sev) * *v + sev * mean;
                            }
                        }
                    }
                }
            }
            out
        }
    };
    Image::from_clamped(h, w, data)
}

fn blur(img: &Image, sigma: f32) -> Vec<f32> {
    let radius = (libm::ceilf(3.0 * sigma) as usize).max(1);
    let mut kernel: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            libm::expf(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0.0; img.data().len()];
    let mut tmp = vec![0.0; h * w];
    for c in 0..CHANNELS {
        let src = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * src[y * w + reflect(x as isize + i as isize - radius as isize, w)])
                    .sum();
            }
        }
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp[reflect(y as isize + i as isize - radius as isize, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Bilinear resize with pixel-centre alignment.
fn resize_plane(src: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    let sy = h as f32 / nh as f32;
    let sx = w as f32 / nw as f32;
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        for x in 0..nw {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            out.push(bilinear(src, h, w, fy, fx));
        }
    }
    out
}
