use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::image::{affine_transform, Image, CHANNELS};
use super::synth::{ReferencePool, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `m` square crops from one image, as a `[m, 3, p, p]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Tensor,
    /// Top-left `(row, col)` of every crop.
    pub coords: Vec<(usize, usize)>,
    pub source_id: String,
}

impl PatchSet {
    /// Crops at the given origins.
    pub fn crop_at(img: &Image, source_id: &str, coords: &[(usize, usize)], p: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Contract("a patch set needs at least one crop".into()));
        }
        if img.height() < p || img.width() < p {
            return Err(Error::Data(format!(
                "`{source_id}` is {}x{}, smaller than patch size {p}",
                img.height(),
                img.width()
            )));
        }
        let per = CHANNELS * p * p;
        let mut data = vec![0.0; coords.len() * per];
        for (i, &(r, c)) in coords.iter().enumerate() {
            if r + p > img.height() || c + p > img.width() {
                return Err(Error::Contract(format!("crop at ({r}, {c}) leaves `{source_id}`")));
            }
            img.crop_into(r, c, p, &mut data[i * per..(i + 1) * per]);
        }
        Ok(PatchSet {
            patches: Tensor::from_parts(vec![coords.len(), CHANNELS, p, p], data),
            coords: coords.to_vec(),
            source_id: source_id.into(),
        })
    }

    /// `m` independent uniform crops.
    pub fn crop_random<R: Rng + ?Sized>(img: &Image, source_id: &str, m: usize, p: usize, rng: &mut R) -> Result<Self> {
        if img.height() < p || img.width() < p {
            return Err(Error::Data(format!(
                "`{source_id}` is {}x{}, smaller than patch size {p}",
                img.height(),
                img.width()
            )));
        }
        let coords = random_coords(img, m, p, rng);
        Self::crop_at(img, source_id, &coords, p)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn random_coords<R: Rng + ?Sized>(img: &Image, m: usize, p: usize, rng: &mut R) -> Vec<(usize, usize)> {
    (0..m)
        .map(|_| (rng.random_range(0..=img.height() - p), rng.random_range(0..=img.width() - p)))
        .collect()
}

/// Crop sets at identical origins from the image and its pixel-aligned reference.
pub fn sample_aligned_patches<R: Rng + ?Sized>(
    sample: &Sample,
    m: usize,
    p: usize,
    rng: &mut R,
) -> Result<(PatchSet, PatchSet)> {
    let Some(fr) = &sample.fr else {
        return Err(Error::Contract(format!("sample `{}` has no aligned reference", sample.id)));
    };
    let lq = PatchSet::crop_random(&sample.lq, &sample.id, m, p, rng)?;
    let fr = PatchSet::crop_at(fr, &sample.source, &lq.coords, p)?;
    Ok((lq, fr))
}

/// Where a non-aligned reference comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// A uniformly chosen pool image with unrelated content.
    ContentVariant,
    /// The sample's own pristine image, randomly rescaled and rotated.
    ContentSimilar,
}

/// Reference crops for `sample` under `mode`, cropped independently of the
/// LQ patches. The pool is only consulted for content-variant references.
pub fn sample_reference_patches<R: Rng + ?Sized>(
    sample: &Sample,
    pool: Option<&ReferencePool>,
    m: usize,
    p: usize,
    rng: &mut R,
    mode: ReferenceMode,
) -> Result<PatchSet> {
    match mode {
        ReferenceMode::ContentVariant => {
            let pool = pool.ok_or_else(|| Error::Data("content-variant references need a reference pool".into()))?;
            let candidates: Vec<usize> = (0..pool.len()).filter(|&i| pool.get(i).0 != sample.source).collect();
            if candidates.is_empty() {
                return Err(Error::Data(format!(
                    "reference pool holds no image other than `{}`",
                    sample.source
                )));
            }
            let (id, img) = pool.get(candidates[rng.random_range(0..candidates.len())]);
            PatchSet::crop_random(img, id, m, p, rng)
        }
        ReferenceMode::ContentSimilar => {
            let Some(fr) = &sample.fr else {
                return Err(Error::Contract(format!(
                    "content-similar reference needs the pristine image of `{}`",
                    sample.id
                )));
            };
            let scale: f32 = rng.random_range(0.95..=1.05);
            let degrees: f32 = rng.random_range(-5.0..=5.0);
            let warped = affine_transform(fr, scale, degrees);
            PatchSet::crop_random(&warped, &sample.source, m, p, rng)
        }
    }
}

/// LQ crops plus non-aligned reference crops.
pub fn sample_nonaligned_patches<R: Rng + ?Sized>(
    sample: &Sample,
    pool: &ReferencePool,
    m: usize,
    p: usize,
    rng: &mut R,
    mode: ReferenceMode,
) -> Result<(PatchSet, PatchSet)> {
    let lq = PatchSet::crop_random(&sample.lq, &sample.id, m, p, rng)?;
    let reference = sample_reference_patches(sample, Some(pool), m, p, rng, mode)?;
    Ok((lq, reference))
}

/// Horizontal flip followed by counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Augmentation {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Augmentation {
            flip: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        }
    }

    /// Transforms one `[3, p, p]` patch in place.
    pub fn apply(&self, patch: &mut [f32], p: usize) {
        let mut tmp = vec![0.0; p * p];
        for plane in patch.chunks_mut(p * p) {
            if self.flip {
                for row in plane.chunks_mut(p) {
                    row.reverse();
                }
            }
            for _ in 0..self.quarter_turns % 4 {
                for y in 0..p {
                    for x in 0..p {
                        tmp[y * p + x] = plane[x * p + (p - 1 - y)];
                    }
                }
                plane.copy_from_slice(&tmp);
            }
        }
    }
}

/// Random flip/rotation per patch. When `paired` is given, patch `i` of both
/// sets receives the same transform.
pub fn augment<R: Rng + ?Sized>(patches: &mut PatchSet, paired: Option<&mut PatchSet>, rng: &mut R) -> Result<()> {
    let shape = patches.patches.shape().to_vec();
    if let Some(other) = &paired {
        if other.patches.shape() != shape.as_slice() {
            return Err(Error::shape(
                "augment",
                "paired patch sets differ in shape",
                &[&shape, other.patches.shape()],
            ));
        }
    }
    let (m, p) = (shape[0], shape[2]);
    if shape[2] != shape[3] {
        return Err(Error::shape("augment", "patches must be square", &[&shape]));
    }
    let per = CHANNELS * p * p;
    let augs: Vec<Augmentation> = (0..m).map(|_| Augmentation::random(rng)).collect();
    let data = patches.patches.data_mut();
    for (i, a) in augs.iter().enumerate() {
        a.apply(&mut data[i * per..(i + 1) * per], p);
    }
    if let Some(other) = paired {
        let data = other.patches.data_mut();
        for (i, a) in augs.iter().enumerate() {
            a.apply(&mut data[i * per..(i + 1) * per], p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(p: usize) -> Vec<f32> {
        (0..3 * p * p).map(|i| i as f32).collect()
    }

    #[test]
    fn flip_twice_is_identity() {
        let orig = patch(4);
        let mut x = orig.clone();
        let a = Augmentation { flip: true, quarter_turns: 0 };
        a.apply(&mut x, 4);
        assert_ne!(x, orig);
        a.apply(&mut x, 4);
        assert_eq!(x, orig);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let orig = patch(3);
        let mut x = orig.clone();
        let a = Augmentation { flip: false, quarter_turns: 1 };
        for _ in 0..4 {
            a.apply(&mut x, 3);
        }
        assert_eq!(x, orig);
        a.apply(&mut x, 3);
        // Counter-clockwise: top-right corner moves to top-left.
        assert_eq!(x[0], orig[2]);
    }
}
