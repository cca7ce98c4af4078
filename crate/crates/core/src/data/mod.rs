//! Images, synthetic content and distortions, pseudo-MOS labels, datasets
//! and the patch-sampling regimes used for training and evaluation.

mod distort;
mod image;
mod manifest;
mod patches;
mod synth;

pub use distort::{apply_distortion, synthetic_mos, DistortionKind, DistortionSpec};
pub use image::{affine_transform, Image};
pub use manifest::{parse_manifest, render_manifest, ManifestRow, MANIFEST_HEADER};
pub use patches::{
    augment, sample_aligned_patches, sample_nonaligned_patches, sample_reference_patches, Augmentation, PatchSet,
    ReferenceMode,
};
pub use synth::{build_synthetic_dataset, generate_synthetic_hq, DatasetConfig, ReferencePool, Sample, SyntheticDataset};

/// Mixes a stream index into a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
