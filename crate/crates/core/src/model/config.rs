use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvText;

/// How LQ and reference features are fused before the difference encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffInputMode {
    /// `[f_lq, f_ref, f_lq − f_ref]` along channels, projected back to `C`.
    #[default]
    ConcatLqHqDiff,
    /// `f_lq − f_ref` as is.
    DiffOnly,
    /// `[f_lq, f_ref]` along channels, projected back to `C`.
    ConcatLqHq,
}

impl DiffInputMode {
    /// Channel multiple entering the fusion projection, if there is one.
    pub fn fused_channels(self) -> Option<usize> {
        match self {
            DiffInputMode::ConcatLqHqDiff => Some(3),
            DiffInputMode::ConcatLqHq => Some(2),
            DiffInputMode::DiffOnly => None,
        }
    }
}

impl fmt::Display for DiffInputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffInputMode::ConcatLqHqDiff => "concat_lq_hq_diff",
            DiffInputMode::DiffOnly => "diff_only",
            DiffInputMode::ConcatLqHq => "concat_lq_hq",
        })
    }
}

impl FromStr for DiffInputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_lq_hq_diff" => Ok(DiffInputMode::ConcatLqHqDiff),
            "diff_only" => Ok(DiffInputMode::DiffOnly),
            "concat_lq_hq" => Ok(DiffInputMode::ConcatLqHq),
            other => Err(Error::Config(format!("unknown diff_input mode `{other}`"))),
        }
    }
}

/// Network shape. One config instantiates both teacher and student.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Patches per set (`m`).
    pub patches: usize,
    /// Square patch side in pixels.
    pub patch_size: usize,
    /// Output channels of the four backbone stages.
    pub stage_channels: [usize; 4],
    /// Channels of each stage after its 1×1 projection.
    pub proj_channels: usize,
    /// Side of the pooled grid every stage is averaged onto.
    pub pooled_grid: usize,
    /// Hidden width of the token-mixing MLP, as a multiple of `patches`.
    pub token_expansion: usize,
    /// Hidden width of the channel-mixing MLP, as a multiple of the encoder width.
    pub channel_expansion: usize,
    /// Mixer blocks in the LQ encoder.
    pub depth_lq: usize,
    /// Mixer blocks in the difference encoder.
    pub depth_diff: usize,
    pub diff_input: DiffInputMode,
    /// `false` removes the difference path (no-reference baseline).
    pub reference_path: bool,
    /// Fixed factor applied to the regressor output so the network works at
    /// unit scale while scores live on the MOS scale.
    pub score_scale: f32,
}

/// Cumulative stride of each backbone stage.
pub const STAGE_STRIDES: [usize; 4] = [1, 2, 4, 8];

pub const LAYER_NORM_EPS: f64 = 1e-5;

const KEYS: &[&str] = &[
    "patches",
    "patch_size",
    "stage_channels",
    "proj_channels",
    "pooled_grid",
    "token_expansion",
    "channel_expansion",
    "depth_lq",
    "depth_diff",
    "diff_input",
    "reference_path",
    "score_scale",
];

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    /// CPU-sized configuration used for synthetic experiments.
    pub fn desk() -> Self {
        ArchConfig {
            patches: 5,
            patch_size: 32,
            stage_channels: [8, 16, 32, 64],
            proj_channels: 16,
            pooled_grid: 4,
            token_expansion: 2,
            channel_expansion: 2,
            depth_lq: 2,
            depth_diff: 4,
            diff_input: DiffInputMode::ConcatLqHqDiff,
            reference_path: true,
            score_scale: 100.0,
        }
    }

    /// Full-size layout: 10 patches of 224 px, 256-wide encoders, depths 9/18.
    pub fn full() -> Self {
        ArchConfig {
            patches: 10,
            patch_size: 224,
            stage_channels: [16, 32, 64, 128],
            proj_channels: 64,
            pooled_grid: 7,
            token_expansion: 2,
            channel_expansion: 2,
            depth_lq: 9,
            depth_diff: 18,
            diff_input: DiffInputMode::ConcatLqHqDiff,
            reference_path: true,
            score_scale: 100.0,
        }
    }

    /// Smallest useful configuration, for gradient checks.
    pub fn tiny() -> Self {
        ArchConfig {
            patches: 2,
            patch_size: 16,
            stage_channels: [2, 3, 3, 4],
            proj_channels: 4,
            pooled_grid: 2,
            token_expansion: 2,
            channel_expansion: 2,
            depth_lq: 1,
            depth_diff: 2,
            diff_input: DiffInputMode::ConcatLqHqDiff,
            reference_path: true,
            score_scale: 1.0,
        }
    }

    /// Encoder width `C = 4·proj_channels`.
    pub fn channels(&self) -> usize {
        4 * self.proj_channels
    }

    /// Tokens per patch after pooling (`s·s`).
    pub fn positions(&self) -> usize {
        self.pooled_grid * self.pooled_grid
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patches == 0 {
            return fail("patches must be >= 1".into());
        }
        if self.patch_size < 8 {
            return fail(format!("patch_size {} is below the minimum of 8", self.patch_size));
        }
        if self.pooled_grid == 0 {
            return fail("pooled_grid must be >= 1".into());
        }
        let deepest = self.patch_size / STAGE_STRIDES[3];
        if deepest < self.pooled_grid {
            return fail(format!(
                "patch_size {} leaves a {deepest}x{deepest} deepest stage, smaller than pooled_grid {}",
                self.patch_size, self.pooled_grid
            ));
        }
        if self.stage_channels.contains(&0) || self.proj_channels == 0 {
            return fail("channel widths must be positive".into());
        }
        if self.token_expansion == 0 || self.channel_expansion == 0 {
            return fail("expansion factors must be positive".into());
        }
        if self.depth_lq == 0 {
            return fail("depth_lq must be >= 1".into());
        }
        if self.depth_diff < self.depth_lq {
            return fail(format!(
                "depth_diff ({}) must be at least depth_lq ({})",
                self.depth_diff, self.depth_lq
            ));
        }
        if !(self.score_scale.is_finite() && self.score_scale > 0.0) {
            return fail("score_scale must be positive".into());
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn to_kv(&self, kv: &mut KvText) {
        kv.push("patches", self.patches);
        kv.push("patch_size", self.patch_size);
        let widths: Vec<String> = self.stage_channels.iter().map(|c| c.to_string()).collect();
        kv.push("stage_channels", widths.join(","));
        kv.push("proj_channels", self.proj_channels);
        kv.push("pooled_grid", self.pooled_grid);
        kv.push("token_expansion", self.token_expansion);
        kv.push("channel_expansion", self.channel_expansion);
        kv.push("depth_lq", self.depth_lq);
        kv.push("depth_diff", self.depth_diff);
        kv.push("diff_input", self.diff_input);
        kv.push("reference_path", self.reference_path);
        kv.push("score_scale", self.score_scale);
    }

    /// Reads architecture keys present in `kv`, starting from `base`.
    pub fn from_kv(kv: &KvText, base: ArchConfig) -> Result<Self> {
        let mut c = base;
        if let Some(v) = kv.parse_opt("patches")? {
            c.patches = v;
        }
        if let Some(v) = kv.parse_opt("patch_size")? {
            c.patch_size = v;
        }
        if let Some(e) = kv.get("stage_channels") {
            let parsed: core::result::Result<Vec<usize>, _> =
                e.value.split(',').map(|s| s.trim().parse::<usize>()).collect();
            match parsed {
                Ok(v) if v.len() == 4 => c.stage_channels = [v[0], v[1], v[2], v[3]],
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: stage_channels needs four comma-separated widths",
                        e.line
                    )))
                }
            }
        }
        if let Some(v) = kv.parse_opt("proj_channels")? {
            c.proj_channels = v;
        }
        if let Some(v) = kv.parse_opt("pooled_grid")? {
            c.pooled_grid = v;
        }
        if let Some(v) = kv.parse_opt("token_expansion")? {
            c.token_expansion = v;
        }
        if let Some(v) = kv.parse_opt("channel_expansion")? {
            c.channel_expansion = v;
        }
        if let Some(v) = kv.parse_opt("depth_lq")? {
            c.depth_lq = v;
        }
        if let Some(v) = kv.parse_opt("depth_diff")? {
            c.depth_diff = v;
        }
        if let Some(e) = kv.get("diff_input") {
            c.diff_input = e
                .value
                .parse()
                .map_err(|err| Error::Config(format!("line {}: {err}", e.line)))?;
        }
        if let Some(v) = kv.parse_opt("reference_path")? {
            c.reference_path = v;
        }
        if let Some(v) = kv.parse_opt("score_scale")? {
            c.score_scale = v;
        }
        c.validate()?;
        Ok(c)
    }

    /// Same network apart from the presence of the difference path.
    pub fn same_backbone_and_encoders(&self, other: &ArchConfig) -> bool {
        let mut a = self.clone();
        a.reference_path = other.reference_path;
        a == *other
    }
}
