use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ArchConfig, LAYER_NORM_EPS, STAGE_STRIDES};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{BoundParams, ModelParams};
use crate::real::Real;
use crate::tensor::Tensor;

const INPUT_CHANNELS: usize = 3;

enum Init {
    /// Uniform in `±sqrt(6/fan_in)`, for ReLU convolutions.
    He(usize),
    /// Uniform in `±1/sqrt(fan_in)`.
    Linear(usize),
    Zeros,
    Ones,
}

/// Parameter layout in construction order: `(name, shape, init)`.
fn layout(cfg: &ArchConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut cin = INPUT_CHANNELS;
    for (i, &c) in cfg.stage_channels.iter().enumerate() {
        out.push((format!("backbone.stage{i}.weight"), vec![c, cin, 3, 3], Init::He(cin * 9)));
        out.push((format!("backbone.stage{i}.bias"), vec![c], Init::Zeros));
        cin = c;
    }
    for (i, &c) in cfg.stage_channels.iter().enumerate() {
        out.push((
            format!("backbone.proj{i}.weight"),
            vec![cfg.proj_channels, c, 1, 1],
            Init::Linear(c),
        ));
        out.push((format!("backbone.proj{i}.bias"), vec![cfg.proj_channels], Init::Zeros));
    }

    let c = cfg.channels();
    let push_norm = |out: &mut Vec<_>, prefix: &str| {
        out.push((format!("{prefix}.gamma"), vec![c], Init::Ones));
        out.push((format!("{prefix}.beta"), vec![c], Init::Zeros));
    };
    let push_linear = |out: &mut Vec<_>, prefix: &str, fan_in: usize, fan_out: usize| {
        out.push((format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Linear(fan_in)));
        out.push((format!("{prefix}.bias"), vec![fan_out], Init::Zeros));
    };
    let push_blocks = |out: &mut Vec<_>, enc: &str, depth: usize| {
        let m = cfg.patches;
        let mt = m * cfg.token_expansion;
        let ch = c * cfg.channel_expansion;
        for j in 0..depth {
            let b = format!("{enc}.block{j}");
            push_norm(out, &format!("{b}.token_norm"));
            push_linear(out, &format!("{b}.token_fc1"), m, mt);
            push_linear(out, &format!("{b}.token_fc2"), mt, m);
            push_norm(out, &format!("{b}.channel_norm"));
            push_linear(out, &format!("{b}.channel_fc1"), c, ch);
            push_linear(out, &format!("{b}.channel_fc2"), ch, c);
        }
        push_norm(out, &format!("{enc}.norm"));
    };

    push_blocks(&mut out, "encoder_lq", cfg.depth_lq);
    if cfg.reference_path {
        if let Some(k) = cfg.diff_input.fused_channels() {
            push_linear(&mut out, "encoder_diff.fuse", k * c, c);
        }
        push_blocks(&mut out, "encoder_diff", cfg.depth_diff);
    }
    let head_in = if cfg.reference_path { 2 * c } else { c };
    push_linear(&mut out, "regressor.fc1", head_in, c);
    push_linear(&mut out, "regressor.fc2", c, 1);
    out
}

/// Parameter names and shapes for `cfg`, in construction order.
pub fn parameter_shapes(cfg: &ArchConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Total number of scalar parameters for `cfg`.
pub fn parameter_count(cfg: &ArchConfig) -> usize {
    layout(cfg)
        .iter()
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum()
}

/// Deterministic initialization; the name set depends only on `cfg`.
pub fn init_params(cfg: &ArchConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, shape, init) in layout(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::He(fan_in) | Init::Linear(fan_in) => {
                let bound = match init {
                    Init::He(_) => libm::sqrtf(6.0 / fan_in as f32),
                    _ => 1.0 / libm::sqrtf(fan_in as f32),
                };
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        params.insert(name, Tensor::new(&shape, data)?)?;
    }
    Ok(params)
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[1]`, on the MOS scale.
    pub score: Var,
    /// Post-block activations of the difference encoder, each `[m, s·s, C]`.
    /// Empty when the network has no reference path.
    pub diff_features: Vec<Var>,
}

/// Materialized outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f32> {
    pub score: T,
    pub diff_features: Vec<Tensor<T>>,
}

/// The architecture bound to one parameter set on one graph.
pub struct Network<'a> {
    cfg: &'a ArchConfig,
    params: &'a BoundParams,
}

impl<'a> Network<'a> {
    pub fn new(cfg: &'a ArchConfig, params: &'a BoundParams) -> Self {
        Network { cfg, params }
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.params.var(name)
    }

    fn linear<T: Real>(&self, g: &mut Graph<T>, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        g.linear(x, w, b)
    }

    /// `x[k, N] -> [k', N]` with a `[k, k']` weight applied from the left, so
    /// the long axis `N` stays contiguous.
    fn token_linear<T: Real>(&self, g: &mut Graph<T>, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        let n = g.shape(x)[1];
        let out = g.shape(w)[1];
        let wt = g.transpose_last2(w)?;
        let y = g.matmul(wt, x)?;
        let bcol = g.reshape(b, &[out, 1])?;
        let ones = g.constant(Tensor::ones(&[1, n]));
        let bias = g.matmul(bcol, ones)?;
        g.add(y, bias)
    }

    fn norm<T: Real>(&self, g: &mut Graph<T>, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        g.layer_norm(x, gamma, beta, T::from_f64(LAYER_NORM_EPS))
    }

    /// `[m, 3, p, p]` patches to `[m, 4·c_proj, s, s]` multi-scale features.
    pub fn extract_multiscale_features<T: Real>(&self, g: &mut Graph<T>, patches: Var) -> Result<Var> {
        let cfg = self.cfg;
        let expected = [cfg.patches, INPUT_CHANNELS, cfg.patch_size, cfg.patch_size];
        if g.shape(patches) != expected {
            return Err(Error::shape(
                "extract_multiscale_features",
                "patch tensor does not match the configuration",
                &[g.shape(patches), &expected],
            ));
        }
        let mut x = patches;
        let mut taps = Vec::with_capacity(4);
        for i in 0..4 {
            let stride = if i == 0 { STAGE_STRIDES[0] } else { STAGE_STRIDES[i] / STAGE_STRIDES[i - 1] };
            let w = self.p(&format!("backbone.stage{i}.weight"))?;
            let b = self.p(&format!("backbone.stage{i}.bias"))?;
            let y = g.conv2d(x, w, b, stride, 1)?;
            x = g.relu(y)?;
            // Average pooling and a 1×1 convolution commute; pooling first is cheaper.
            let pooled = g.adaptive_avg_pool2d(x, cfg.pooled_grid)?;
            let w = self.p(&format!("backbone.proj{i}.weight"))?;
            let b = self.p(&format!("backbone.proj{i}.bias"))?;
            taps.push(g.conv2d(pooled, w, b, 1, 0)?);
        }
        g.concat(&taps, 1)
    }

    /// `[m, C, s, s]` to the token layout `[m, s·s, C]` used by the encoders.
    pub fn to_tokens<T: Real>(&self, g: &mut Graph<T>, f: Var) -> Result<Var> {
        let (m, c, p) = (self.cfg.patches, self.cfg.channels(), self.cfg.positions());
        let flat = g.reshape(f, &[m, c, p])?;
        g.transpose_last2(flat)
    }

    /// Residual patch-mixing MLP across the `m` axis, then residual
    /// channel-mixing MLP across `C`. Input and output are `[m, s·s, C]`.
    pub fn mixer_block<T: Real>(&self, g: &mut Graph<T>, prefix: &str, x: Var) -> Result<Var> {
        let (m, c, p) = (self.cfg.patches, self.cfg.channels(), self.cfg.positions());

        let h = self.norm(g, &format!("{prefix}.token_norm"), x)?;
        let h = g.reshape(h, &[m, p * c])?;
        let h = self.token_linear(g, &format!("{prefix}.token_fc1"), h)?;
        let h = g.gelu(h)?;
        let h = self.token_linear(g, &format!("{prefix}.token_fc2"), h)?;
        let h = g.reshape(h, &[m, p, c])?;
        let x = g.add(x, h)?;

        let h = self.norm(g, &format!("{prefix}.channel_norm"), x)?;
        let h = self.linear(g, &format!("{prefix}.channel_fc1"), h)?;
        let h = g.gelu(h)?;
        let h = self.linear(g, &format!("{prefix}.channel_fc2"), h)?;
        g.add(x, h)
    }

    /// Final norm, then mean over patches and positions: `[m, P, C] -> [C]`.
    fn pool_head<T: Real>(&self, g: &mut Graph<T>, enc: &str, x: Var) -> Result<Var> {
        let x = self.norm(g, &format!("{enc}.norm"), x)?;
        g.mean_leading(x)
    }

    /// LQ encoder over `[m, s·s, C]` tokens, returning a `[C]` vector.
    pub fn encode_lq<T: Real>(&self, g: &mut Graph<T>, tokens: Var) -> Result<Var> {
        let mut x = tokens;
        for j in 0..self.cfg.depth_lq {
            x = self.mixer_block(g, &format!("encoder_lq.block{j}"), x)?;
        }
        self.pool_head(g, "encoder_lq", x)
    }

    /// Input of the difference encoder before its first block.
    pub fn fuse<T: Real>(&self, g: &mut Graph<T>, lq: Var, hq: Var) -> Result<Var> {
        use super::config::DiffInputMode::*;
        if g.shape(lq) != g.shape(hq) {
            return Err(Error::DistillationWiring {
                layer: 0,
                detail: format!("LQ features {:?} and reference features {:?}", g.shape(lq), g.shape(hq)),
            });
        }
        match self.cfg.diff_input {
            DiffOnly => g.sub(lq, hq),
            ConcatLqHq => {
                let cat = g.concat(&[lq, hq], 2)?;
                self.linear(g, "encoder_diff.fuse", cat)
            }
            ConcatLqHqDiff => {
                let d = g.sub(lq, hq)?;
                let cat = g.concat(&[lq, hq, d], 2)?;
                self.linear(g, "encoder_diff.fuse", cat)
            }
        }
    }

    /// Difference encoder; returns the `[C]` vector and every post-block activation.
    pub fn encode_diff<T: Real>(&self, g: &mut Graph<T>, lq: Var, hq: Var) -> Result<(Var, Vec<Var>)> {
        let mut x = self.fuse(g, lq, hq)?;
        let mut trace = Vec::with_capacity(self.cfg.depth_diff);
        for j in 0..self.cfg.depth_diff {
            x = self.mixer_block(g, &format!("encoder_diff.block{j}"), x)?;
            trace.push(x);
        }
        Ok((self.pool_head(g, "encoder_diff", x)?, trace))
    }

    /// Scores one multi-patch set against an optional reference set.
    ///
    /// `reference` is required exactly when the configuration has a
    /// reference path; alignment between the two sets is the caller's concern.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, lq: Var, reference: Option<Var>) -> Result<ForwardVars> {
        let (tokens, v_lq) = self.lq_path(g, lq)?;
        self.reference_head(g, tokens, v_lq, reference)
    }

    /// Backbone and LQ encoder: returns the LQ tokens `[m, s·s, C]` and the `[C]` vector.
    pub fn lq_path<T: Real>(&self, g: &mut Graph<T>, lq: Var) -> Result<(Var, Var)> {
        let f_lq = self.extract_multiscale_features(g, lq)?;
        let tokens = self.to_tokens(g, f_lq)?;
        let v_lq = self.encode_lq(g, tokens)?;
        Ok((tokens, v_lq))
    }

    /// Everything after [`lq_path`](Self::lq_path): reference features,
    /// difference encoder and regressor.
    pub fn reference_head<T: Real>(
        &self,
        g: &mut Graph<T>,
        lq_tokens: Var,
        v_lq: Var,
        reference: Option<Var>,
    ) -> Result<ForwardVars> {
        let (head_in, diff_features) = match (self.cfg.reference_path, reference) {
            (true, Some(r)) => {
                let f_r = self.extract_multiscale_features(g, r)?;
                let t_r = self.to_tokens(g, f_r)?;
                let (v_d, trace) = self.encode_diff(g, lq_tokens, t_r)?;
                (g.concat(&[v_lq, v_d], 0)?, trace)
            }
            (true, None) => {
                return Err(Error::Contract(
                    "forward: a reference patch set is required by this network".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Contract(
                    "forward: this network has no reference path but a reference was given".into(),
                ))
            }
            (false, None) => (v_lq, Vec::new()),
        };
        let width = g.shape(head_in)[0];
        let h = g.reshape(head_in, &[1, width])?;
        let h = self.linear(g, "regressor.fc1", h)?;
        let h = g.relu(h)?;
        let h = self.linear(g, "regressor.fc2", h)?;
        let h = g.reshape(h, &[1])?;
        let score = g.scale(h, T::from_f64(self.cfg.score_scale as f64))?;
        Ok(ForwardVars { score, diff_features })
    }
}

/// Gradient-free forward pass on a fresh graph.
pub fn predict<T: Real>(
    cfg: &ArchConfig,
    params: &ModelParams<T>,
    lq: &Tensor<T>,
    reference: Option<&Tensor<T>>,
) -> Result<ForwardTrace<T>> {
    let mut g = Graph::<T>::new();
    let bound = params.bind(&mut g, false);
    let net = Network::new(cfg, &bound);
    let lq = g.constant(lq.clone());
    let reference = reference.map(|r| g.constant(r.clone()));
    let out = net.forward(&mut g, lq, reference)?;
    Ok(ForwardTrace {
        score: g.value(out.score).item(),
        diff_features: out.diff_features.iter().map(|&v| g.value(v).clone()).collect(),
    })
}
