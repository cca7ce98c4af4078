//! Gradient-check cases: every differentiable op plus the tiny end-to-end model.

use super::{gradcheck, project, random_tensor, rng, GradReport, LossFn};
use cvrkd_core::model::{init_params, ArchConfig, Network};
use cvrkd_core::{Graph, ModelParams, Real, Result, Var};

fn check<F: LossFn>(name: &'static str, f: &F, inputs: &[cvrkd_core::Tensor]) -> (&'static str, GradReport) {
    (name, gradcheck(f, inputs))
}

struct MatmulSum;
impl LossFn for MatmulSum {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let y = g.matmul(x[0], x[1])?;
        g.mean_all(y)
    }
}

pub fn matmul_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[4, 5], 1.0);
    let b = random_tensor(&mut r, &[5, 6], 1.0);
    out.push(check("matmul", &MatmulSum, &[a, b]));
    out
}

struct BatchedMatmul;
impl LossFn for BatchedMatmul {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let y = g.matmul(x[0], x[1])?;
        let z = g.matmul(y, x[2])?;
        project(g, z, 11)
    }
}

pub fn batched_and_shared_matmul_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(2);
    let a = random_tensor(&mut r, &[2, 3, 4], 1.0);
    let b = random_tensor(&mut r, &[2, 4, 2], 1.0);
    let w = random_tensor(&mut r, &[2, 3], 1.0);
    out.push(check("batched matmul", &BatchedMatmul, &[a, b, w]));
    out
}

struct Conv {
    stride: usize,
    padding: usize,
}
impl LossFn for Conv {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let y = g.conv2d(x[0], x[1], x[2], self.stride, self.padding)?;
        project(g, y, 12)
    }
}

pub fn conv2d_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(3);
    let input = random_tensor(&mut r, &[2, 3, 5, 5], 1.0);
    let kernel = random_tensor(&mut r, &[4, 3, 3, 3], 0.5);
    let bias = random_tensor(&mut r, &[4], 0.5);
    out.push(check("conv2d s1", &Conv { stride: 1, padding: 1 }, &[input.clone(), kernel.clone(), bias.clone()]));
    out.push(check("conv2d s2", &Conv { stride: 2, padding: 1 }, &[input, kernel, bias]));
    out
}

struct Pool(usize);
impl LossFn for Pool {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let y = g.adaptive_avg_pool2d(x[0], self.0)?;
        project(g, y, 13)
    }
}

pub fn pool_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(4);
    let input = random_tensor(&mut r, &[2, 2, 5, 7], 1.0);
    out.push(check("pool", &Pool(3), &[input]));
    out
}

struct Norm;
impl LossFn for Norm {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let y = g.layer_norm(x[0], x[1], x[2], T::from_f64(1e-5))?;
        project(g, y, 14)
    }
}

pub fn layer_norm_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(5);
    let x = random_tensor(&mut r, &[3, 6], 2.0);
    let gamma = random_tensor(&mut r, &[6], 1.5);
    let beta = random_tensor(&mut r, &[6], 1.0);
    out.push(check("layer_norm", &Norm, &[x, gamma, beta]));
    out
}

struct Glue;
impl LossFn for Glue {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let a = g.gelu(x[0])?;
        let b = g.relu(x[1])?;
        let bt = g.transpose_last2(b)?;
        let c = g.concat(&[a, bt], 1)?;
        let d = g.sub(c, c)?;
        let e = g.add(c, d)?;
        let m = g.mean_leading(e)?;
        let s = g.scale(m, T::from_f64(0.7))?;
        let bias = g.add_bias(e, s)?;
        let r = g.reshape(bias, &[2, 3, 3])?;
        project(g, r, 15)
    }
}

pub fn activation_and_glue_gradients() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(6);
    let a = random_tensor(&mut r, &[3, 4], 2.0);
    let b = random_tensor(&mut r, &[2, 3], 2.0);
    out.push(check("glue", &Glue, &[a, b]));
    out
}

struct L1;
impl LossFn for L1 {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        g.l1_loss(x[0], x[1])
    }
}

pub fn l1_gradient_away_from_kinks() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(7);
    let p = random_tensor(&mut r, &[6], 1.0);
    let t = random_tensor(&mut r, &[6], 1.0);
    out.push(check("l1", &L1, &[p, t]));
    out
}

struct FeatureL2(bool);
impl LossFn for FeatureL2 {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        g.feature_l2_loss(&x[..2], &x[2..], self.0)
    }
}

pub fn feature_l2_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(8);
    let inputs = vec![
        random_tensor(&mut r, &[3, 4], 1.0),
        random_tensor(&mut r, &[3, 2, 2], 1.0),
        random_tensor(&mut r, &[3, 4], 1.0),
        random_tensor(&mut r, &[3, 2, 2], 1.0),
    ];
    out.push(check("feature_l2", &FeatureL2(false), &inputs));
    out.push(check("feature_l2 squared", &FeatureL2(true), &inputs));
    out
}

/// Two-layer MLP regressed with an L1 loss.
struct Mlp;
impl LossFn for Mlp {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let h = g.linear(x[0], x[1], x[2])?;
        let h = g.relu(h)?;
        let y = g.linear(h, x[3], x[4])?;
        let y = g.reshape(y, &[5])?;
        g.l1_loss(y, x[5])
    }
}

pub fn mlp_l1_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let mut r = rng(9);
    let inputs = vec![
        random_tensor(&mut r, &[5, 4], 1.0),
        random_tensor(&mut r, &[4, 8], 1.0),
        random_tensor(&mut r, &[8], 0.5),
        random_tensor(&mut r, &[8, 1], 1.0),
        random_tensor(&mut r, &[1], 0.5),
        random_tensor(&mut r, &[5], 3.0),
    ];
    out.push(check("mlp", &Mlp, &inputs));
    out
}

/// The whole tiny network; inputs are every parameter, then LQ and reference patches.
struct EndToEnd {
    cfg: ArchConfig,
    template: ModelParams,
    distill: bool,
}

impl LossFn for EndToEnd {
    fn build<T: Real>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        let n = self.template.len();
        let bound = self.template.cast::<T>().bind_existing(g, &x[..n])?;
        let net = Network::new(&self.cfg, &bound);
        let out = net.forward(g, x[n], Some(x[n + 1]))?;
        if !self.distill {
            return g.mean_all(out.score);
        }
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        for (j, &f) in out.diff_features.iter().enumerate() {
            let shape = g.shape(f).to_vec();
            let target = random_tensor(&mut rng(100 + j as u64), &shape, 1.0).cast();
            let flat: usize = shape.iter().product();
            fa.push(g.reshape(f, &[1, flat])?);
            let t = g.constant(target);
            fb.push(g.reshape(t, &[1, flat])?);
        }
        let d = g.feature_l2_loss(&fa, &fb, false)?;
        let s = g.scale(out.score, T::from_f64(0.1))?;
        let d = g.reshape(d, &[1])?;
        let total = g.add(s, d)?;
        g.mean_all(total)
    }
}

fn end_to_end_inputs(cfg: &ArchConfig, seed: u64) -> (ModelParams, Vec<cvrkd_core::Tensor>) {
    let params = init_params(cfg, seed).unwrap();
    let mut r = rng(seed + 1);
    // Perturb biases and norm affines so no parameter sits at a symmetric point.
    let mut inputs: Vec<cvrkd_core::Tensor> = params
        .iter()
        .map(|p| {
            let noise = random_tensor(&mut r, p.value.shape(), 0.1);
            let data = p.value.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
            cvrkd_core::Tensor::new(p.value.shape(), data).unwrap()
        })
        .collect();
    let shape = [cfg.patches, 3, cfg.patch_size, cfg.patch_size];
    inputs.push(random_tensor(&mut r, &shape, 1.0));
    inputs.push(random_tensor(&mut r, &shape, 1.0));
    (params, inputs)
}

pub fn end_to_end_tiny_model_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let cfg = ArchConfig::tiny();
    assert_eq!((cfg.patches, cfg.patch_size, cfg.proj_channels, cfg.pooled_grid), (2, 16, 4, 2));
    assert_eq!((cfg.depth_diff, cfg.depth_lq), (2, 1));
    let (template, inputs) = end_to_end_inputs(&cfg, 30);
    let f = EndToEnd {
        cfg,
        template,
        distill: false,
    };
    out.push(check("end-to-end score", &f, &inputs));
    out
}

pub fn end_to_end_distillation_gradient() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    let cfg = ArchConfig::tiny();
    let (template, inputs) = end_to_end_inputs(&cfg, 40);
    let f = EndToEnd {
        cfg,
        template,
        distill: true,
    };
    out.push(check("end-to-end distillation", &f, &inputs));
    out
}

/// Every case, in a fixed order.
pub fn all() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();
    out.extend(matmul_gradient());
    out.extend(batched_and_shared_matmul_gradient());
    out.extend(conv2d_gradient());
    out.extend(pool_gradient());
    out.extend(layer_norm_gradient());
    out.extend(activation_and_glue_gradients());
    out.extend(l1_gradient_away_from_kinks());
    out.extend(feature_l2_gradient());
    out.extend(mlp_l1_gradient());
    out.extend(end_to_end_tiny_model_gradient());
    out.extend(end_to_end_distillation_gradient());
    out
}
