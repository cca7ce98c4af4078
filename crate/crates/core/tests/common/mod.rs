//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use cvrkd_core::{Graph, Real, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradient_cases;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

/// A scalar function of several tensors, buildable at any precision.
pub trait LossFn {
    fn build<T: Real>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub refined_at_kinks: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-3;

fn agrees(a: f64, n: f64) -> bool {
    let diff = (a - n).abs();
    diff < ABS_FLOOR || diff / a.abs().max(n.abs()) < REL_TOL
}

fn rel_err(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    if diff < ABS_FLOOR {
        0.0
    } else {
        diff / a.abs().max(n.abs())
    }
}

fn eval_f64<F: LossFn>(f: &F, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = f.build(&mut g, &vars).expect("f64 forward");
    g.value(loss).item()
}

fn central<F: LossFn>(f: &F, shadow: &mut [Tensor<f64>], i: usize, k: usize, h: f64) -> f64 {
    let orig = shadow[i].data()[k];
    let with = |v: f64, shadow: &mut [Tensor<f64>]| {
        let mut d = shadow[i].data().to_vec();
        d[k] = v;
        shadow[i] = Tensor::new(shadow[i].shape(), d).unwrap();
        eval_f64(f, shadow)
    };
    let plus = with(orig + h, shadow);
    let minus = with(orig - h, shadow);
    with(orig, shadow);
    (plus - minus) / (2.0 * h)
}

/// Compares the `f32` analytic gradient with central finite differences of a
/// 64-bit shadow evaluation. Where the step straddles a kink (the difference
/// quotient changes with the step size), the step is shrunk until the
/// quotient stabilises.
pub fn gradcheck<F: LossFn>(f: &F, inputs: &[Tensor]) -> GradReport {
    let mut g = Graph::<f32>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f.build(&mut g, &vars).expect("f32 forward");
    let grads = g.backward(loss).expect("backward");

    let mut shadow: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let mut report = GradReport::default();
    for (i, t) in inputs.iter().enumerate() {
        let zeros = vec![0.0; t.numel()];
        let analytic = grads.get(vars[i]).unwrap_or(&zeros).to_vec();
        for k in 0..t.numel() {
            let a = analytic[k] as f64;
            let mut n = central(f, &mut shadow, i, k, FD_STEP);
            if !agrees(a, n) {
                let n1 = central(f, &mut shadow, i, k, FD_STEP / 10.0);
                let n2 = central(f, &mut shadow, i, k, FD_STEP / 100.0);
                if !agrees(n, n1) && agrees(n1, n2) {
                    report.refined_at_kinks += 1;
                    n = n2;
                }
            }
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err(a, n));
            if !agrees(a, n) {
                report.failures.push(format!("input {i} element {k}: analytic {a:.6e} numeric {n:.6e}"));
            }
        }
    }
    report
}

/// Fixed random projection `mean(w ⊙ y)`, so every output element matters.
pub fn project<T: Real>(g: &mut Graph<T>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &shape, 1.0).cast();
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.mean_all(p)
}

/// Average ranks (ties share the mean of their span), 1-based.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let less = v.iter().filter(|&&x| x < v[i]).count();
        let equal = v.iter().filter(|&&x| x == v[i]).count();
        ranks[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
    }
    ranks
}

pub fn pearson_naive(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman_bruteforce(a: &[f64], b: &[f64]) -> f64 {
    pearson_naive(&average_ranks(a), &average_ranks(b))
}

/// Kendall tau-b by explicit O(n²) pair enumeration.
pub fn kendall_bruteforce(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut conc, mut disc, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 {
                ties_a += 1;
            }
            if db == 0.0 {
                ties_b += 1;
            }
            if da != 0.0 && db != 0.0 {
                if (da > 0.0) == (db > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (conc - disc) as f64 / (((n0 - ties_a) as f64) * ((n0 - ties_b) as f64)).sqrt()
}
