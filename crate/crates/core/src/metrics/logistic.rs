use alloc::format;
use alloc::vec::Vec;

use super::rank::pearson;
use crate::error::{Error, Result};

/// Mapping family used to correct predictions before Pearson correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogisticForm {
    /// `β1·(1/2 − 1/(1 + exp(β2·(x − β3)))) + β4·x + β5`.
    #[default]
    FiveParameter,
    /// The same with `β4 = 0`.
    FourParameter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub form: LogisticForm,
    pub max_iterations: usize,
    /// Stop once the relative drop in squared residual falls below this.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            form: LogisticForm::FiveParameter,
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

/// A fitted monotone non-decreasing map from predictions to the target scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    pub beta: [f64; 5],
    pub form: LogisticForm,
    /// False when the iteration budget ran out first.
    pub converged: bool,
    pub iterations: usize,
    /// Euclidean norm of `gt − q(pred)`.
    pub residual_norm: f64,
}

fn sigmoid_term(b2: f64, b3: f64, x: f64) -> f64 {
    let z = (b2 * (x - b3)).clamp(-700.0, 700.0);
    1.0 / (1.0 + libm::exp(z))
}

fn eval_beta(b: &[f64; 5], x: f64) -> f64 {
    b[0] * (0.5 - sigmoid_term(b[1], b[2], x)) + b[3] * x + b[4]
}

impl LogisticFit {
    pub fn eval(&self, x: f64) -> f64 {
        eval_beta(&self.beta, x)
    }

    pub fn map(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

fn sse(b: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| { let r = yi - eval_beta(b, xi); r * r }).sum()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n))
}

/// Keeps the map non-decreasing.
fn project(b: &mut [f64; 5], form: LogisticForm, x_scale: f64) {
    b[0] = b[0].max(0.0);
    b[1] = b[1].max(1e-9 / x_scale);
    b[3] = if form == LogisticForm::FourParameter { 0.0 } else { b[3].max(0.0) };
}

/// Solves the 5×5 system `a·x = g` by Gaussian elimination with partial pivoting.
fn solve5(mut a: [[f64; 5]; 5], mut g: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let piv = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        g.swap(col, piv);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            g[row] -= f * g[col];
        }
    }
    let mut x = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|k| a[row][k] * x[k]).sum();
        x[row] = (g[row] - s) / a[row][row];
    }
    Some(x)
}

/// Pearson of the mapped predictions; a map that has collapsed to a constant
/// (up to rounding) carries no ordering, so the raw correlation stands in.
fn corrected_pearson(q: &[f64], pred: &[f64], gt: &[f64]) -> Result<f64> {
    let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-9 * hi.abs().max(lo.abs()).max(1.0) {
        return pearson(pred, gt);
    }
    pearson(q, gt).or_else(|_| pearson(pred, gt))
}

fn correlation_of(b: &[f64; 5], pred: &[f64], gt: &[f64]) -> f64 {
    let q: Vec<f64> = pred.iter().map(|&x| eval_beta(b, x)).collect();
    corrected_pearson(&q, pred, gt).unwrap_or(0.0)
}

/// Fits the monotone logistic map from `pred` to `gt` by damped Gauss–Newton
/// (Levenberg–Marquardt). The best non-negative-slope line is also tried and
/// kept if it correlates better, so the result never trails the raw linear fit.
pub fn fit_logistic(pred: &[f64], gt: &[f64], opts: &FitOptions) -> Result<LogisticFit> {
    if pred.len() != gt.len() {
        return Err(Error::UndefinedStatistic(format!(
            "logistic fit: {} predictions against {} targets",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 6 {
        return Err(Error::UndefinedStatistic("logistic fit: needs at least 6 pairs".into()));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedStatistic("logistic fit: non-finite value".into()));
    }
    let (mx, sx) = mean_std(pred);
    let (my, sy) = mean_std(gt);
    if sx == 0.0 {
        return Err(Error::UndefinedStatistic("logistic fit: predictions have zero variance".into()));
    }
    if sy == 0.0 {
        return Err(Error::UndefinedStatistic("logistic fit: targets have zero variance".into()));
    }
    let form = opts.form;
    let gmax = gt.iter().copied().fold(f64::MIN, f64::max);
    let gmin = gt.iter().copied().fold(f64::MAX, f64::min);
    let mut b = [gmax - gmin, 1.0 / sx, mx, 0.0, my];
    project(&mut b, form, sx);

    let mut cur = sse(&b, pred, gt);
    let mut lambda = 1e-3;
    let mut converged = cur == 0.0;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&x, &y) in pred.iter().zip(gt) {
            let s = sigmoid_term(b[1], b[2], x);
            let ds = s * (1.0 - s);
            let mut j = [0.5 - s, b[0] * ds * (x - b[2]), -b[0] * ds * b[1], x, 1.0];
            if form == LogisticForm::FourParameter {
                j[3] = 0.0;
            }
            let r = y - eval_beta(&b, x);
            for p in 0..5 {
                jtr[p] += j[p] * r;
                for q in 0..5 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (p, row) in a.iter_mut().enumerate() {
                row[p] += lambda * row[p].max(1e-12) + 1e-300;
            }
            if let Some(delta) = solve5(a, jtr) {
                let mut cand = b;
                for p in 0..5 {
                    cand[p] += delta[p];
                }
                project(&mut cand, form, sx);
                let next = sse(&cand, pred, gt);
                if next.is_finite() && next < cur {
                    let rel = (cur - next) / cur.max(f64::MIN_POSITIVE);
                    b = cand;
                    cur = next;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < opts.tolerance || cur == 0.0 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // No damped step reduces the residual: a stationary point.
            converged = true;
        }
    }

    let mut fit = LogisticFit {
        beta: b,
        form,
        converged,
        iterations,
        residual_norm: libm::sqrt(cur),
    };

    let cov: f64 = pred.iter().zip(gt).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
    let slope = (cov / (sx * sx * pred.len() as f64)).max(0.0);
    let linear = [0.0, 1.0 / sx, mx, slope, my - slope * mx];
    if form == LogisticForm::FiveParameter
        && correlation_of(&linear, pred, gt) > correlation_of(&fit.beta, pred, gt)
    {
        fit.beta = linear;
        fit.residual_norm = libm::sqrt(sse(&linear, pred, gt));
    }
    Ok(fit)
}

/// Pearson correlation between the logistic-corrected predictions and `gt`.
///
/// A fit that collapses to a constant carries no ordering information; the
/// raw Pearson correlation is reported in that case.
pub fn plcc(pred: &[f64], gt: &[f64], opts: &FitOptions) -> Result<(f64, LogisticFit)> {
    let fit = fit_logistic(pred, gt, opts)?;
    let r = corrected_pearson(&fit.map(pred), pred, gt)?;
    Ok((r, fit))
}
