use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_pairs(op: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::UndefinedStatistic(format!(
            "{op}: {} predictions against {} targets",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedStatistic(format!("{op}: needs at least 2 pairs")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedStatistic(format!("{op}: non-finite value")));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their rank span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pairs("pearson", a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedStatistic("pearson: constant input".into()));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs("srcc", pred, gt)?;
    pearson(&average_ranks(pred), &average_ranks(gt))
        .map_err(|_| Error::UndefinedStatistic("srcc: constant input".into()))
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn krcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs("krcc", pred, gt)?;
    let n = pred.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pred[i].total_cmp(&pred[j]).then(gt[i].total_cmp(&gt[j])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let (mut tied_a, mut tied_joint) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pred[order[j]] == pred[order[i]] {
            j += 1;
        }
        tied_a += pairs((j - i) as u64);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && gt[order[l]] == gt[order[k]] {
                l += 1;
            }
            tied_joint += pairs((l - k) as u64);
            k = l;
        }
        i = j;
    }

    let mut seq: Vec<f64> = order.iter().map(|&i| gt[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = merge_count(&mut seq, &mut buf);

    let mut tied_b = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && seq[j] == seq[i] {
            j += 1;
        }
        tied_b += pairs((j - i) as u64);
        i = j;
    }

    let total = pairs(n as u64);
    if tied_a == total || tied_b == total {
        return Err(Error::UndefinedStatistic("krcc: constant input".into()));
    }
    let numer = total as f64 - tied_a as f64 - tied_b as f64 + tied_joint as f64 - 2.0 * discordant as f64;
    let denom = libm::sqrt((total - tied_a) as f64 * (total - tied_b) as f64);
    Ok((numer / denom).clamp(-1.0, 1.0))
}

/// Sorts ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}
