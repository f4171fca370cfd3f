//! Independent reference implementations. They share no code with the
//! library and favour the most literal formulation over speed.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Integer training points with labels, a query, and `k`.
pub type KnnCase = (Vec<(Vec<i64>, String)>, Vec<i64>, usize);

/// Sort-and-vote KNN on integer coordinates, so distances compare exactly.
///
/// Neighbours are the first `k` by (squared distance, training index). The
/// winning class has the most votes, then the smallest mean distance, then
/// the smallest name.
pub fn brute_force_knn(train: &[(Vec<i64>, String)], query: &[i64], k: usize) -> String {
    let mut order: Vec<(i64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, (x, _))| (x.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    order.sort();
    let mut votes: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &(d2, i) in &order[..k] {
        votes.entry(train[i].1.as_str()).or_default().push((d2 as f64).sqrt());
    }
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let mut ranked: Vec<(&str, usize, f64)> = votes.iter().map(|(l, d)| (*l, d.len(), mean(d))).collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(if (a.2 - b.2).abs() <= 1e-9 * a.2.max(b.2).max(1.0) {
                std::cmp::Ordering::Equal
            } else {
                a.2.total_cmp(&b.2)
            })
            .then(a.0.cmp(b.0))
    });
    ranked[0].0.to_string()
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    (-gamma * s).exp()
}

/// `sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)`.
pub fn dual_value(x: &[Vec<f64>], y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let n = x.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gaussian_kernel(&x[i], &x[j], gamma);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 <= a <= c, y.a = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let balance = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let bound = v.iter().fold(0.0f64, |m, vi| m.max(vi.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    // balance(at(lam)) is non-increasing in lam
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Maximize the SVM dual by accelerated projected gradient ascent.
pub fn qp_dual_optimum(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, iters: usize) -> f64 {
    let n = x.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * gaussian_kernel(&x[i], &x[j], gamma))
                .collect()
        })
        .collect();
    // Gershgorin bound on the largest eigenvalue
    let lip = q
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q[i][j] * z[j]).sum::<f64>())
            .collect();
        let next = project(
            &z.iter().zip(&grad).map(|(zi, g)| zi + step * g).collect::<Vec<_>>(),
            y,
            c,
        );
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&a)
            .map(|(n, p)| n + (t - 1.0) / t_next * (n - p))
            .collect();
        a = next;
        t = t_next;
    }
    dual_value(x, y, &a, gamma)
}

/// Largest KKT violation of a dual solution, read off the decision values.
pub fn kkt_violation(x: &[Vec<f64>], y: &[f64], alpha: &[f64], bias: f64, c: f64, gamma: f64) -> f64 {
    let n = x.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let f: f64 = (0..n)
            .map(|j| alpha[j] * y[j] * gaussian_kernel(&x[j], &x[i], gamma))
            .sum::<f64>()
            + bias;
        let m = y[i] * f;
        let v = if alpha[i] <= 1e-12 {
            (1.0 - m).max(0.0)
        } else if alpha[i] >= c - 1e-12 {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Spearman correlation as the Pearson correlation of average ranks, with
/// ranks found by counting.
pub fn spearman_by_counting(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}
