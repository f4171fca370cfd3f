//! RBF-kernel SVM trained by SMO on the dual.
//!
//! Dual: maximise `W(a) = sum a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij`
//! subject to `0 <= a_i <= C` and `sum a_i y_i = 0`.
//!
//! The solver keeps the gradient `G = Q a - 1` of the negated dual and picks
//! each working pair by maximal violation for the first index and by
//! second-order gain for the partner. Every pair update solves the
//! two-variable subproblem exactly, so `W` never decreases. It stops when the
//! violation gap `m - M` drops below `tol`, which bounds every KKT residual
//! by `tol`.

use serde::{Deserialize, Serialize};

use super::{squared_distance, ClassifierError, Persist};

/// Kernel matrices up to this many points are precomputed.
const FULL_KERNEL_LIMIT: usize = 3000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` picks [`default_gamma`] from the training data.
    pub gamma: Option<f64>,
    pub tol: f64,
    /// Iteration budget in units of the training-set size.
    pub max_passes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 100,
        }
    }
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    (-gamma * squared_distance(x, y)).exp()
}

/// `1 / (n_features * mean per-feature variance)`; 1 / n_features when the
/// data has no spread.
pub fn default_gamma(x: &[Vec<f64>]) -> f64 {
    let d = x.first().map_or(1, |r| r.len()).max(1);
    let n = x.len().max(1) as f64;
    let mut total = 0.0;
    for j in 0..d {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        total += x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
    }
    let mean_var = total / d as f64;
    if mean_var > 0.0 && mean_var.is_finite() {
        1.0 / (d as f64 * mean_var)
    } else {
        1.0 / d as f64
    }
}

/// Dual objective `W(a)` evaluated directly from the kernel.
pub fn dual_objective(x: &[Vec<f64>], y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let mut quad = 0.0;
    for i in 0..x.len() {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..x.len() {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * rbf_kernel(&x[i], &x[j], gamma);
            }
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    coef: Vec<f64>,
    bias: f64,
    gamma: f64,
    c: f64,
    converged: bool,
    iterations: usize,
}

impl Persist for SvmModel {
    const KIND: &'static str = "rbf-svm";
}

impl SvmModel {
    /// `sum_i coef_i K(sv_i, x) + bias`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf_kernel(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.decision(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support_vectors
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// False when the iteration budget ran out first; the model is then the
    /// best iterate reached.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Full solver state at exit.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final violation gap `m - M`.
    pub gap: f64,
    /// `W(a)` after each update; empty unless tracing was requested.
    pub objective_trace: Vec<f64>,
}

pub fn svm_fit(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<SvmModel, ClassifierError> {
    svm_fit_detailed(x, y, params, false).map(|(m, _)| m)
}

struct Kernel<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    full: Option<Vec<f64>>,
}

impl<'a> Kernel<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = x.len();
        let full = (n <= FULL_KERNEL_LIMIT).then(|| {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                k[i * n + i] = 1.0;
                for j in 0..i {
                    let v = rbf_kernel(&x[i], &x[j], gamma);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            k
        });
        Self { x, gamma, full }
    }

    fn row(&self, i: usize, buf: &mut Vec<f64>) {
        let n = self.x.len();
        buf.clear();
        match &self.full {
            Some(k) => buf.extend_from_slice(&k[i * n..(i + 1) * n]),
            None => buf.extend(self.x.iter().map(|xj| rbf_kernel(&self.x[i], xj, self.gamma))),
        }
    }
}

pub fn svm_fit_detailed(
    x: &[Vec<f64>],
    y: &[f64],
    params: &SvmParams,
    trace: bool,
) -> Result<(SvmModel, SvmSolution), ClassifierError> {
    let n = x.len();
    if n == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if y.len() != n {
        return Err(ClassifierError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let dim = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(ClassifierError::DimensionMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    if let Some(&v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(ClassifierError::InvalidBinaryLabel(v));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(ClassifierError::SingleClass);
    }
    let c = params.c;
    let gamma = params.gamma.unwrap_or_else(|| default_gamma(x));
    if !(c > 0.0 && c.is_finite()) {
        return Err(ClassifierError::InvalidParameter(format!("C = {c}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(ClassifierError::InvalidParameter(format!("gamma = {gamma}")));
    }
    if params.tol.is_nan() || params.tol <= 0.0 {
        return Err(ClassifierError::InvalidParameter(format!("tol = {}", params.tol)));
    }

    let kernel = Kernel::new(x, gamma);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let max_iter = params.max_passes.max(1).saturating_mul(n.max(10));
    let (mut ki, mut kj) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut trace_values = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;

    while iterations < max_iter {
        // first index: maximal violator in I_up
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i = t;
                }
            }
        }
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                g_min = g_min.min(-y[t] * grad[t]);
            }
        }
        gap = g_max - g_min;
        if i == usize::MAX || gap < params.tol {
            converged = true;
            break;
        }

        // partner: largest second-order gain among violating I_low members
        kernel.row(i, &mut ki);
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                let b = g_max + y[t] * grad[t];
                if b > 0.0 {
                    // K(t, t) = 1 for the RBF kernel
                    let a = (ki[i] + 1.0 - 2.0 * ki[t]).max(TAU);
                    let obj = -b * b / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }
        kernel.row(j, &mut kj);

        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
        let (mut ai, mut aj) = (old_ai, old_aj);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (dai, daj) = (ai - old_ai, aj - old_aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
        iterations += 1;
        if trace {
            let w: f64 =
                alpha.iter().zip(&grad).map(|(a, g)| 0.5 * a * (-g)).sum::<f64>() + 0.5 * alpha.iter().sum::<f64>();
            trace_values.push(w);
        }
    }

    let bias = -compute_rho(&alpha, y, &grad, c);
    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(x[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    let model = SvmModel {
        support_vectors,
        coef,
        bias,
        gamma,
        c,
        converged,
        iterations,
    };
    let solution = SvmSolution {
        alpha,
        bias,
        gamma,
        iterations,
        converged,
        gap,
        objective_trace: trace_values,
    };
    Ok((model, solution))
}

/// Offset `rho` with `f(x) = sum a_i y_i K(x_i, x) - rho`.
fn compute_rho(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Sigmoid fit `P(y = +1 | f) = 1 / (1 + exp(a f + b))` on decision values,
/// by Newton's method with backtracking on the regularised targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler {
    pub a: f64,
    pub b: f64,
}

impl PlattScaler {
    pub fn fit(decisions: &[f64], y: &[f64]) -> Self {
        let prior1 = y.iter().filter(|&&v| v > 0.0).count() as f64;
        let prior0 = y.len() as f64 - prior1;
        let hi = (prior1 + 1.0) / (prior1 + 2.0);
        let lo = 1.0 / (prior0 + 2.0);
        let t: Vec<f64> = y.iter().map(|&v| if v > 0.0 { hi } else { lo }).collect();

        let objective = |a: f64, b: f64| -> f64 {
            decisions
                .iter()
                .zip(&t)
                .map(|(&f, &ti)| {
                    let z = f * a + b;
                    if z >= 0.0 {
                        ti * z + (-z).exp().ln_1p()
                    } else {
                        (ti - 1.0) * z + z.exp().ln_1p()
                    }
                })
                .sum()
        };

        let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
            for (&f, &ti) in decisions.iter().zip(&t) {
                let z = f * a + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = ti - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < 1e-10 {
                break;
            }
        }
        Self { a, b }
    }

    pub fn probability(&self, decision: f64) -> f64 {
        let z = decision * self.a + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// SVM whose decision values are mapped to `[0, 1]` by a Platt sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSvm {
    pub svm: SvmModel,
    pub platt: PlattScaler,
}

impl Persist for CalibratedSvm {
    const KIND: &'static str = "calibrated-rbf-svm";
}

impl CalibratedSvm {
    /// Calibration uses decision values on the training set itself.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<Self, ClassifierError> {
        let svm = svm_fit(x, y, params)?;
        let decisions: Vec<f64> = x.iter().map(|r| svm.decision(r)).collect();
        let platt = PlattScaler::fit(&decisions, y);
        Ok(Self { svm, platt })
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        self.platt.probability(self.svm.decision(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kkt_max_residual(x: &[Vec<f64>], y: &[f64], sol: &SvmSolution, c: f64, model: &SvmModel) -> f64 {
        let mut worst = 0.0f64;
        for t in 0..x.len() {
            let yf = y[t] * model.decision(&x[t]);
            let a = sol.alpha[t];
            let r = if a <= 0.0 {
                (1.0 - yf).max(0.0)
            } else if a >= c {
                (yf - 1.0).max(0.0)
            } else {
                (yf - 1.0).abs()
            };
            worst = worst.max(r);
        }
        worst
    }

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![-1.0, 1.0];
        let params = SvmParams {
            c: 100.0,
            gamma: Some(0.5),
            ..SvmParams::default()
        };
        let m = svm_fit(&x, &y, &params).unwrap();
        assert!(m.decision(&[0.0]).abs() < 1e-9);
        assert_eq!(m.predict(&[0.5]), 1.0);
        assert_eq!(m.predict(&[-0.5]), -1.0);
        assert!(m.converged());
    }

    #[test]
    fn xor_is_separated() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let params = SvmParams {
            c: 10.0,
            gamma: Some(1.0),
            ..SvmParams::default()
        };
        let (m, sol) = svm_fit_detailed(&x, &y, &params, true).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(m.predict(xi), *yi);
        }
        assert!(kkt_max_residual(&x, &y, &sol, 10.0, &m) <= 1e-3);
        let w = dual_objective(&x, &y, &sol.alpha, 1.0);
        assert!((w - sol.objective_trace.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn contradictory_duplicates_hit_the_box() {
        let x = vec![vec![0.3, 0.3], vec![0.3, 0.3]];
        let y = vec![1.0, -1.0];
        let params = SvmParams {
            c: 0.1,
            gamma: Some(1.0),
            ..SvmParams::default()
        };
        let (m, sol) = svm_fit_detailed(&x, &y, &params, false).unwrap();
        assert_eq!(sol.alpha, vec![0.1, 0.1]);
        assert!(m.converged());
        assert!(m.decision(&[0.3, 0.3]).is_finite());
    }

    #[test]
    fn objective_trace_never_decreases() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let t = i as f64 * 0.7;
            x.push(vec![t.sin() * 2.0, (t * 1.3).cos() * 2.0]);
            y.push(if (t * 0.37).sin() > 0.0 { 1.0 } else { -1.0 });
        }
        let (_, sol) = svm_fit_detailed(&x, &y, &SvmParams::default(), true).unwrap();
        assert!(sol.objective_trace[0] > 0.0);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn isolated_support_vector_dominates_its_own_decision() {
        // one positive far from three tight negatives
        let x = vec![vec![10.0, 10.0], vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1]];
        let y = vec![1.0, -1.0, -1.0, -1.0];
        let params = SvmParams {
            c: 10.0,
            gamma: Some(1.0),
            ..SvmParams::default()
        };
        let (m, sol) = svm_fit_detailed(&x, &y, &params, false).unwrap();
        let own = sol.alpha[0] + m.bias();
        assert!((m.decision(&x[0]) - own).abs() <= 0.1 * own.abs());
    }

    #[test]
    fn large_gamma_decision_is_local() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let params = SvmParams {
            c: 5.0,
            gamma: Some(50.0),
            ..SvmParams::default()
        };
        let (m, sol) = svm_fit_detailed(&x, &y, &params, false).unwrap();
        for t in 0..6 {
            let single = sol.alpha[t] * y[t] + m.bias();
            assert!((m.decision(&x[t]) - single).abs() < 1e-12);
        }
        assert_eq!(m.decision(&x[2]), m.decision(&x[2]));
    }

    #[test]
    fn rejects_bad_input() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            svm_fit(&x, &[1.0, 1.0], &SvmParams::default()),
            Err(ClassifierError::SingleClass)
        ));
        assert!(matches!(
            svm_fit(&x, &[1.0, 0.0], &SvmParams::default()),
            Err(ClassifierError::InvalidBinaryLabel(_))
        ));
        let bad_c = SvmParams {
            c: 0.0,
            ..SvmParams::default()
        };
        assert!(svm_fit(&x, &[1.0, -1.0], &bad_c).is_err());
        let bad_gamma = SvmParams {
            gamma: Some(-1.0),
            ..SvmParams::default()
        };
        assert!(svm_fit(&x, &[1.0, -1.0], &bad_gamma).is_err());
    }

    #[test]
    fn default_gamma_matches_hand_value() {
        // per-dimension variances 1 and 4, mean 2.5, two features
        let x = vec![vec![-1.0, -2.0], vec![1.0, 2.0]];
        assert!((default_gamma(&x) - 1.0 / 5.0).abs() < 1e-15);
        assert_eq!(default_gamma(&[vec![3.0, 3.0]]), 0.5);
    }

    #[test]
    fn platt_is_monotone_and_calibrated_direction() {
        let d: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = d.iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect();
        let p = PlattScaler::fit(&d, &y);
        assert!(p.a < 0.0);
        assert!(p.probability(2.0) > 0.9);
        assert!(p.probability(-2.0) < 0.1);
        assert!(p.probability(0.5) > p.probability(0.4));
    }

    #[test]
    fn blob_round_trip_is_exact() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let m = CalibratedSvm::fit(&x, &y, &SvmParams::default()).unwrap();
        let back = CalibratedSvm::from_blob(&m.to_blob()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.probability(&[0.2, 0.9]), back.probability(&[0.2, 0.9]));
    }
}
