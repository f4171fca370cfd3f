use serde::{Deserialize, Serialize};

use super::{ClassifierError, Persist};

const MAX_NEWTON_STEPS: usize = 50;
const GRAD_TOL: f64 = 1e-9;

/// L2-regularised binary logistic regression, fitted by Newton's method.
///
/// Minimises `sum_i softplus(z_i) - t_i z_i + l2/2 |w|^2` with
/// `z = w.x + b`; the intercept is not penalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
}

impl Persist for LogisticModel {
    const KIND: &'static str = "logistic";
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    /// `positives` get target 1, `negatives` target 0.
    pub fn fit(positives: &[&[f64]], negatives: &[&[f64]], l2: f64) -> Result<Self, ClassifierError> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(ClassifierError::SingleClass);
        }
        if !(l2 > 0.0 && l2.is_finite()) {
            return Err(ClassifierError::InvalidParameter(format!("l2 = {l2}")));
        }
        let d = positives[0].len();
        let rows: Vec<(&[f64], f64)> = positives
            .iter()
            .map(|x| (*x, 1.0))
            .chain(negatives.iter().map(|x| (*x, 0.0)))
            .collect();
        if let Some(r) = rows.iter().find(|r| r.0.len() != d) {
            return Err(ClassifierError::DimensionMismatch {
                expected: d,
                got: r.0.len(),
            });
        }

        // parameter vector is [w..., b]
        let p = d + 1;
        let mut theta = vec![0.0; p];
        let loss = |theta: &[f64]| -> f64 {
            let data: f64 = rows
                .iter()
                .map(|(x, t)| {
                    let z = dot(&theta[..d], x) + theta[d];
                    softplus(z) - t * z
                })
                .sum();
            data + 0.5 * l2 * dot(&theta[..d], &theta[..d])
        };
        let mut current = loss(&theta);
        for _ in 0..MAX_NEWTON_STEPS {
            let mut grad = vec![0.0; p];
            let mut hess = vec![0.0; p * p];
            for (x, t) in &rows {
                let z = dot(&theta[..d], x) + theta[d];
                let s = sigmoid(z);
                let (r, w) = (s - t, s * (1.0 - s));
                for a in 0..p {
                    let xa = if a < d { x[a] } else { 1.0 };
                    grad[a] += r * xa;
                    for b in 0..=a {
                        let xb = if b < d { x[b] } else { 1.0 };
                        hess[a * p + b] += w * xa * xb;
                    }
                }
            }
            for a in 0..d {
                grad[a] += l2 * theta[a];
                hess[a * p + a] += l2;
            }
            hess[d * p + d] += 1e-10;
            if grad.iter().all(|g| g.abs() < GRAD_TOL) {
                break;
            }
            for a in 0..p {
                for b in 0..a {
                    hess[b * p + a] = hess[a * p + b];
                }
            }
            let step = cholesky_solve(&mut hess, &grad, p)
                .ok_or_else(|| ClassifierError::InvalidParameter("singular Hessian".into()))?;
            let slope = -dot(&grad, &step);
            let mut scale = 1.0;
            loop {
                let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - scale * s).collect();
                let value = loss(&trial);
                if value <= current + 1e-4 * scale * slope {
                    theta = trial;
                    current = value;
                    break;
                }
                scale *= 0.5;
                if scale < 1e-10 {
                    break;
                }
            }
            if scale < 1e-10 {
                break;
            }
        }
        Ok(Self {
            weights: theta[..d].to_vec(),
            intercept: theta[d],
            l2,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` for symmetric positive-definite `A` (row-major, `n x n`),
/// overwriting `A` with its Cholesky factor. `None` if `A` is not SPD.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag.is_nan() || diag <= 0.0 {
            return None;
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / ljj;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}
