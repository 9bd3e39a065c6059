//! L2-regularized logistic regression.
//!
//! Minimizes `0.5 * |w|^2 + C * sum_i ln(1 + exp(-s_i (w.x_i + b)))` with
//! `s_i = ±1`, by full-batch damped Newton iterations with Armijo
//! backtracking (plain gradient steps if the Hessian solve fails). The
//! intercept is not penalized, so the descent runs on mean-centered columns
//! (`w.(x - m) + b'`) and maps back to `b = b' - w.m` at the end; both
//! parametrizations have the same objective value at every iterate.

use crate::matrix::Matrix;
use crate::par;
use crate::stats::{log1p_exp, sigmoid};

/// Per-fit optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTrace {
    /// Objective after each accepted step, starting with the initial value.
    pub objective: Vec<f64>,
    /// Euclidean norm of the gradient in the original parametrization.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub trace: LogisticTrace,
}

struct Problem<'a> {
    x: &'a Matrix,
    sign: Vec<f64>,
    means: Vec<f64>,
    c: f64,
}

impl Problem<'_> {
    #[inline]
    fn margin(&self, i: usize, w: &[f64], b: f64) -> f64 {
        let row = self.x.row(i);
        let mut z = b;
        for j in 0..w.len() {
            z += w[j] * (row[j] - self.means[j]);
        }
        self.sign[i] * z
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let loss = par::chunked_sum(self.x.n_rows(), |i| log1p_exp(-self.margin(i, w, b)));
        0.5 * w.iter().map(|v| v * v).sum::<f64>() + self.c * loss
    }

    /// `objective(w - t d, b - t d_b) - objective(w, b)`, summed per row as
    /// `log1p(sigmoid(-m) expm1(t u))` so that changes far below the
    /// objective's own rounding error are still resolved.
    fn change(&self, w: &[f64], b: f64, d: &[f64], t: f64) -> f64 {
        let p = w.len();
        let reg: f64 = (0..p).map(|j| t * d[j] * (0.5 * t * d[j] - w[j])).sum();
        let loss = par::chunked_sum(self.x.n_rows(), |i| {
            let row = self.x.row(i);
            let mut u = d[p];
            for j in 0..p {
                u += d[j] * (row[j] - self.means[j]);
            }
            let u = self.sign[i] * u;
            let m = self.margin(i, w, b);
            let delta = t * u;
            let exact = (sigmoid(-m) * delta.exp_m1()).ln_1p();
            if exact.is_finite() {
                exact
            } else {
                log1p_exp(-m + delta) - log1p_exp(-m)
            }
        });
        reg + self.c * loss
    }

    /// Gradient in centered coordinates: `p` weight entries then the intercept.
    fn gradient(&self, w: &[f64], b: f64) -> Vec<f64> {
        let p = w.len();
        let mut g = par::chunked_vec_sum(self.x.n_rows(), p + 1, |i, acc| {
            let coef = -self.sign[i] * sigmoid(-self.margin(i, w, b));
            let row = self.x.row(i);
            for j in 0..p {
                acc[j] += coef * (row[j] - self.means[j]);
            }
            acc[p] += coef;
        });
        for v in g.iter_mut() {
            *v *= self.c;
        }
        for j in 0..p {
            g[j] += w[j];
        }
        g
    }

    /// Hessian in centered coordinates as a dense row-major `(p+1)^2` block.
    fn hessian(&self, w: &[f64], b: f64) -> Vec<f64> {
        let p = w.len();
        let d = p + 1;
        let mut h = par::chunked_vec_sum(self.x.n_rows(), d * d, |i, acc| {
            let s = sigmoid(self.margin(i, w, b));
            let curv = s * (1.0 - s);
            let row = self.x.row(i);
            let z = |j: usize| if j == p { 1.0 } else { row[j] - self.means[j] };
            for a in 0..d {
                let za = curv * z(a);
                for c in 0..=a {
                    acc[a * d + c] += za * z(c);
                }
            }
        });
        for a in 0..d {
            for c in 0..=a {
                h[a * d + c] *= self.c;
                h[c * d + a] = h[a * d + c];
            }
        }
        for j in 0..p {
            h[j * d + j] += 1.0;
        }
        h
    }

    /// Norm of the gradient with respect to the uncentered `(w, b)`.
    fn original_gradient_norm(&self, g: &[f64]) -> f64 {
        let p = self.means.len();
        let gb = g[p];
        let mut sq = gb * gb;
        for (gj, m) in g[..p].iter().zip(&self.means) {
            let gj = gj + m * gb;
            sq += gj * gj;
        }
        sq.sqrt()
    }
}

pub(crate) fn fit(x: &Matrix, y: &[u8], c: f64, max_iterations: usize, tolerance: f64) -> LogisticFit {
    let n = x.n_rows();
    let p = x.n_cols();
    let means: Vec<f64> = (0..p)
        .map(|j| par::chunked_sum(n, |i| x.get(i, j)) / n as f64)
        .collect();
    let problem = Problem {
        x,
        sign: y.iter().map(|&t| if t == 1 { 1.0 } else { -1.0 }).collect(),
        means,
        c,
    };

    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut f = problem.objective(&w, b);
    let mut objective = vec![f];
    let mut g = problem.gradient(&w, b);
    let mut gnorm = problem.original_gradient_norm(&g);
    let mut iterations = 0;

    while gnorm > tolerance && iterations < max_iterations {
        let direction = match cholesky_solve(problem.hessian(&w, b), &g) {
            Some(step) if step.iter().all(|v| v.is_finite()) => step,
            _ => g.clone(),
        };
        // descent requires g.d > 0 for the update x - t d
        let slope: f64 = g.iter().zip(&direction).map(|(a, d)| a * d).sum();
        let direction = if slope > 0.0 { direction } else { g.clone() };
        let slope: f64 = g.iter().zip(&direction).map(|(a, d)| a * d).sum();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let change = problem.change(&w, b, &direction, t);
            if change <= -0.5 * t * slope {
                let w_new: Vec<f64> = w.iter().zip(&direction).map(|(wj, dj)| wj - t * dj).collect();
                accepted = Some((w_new, b - t * direction[p], f + change));
                break;
            }
            t *= 0.5;
        }
        let Some((w_new, b_new, f_new)) = accepted else {
            // no representable decrease left along the direction
            break;
        };
        iterations += 1;
        w = w_new;
        b = b_new;
        f = f_new;
        objective.push(f);
        g = problem.gradient(&w, b);
        gnorm = problem.original_gradient_norm(&g);
    }

    let intercept = b - w.iter().zip(&problem.means).map(|(wj, mj)| wj * mj).sum::<f64>();
    LogisticFit {
        weights: w,
        intercept,
        trace: LogisticTrace {
            objective,
            gradient_norm: gnorm,
            iterations,
            converged: gnorm <= tolerance,
        },
    }
}

/// Solves `h x = g` for symmetric positive definite `h` (row-major, consumed).
fn cholesky_solve(mut h: Vec<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let d = g.len();
    for j in 0..d {
        let mut diag = h[j * d + j];
        for k in 0..j {
            diag -= h[j * d + k] * h[j * d + k];
        }
        if !(diag > 0.0) {
            return None;
        }
        let diag = diag.sqrt();
        h[j * d + j] = diag;
        for i in j + 1..d {
            let mut v = h[i * d + j];
            for k in 0..j {
                v -= h[i * d + k] * h[j * d + k];
            }
            h[i * d + j] = v / diag;
        }
    }
    let mut y = g.to_vec();
    for i in 0..d {
        for k in 0..i {
            y[i] -= h[i * d + k] * y[k];
        }
        y[i] /= h[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            y[i] -= h[k * d + i] * y[k];
        }
        y[i] /= h[i * d + i];
    }
    Some(y)
}

/// Objective in the original parametrization; used by tests as a check on
/// the centered computation.
pub fn objective(x: &Matrix, y: &[u8], c: f64, weights: &[f64], intercept: f64) -> f64 {
    let mut loss = 0.0;
    for (i, row) in x.rows().enumerate() {
        let z: f64 = intercept + row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        let s = if y[i] == 1 { 1.0 } else { -1.0 };
        loss += log1p_exp(-s * z);
    }
    0.5 * weights.iter().map(|v| v * v).sum::<f64>() + c * loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_decreases_and_matches_uncentered_form() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let a = ((i * 37) % 101) as f64 / 100.0;
                let b = ((i * 53) % 97) as f64 / 96.0;
                vec![a, b]
            })
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| u8::from(r[0] + 0.3 * r[1] + 0.1 * ((i % 7) as f64 - 3.0) > 0.6))
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let fit = fit(&x, &y, 10.0, 10_000, 1e-6);
        let obj = &fit.trace.objective;
        assert!(obj.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.trace.converged, "gradient norm {}", fit.trace.gradient_norm);
        let direct = objective(&x, &y, 10.0, &fit.weights, fit.intercept);
        assert!((direct - obj.last().unwrap()).abs() < 1e-8 * direct.abs().max(1.0));
    }
}
