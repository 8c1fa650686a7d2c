//! Box-constrained quasi-Newton minimization.
//!
//! Projected BFGS: variables sitting on a bound with the gradient pushing
//! outward are held fixed for the iteration, the inverse-Hessian step is
//! taken in the remaining coordinates, and the trial point is projected back
//! onto the box before an Armijo backtracking test. A non-finite cost is
//! treated as infeasible and triggers backtracking.

/// Stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative cost change below which an iteration counts as stalled.
    pub f_tol: f64,
    /// Infinity norm of the projected gradient treated as stationary.
    pub pg_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 400,
            f_tol: 1e-12,
            pg_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| (xi - (xi - gi).clamp(lo, hi)).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// `f(x, grad)` returns the cost and writes the gradient into `grad`.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &BfgsOptions) -> OptResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(lower.len(), dim);
    assert_eq!(upper.len(), dim);

    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return OptResult {
            x,
            f: fx,
            iterations: 0,
            evaluations,
            converged: false,
        };
    }

    let mut h = identity(dim);
    let mut fresh = true;
    let mut stalls = 0;
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut d = vec![0.0; dim];

    for iter in 0..opts.max_iter {
        if projected_gradient_norm(&x, &g, lower, upper) < opts.pg_tol {
            return OptResult {
                x,
                f: fx,
                iterations: iter,
                evaluations,
                converged: true,
            };
        }

        let free: Vec<bool> = (0..dim)
            .map(|i| {
                let at_lo = x[i] <= lower[i] && g[i] > 0.0;
                let at_hi = x[i] >= upper[i] && g[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        direction(&h, &g, &free, &mut d);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(dim);
            fresh = true;
            direction(&h, &g, &free, &mut d);
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        if fresh {
            // Unit-length first step in the untrained metric.
            let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if scale > 1.0 {
                d.iter_mut().for_each(|v| *v /= scale);
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..dim {
                x_new[i] = x[i] + step * d[i];
            }
            project(&mut x_new, lower, upper);
            let decrease: f64 = (0..dim).map(|i| g[i] * (x_new[i] - x[i])).sum();
            let f_trial = f(&x_new, &mut g_new);
            evaluations += 1;
            if f_trial.is_finite() && f_trial <= fx + ARMIJO * decrease {
                accepted = Some(f_trial);
                break;
            }
            step *= 0.5;
        }
        let Some(f_trial) = accepted else {
            if fresh {
                break;
            }
            h = identity(dim);
            fresh = true;
            continue;
        };

        let s: Vec<f64> = (0..dim).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..dim).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
            if fresh {
                let gamma = sy / yy;
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = gamma;
                }
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }

        let change = (fx - f_trial).abs();
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        let prev = fx;
        fx = f_trial;
        if change <= opts.f_tol * prev.abs().max(1.0) {
            stalls += 1;
            if stalls >= 2 {
                return OptResult {
                    x,
                    f: fx,
                    iterations: iter + 1,
                    evaluations,
                    converged: true,
                };
            }
        } else {
            stalls = 0;
        }
    }
    let converged = projected_gradient_norm(&x, &g, lower, upper) < opts.pg_tol;
    OptResult {
        x,
        f: fx,
        iterations: opts.max_iter,
        evaluations,
        converged,
    }
}

fn identity(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| {
            let mut row = vec![0.0; dim];
            row[i] = 1.0;
            row
        })
        .collect()
}

fn direction(h: &[Vec<f64>], g: &[f64], free: &[bool], d: &mut [f64]) {
    for i in 0..g.len() {
        d[i] = if free[i] {
            -(0..g.len())
                .filter(|&j| free[j])
                .map(|j| h[i][j] * g[j])
                .sum::<f64>()
        } else {
            0.0
        };
    }
}

/// Inverse-Hessian update `H ← (I - ρsyᵀ) H (I - ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let dim = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..dim)
        .map(|i| (0..dim).map(|j| h[i][j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..dim {
        for j in 0..dim {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Central-difference gradient, for callers without analytic derivatives.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let r = minimize(
            rosenbrock,
            &[-1.2, 1.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &BfgsOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn active_bound_is_respected() {
        // Minimum of the quadratic lies outside the box at (2, -1).
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] + 1.0);
            (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2)
        };
        let r = minimize(f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &BfgsOptions::default());
        assert!(r.converged);
        assert_eq!(r.x, vec![1.0, 0.0]);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // Cost is infinite for x < 0.5; minimum of the finite part at 0.7.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] < 0.5 {
                return f64::INFINITY;
            }
            g[0] = 2.0 * (x[0] - 0.7);
            (x[0] - 0.7).powi(2)
        };
        let r = minimize(f, &[3.0], &[-5.0], &[5.0], &BfgsOptions::default());
        assert!((r.x[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn infeasible_start_reports_failure() {
        let f = |_: &[f64], _: &mut [f64]| f64::INFINITY;
        let r = minimize(f, &[0.0], &[-1.0], &[1.0], &BfgsOptions::default());
        assert!(!r.converged);
        assert!(r.f.is_infinite());
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-6 && (g[1] - 3.0).abs() < 1e-6);
    }
}
