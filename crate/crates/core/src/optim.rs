//! Small unconstrained minimizers.
//!
//! Constraints are handled by the objective returning `+inf` (or NaN) outside
//! the feasible set; both methods treat such points as infinitely bad.

use std::cell::Cell;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    /// Stop when every vertex is within this max-norm distance of the best.
    pub diameter_tol: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            diameter_tol: 1e-8,
            max_evaluations: 10_000,
        }
    }
}

impl NelderMead {
    /// Minimize `f` from `x0` with an axis-aligned initial simplex of the
    /// given per-coordinate step.
    pub fn minimize<F>(&self, f: F, x0: &[f64], step: &[f64]) -> Minimum
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = x0.len();
        assert_eq!(step.len(), n);
        let evals = Cell::new(0usize);
        let eval = |x: &[f64]| {
            evals.set(evals.get() + 1);
            sanitize(f(x))
        };

        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        pts.push(x0.to_vec());
        for i in 0..n {
            let mut p = x0.to_vec();
            p[i] += step[i];
            pts.push(p);
        }
        let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

        let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
        let mut converged = false;
        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            pts = order.iter().map(|&i| pts[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();

            let diameter = pts[1..]
                .iter()
                .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if diameter < self.diameter_tol && vals[0].is_finite() {
                converged = true;
                break;
            }
            if evals.get() >= self.max_evaluations {
                break;
            }

            let mut centroid = vec![0.0; n];
            for p in &pts[..n] {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&pts[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(alpha);
            let fr = eval(&xr);
            if fr < vals[0] {
                let xe = along(gamma);
                let fe = eval(&xe);
                if fe < fr {
                    pts[n] = xe;
                    vals[n] = fe;
                } else {
                    pts[n] = xr;
                    vals[n] = fr;
                }
                continue;
            }
            if fr < vals[n - 1] {
                pts[n] = xr;
                vals[n] = fr;
                continue;
            }
            // outside contraction when the reflection beat the worst point
            let xc = if fr < vals[n] { along(rho) } else { along(-rho) };
            let fc = eval(&xc);
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
                continue;
            }
            let best = pts[0].clone();
            for i in 1..=n {
                let p: Vec<f64> = pts[i]
                    .iter()
                    .zip(&best)
                    .map(|(x, b)| b + shrink * (x - b))
                    .collect();
                vals[i] = eval(&p);
                pts[i] = p;
            }
        }
        let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        Minimum {
            x: pts[best].clone(),
            value: vals[best],
            evaluations: evals.get(),
            converged,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Bfgs {
    /// Max-norm of the gradient at which to stop.
    pub gradient_tol: f64,
    pub max_iterations: usize,
}

impl Default for Bfgs {
    fn default() -> Self {
        Bfgs {
            gradient_tol: 1e-7,
            max_iterations: 5_000,
        }
    }
}

impl Bfgs {
    /// Minimize `f`, where `f(x)` returns the value and gradient. `x0` must
    /// be feasible (finite value).
    pub fn minimize<F>(&self, f: F, x0: &[f64]) -> Minimum
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>),
    {
        let n = x0.len();
        let evals = Cell::new(0usize);
        let eval = |x: &[f64]| {
            evals.set(evals.get() + 1);
            let (v, g) = f(x);
            (sanitize(v), g)
        };
        let mut x = x0.to_vec();
        let (mut fx, mut g) = eval(&x);
        if !fx.is_finite() {
            return Minimum {
                x,
                value: fx,
                evaluations: evals.get(),
                converged: false,
            };
        }
        let mut h = identity(n);
        let mut converged = false;
        let mut stalls = 0;
        for _ in 0..self.max_iterations {
            if max_abs(&g) < self.gradient_tol {
                converged = true;
                break;
            }
            let mut dir: Vec<f64> = mat_vec(&h, &g).iter().map(|v| -v).collect();
            let mut slope = dot(&dir, &g);
            if slope >= 0.0 {
                // lost positive definiteness: restart along steepest descent
                h = identity(n);
                dir = g.iter().map(|v| -v).collect();
                slope = dot(&dir, &g);
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let (fnew, gnew) = eval(&xn);
                if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
                t *= 0.5;
            }
            let Some((xn, fnew, gnew)) = accepted else {
                if h == identity(n) {
                    break;
                }
                h = identity(n);
                continue;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                bfgs_update(&mut h, &s, &y, sy);
            }
            let improvement = fx - fnew;
            x = xn;
            fx = fnew;
            g = gnew;
            if improvement <= 1e-15 * fx.abs().max(1.0) {
                stalls += 1;
                if stalls >= 5 {
                    converged = max_abs(&g) < self.gradient_tol.sqrt();
                    break;
                }
            } else {
                stalls = 0;
            }
        }
        Minimum {
            x,
            value: fx,
            evaluations: evals.get(),
            converged,
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

/// Central finite-difference gradient.
pub fn numerical_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> (f64, Vec<f64>) {
        let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        let g1 = 200.0 * (x[1] - x[0] * x[0]);
        (rosenbrock(x), vec![g0, g1])
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let m = NelderMead::default().minimize(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_respects_infeasible_region() {
        // minimum of (x-2)^2 restricted to x <= 1
        let f = |x: &[f64]| if x[0] > 1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) + x[1] * x[1] };
        let m = NelderMead::default().minimize(f, &[0.0, 0.5], &[0.3, 0.3]);
        assert!((m.x[0] - 1.0).abs() < 1e-6);
        assert!(m.x[0] <= 1.0);
    }

    #[test]
    fn nelder_mead_budget_flag() {
        let nm = NelderMead {
            diameter_tol: 1e-30,
            max_evaluations: 50,
        };
        let m = nm.minimize(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1]);
        assert!(!m.converged);
        assert!(m.evaluations >= 50);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let m = Bfgs::default().minimize(rosenbrock_grad, &[-1.2, 1.0]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_quadratic_with_barrier() {
        // interior optimum, but the first full step leaves the feasible set
        let f = |x: &[f64]| {
            if x[0] <= -0.5 {
                return (f64::INFINITY, vec![0.0; x.len()]);
            }
            let v = x.iter().enumerate().map(|(i, v)| (v - i as f64).powi(2)).sum();
            let g = x.iter().enumerate().map(|(i, v)| 2.0 * (v - i as f64)).collect();
            (v, g)
        };
        let m = Bfgs::default().minimize(f, &[3.0, 0.0, 0.0, 0.0]);
        assert!(m.converged);
        assert!((m.x[3] - 3.0).abs() < 1e-6);
        assert!(m.x[0].abs() < 1e-6);
    }

    #[test]
    fn finite_difference_gradient() {
        let g = numerical_gradient(rosenbrock, &[0.5, 0.3], 1e-6);
        let (_, exact) = rosenbrock_grad(&[0.5, 0.3]);
        for (a, b) in g.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
