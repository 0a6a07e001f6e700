//! Small unconstrained optimizers used by the variance-component fits.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the objective changes by less than this (relative).
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            f_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// BFGS on the inverse Hessian with a backtracking Armijo line search.
/// `fg` returns the objective and its gradient; a non-finite objective
/// is treated as an infeasible step.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut h = identity(n);
    let mut scaled = false;
    for it in 0..opts.max_iter {
        if inf_norm(&g) < opts.grad_tol {
            return Ok(Minimum { x, f, grad: g, iterations: it, converged: true });
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (fnew, gnew) = fg(&xn);
            if fnew.is_finite() && gnew.iter().all(|v| v.is_finite()) && fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no descent possible along d: stationary to working precision
            let converged = inf_norm(&g) < opts.grad_tol.sqrt();
            return Ok(Minimum { x, f, grad: g, iterations: it, converged });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let small_change = (f - fnew).abs() <= opts.f_tol * (1.0 + f.abs());
        x = xn;
        f = fnew;
        g = gnew;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().enumerate().for_each(|(i, r)| r[i] = gamma);
                scaled = true;
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
        }
        if small_change && inf_norm(&g) < opts.grad_tol.sqrt() {
            return Ok(Minimum { x, f, grad: g, iterations: it + 1, converged: true });
        }
    }
    let converged = inf_norm(&g) < opts.grad_tol;
    Ok(Minimum { x, f, grad: g, iterations: opts.max_iter, converged })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() < tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_minimizes_rosenbrock() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (f, g)
        };
        let m = bfgs(fg, &[-1.2, 1.0], &BfgsOptions { max_iter: 500, ..Default::default() }).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bfgs_quadratic_is_exact() {
        // f = 0.5 x'Ax - b'x, minimizer A^{-1} b
        let a = [[3.0, 1.0], [1.0, 2.0]];
        let b = [1.0, -1.0];
        let fg = |x: &[f64]| {
            let ax = [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]];
            let f = 0.5 * (x[0] * ax[0] + x[1] * ax[1]) - b[0] * x[0] - b[1] * x[1];
            (f, vec![ax[0] - b[0], ax[1] - b[1]])
        };
        let m = bfgs(fg, &[0.0, 0.0], &BfgsOptions::default()).unwrap();
        assert!((m.x[0] - 0.6).abs() < 1e-6 && (m.x[1] + 0.8).abs() < 1e-6);
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let (x, fx) = golden_section(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, 1e-9, 200);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }
}
