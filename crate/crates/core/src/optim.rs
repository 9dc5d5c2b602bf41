//! Minimisers used by the estimation layer: bounded one-dimensional Brent
//! search and BFGS with a backtracking Armijo line search.
//!
//! Objectives report failure (non-finite value, rejected parameters) by
//! returning `None`; such points are treated as `+inf`.

const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
}

/// Brent's method on `[lo, hi]` (golden section with parabolic steps).
pub fn minimize_bounded<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_evals: usize) -> ScalarMin
where
    F: FnMut(f64) -> Option<f64>,
{
    let mut eval = |x: f64| f(x).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evaluations = 1;
    let (mut d, mut e) = (0.0f64, 0.0f64);

    while evaluations < max_evals {
        let mid = 0.5 * (a + b);
        let tol1 = 1e-10 * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = eval(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    ScalarMin { x, fx, evaluations }
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Stop once `max|g| <= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop once the accepted step is below `step_tol * (1 + max|x|)`.
    pub step_tol: f64,
    /// A stalled run still counts as converged when `max|g|` is below this.
    pub stall_grad: f64,
    pub max_evals: usize,
    /// Largest coordinate change of a trial step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            step_tol: 1e-9,
            stall_grad: 1e-3,
            max_evals: 2000,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective value after every accepted iteration (non-increasing).
    pub trace: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, which returns the value and fills the gradient.
/// Returns `None` when `f` fails at the starting point.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g).filter(|v| v.is_finite() && g.iter().all(|d| d.is_finite()))?;
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut trace = vec![fx];
    let identity = |scale: f64| {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = scale;
        }
        h
    };
    let mut hinv = identity(1.0);
    let mut fresh = true;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];

    let converged = loop {
        if max_abs(&g) <= opts.grad_tol * (1.0 + fx.abs()) {
            break true;
        }
        if evaluations >= opts.max_evals {
            break false;
        }
        for i in 0..n {
            dir[i] = -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            hinv = identity(1.0);
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = dot(&dir, &g);
            fresh = true;
        }
        let longest = max_abs(&dir);
        let mut step = if longest > opts.max_step { opts.max_step / longest } else { 1.0 };

        let mut accepted = None;
        while evaluations < opts.max_evals {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            evaluations += 1;
            let trial = f(&x_new, &mut g_new).filter(|v| v.is_finite() && g_new.iter().all(|d| d.is_finite()));
            match trial {
                Some(ft) if ft <= fx + 1e-4 * step * slope => {
                    accepted = Some(ft);
                    break;
                }
                Some(ft) => {
                    // Quadratic interpolation, safeguarded to [0.1, 0.5] of the step.
                    let denom = 2.0 * (ft - fx - step * slope);
                    let cand = if denom > 0.0 { -slope * step * step / denom } else { 0.5 * step };
                    step = cand.clamp(0.1 * step, 0.5 * step);
                }
                None => step *= 0.25,
            }
            if step * longest < opts.step_tol * (1.0 + max_abs(&x)) {
                break;
            }
        }

        let Some(f_new) = accepted else {
            if !fresh {
                // Retry once along steepest descent with a reset metric.
                hinv = identity(1.0);
                fresh = true;
                continue;
            }
            break max_abs(&g) <= opts.stall_grad;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let small_step = max_abs(&s) < opts.step_tol * (1.0 + max_abs(&x));
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        iterations += 1;
        trace.push(fx);

        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                hinv.iter_mut().for_each(|h| *h *= scale);
                fresh = false;
            }
            // H+ = (I - rho s y') H (I - rho y s') + rho s s'
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hinv[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        if small_step {
            break max_abs(&g) <= opts.stall_grad || max_abs(&g) <= opts.grad_tol * (1.0 + fx.abs());
        }
    };

    Some(BfgsOutcome {
        x,
        f: fx,
        grad: g,
        iterations,
        evaluations,
        converged,
        trace,
    })
}
