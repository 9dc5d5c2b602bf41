//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

/// Adaptive Simpson quadrature of `f` over `[a, b]`, started from 64 panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == PANELS { b } else { lo + h };
            simpson_adaptive(&f, lo, hi, tol / PANELS as f64)
        })
        .sum()
}

fn simpson_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 30)
}

/// Root of a monotone `f` on `[lo, hi]` by bisection.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Central difference derivative.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Dvoretzky-Kiefer-Wolfowitz half-width for `n` draws at confidence `1 - alpha`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Largest gap between the empirical CDF of `draws` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(draws: &[f64], cdf: F) -> f64 {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Gamma density with mean `mu` and scale `b` (shape `mu / b`).
pub fn gamma_pdf(r: f64, mu: f64, b: f64) -> f64 {
    let k = mu / b;
    if r <= 0.0 {
        return 0.0;
    }
    ((k - 1.0) * r.ln() - r / b - statrs::function::gamma::ln_gamma(k) - k * b.ln()).exp()
}

/// `E[exp(-s G)]` for `G ~ Gamma(mean mu, scale b)` by quadrature.
pub fn gamma_laplace_quadrature(s: f64, mu: f64, b: f64) -> f64 {
    let k = mu / b;
    if k < 1.0 {
        // r = u^(1/k) removes the density's singularity at 0.
        let c = (statrs::function::gamma::ln_gamma(k) + k * b.ln() + k.ln()).exp();
        let upper = (b * (k + 80.0)).powf(k);
        integrate(|u| (-(s + 1.0 / b) * u.powf(1.0 / k)).exp() / c, 0.0, upper, 1e-13)
    } else {
        let sd = (mu * b).sqrt();
        let lo = (mu - 40.0 * sd).max(0.0);
        let hi = mu + 40.0 * sd + 40.0 * b;
        integrate(|r| (-s * r).exp() * gamma_pdf(r, mu, b), lo, hi, 1e-13)
    }
}
