//! Independent oracles shared by the integration test targets.

#![allow(dead_code)]

/// Unnormalized Student-t density.
fn t_kernel(x: f64, df: f64) -> f64 {
    (1.0 + x * x / df).powf(-(df + 1.0) / 2.0)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, eps, 50)
}

/// ∫_lo^∞ of the t kernel, mapped onto `[0, 1)` by x = lo + s / (1 − s).
fn tail(lo: f64, df: f64) -> f64 {
    let g = move |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = lo + s / (1.0 - s);
        t_kernel(x, df) / ((1.0 - s) * (1.0 - s))
    };
    // Split the interval so that the bulk near s = 0 is resolved before the tail.
    let cuts = [0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999, 1.0];
    cuts.windows(2).map(|w| integrate(&g, w[0], w[1], 1e-13)).sum()
}

/// Two-tailed p-value of Student's t by direct quadrature of the density,
/// normalized by the quadrature of the half-line.
pub fn t_two_tailed_by_quadrature(t: f64, df: f64) -> f64 {
    tail(t.abs(), df) / tail(0.0, df)
}

/// Rescales `base` to the exact sample mean and sample sd requested.
pub fn affine_to(base: &[f64], mean: f64, sd: f64) -> Vec<f64> {
    let n = base.len() as f64;
    let m = base.iter().sum::<f64>() / n;
    let s = (base.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
    base.iter().map(|x| mean + sd * (x - m) / s).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Welch t and df straight from the textbook formulas.
pub fn welch_by_hand(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_sd(a).powi(2) / na, sample_sd(b).powi(2) / nb);
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    (t, df)
}
