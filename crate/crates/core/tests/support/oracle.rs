//! Slow, direct reference implementations used to check the library.
//!
//! Nothing here shares code with the crate under test: correlations are
//! computed by textbook formulas and pair enumeration, and Student-t tail
//! probabilities by adaptive Simpson integration of the density.
#![allow(dead_code)]

use std::f64::consts::PI;

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let mx = sx / n;
    let my = sy / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Tau-b by enumerating all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tie_x += 1;
            }
            if dy == 0.0 {
                tie_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let total = (n * (n - 1) / 2) as i64;
    let denom = ((total - tie_x) as f64) * ((total - tie_y) as f64);
    if denom == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / denom.sqrt())
}

/// Gamma at a positive multiple of one half, by the recurrence from 1 or sqrt(pi).
fn gamma_half(twice_x: u32) -> f64 {
    let (mut g, mut k) = if twice_x.is_multiple_of(2) { (1.0, 2) } else { (PI.sqrt(), 1) };
    while k < twice_x {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

pub fn t_density(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * PI).sqrt() * gamma_half(df));
    c * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, 1e-14, 50)
}

/// P(T > t) for t >= 0.
fn upper_tail(t: f64, df: u32) -> f64 {
    if t <= 1.0 {
        0.5 - integrate(&|s| t_density(s, df), 0.0, t)
    } else {
        // substitute s = 1/u to integrate over a finite range
        integrate(&|u: f64| if u == 0.0 { tail_limit(df) } else { t_density(1.0 / u, df) / (u * u) }, 0.0, 1.0 / t)
    }
}

/// Limit of density(1/u)/u^2 as u -> 0: non-zero only for one degree of freedom.
fn tail_limit(df: u32) -> f64 {
    if df == 1 {
        1.0 / PI
    } else {
        0.0
    }
}

pub fn t_two_tailed(t: f64, df: u32) -> f64 {
    (2.0 * upper_tail(t.abs(), df)).min(1.0)
}

pub fn t_cdf(t: f64, df: u32) -> f64 {
    if t >= 0.0 {
        1.0 - upper_tail(t, df)
    } else {
        upper_tail(-t, df)
    }
}

pub fn t_quantile(p: f64, df: u32) -> f64 {
    thread_local! {
        static CACHE: std::cell::RefCell<std::collections::HashMap<(u64, u32), f64>> = Default::default();
    }
    if let Some(q) = CACHE.with(|c| c.borrow().get(&(p.to_bits(), df)).copied()) {
        return q;
    }
    let q = bisect_quantile(p, df);
    CACHE.with(|c| c.borrow_mut().insert((p.to_bits(), df), q));
    q
}

fn bisect_quantile(p: f64, df: u32) -> f64 {
    let (mut lo, mut hi) = (-1e3, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// (t, df, two-tailed p) of the paired test of a - b.
pub fn paired_t(a: &[f64], b: &[f64]) -> Option<(f64, u32, f64)> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = sd(&d);
    if s == 0.0 {
        return None;
    }
    let n = d.len();
    let t = mean(&d) * (n as f64).sqrt() / s;
    let df = (n - 1) as u32;
    Some((t, df, t_two_tailed(t, df)))
}

pub fn cohens_d(a: &[f64], b: &[f64]) -> Option<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = sd(&d);
    (s != 0.0).then(|| mean(&d) / s)
}

/// (mean, low, high).
pub fn ci95(x: &[f64]) -> Option<(f64, f64, f64)> {
    let s = sd(x);
    if s == 0.0 {
        return None;
    }
    let n = x.len();
    let q = t_quantile(0.975, (n - 1) as u32);
    let m = mean(x);
    let h = q * s / (n as f64).sqrt();
    Some((m, m - h, m + h))
}

// ---------------------------------------------------------------------------
// vectors

pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    1.0 - dot / (nu * nv)
}

/// Word-vector sum over whitespace tokens of a table; `None` if no token is known.
pub fn embed_sum(text: &str, table: &[(&str, Vec<f64>)]) -> Option<Vec<f64>> {
    let dim = table[0].1.len();
    let mut acc = vec![0.0; dim];
    let mut hits = 0;
    for tok in text.split_whitespace() {
        if let Some((_, v)) = table.iter().find(|(t, _)| *t == tok) {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
            hits += 1;
        }
    }
    (hits > 0).then_some(acc)
}
