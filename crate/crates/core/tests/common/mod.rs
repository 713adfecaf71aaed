#![allow(dead_code)]

//! Brute-force reference implementations used by the integration tests.
//! Everything here recomputes from raw slices and shares no code with the
//! library beyond plain data types.

use segpoint::VarianceRule;

pub const SEPARATED: f64 = f64::MAX;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-pass sample variance, 0 for a singleton.
pub fn var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn moving_range_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 1..v.len() {
        s += (v[i] - v[i - 1]).abs();
    }
    let sigma = s / (v.len() - 1) as f64 / (2.0 / std::f64::consts::PI.sqrt());
    sigma * sigma
}

fn rule_var(rule: VarianceRule, cluster: &[f64], sigma2: f64) -> f64 {
    let v = var(cluster);
    let n = cluster.len() as f64;
    match rule {
        VarianceRule::Zero => v,
        VarianceRule::MovingRange => {
            if cluster.len() == 1 {
                sigma2
            } else {
                v
            }
        }
        VarianceRule::Floor => v.max(sigma2),
        VarianceRule::Pooled => ((n - 1.0) * v + sigma2) / n,
    }
}

pub fn distance(a: &[f64], b: &[f64], rule: VarianceRule, sigma2: f64) -> f64 {
    let num = (mean(a) - mean(b)).abs();
    let den2 =
        rule_var(rule, a, sigma2) / a.len() as f64 + rule_var(rule, b, sigma2) / b.len() as f64;
    if den2 > 0.0 {
        num / den2.sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        SEPARATED
    }
}

/// `(level, location, distance)` sorted by level, location 1-based.
pub type Trace = Vec<(usize, usize, f64)>;

pub fn agglomerate(v: &[f64], rule: VarianceRule) -> Trace {
    let m = v.len();
    let sigma2 = if rule == VarianceRule::Zero {
        0.0
    } else {
        moving_range_var(v)
    };
    let mut bounds: Vec<usize> = (1..m).collect();
    let mut out = Vec::new();
    for k in 1..m {
        let cuts: Vec<usize> = std::iter::once(0)
            .chain(bounds.iter().copied())
            .chain([m])
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..bounds.len() {
            let a = &v[cuts[i]..cuts[i + 1]];
            let b = &v[cuts[i + 1]..cuts[i + 2]];
            let d = if k == 1 {
                (a[0] - b[0]).abs()
            } else {
                distance(a, b, rule, sigma2)
            };
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, d) = best.unwrap();
        out.push((m - k, bounds[i], d));
        bounds.remove(i);
    }
    out.sort_by_key(|e| e.0);
    out
}

pub fn divide(v: &[f64], rule: VarianceRule) -> Trace {
    let m = v.len();
    let sigma2 = if rule == VarianceRule::Zero {
        0.0
    } else {
        moving_range_var(v)
    };
    let mut bounds: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for level in 1..m {
        let cuts: Vec<usize> = std::iter::once(0)
            .chain(bounds.iter().copied())
            .chain([m])
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for w in cuts.windows(2) {
            for k in w[0] + 1..w[1] {
                let d = distance(&v[w[0]..k], &v[k..w[1]], rule, sigma2);
                let better = match best {
                    None => true,
                    Some((bk, bd)) => d > bd || (d == bd && k < bk),
                };
                if better {
                    best = Some((k, d));
                }
            }
        }
        let (k, d) = best.unwrap();
        out.push((level, k, d));
        bounds.push(k);
        bounds.sort_unstable();
    }
    out
}

/// `-2 (L0 - La)` from separately maximized exponential log-likelihoods.
pub fn lrt(v: &[f64], m1: usize) -> f64 {
    let loglik = |xs: &[f64]| {
        let n = xs.len() as f64;
        let s: f64 = xs.iter().sum();
        n * (n / s).ln() - n
    };
    -2.0 * (loglik(v) - loglik(&v[..m1]) - loglik(&v[m1..]))
}

/// Argmax of `lrt / elrt` over `min_seg..=m-min_seg`, smallest split on ties.
pub fn best_split(v: &[f64], min_seg: usize, elrt: impl Fn(usize) -> f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for m1 in min_seg..=v.len() - min_seg {
        let s = lrt(v, m1) / elrt(m1);
        if s > best.1 {
            best = (m1, s);
        }
    }
    best
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Nearest-rank upper percentile.
pub fn upper_percentile(sample: &[f64], alpha: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (s.len() as f64 * (1.0 - alpha)).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}
