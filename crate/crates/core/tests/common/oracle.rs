//! Brute-force reference implementations. Everything here works on plain
//! rows with explicit loops and recomputes from scratch for every label
//! assignment; nothing is shared with the library beyond the definitions.

use super::{Cohort, Row};

/// Survival level: +1 if `a` outlives `b` determinately.
pub fn surv_level(a: &Row, b: &Row) -> i64 {
    if b.event && a.time > b.time {
        1
    } else if a.event && b.time > a.time {
        -1
    } else {
        0
    }
}

pub fn cont_level(a: &Row, b: &Row) -> i64 {
    match (a.cont, b.cont) {
        (Some(x), Some(y)) if x > y => 1,
        (Some(x), Some(y)) if x < y => -1,
        _ => 0,
    }
}

pub fn bin_level(a: &Row, b: &Row) -> i64 {
    match (a.bin, b.bin) {
        (Some(false), Some(true)) => 1,
        (Some(true), Some(false)) => -1,
        _ => 0,
    }
}

/// Hierarchical verdict and the 1-based level that decided it.
pub fn verdict(a: &Row, b: &Row) -> (i64, Option<u32>) {
    let levels = [surv_level(a, b), cont_level(a, b), bin_level(a, b)];
    for (k, &v) in levels.iter().enumerate() {
        if v != 0 {
            return (v, Some(k as u32 + 1));
        }
    }
    (0, None)
}

pub fn scores(c: &Cohort) -> Vec<i64> {
    let n = c.rows.len();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| verdict(&c.rows[i], &c.rows[j]).0).sum())
        .collect()
}

pub fn fs_stat(c: &Cohort) -> f64 {
    let u = scores(c);
    c.rows.iter().zip(&u).filter(|(r, _)| r.treated).map(|(_, s)| *s as f64).sum()
}

pub fn fs_variance(c: &Cohort) -> f64 {
    let u = scores(c);
    let n = c.rows.len() as f64;
    let (n1, n0) = (c.n1() as f64, c.n0() as f64);
    n1 * n0 / (n * (n - 1.0)) * u.iter().map(|&s| (s * s) as f64).sum::<f64>()
}

/// (wins, losses, ties) over treatment × control pairs.
pub fn tally(c: &Cohort) -> (u64, u64, u64) {
    let (mut w, mut l, mut t) = (0, 0, 0);
    for a in c.rows.iter().filter(|r| r.treated) {
        for b in c.rows.iter().filter(|r| !r.treated) {
            match verdict(a, b).0 {
                1 => w += 1,
                -1 => l += 1,
                _ => t += 1,
            }
        }
    }
    (w, l, t)
}

pub fn log_wr(c: &Cohort) -> f64 {
    let (w, l, _) = tally(c);
    (w as f64 / l as f64).ln()
}

/// Delete-one jackknife SE of log WR; `None` if any deletion leaves no
/// wins or no losses.
pub fn jackknife_se(c: &Cohort) -> Option<f64> {
    let n = c.rows.len();
    let mut thetas = Vec::new();
    for k in 0..n {
        let rest = Cohort {
            rows: c.rows.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, r)| r.clone()).collect(),
        };
        let (w, l, _) = tally(&rest);
        if w == 0 || l == 0 {
            return None;
        }
        thetas.push((w as f64 / l as f64).ln());
    }
    let nf = n as f64;
    let mean = thetas.iter().sum::<f64>() / nf;
    Some(((nf - 1.0) / nf * thetas.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()).sqrt())
}

/// Midrank by counting: 1 + #smaller + (#equal − 1)/2.
pub fn midrank_of(values: &[f64], i: usize) -> f64 {
    let smaller = values.iter().filter(|&&v| v < values[i]).count() as f64;
    let equal = values.iter().filter(|&&v| v == values[i]).count() as f64;
    1.0 + smaller + (equal - 1.0) / 2.0
}

/// N × 3 direction-aligned midranks of a complete-case cohort.
pub fn rank_columns(c: &Cohort) -> Vec<Vec<f64>> {
    let rows = &c.rows;
    let gehan: Vec<f64> = rows
        .iter()
        .map(|a| rows.iter().map(|b| surv_level(a, b) as f64).sum())
        .collect();
    let cont: Vec<f64> = rows.iter().map(|r| r.cont.unwrap()).collect();
    let bin: Vec<f64> = rows.iter().map(|r| if r.bin.unwrap() { -1.0 } else { 0.0 }).collect();
    [gehan, cont, bin]
        .iter()
        .map(|col| (0..col.len()).map(|i| midrank_of(col, i)).collect())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn split(c: &Cohort, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t = c.rows.iter().zip(values).filter(|(r, _)| r.treated).map(|(_, v)| *v).collect();
    let k = c.rows.iter().zip(values).filter(|(r, _)| !r.treated).map(|(_, v)| *v).collect();
    (t, k)
}

fn rank_sums(c: &Cohort) -> Vec<f64> {
    let cols = rank_columns(c);
    (0..c.rows.len()).map(|i| cols.iter().map(|col| col[i]).sum()).collect()
}

/// O'Brien statistic on a complete-case cohort.
pub fn obrien_stat(c: &Cohort) -> f64 {
    let (t, k) = split(c, &rank_sums(c));
    mean(&t) - mean(&k)
}

/// Welch variance of the O'Brien statistic.
pub fn obrien_welch_variance(c: &Cohort) -> f64 {
    let (t, k) = split(c, &rank_sums(c));
    sample_var(&t) / t.len() as f64 + sample_var(&k) / k.len() as f64
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix:
/// (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = a.len();
    let mut a = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for r in 0..k {
                    let (vrp, vrq) = (v[r][p], v[r][q]);
                    v[r][p] = c * vrp - s * vrq;
                    v[r][q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..k).map(|i| a[i][i]).collect(), v)
}

/// Multirank statistic and covariance rank on a complete-case cohort.
pub fn multirank_stat(c: &Cohort) -> (f64, usize) {
    let cols = rank_columns(c);
    let n = c.rows.len() as f64;
    let (n1, n0) = (c.n1() as f64, c.n0() as f64);
    let k = cols.len();
    let d: Vec<f64> = cols
        .iter()
        .map(|col| {
            let (t, o) = split(c, col);
            mean(&t) - mean(&o)
        })
        .collect();
    let means: Vec<f64> = cols.iter().map(|col| mean(col)).collect();
    let mut cov = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let s: f64 = (0..c.rows.len()).map(|i| (cols[a][i] - means[a]) * (cols[b][i] - means[b])).sum();
            cov[a][b] = s / (n - 1.0) * (1.0 / n1 + 1.0 / n0);
        }
    }
    let (lambda, v) = jacobi_eigen(&cov);
    let max = lambda.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let tol = max * k as f64 * 1e-12;
    let mut t = 0.0;
    let mut rank = 0;
    for (i, &l) in lambda.iter().enumerate() {
        if l > tol && l > 0.0 {
            rank += 1;
            let proj: f64 = (0..k).map(|r| v[r][i] * d[r]).sum();
            t += proj * proj / l;
        }
    }
    (t, rank)
}

fn kernel_levels(a: &Row, b: &Row) -> [f64; 3] {
    [surv_level(a, b) as f64, cont_level(a, b) as f64, bin_level(a, b) as f64]
}

/// Weighted global U with normalized `weights`.
pub fn global_u(c: &Cohort, weights: &[f64; 3]) -> f64 {
    let (n1, n0) = (c.n1() as f64, c.n0() as f64);
    let mut total = 0.0;
    for a in c.rows.iter().filter(|r| r.treated) {
        for b in c.rows.iter().filter(|r| !r.treated) {
            let phi = kernel_levels(a, b);
            total += (0..3).map(|k| weights[k] * phi[k]).sum::<f64>();
        }
    }
    total / (n1 * n0)
}

/// Projection variance S₁²/n₁ + S₀²/n₀ of the global U.
pub fn global_u_variance(c: &Cohort, weights: &[f64; 3]) -> f64 {
    let weighted = |a: &Row, b: &Row| -> f64 {
        let phi = kernel_levels(a, b);
        (0..3).map(|k| weights[k] * phi[k]).sum()
    };
    let treated: Vec<&Row> = c.rows.iter().filter(|r| r.treated).collect();
    let control: Vec<&Row> = c.rows.iter().filter(|r| !r.treated).collect();
    let ht: Vec<f64> = treated
        .iter()
        .map(|a| control.iter().map(|b| weighted(a, b)).sum::<f64>() / control.len() as f64)
        .collect();
    let hc: Vec<f64> = control
        .iter()
        .map(|b| treated.iter().map(|a| weighted(a, b)).sum::<f64>() / treated.len() as f64)
        .collect();
    sample_var(&ht) / ht.len() as f64 + sample_var(&hc) / hc.len() as f64
}

/// All k-subsets of 0..n, by recursion.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<bool>> {
    fn rec(i: usize, n: usize, left: usize, cur: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
        if cur.len() == n {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        if n - i > left {
            cur.push(false);
            rec(i + 1, n, left, cur, out);
            cur.pop();
        }
        if left > 0 {
            cur.push(true);
            rec(i + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Exact two-sided permutation p: the share of label assignments whose
/// |statistic| reaches the observed one (non-finite values count).
pub fn exact_p(c: &Cohort, stat: impl Fn(&Cohort) -> f64) -> f64 {
    let observed = stat(c);
    let all = subsets(c.rows.len(), c.n1());
    let hits = all
        .iter()
        .filter(|m| {
            let v = stat(&c.with_mask(m));
            if !v.is_finite() || observed.is_nan() {
                return true;
            }
            v.abs() >= observed.abs() - 1e-10 * observed.abs().max(1.0)
        })
        .count();
    hits as f64 / all.len() as f64
}
