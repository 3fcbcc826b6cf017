//! Independent reference implementations used by the tests. Nothing here
//! calls into the crate's numerical code.
#![allow(dead_code)]

use std::f64::consts::PI;

// ---------------------------------------------------------------- special functions

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail of the F distribution.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Upper tail of the chi-square distribution (regularized upper gamma).
pub fn chi2_upper_tail(x: f64, k: f64) -> f64 {
    let a = k / 2.0;
    let x = x / 2.0;
    if x <= 0.0 {
        return 1.0;
    }
    let gln = ln_gamma(a);
    if x < a + 1.0 {
        let (mut sum, mut del, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..100_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - gln).exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..100_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x + a * x.ln() - gln).exp() * h
    }
}

// ---------------------------------------------------------------- linear algebra

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    det
}

/// Orthonormal basis of the sum-zero subspace of R^k via Gram-Schmidt on
/// successive differences.
pub fn difference_basis(k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..k - 1 {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        v[i + 1] = -1.0;
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
}

// ---------------------------------------------------------------- ANOVA oracle

/// `y[s][l][t]`, with `group[s]` in 0..G. Equal group sizes assumed.
pub struct OracleData {
    pub y: Vec<Vec<Vec<f64>>>,
    pub group: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleRow {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
}

fn row(ss: f64, df1: f64, sse: f64, df2: f64) -> OracleRow {
    let f = (ss / df1) / (sse / df2);
    OracleRow { f, df1, df2, p: f_upper_tail(f, df1, df2) }
}

/// Classical marginal-means sums of squares; returns rows keyed by effect name.
pub fn anova_oracle(d: &OracleData) -> Vec<(String, OracleRow)> {
    let n = d.y.len();
    let nl = d.y[0].len();
    let nt = d.y[0][0].len();
    let ng = d.group.iter().max().unwrap() + 1;
    let (nf, lf, tf) = (n as f64, nl as f64, nt as f64);

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let members = |g: usize| (0..n).filter(move |&s| d.group[s] == g);
    let n_g: Vec<f64> = (0..ng).map(|g| members(g).count() as f64).collect();

    let m_s: Vec<f64> = (0..n).map(|s| mean(&d.y[s].iter().flatten().copied().collect::<Vec<_>>())).collect();
    let m_sl: Vec<Vec<f64>> = (0..n).map(|s| (0..nl).map(|l| mean(&d.y[s][l])).collect()).collect();
    let m_st: Vec<Vec<f64>> =
        (0..n).map(|s| (0..nt).map(|t| mean(&(0..nl).map(|l| d.y[s][l][t]).collect::<Vec<_>>())).collect()).collect();
    let grand = mean(&m_s);
    let m_l: Vec<f64> = (0..nl).map(|l| mean(&(0..n).map(|s| m_sl[s][l]).collect::<Vec<_>>())).collect();
    let m_t: Vec<f64> = (0..nt).map(|t| mean(&(0..n).map(|s| m_st[s][t]).collect::<Vec<_>>())).collect();
    let m_lt: Vec<Vec<f64>> =
        (0..nl).map(|l| (0..nt).map(|t| mean(&(0..n).map(|s| d.y[s][l][t]).collect::<Vec<_>>())).collect()).collect();
    let gm = |f: &dyn Fn(usize) -> f64, g: usize| mean(&members(g).map(f).collect::<Vec<_>>());
    let m_g: Vec<f64> = (0..ng).map(|g| gm(&|s| m_s[s], g)).collect();
    let m_gl: Vec<Vec<f64>> = (0..ng).map(|g| (0..nl).map(|l| gm(&|s| m_sl[s][l], g)).collect()).collect();
    let m_gt: Vec<Vec<f64>> = (0..ng).map(|g| (0..nt).map(|t| gm(&|s| m_st[s][t], g)).collect()).collect();
    let m_glt: Vec<Vec<Vec<f64>>> = (0..ng)
        .map(|g| (0..nl).map(|l| (0..nt).map(|t| gm(&|s| d.y[s][l][t], g)).collect()).collect())
        .collect();

    let mut ss_g = 0.0;
    let mut ss_gl = 0.0;
    let mut ss_gt = 0.0;
    let mut ss_glt = 0.0;
    for g in 0..ng {
        ss_g += n_g[g] * lf * tf * (m_g[g] - grand).powi(2);
        for l in 0..nl {
            ss_gl += tf * n_g[g] * (m_gl[g][l] - m_g[g] - m_l[l] + grand).powi(2);
        }
        for t in 0..nt {
            ss_gt += lf * n_g[g] * (m_gt[g][t] - m_g[g] - m_t[t] + grand).powi(2);
        }
        for l in 0..nl {
            for t in 0..nt {
                ss_glt += n_g[g]
                    * (m_glt[g][l][t] - m_gl[g][l] - m_gt[g][t] - m_lt[l][t] + m_g[g] + m_l[l] + m_t[t] - grand)
                        .powi(2);
            }
        }
    }
    let ss_l: f64 = (0..nl).map(|l| nf * tf * (m_l[l] - grand).powi(2)).sum();
    let ss_t: f64 = (0..nt).map(|t| nf * lf * (m_t[t] - grand).powi(2)).sum();
    let mut ss_lt = 0.0;
    for l in 0..nl {
        for t in 0..nt {
            ss_lt += nf * (m_lt[l][t] - m_l[l] - m_t[t] + grand).powi(2);
        }
    }
    let (mut e_s, mut e_l, mut e_t, mut e_lt) = (0.0, 0.0, 0.0, 0.0);
    for s in 0..n {
        let g = d.group[s];
        e_s += lf * tf * (m_s[s] - m_g[g]).powi(2);
        for l in 0..nl {
            e_l += tf * (m_sl[s][l] - m_s[s] - m_gl[g][l] + m_g[g]).powi(2);
        }
        for t in 0..nt {
            e_t += lf * (m_st[s][t] - m_s[s] - m_gt[g][t] + m_g[g]).powi(2);
        }
        for l in 0..nl {
            for t in 0..nt {
                e_lt += (d.y[s][l][t] - m_sl[s][l] - m_st[s][t] - m_glt[g][l][t]
                    + m_s[s]
                    + m_gl[g][l]
                    + m_gt[g][t]
                    - m_g[g])
                    .powi(2);
            }
        }
    }
    let dfe = nf - ng as f64;
    let (dl, dt) = (lf - 1.0, tf - 1.0);
    let mut rows = vec![
        ("load".to_string(), row(ss_l, dl, e_l, dl * dfe)),
        ("task".to_string(), row(ss_t, dt, e_t, dt * dfe)),
        ("load:task".to_string(), row(ss_lt, dl * dt, e_lt, dl * dt * dfe)),
    ];
    if ng > 1 {
        let dg = ng as f64 - 1.0;
        rows.push(("group".to_string(), row(ss_g, dg, e_s, dfe)));
        rows.push(("group:load".to_string(), row(ss_gl, dg * dl, e_l, dl * dfe)));
        rows.push(("group:task".to_string(), row(ss_gt, dg * dt, e_t, dt * dfe)));
        rows.push(("group:load:task".to_string(), row(ss_glt, dg * dl * dt, e_lt, dl * dt * dfe)));
    }
    rows
}

/// Pooled within-group covariance of the load contrasts (task-averaged).
pub fn load_contrast_covariance(d: &OracleData) -> Vec<Vec<f64>> {
    let n = d.y.len();
    let nl = d.y[0].len();
    let ng = d.group.iter().max().unwrap() + 1;
    let basis = difference_basis(nl);
    let p = nl - 1;
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let lm: Vec<f64> = (0..nl).map(|l| d.y[s][l].iter().sum::<f64>() / d.y[s][l].len() as f64).collect();
            basis.iter().map(|b| b.iter().zip(&lm).map(|(x, y)| x * y).sum()).collect()
        })
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for g in 0..ng {
        let members: Vec<usize> = (0..n).filter(|&s| d.group[s] == g).collect();
        let mean: Vec<f64> =
            (0..p).map(|i| members.iter().map(|&s| scores[s][i]).sum::<f64>() / members.len() as f64).collect();
        for &s in &members {
            for i in 0..p {
                for j in 0..p {
                    cov[i][j] += (scores[s][i] - mean[i]) * (scores[s][j] - mean[j]);
                }
            }
        }
    }
    let dfe = (n - ng) as f64;
    // the crate scales the task-averaged contrast by sqrt(T); W and epsilon are scale-free
    cov.iter().map(|r| r.iter().map(|v| v / dfe).collect()).collect()
}

/// W = det(S) / (tr(S)/p)^p and its chi-square p-value.
pub fn mauchly_oracle(cov: &[Vec<f64>], error_df: f64) -> (f64, f64) {
    let p = cov.len() as f64;
    let tr: f64 = (0..cov.len()).map(|i| cov[i][i]).sum();
    let w = determinant(cov.to_vec()) / (tr / p).powf(p);
    let stat = -(error_df - (2.0 * p * p + p + 2.0) / (6.0 * p)) * w.ln();
    (w, chi2_upper_tail(stat, p * (p + 1.0) / 2.0 - 1.0))
}

/// epsilon = tr(S)^2 / (p * tr(S^2)).
pub fn gg_oracle(cov: &[Vec<f64>]) -> f64 {
    let p = cov.len();
    let tr: f64 = (0..p).map(|i| cov[i][i]).sum();
    let tr2: f64 = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| cov[i][j] * cov[j][i]).sum();
    tr * tr / (p as f64 * tr2)
}

// ---------------------------------------------------------------- signals

/// Naive O(n^2) one-sided power |X_k|^2 for k in 0..=n/2.
pub fn naive_dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * j % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Small deterministic generator so oracles don't share the crate's RNG setup.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}
