//! Brute-force solver for the soft-margin SVM dual
//!
//! max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij   s.t.  0 <= a_i <= C,  sum(a_i y_i) = 0
//!
//! by accelerated projected gradient, followed by an exact solve of the KKT
//! system on the resulting free set.

use nalgebra::{DMatrix, DVector};

pub fn rbf(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// 1 / (D * population variance of every entry of `x`).
pub fn gamma_rule(x: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = x.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    1.0 / (x[0].len() as f64 * var)
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub gamma: f64,
}

impl QpSolution {
    pub fn decision(&self, p: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(&self.y)
            .zip(&self.x)
            .map(|((a, y), xi)| a * y * rbf(xi, p, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Projection onto {0 <= a <= c, y.a = 0} via bisection on the multiplier of the equality.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c))
            .collect()
    };
    let h = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

fn objective(alpha: &[f64], q: &DMatrix<f64>) -> f64 {
    let a = DVector::from_column_slice(alpha);
    a.sum() - 0.5 * a.dot(&(q * &a))
}

const BOUND_EPS: f64 = 1e-8;

pub fn solve(x: &[Vec<f64>], labels: &[i32], c: f64, gamma: f64) -> QpSolution {
    let n = x.len();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let k = DMatrix::from_fn(n, n, |i, j| rbf(&x[i], &x[j], gamma));
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]);
    let lipschitz = q.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lipschitz;

    // minimise 1/2 a'Qa - sum(a)
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..50_000 {
        let zv = DVector::from_column_slice(&z);
        let grad = &q * &zv - DVector::from_element(n, 1.0);
        let moved: Vec<f64> = z
            .iter()
            .zip(grad.iter())
            .map(|(zi, g)| zi - step * g)
            .collect();
        let next = project(&moved, &y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let change: f64 = next
            .iter()
            .zip(&a)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        // restart when the objective stops improving
        if objective(&next, &q) < objective(&a, &q) {
            z = a.clone();
            t = 1.0;
            continue;
        }
        z = next
            .iter()
            .zip(&a)
            .map(|(p, o)| p + (t - 1.0) / t_next * (p - o))
            .collect();
        a = next;
        t = t_next;
        if change < 1e-13 {
            break;
        }
    }
    if let Some(polished) = polish(&a, &q, &y, c) {
        if objective(&polished, &q) >= objective(&a, &q) - 1e-12 {
            a = polished;
        }
    }

    let s: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a[j] * y[j] * k[(i, j)]).sum())
        .collect();
    let sv: Vec<usize> = (0..n).filter(|&i| a[i] > BOUND_EPS).collect();
    let margin: Vec<usize> = sv
        .iter()
        .copied()
        .filter(|&i| a[i] < c - BOUND_EPS)
        .collect();
    let use_set = if margin.is_empty() { &sv } else { &margin };
    let bias = if use_set.is_empty() {
        0.0
    } else {
        use_set.iter().map(|&i| y[i] - s[i]).sum::<f64>() / use_set.len() as f64
    };
    QpSolution {
        objective: objective(&a, &q),
        alpha: a,
        bias,
        x: x.to_vec(),
        y,
        gamma,
    }
}

/// Solves the equality-constrained KKT system with bound variables fixed.
fn polish(a: &[f64], q: &DMatrix<f64>, y: &[f64], c: f64) -> Option<Vec<f64>> {
    let n = a.len();
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > 1e-6 && a[i] < c - 1e-6).collect();
    if free.is_empty() {
        return None;
    }
    let fixed: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
    let fixed_val = |i: usize| if a[i] >= c * 0.5 { c } else { 0.0 };
    let m = free.len();
    let mut lhs = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (cidx, &j) in free.iter().enumerate() {
            lhs[(r, cidx)] = q[(i, j)];
        }
        lhs[(r, m)] = y[i];
        lhs[(m, r)] = y[i];
        rhs[r] = 1.0 - fixed.iter().map(|&j| q[(i, j)] * fixed_val(j)).sum::<f64>();
    }
    rhs[m] = -fixed.iter().map(|&j| y[j] * fixed_val(j)).sum::<f64>();
    let sol = lhs.lu().solve(&rhs)?;
    let mut out: Vec<f64> = (0..n).map(fixed_val).collect();
    for (r, &i) in free.iter().enumerate() {
        let v = sol[r];
        if !(-1e-9..=c + 1e-9).contains(&v) {
            return None;
        }
        out[i] = v.clamp(0.0, c);
    }
    Some(out)
}
