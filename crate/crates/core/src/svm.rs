//! Soft-margin kernel SVM trained with sequential minimal optimization.
//!
//! The binary machine solves the standard dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//! ```
//!
//! with an RBF kernel. Pair selection is deterministic: the outer loop scans
//! for the first KKT violator in index order, the partner maximizes
//! `|E1 - E2|` with ties going to the lowest index. Multiclass problems use
//! one-vs-one voting with a fully specified tie-break.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Multipliers at or below this are not support vectors.
pub const SV_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training data has zero variance")]
    DegenerateData,
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("only one class present in training labels")]
    SingleClass,
    #[error("binary labels must be -1 or +1, found {0}")]
    InvalidLabel(i32),
    #[error("{0} labels for {1} samples")]
    LabelCount(usize, usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SvmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c: f64,
    pub gamma: f64,
    pub kernel: Kernel,
}

impl KernelParams {
    pub fn rbf(c: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            c,
            gamma,
            kernel: Kernel::Rbf,
        };
        p.validate()?;
        Ok(p)
    }

    /// RBF parameters with gamma derived from the training matrix by [`compute_gamma`].
    pub fn scaled(c: f64, train: &[Vec<f64>]) -> Result<Self> {
        Self::rbf(c, compute_gamma(train)?)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidParams(format!("C = {}", self.c)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(SvmError::InvalidParams(format!("gamma = {}", self.gamma)));
        }
        Ok(())
    }

    #[inline]
    fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        (-self.gamma * squared_distance(x, y)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// KKT tolerance on `y_i f(x_i) - 1`.
    pub tol: f64,
    /// Cap on outer sweeps; `None` means `100 * n`.
    pub max_passes: Option<usize>,
    /// Kernel rows kept in the LRU cache.
    pub cache_rows: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_passes: None,
            cache_rows: 512,
        }
    }
}

#[inline]
fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-gamma * ||x - y||^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(SvmError::InvalidParams(format!("gamma = {gamma}")));
    }
    Ok((-gamma * squared_distance(x, y)).exp())
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    for row in x {
        if row.len() != d {
            return Err(SvmError::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
    }
    Ok(d)
}

/// `1 / (D * Var(X))` where `Var(X)` is the population variance of every
/// entry of the training matrix pooled into one sample.
pub fn compute_gamma(train: &[Vec<f64>]) -> Result<f64> {
    if train.len() < 2 {
        return Err(SvmError::TooFewSamples {
            needed: 2,
            found: train.len(),
        });
    }
    let d = check_matrix(train)?;
    if d == 0 {
        return Err(SvmError::DegenerateData);
    }
    let count = (train.len() * d) as f64;
    let mean = train.iter().flatten().sum::<f64>() / count;
    let var = train
        .iter()
        .flatten()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / count;
    if !(var > 0.0) {
        return Err(SvmError::DegenerateData);
    }
    Ok(1.0 / (d as f64 * var))
}

/// Trained binary machine: `f(x) = sum_i dual_coefs[i] K(sv_i, x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `a_i y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub params: KernelParams,
    /// Label for `f(x) <= 0` then label for `f(x) > 0`.
    pub class_labels: [i32; 2],
    /// False when the solver hit its sweep cap before meeting the KKT tolerance.
    pub converged: bool,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn predict_decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.decision_unchecked(x))
    }

    fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, a)| a * self.params.k(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// `class_labels[1]` when the decision is strictly positive, otherwise `class_labels[0]`.
    pub fn predict_label(&self, x: &[f64]) -> Result<i32> {
        let f = self.predict_decision(x)?;
        Ok(self.label_for(f))
    }

    fn label_for(&self, f: f64) -> i32 {
        if f > 0.0 {
            self.class_labels[1]
        } else {
            self.class_labels[0]
        }
    }
}

pub fn predict_decision(model: &SvmModel, x: &[f64]) -> Result<f64> {
    model.predict_decision(x)
}

pub fn predict_label(model: &SvmModel, x: &[f64]) -> Result<i32> {
    model.predict_label(x)
}

/// LRU cache of kernel matrix rows.
struct KernelCache<'a> {
    x: &'a [Vec<f64>],
    params: KernelParams,
    capacity: usize,
    slot_of: HashMap<usize, usize>,
    rows: Vec<(usize, Rc<[f64]>)>,
    last_used: Vec<u64>,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], params: KernelParams, capacity: usize) -> Self {
        Self {
            x,
            params,
            capacity: capacity.max(2),
            slot_of: HashMap::new(),
            rows: Vec::new(),
            last_used: Vec::new(),
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        if let Some(&slot) = self.slot_of.get(&i) {
            self.last_used[slot] = self.clock;
            return Rc::clone(&self.rows[slot].1);
        }
        let xi = &self.x[i];
        let row: Rc<[f64]> = self.x.iter().map(|xj| self.params.k(xi, xj)).collect();
        let slot = if self.rows.len() < self.capacity {
            self.rows.push((i, Rc::clone(&row)));
            self.last_used.push(self.clock);
            self.rows.len() - 1
        } else {
            let (slot, _) = self
                .last_used
                .iter()
                .enumerate()
                .min_by_key(|&(_, &t)| t)
                .expect("cache capacity is at least two");
            self.slot_of.remove(&self.rows[slot].0);
            self.rows[slot] = (i, Rc::clone(&row));
            self.last_used[slot] = self.clock;
            slot
        };
        self.slot_of.insert(i, slot);
        row
    }
}

struct Smo<'a> {
    y: Vec<f64>,
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    /// `sum_j a_j y_j K(x_j, x_i)` without the bias.
    s: Vec<f64>,
    b: f64,
    cache: KernelCache<'a>,
}

/// Smallest multiplier change that counts as progress.
const STEP_EPS: f64 = 1e-12;

impl Smo<'_> {
    fn error(&self, i: usize) -> f64 {
        self.s[i] + self.b - self.y[i]
    }

    fn objective(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.y)
            .zip(&self.s)
            .map(|((a, y), s)| a - 0.5 * a * y * s)
            .sum()
    }

    fn violates_kkt(&self, i: usize) -> bool {
        let r = self.error(i) * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
    }

    fn examine(&mut self, i2: usize) -> bool {
        if !self.violates_kkt(i2) {
            return false;
        }
        let e2 = self.error(i2);
        let n = self.y.len();
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| j != i2) {
            let gap = (self.error(j) - e2).abs();
            if best.is_none_or(|(_, g)| gap > g) {
                best = Some((j, gap));
            }
        }
        let Some((i1, _)) = best else {
            return false;
        };
        if self.take_step(i1, i2) {
            return true;
        }
        (0..n)
            .filter(|&j| j != i2 && j != i1)
            .any(|j| self.take_step(j, i2))
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        let (a1_old, a2_old) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.error(i1), self.error(i2));
        let s = y1 * y2;
        let c = self.c;
        let (lo, hi) = if s < 0.0 {
            ((a2_old - a1_old).max(0.0), (c + a2_old - a1_old).min(c))
        } else {
            ((a1_old + a2_old - c).max(0.0), (a1_old + a2_old).min(c))
        };
        if hi - lo < STEP_EPS {
            return false;
        }
        let row1 = self.cache.row(i1);
        let row2 = self.cache.row(i2);
        let (k11, k12, k22) = (row1[i1], row1[i2], row2[i2]);
        let eta = k11 + k22 - 2.0 * k12;

        let mut a2 = if eta > 0.0 {
            (a2_old + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // objective is linear in a2 along the constraint line
            let slope = y2 * (e1 - e2);
            if slope > STEP_EPS {
                hi
            } else if slope < -STEP_EPS {
                lo
            } else {
                return false;
            }
        };
        if (a2 - a2_old).abs() < STEP_EPS * (a2 + a2_old + STEP_EPS) {
            return false;
        }
        let mut a1 = a1_old + s * (a2_old - a2);
        if a1 < 0.0 {
            a2 += s * a1;
            a1 = 0.0;
        } else if a1 > c {
            a2 += s * (a1 - c);
            a1 = c;
        }

        let before = cfg!(debug_assertions).then(|| self.objective());

        let d1 = y1 * (a1 - a1_old);
        let d2 = y2 * (a2 - a2_old);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        self.b = if a1 > 0.0 && a1 < c {
            b1
        } else if a2 > 0.0 && a2 < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        for ((s_k, k1), k2) in self.s.iter_mut().zip(row1.iter()).zip(row2.iter()) {
            *s_k += d1 * k1 + d2 * k2;
        }
        self.alpha[i1] = a1;
        self.alpha[i2] = a2;

        if let Some(before) = before {
            let after = self.objective();
            debug_assert!(
                after >= before - 1e-9 * (1.0 + before.abs()),
                "dual objective decreased: {before} -> {after}"
            );
        }
        true
    }

    /// Platt's outer loop; returns whether the KKT conditions were met.
    fn run(&mut self, max_passes: usize) -> bool {
        let n = self.y.len();
        let mut examine_all = true;
        let mut changed = 0usize;
        let mut passes = 0usize;
        while changed > 0 || examine_all {
            if passes >= max_passes {
                return false;
            }
            changed = 0;
            for i in 0..n {
                let bound = self.alpha[i] <= 0.0 || self.alpha[i] >= self.c;
                if (examine_all || !bound) && self.examine(i) {
                    changed += 1;
                }
            }
            passes += 1;
            if examine_all {
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }
        true
    }
}

/// Dual multipliers of a trained binary problem, one per training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub converged: bool,
}

/// Runs SMO on labels in {-1, +1} and returns every multiplier.
pub fn solve_dual(
    x: &[Vec<f64>],
    y: &[i32],
    params: KernelParams,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(SvmError::LabelCount(y.len(), x.len()));
    }
    if x.len() < 2 {
        return Err(SvmError::TooFewSamples {
            needed: 2,
            found: x.len(),
        });
    }
    check_matrix(x)?;
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(SvmError::SingleClass);
    }

    let n = x.len();
    let mut smo = Smo {
        y: y.iter().map(|&v| f64::from(v)).collect(),
        c: params.c,
        tol: opts.tol,
        alpha: vec![0.0; n],
        s: vec![0.0; n],
        b: 0.0,
        cache: KernelCache::new(x, params, opts.cache_rows),
    };
    let converged = smo.run(opts.max_passes.unwrap_or(100 * n));
    if !converged {
        log::warn!(
            "SMO stopped at the sweep cap before meeting tolerance {}",
            opts.tol
        );
    }
    Ok(DualSolution {
        alpha: smo.alpha,
        converged,
    })
}

/// Trains a binary machine on labels in {-1, +1}.
pub fn train_binary(
    x: &[Vec<f64>],
    y: &[i32],
    params: KernelParams,
    opts: &SolverOptions,
) -> Result<SvmModel> {
    let dual = solve_dual(x, y, params, opts)?;
    let alpha = &dual.alpha;
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();

    let sv_idx: Vec<usize> = (0..x.len()).filter(|&i| alpha[i] > SV_THRESHOLD).collect();
    let support_vectors: Vec<Vec<f64>> = sv_idx.iter().map(|&i| x[i].clone()).collect();
    let dual_coefs: Vec<f64> = sv_idx.iter().map(|&i| alpha[i] * yf[i]).collect();

    let on_margin: Vec<usize> = sv_idx
        .iter()
        .copied()
        .filter(|&i| alpha[i] < params.c - SV_THRESHOLD)
        .collect();
    let bias_set = if on_margin.is_empty() {
        &sv_idx
    } else {
        &on_margin
    };
    let bias = bias_set
        .iter()
        .map(|&i| {
            let s: f64 = support_vectors
                .iter()
                .zip(&dual_coefs)
                .map(|(sv, a)| a * params.k(sv, &x[i]))
                .sum();
            yf[i] - s
        })
        .sum::<f64>()
        / bias_set.len() as f64;

    Ok(SvmModel {
        support_vectors,
        dual_coefs,
        bias,
        params,
        class_labels: [-1, 1],
        converged: dual.converged,
    })
}

/// One binary machine per unordered class pair, sharing one set of kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoModel<L> {
    /// Pair `(i, j)` with `i < j` in lexicographic order; `class_labels = [i, j]` index `class_list`.
    pub pairwise_models: Vec<SvmModel>,
    pub class_list: Vec<L>,
}

/// Trains `k(k-1)/2` pairwise machines on the samples of each class pair.
///
/// `params.gamma` is used unchanged by every pair, so callers derive it once
/// from the full training matrix.
pub fn train_ovo<L: Ord + Clone>(
    x: &[Vec<f64>],
    y: &[L],
    params: KernelParams,
    opts: &SolverOptions,
) -> Result<OvoModel<L>> {
    if x.len() != y.len() {
        return Err(SvmError::LabelCount(y.len(), x.len()));
    }
    let mut class_list: Vec<L> = y.to_vec();
    class_list.sort();
    class_list.dedup();
    if class_list.len() < 2 {
        return Err(SvmError::SingleClass);
    }
    let class_of: Vec<usize> = y
        .iter()
        .map(|l| {
            class_list
                .binary_search(l)
                .expect("label comes from class list")
        })
        .collect();

    let k = class_list.len();
    let mut pairwise_models = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (row, &c) in x.iter().zip(&class_of) {
                if c == i || c == j {
                    xs.push(row.clone());
                    ys.push(if c == j { 1 } else { -1 });
                }
            }
            let mut model = train_binary(&xs, &ys, params, opts)?;
            model.class_labels = [i as i32, j as i32];
            pairwise_models.push(model);
        }
    }
    Ok(OvoModel {
        pairwise_models,
        class_list,
    })
}

impl<L: Clone> OvoModel<L> {
    /// Majority vote; ties go to the larger summed `|f|` of the votes each
    /// tied class won, then to the earliest class in `class_list`.
    pub fn predict(&self, x: &[f64]) -> Result<&L> {
        let k = self.class_list.len();
        let mut votes = vec![0usize; k];
        let mut margins: Vec<Vec<f64>> = vec![Vec::new(); k];
        for m in &self.pairwise_models {
            let f = m.predict_decision(x)?;
            let winner = m.label_for(f) as usize;
            votes[winner] += 1;
            margins[winner].push(f.abs());
        }
        // summed in sorted order so the total does not depend on model order
        let strength: Vec<f64> = margins
            .into_iter()
            .map(|mut v| {
                v.sort_by(f64::total_cmp);
                v.iter().sum()
            })
            .collect();
        let mut best = 0;
        for c in 1..k {
            let better =
                votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]);
            if better {
                best = c;
            }
        }
        Ok(&self.class_list[best])
    }
}

pub fn predict_ovo<'m, L: Clone>(model: &'m OvoModel<L>, x: &[f64]) -> Result<&'m L> {
    model.predict(x)
}

pub const MODEL_MAGIC: &[u8; 8] = b"SVMMODL1";

impl SvmModel {
    /// Serializes as `SVMMODL1`: magic, u32 n_sv, u32 dim, u32 kernel (0 = rbf),
    /// i32 label pair, u32 converged, then f64 C, gamma, bias, the support
    /// vectors row by row, and the dual coefficients. Little-endian throughout.
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(self.support_vectors.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for l in self.class_labels {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&u32::from(self.converged).to_le_bytes())?;
        for v in [self.params.c, self.params.gamma, self.bias] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self
            .support_vectors
            .iter()
            .flatten()
            .chain(&self.dual_coefs)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |e: io::Error| SvmError::Format(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MODEL_MAGIC {
            return Err(SvmError::Format("bad magic".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32_buf).map_err(fmt)?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let n_sv = next_u32(r)? as usize;
        let dim = next_u32(r)? as usize;
        if next_u32(r)? != 0 {
            return Err(SvmError::Format("unknown kernel".into()));
        }
        let l0 = next_u32(r)? as i32;
        let l1 = next_u32(r)? as i32;
        let converged = next_u32(r)? != 0;
        let next_f64 = |r: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(fmt)?;
            Ok(f64::from_le_bytes(b))
        };
        let c = next_f64(r)?;
        let gamma = next_f64(r)?;
        let bias = next_f64(r)?;
        let mut support_vectors = Vec::with_capacity(n_sv);
        for _ in 0..n_sv {
            support_vectors.push((0..dim).map(|_| next_f64(r)).collect::<Result<Vec<_>>>()?);
        }
        let dual_coefs = (0..n_sv).map(|_| next_f64(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            support_vectors,
            dual_coefs,
            bias,
            params: KernelParams::rbf(c, gamma)?,
            class_labels: [l0, l1],
            converged,
        })
    }
}
