//! Wasserstein score of a predicted class distribution.
//!
//! The score of `p` under cost matrix `M` is the cheapest transport cost from
//! `p` to any one-hot target:
//!
//! ```text
//! S(p; M) = min_k W(p, e_k; M)
//! ```
//!
//! Because the target is one-hot, the only feasible plan moves every row's
//! mass into column `k`, so `W(p, e_k; M) = Σ_j p_j M[j, k]` and no general
//! optimal-transport solver is needed. Under the binary cost matrix this
//! reduces to `1 − max_j p_j`.
//!
//! Class indices are zero-based. Ties in the minimum go to the smallest index.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Mlp, OutputHead};

const SUM_TOLERANCE: f64 = 1e-9;

/// A discrete distribution over `K ≥ 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::shape(
                "a probability vector needs at least 2 classes",
            ));
        }
        if entries.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::domain(
                "probabilities must be finite and nonnegative",
            ));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(entries))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::domain(format!(
                "class {class} out of range for K = {k}"
            )));
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self::new(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Square, nonnegative cost matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    k: usize,
    /// Row-major `k × k`.
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::domain("a cost matrix needs K >= 2"));
        }
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::shape(format!(
                    "cost matrix row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::domain(format!(
                        "cost ({i}, {j}) = {c} is not a finite nonnegative number"
                    )));
                }
                if i == j && c != 0.0 {
                    return Err(Error::domain(format!(
                        "diagonal entry ({i}, {i}) is {c}, not 0"
                    )));
                }
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { k, entries })
    }

    /// `M_b = 1 − I`: unit cost between any two distinct classes.
    pub fn binary(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::domain(format!(
                "binary cost matrix needs K >= 2, got {k}"
            )));
        }
        let entries = (0..k * k)
            .map(|idx| if idx / k == idx % k { 0.0 } else { 1.0 })
            .collect();
        Ok(Self { k, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.k + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.k).map(|j| self.get(j, col)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    /// Score of the uniform distribution. Under `M_b` this is `1 − 1/K`, the
    /// largest score any distribution can reach; heatmap exports use it as the
    /// top of the gray scale.
    pub fn uniform_score(&self) -> f64 {
        let u = vec![1.0 / self.k as f64; self.k];
        score_of(&u, self).0
    }

    /// Parse `K` lines of `K` comma-separated floats.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| Error::parse(idx + 1, format!("cost matrix: {e}")))?);
        }
        Self::new(rows)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.chunks(self.k) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Transport cost from `p` to the one-hot target of class `k`: `Σ_j p_j M[j,k]`.
pub fn wasserstein_to_onehot(p: &ProbVector, k: usize, cost: &CostMatrix) -> Result<f64> {
    check_dims(p.as_slice(), cost)?;
    if k >= cost.k() {
        return Err(Error::domain(format!(
            "class {k} out of range for K = {}",
            cost.k()
        )));
    }
    Ok(cost_to_class(p.as_slice(), k, cost))
}

/// The Wasserstein score and the (smallest) class attaining it.
pub fn wasserstein_score(p: &ProbVector, cost: &CostMatrix) -> Result<(f64, usize)> {
    check_dims(p.as_slice(), cost)?;
    Ok(score_of(p.as_slice(), cost))
}

/// Subgradient of the score with respect to `p`: column `k*` of `M`, where
/// `k*` is the tie-broken argmin class.
pub fn score_gradient(p: &ProbVector, cost: &CostMatrix) -> Result<Vec<f64>> {
    check_dims(p.as_slice(), cost)?;
    let (_, k) = score_of(p.as_slice(), cost);
    Ok(cost.column(k))
}

/// Score every input through a softmax network.
pub fn score_batch(net: &Mlp, inputs: &[Vec<f64>], cost: &CostMatrix) -> Result<Vec<f64>> {
    check_scoring_net(net, cost)?;
    inputs
        .iter()
        .map(|x| net.predict(x).map(|p| score_of(&p, cost).0))
        .collect()
}

pub(crate) fn check_scoring_net(net: &Mlp, cost: &CostMatrix) -> Result<()> {
    if net.output_head() != OutputHead::Softmax {
        return Err(Error::domain(
            "scoring requires a network with a softmax head",
        ));
    }
    if net.output_dim() != cost.k() {
        return Err(Error::shape(format!(
            "network has {} outputs but the cost matrix is {}x{}",
            net.output_dim(),
            cost.k(),
            cost.k()
        )));
    }
    Ok(())
}

fn check_dims(p: &[f64], cost: &CostMatrix) -> Result<()> {
    if p.len() != cost.k() {
        return Err(Error::shape(format!(
            "distribution has {} classes, cost matrix has {}",
            p.len(),
            cost.k()
        )));
    }
    Ok(())
}

fn cost_to_class(p: &[f64], k: usize, cost: &CostMatrix) -> f64 {
    p.iter()
        .enumerate()
        .map(|(j, pj)| pj * cost.get(j, k))
        .sum()
}

/// Unchecked score for hot paths; `p.len()` must equal `cost.k()`.
pub(crate) fn score_of(p: &[f64], cost: &CostMatrix) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for k in 0..cost.k() {
        let c = cost_to_class(p, k, cost);
        if c < best.0 {
            best = (c, k);
        }
    }
    best
}
