//! LDA, length normalization and multinomial logistic regression over
//! utterance embeddings.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::softmax_in_place;

/// Ridge added to the within-class scatter.
pub const SCATTER_RIDGE: f64 = 1e-6;
pub const DEFAULT_LDA_DIM: usize = 7;
pub const DEFAULT_L2: f64 = 1e-3;
pub const LR_TOLERANCE: f64 = 1e-6;
pub const LR_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaTransform {
    /// `dim_out` rows of length `dim_in`, by descending discriminant power.
    pub projection: Vec<Vec<f64>>,
    /// Global mean subtracted before projecting.
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub class_count: usize,
}

fn check_rows(x: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if x.len() != labels.len() {
        return Err(Error::Data(format!("{} rows for {} labels", x.len(), labels.len())));
    }
    let dim = x
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Data("no samples".into()))?;
    for row in x {
        if row.len() != dim {
            return Err(Error::dims("backend input", &[row.len()], &[dim]));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: "backend input" });
        }
    }
    Ok(dim)
}

fn class_counts(labels: &[usize]) -> Vec<usize> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0; n];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Fisher LDA: generalized eigenvectors of the between- vs (ridged)
/// within-class scatter, normalized so that `wᵀ S_w w = 1`.
pub fn fit_lda(x: &[Vec<f64>], labels: &[usize], dim_out: usize) -> Result<LdaTransform> {
    let dim = check_rows(x, labels)?;
    let counts = class_counts(labels);
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Data("LDA needs at least two classes".into()));
    }
    if dim_out == 0 || dim_out > present.len() - 1 || dim_out > dim {
        return Err(Error::Rank {
            requested: dim_out,
            max: (present.len() - 1).min(dim),
        });
    }
    if let Some(&c) = present.iter().find(|&&c| counts[c] < dim_out + 1) {
        return Err(Error::Data(format!(
            "class {c} has {} samples; LDA to {dim_out} dimensions needs at least {}",
            counts[c],
            dim_out + 1
        )));
    }
    let n = x.len() as f64;
    let mut mean = DVector::zeros(dim);
    let mut class_means = vec![DVector::<f64>::zeros(dim); counts.len()];
    for (row, &l) in x.iter().zip(labels) {
        let v = DVector::from_column_slice(row);
        mean += &v;
        class_means[l] += v;
    }
    mean /= n;
    for &c in &present {
        class_means[c] /= counts[c] as f64;
    }
    let mut sw = DMatrix::<f64>::zeros(dim, dim);
    for (row, &l) in x.iter().zip(labels) {
        let d = DVector::from_column_slice(row) - &class_means[l];
        sw.ger(1.0 / n, &d, &d, 1.0);
    }
    let mut sb = DMatrix::<f64>::zeros(dim, dim);
    for &c in &present {
        let d = &class_means[c] - &mean;
        sb.ger(counts[c] as f64 / n, &d, &d, 1.0);
    }
    for i in 0..dim {
        sw[(i, i)] += SCATTER_RIDGE;
    }
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::Conditioning("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("singular Cholesky factor".into()))?;
    let m = &l_inv * &sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let back = l_inv.transpose();
    let mut projection = Vec::with_capacity(dim_out);
    let mut eigenvalues = Vec::with_capacity(dim_out);
    for &k in order.iter().take(dim_out) {
        let mut w = &back * eig.eigenvectors.column(k);
        // sign convention: largest-magnitude entry positive
        let pivot = w.iamax();
        if w[pivot] < 0.0 {
            w = -w;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning("non-finite discriminant direction".into()));
        }
        projection.push(w.iter().copied().collect());
        eigenvalues.push(eig.eigenvalues[k]);
    }
    Ok(LdaTransform {
        projection,
        mean: mean.iter().copied().collect(),
        eigenvalues,
        class_count: present.len(),
    })
}

impl LdaTransform {
    pub fn dim_in(&self) -> usize {
        self.mean.len()
    }

    pub fn dim_out(&self) -> usize {
        self.projection.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim_in() {
            return Err(Error::dims("lda", &[v.len()], &[self.dim_in()]));
        }
        Ok(self
            .projection
            .iter()
            .map(|w| w.iter().zip(v).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect())
    }
}

/// `v / ‖v‖₂`.
pub fn length_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrClassifier {
    /// `L × dim`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFit {
    pub classifier: LrClassifier,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// False when the iteration cap was hit first.
    pub converged: bool,
}

/// `softmax(W·x + b)`.
pub fn predict_lr(clf: &LrClassifier, x: &[f64]) -> Result<Vec<f64>> {
    let dim = clf.weights.first().map_or(0, Vec::len);
    if x.len() != dim {
        return Err(Error::dims("predict_lr", &[x.len()], &[dim]));
    }
    let mut z: Vec<f64> = clf
        .weights
        .iter()
        .zip(&clf.biases)
        .map(|(w, b)| b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    softmax_in_place(&mut z);
    Ok(z)
}

/// Mean multinomial cross-entropy plus `l2/2 · ‖W‖²`, minimized by full-batch
/// gradient descent with step `1/L` for the Lipschitz bound
/// `L = max‖(x, 1)‖² / 2 + l2`.
pub fn fit_logistic_regression(x: &[Vec<f64>], labels: &[usize], classes: usize, l2: f64) -> Result<LrFit> {
    let dim = check_rows(x, labels)?;
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::Config(format!("l2 must be non-negative, got {l2}")));
    }
    let present = class_counts(labels).iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Data("logistic regression needs at least two classes".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index {
            op: "logistic regression label",
            index: l,
            len: classes,
        });
    }
    let n = x.len() as f64;
    let max_sq = x
        .iter()
        .map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (0.5 * max_sq + l2);
    let mut clf = LrClassifier {
        weights: vec![vec![0.0; dim]; classes],
        biases: vec![0.0; classes],
    };
    let mut gw = vec![vec![0.0; dim]; classes];
    let mut gb = vec![0.0; classes];
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;
    while iterations < LR_MAX_ITERATIONS {
        for (g, w) in gw.iter_mut().zip(&clf.weights) {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi = l2 * wi;
            }
        }
        gb.iter_mut().for_each(|g| *g = 0.0);
        for (row, &y) in x.iter().zip(labels) {
            let mut p = predict_lr(&clf, row)?;
            p[y] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                let s = pc / n;
                gb[c] += s;
                for (g, v) in gw[c].iter_mut().zip(row) {
                    *g += s * v;
                }
            }
        }
        gradient_norm = gw.iter().flatten().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if gradient_norm < LR_TOLERANCE {
            break;
        }
        for (w, g) in clf.weights.iter_mut().zip(&gw) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= step * gi;
            }
        }
        for (b, g) in clf.biases.iter_mut().zip(&gb) {
            *b -= step * g;
        }
        iterations += 1;
    }
    Ok(LrFit {
        classifier: clf,
        iterations,
        gradient_norm,
        converged: gradient_norm < LR_TOLERANCE,
    })
}

/// LDA → length normalization → logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backend {
    pub lda: LdaTransform,
    pub lr: LrClassifier,
    pub converged: bool,
    pub iterations: usize,
}

impl Backend {
    pub fn fit(x: &[Vec<f64>], labels: &[usize], classes: usize, dim_out: usize, l2: f64) -> Result<Self> {
        let lda = fit_lda(x, labels, dim_out)?;
        let z = x
            .iter()
            .map(|v| length_normalize(&lda.apply(v)?))
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_logistic_regression(&z, labels, classes, l2)?;
        Ok(Self {
            lda,
            lr: fit.classifier,
            converged: fit.converged,
            iterations: fit.iterations,
        })
    }

    pub fn posterior(&self, v: &[f64]) -> Result<Vec<f64>> {
        predict_lr(&self.lr, &length_normalize(&self.lda.apply(v)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
