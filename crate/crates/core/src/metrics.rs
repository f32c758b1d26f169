//! Accuracy, pairwise diversity (disagreement, KL) and calibration (ECE, NLL).
//!
//! All logarithms are natural; probabilities are floored at [`PROB_FLOOR`]
//! before any log is taken.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_ECE_BINS: usize = 15;

fn check_rows(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, c) = probs.dims2()?;
    if b != labels.len() {
        return Err(Error::dim(format!("{b} prediction rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
    }
    Ok((b, c))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Predicted class per row.
pub fn predictions(probs: &Tensor) -> Result<Vec<usize>> {
    let (_, c) = probs.dims2()?;
    Ok(probs.data().chunks(c).map(argmax).collect())
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, c) = check_rows(probs, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let correct = probs
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / b as f64)
}

/// Fraction of positions where two prediction vectors differ.
pub fn disagreement_rate(preds_a: &[usize], preds_b: &[usize]) -> Result<f64> {
    if preds_a.len() != preds_b.len() {
        return Err(Error::dim(format!(
            "prediction vectors differ in length: {} vs {}",
            preds_a.len(),
            preds_b.len()
        )));
    }
    if preds_a.is_empty() {
        return Ok(0.0);
    }
    let diff = preds_a.iter().zip(preds_b).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / preds_a.len() as f64)
}

/// Symmetric `M×M` disagreement matrix with zero diagonal.
pub fn disagreement_matrix(preds: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let m = preds.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let r = disagreement_rate(&preds[i], &preds[j])?;
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// `KL(p‖q) = Σ pₖ (ln pₖ − ln qₖ)` with both sides floored.
///
/// Rounding can push near-identical rows a few ulps below zero; those clamp to 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pk, &qk)| pk * (pk.max(PROB_FLOOR).ln() - qk.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Entry `(i, j)` is the mean over samples of `KL(pᵢ‖pⱼ)`.
pub fn mean_pairwise_kl(member_probs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let m = member_probs.len();
    if let Some(first) = member_probs.first() {
        for p in member_probs {
            if p.shape() != first.shape() {
                return Err(Error::dim(format!(
                    "member probability shapes differ: {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
    }
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        let (b, c) = member_probs[i].dims2()?;
        for j in 0..m {
            if i == j {
                continue;
            }
            let total: f64 = member_probs[i]
                .data()
                .chunks(c)
                .zip(member_probs[j].data().chunks(c))
                .map(|(p, q)| kl_divergence(p, q))
                .sum();
            out[i][j] = total / b as f64;
        }
    }
    Ok(out)
}

/// Mean of the off-diagonal entries (0 for fewer than two members).
pub fn mean_off_diagonal(matrix: &[Vec<f64>]) -> f64 {
    let m = matrix.len();
    if m < 2 {
        return 0.0;
    }
    let sum: f64 = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| matrix[i][j])
        .sum();
    sum / (m * (m - 1)) as f64
}

/// Expected calibration error over equal-width confidence bins.
///
/// Confidence `c` lands in bin `min(⌊c·bins⌋, bins − 1)`; empty bins contribute 0.
pub fn ece(probs: &Tensor, labels: &[usize], num_bins: usize) -> Result<f64> {
    if num_bins == 0 {
        return Err(Error::Config("ece needs at least one bin".into()));
    }
    let (b, c) = check_rows(probs, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    for (row, &y) in probs.data().chunks(c).zip(labels) {
        let pred = argmax(row);
        let conf = row[pred];
        let bin = ((conf * num_bins as f64).floor() as usize).min(num_bins - 1);
        count[bin] += 1;
        conf_sum[bin] += conf;
        if pred == y {
            correct[bin] += 1;
        }
    }
    Ok((0..num_bins)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let n = count[k] as f64;
            (n / b as f64) * (correct[k] as f64 / n - conf_sum[k] / n).abs()
        })
        .sum())
}

/// Mean of `−ln max(p[label], floor)`.
pub fn nll(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, c) = check_rows(probs, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let total: f64 = probs
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / b as f64)
}

/// Evaluation summary for one trained strategy on one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub members: usize,
    pub accuracy: f64,
    pub member_accuracies: Vec<f64>,
    pub disagreement: Vec<Vec<f64>>,
    pub kl_matrix: Vec<Vec<f64>>,
    pub mean_disagreement: f64,
    pub mean_kl: f64,
    pub ece: f64,
    pub nll: f64,
    pub budget_ratio: f64,
}

impl MetricsReport {
    /// Scores an ensemble from its members' class probabilities on a shared test split.
    pub fn from_member_probs(
        member_probs: &[Tensor],
        labels: &[usize],
        ece_bins: usize,
        budget_ratio: f64,
    ) -> Result<Self> {
        if member_probs.is_empty() {
            return Err(Error::Input("no ensemble members to score".into()));
        }
        let ensemble = average_probs(member_probs)?;
        let member_accuracies = member_probs
            .iter()
            .map(|p| accuracy(p, labels))
            .collect::<Result<Vec<_>>>()?;
        let preds = member_probs
            .iter()
            .map(predictions)
            .collect::<Result<Vec<_>>>()?;
        let disagreement = disagreement_matrix(&preds)?;
        let kl_matrix = mean_pairwise_kl(member_probs)?;
        Ok(Self {
            members: member_probs.len(),
            accuracy: accuracy(&ensemble, labels)?,
            member_accuracies,
            mean_disagreement: mean_off_diagonal(&disagreement),
            mean_kl: mean_off_diagonal(&kl_matrix),
            disagreement,
            kl_matrix,
            ece: ece(&ensemble, labels, ece_bins)?,
            nll: nll(&ensemble, labels)?,
            budget_ratio,
        })
    }
}

/// Uniform average of same-shaped probability matrices.
pub fn average_probs(member_probs: &[Tensor]) -> Result<Tensor> {
    let first = member_probs
        .first()
        .ok_or_else(|| Error::Input("cannot average zero members".into()))?;
    let mut acc = vec![0.0; first.numel()];
    for p in member_probs {
        if p.shape() != first.shape() {
            return Err(Error::dim(format!(
                "member probability shapes differ: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        acc.iter_mut().zip(p.data()).for_each(|(a, v)| *a += v);
    }
    let m = member_probs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Tensor::new(first.shape(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn accuracy_cases() {
        let p = probs(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4], &[0.3, 0.7]]);
        assert_eq!(accuracy(&p, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&p, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&p, &[0, 1]).is_err());
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let p = probs(&[&[0.25, 0.5, 0.25], &[0.5, 0.5, 0.0]]);
        assert_eq!(predictions(&p).unwrap(), vec![1, 0]);
    }

    #[test]
    fn disagreement_cases() {
        let a = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        let mut b = a;
        assert_eq!(disagreement_rate(&a, &b).unwrap(), 0.0);
        b[0] = 9;
        b[4] = 0;
        b[7] = 1;
        assert!((disagreement_rate(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(disagreement_rate(&a, &b).unwrap(), disagreement_rate(&b, &a).unwrap());
        assert!(disagreement_rate(&a, &b[..3]).is_err());
    }

    #[test]
    fn kl_of_two_point_distributions() {
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&[0.5, 0.5], &[0.25, 0.75]) - want).abs() < 1e-15);
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn kl_matrix_identical_members_is_zero() {
        let p = probs(&[&[0.1, 0.9], &[0.6, 0.4]]);
        let m = mean_pairwise_kl(&[p.clone(), p.clone(), p]).unwrap();
        assert!(m.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn ece_extremes() {
        let p = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(ece(&p, &[0, 1], 15).unwrap(), 0.0);
        assert_eq!(ece(&p, &[1, 0], 15).unwrap(), 1.0);
        assert!(ece(&p, &[0, 1], 0).is_err());
    }

    #[test]
    fn nll_uniform_and_one_hot() {
        let u = Tensor::full([4, 10], 0.1);
        assert!((nll(&u, &[0, 3, 5, 9]).unwrap() - 10f64.ln()).abs() < 1e-12);
        let p = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(nll(&p, &[0, 1]).unwrap(), 0.0);
        assert!((nll(&p, &[1, 1]).unwrap() - 0.5 * -(PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn report_single_member_has_trivial_diversity() {
        let p = probs(&[&[0.7, 0.3], &[0.4, 0.6]]);
        let r = MetricsReport::from_member_probs(&[p], &[0, 1], 15, 1.0).unwrap();
        assert_eq!(r.members, 1);
        assert_eq!(r.disagreement, vec![vec![0.0]]);
        assert_eq!(r.mean_kl, 0.0);
        assert_eq!(r.accuracy, 1.0);
    }
}
