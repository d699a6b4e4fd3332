//! Brute-force reference implementations of the metrics, for testing.
//!
//! AUROC compares every positive/negative pair; AP and FPR95 recount the
//! confusion matrix from scratch at every distinct threshold. Inputs are
//! limited to 10 000 elements.

use crate::error::{Error, Result};

pub const MAX_LEN: usize = 10_000;

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.len() > MAX_LEN {
        return Err(Error::contract(format!(
            "oracle input limited to {MAX_LEN} elements, got {}",
            scores.len()
        )));
    }
    Ok(())
}

fn thresholds_descending(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).expect("comparable scores"));
    t.dedup();
    t
}

/// (tp, fp) when predicting positive for score >= threshold.
fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> (usize, usize) {
    scores
        .iter()
        .zip(labels)
        .filter(|(&s, _)| s >= threshold)
        .fold((0, 0), |(tp, fp), (_, &l)| if l { (tp + 1, fp) } else { (tp, fp + 1) })
}

pub fn oracle_auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract("oracle AUROC needs both classes"));
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

pub fn oracle_ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::contract("oracle AP needs a positive"));
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds_descending(scores) {
        let (tp, fp) = confusion(scores, labels, t);
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn oracle_fpr95(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    let total_neg = labels.len() - total_pos;
    if total_pos == 0 || total_neg == 0 {
        return Err(Error::contract("oracle FPR95 needs both classes"));
    }
    for t in thresholds_descending(scores) {
        let (tp, fp) = confusion(scores, labels, t);
        if tp as f64 / total_pos as f64 >= 0.95 {
            return Ok(fp as f64 / total_neg as f64);
        }
    }
    Err(Error::contract("no threshold reached 95% TPR"))
}
