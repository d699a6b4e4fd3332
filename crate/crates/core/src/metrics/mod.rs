//! Pixel-pooled anomaly-detection metrics.
//!
//! Thresholds are the distinct score values; pixels with equal scores are
//! always processed as one group. AUROC counts ties as one half, AP sums
//! precision times recall increments over descending thresholds, and FPR95
//! reports the false-positive rate at the highest threshold whose
//! true-positive rate reaches 95 %, without interpolation.

pub mod oracle;

use std::fmt;

use crate::error::{Error, Result};
use crate::types::{AnomalyMap, BinaryLabelMap, PixelLabel};

/// Collects every non-ignored pixel of every frame into parallel arrays.
pub fn pool<'a, I>(frames: I) -> Result<(Vec<f64>, Vec<bool>)>
where
    I: IntoIterator<Item = (&'a AnomalyMap, &'a BinaryLabelMap)>,
{
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (map, gt) in frames {
        pool_into(map, gt, &mut scores, &mut labels)?;
    }
    Ok((scores, labels))
}

/// Appends one frame's non-ignored pixels.
pub fn pool_into(
    map: &AnomalyMap,
    gt: &BinaryLabelMap,
    scores: &mut Vec<f64>,
    labels: &mut Vec<bool>,
) -> Result<()> {
    if map.shape() != gt.shape() {
        return Err(Error::contract(format!(
            "score map {:?} and ground truth {:?} differ in shape",
            map.shape(),
            gt.shape()
        )));
    }
    for (&s, &l) in map.data().iter().zip(gt.labels()) {
        match l {
            PixelLabel::Ignore => {}
            PixelLabel::Anomaly => {
                scores.push(s as f64);
                labels.push(true);
            }
            PixelLabel::Normal => {
                scores.push(s as f64);
                labels.push(false);
            }
        }
    }
    Ok(())
}

/// (positives, negatives) for one block of equal scores, in descending score order.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::contract(format!("score {s} is not comparable")));
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups = Vec::new();
    let (mut pos, mut neg) = (0u64, 0u64);
    for block in order.chunk_by(|a, b| a.0 == b.0) {
        let p = block.iter().filter(|x| x.1).count() as u64;
        let n = block.len() as u64 - p;
        pos += p;
        neg += n;
        groups.push((p, n));
    }
    Ok((groups, pos, neg))
}

fn need_both(pos: u64, neg: u64) -> Result<()> {
    if pos == 0 || neg == 0 {
        return Err(Error::contract(format!(
            "metric needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok(())
}

/// Scores grouped into ties, in descending score order.
struct Groups {
    blocks: Vec<(u64, u64)>,
    pos: u64,
    neg: u64,
}

impl Groups {
    fn new(scores: &[f64], labels: &[bool]) -> Result<Self> {
        let (blocks, pos, neg) = tie_groups(scores, labels)?;
        Ok(Self { blocks, pos, neg })
    }

    fn auroc(&self) -> Result<f64> {
        need_both(self.pos, self.neg)?;
        // Twice the number of (pos, neg) pairs won, counting ties once.
        let mut doubled: u128 = 0;
        let mut pos_above: u128 = 0;
        for &(p, n) in &self.blocks {
            doubled += n as u128 * (2 * pos_above + p as u128);
            pos_above += p as u128;
        }
        Ok(doubled as f64 / (2.0 * self.pos as f64 * self.neg as f64))
    }

    fn average_precision(&self) -> Result<f64> {
        if self.pos == 0 {
            return Err(Error::contract("average precision needs at least one positive"));
        }
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut ap = 0.0;
        for &(p, n) in &self.blocks {
            tp += p;
            fp += n;
            if p > 0 {
                ap += (p as f64 / self.pos as f64) * (tp as f64 / (tp + fp) as f64);
            }
        }
        Ok(ap)
    }

    fn fpr_at_95_tpr(&self) -> Result<f64> {
        need_both(self.pos, self.neg)?;
        let (mut tp, mut fp) = (0u64, 0u64);
        for &(p, n) in &self.blocks {
            tp += p;
            fp += n;
            // tp / pos >= 19 / 20, in integers.
            if 20 * tp >= 19 * self.pos {
                return Ok(fp as f64 / self.neg as f64);
            }
        }
        unreachable!("the lowest threshold admits every positive")
    }
}

/// Area under the ROC curve; equals the Mann-Whitney statistic with ties counted as 1/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Groups::new(scores, labels)?.auroc()
}

/// Average precision over the precision-recall curve traced by descending thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Groups::new(scores, labels)?.average_precision()
}

/// False-positive rate at the highest threshold reaching TPR >= 0.95.
pub fn fpr_at_95_tpr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Groups::new(scores, labels)?.fpr_at_95_tpr()
}

/// Metrics of one pooled evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    pub fpr95: f64,
    pub auroc: f64,
    pub num_positive: usize,
    pub num_negative: usize,
    pub num_ignored: usize,
}

impl EvalReport {
    pub fn compute(scores: &[f64], labels: &[bool], num_ignored: usize) -> Result<Self> {
        let groups = Groups::new(scores, labels)?;
        need_both(groups.pos, groups.neg)?;
        Ok(Self {
            ap: groups.average_precision()?,
            fpr95: groups.fpr_at_95_tpr()?,
            auroc: groups.auroc()?,
            num_positive: groups.pos as usize,
            num_negative: groups.neg as usize,
            num_ignored,
        })
    }

    pub fn prevalence(&self) -> f64 {
        self.num_positive as f64 / (self.num_positive + self.num_negative) as f64
    }

    /// `AP FPR95 AUROC` as percentages with two decimals.
    pub fn percent_fields(&self) -> [String; 3] {
        [self.ap, self.fpr95, self.auroc].map(|v| format!("{:.2}", 100.0 * v))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [ap, fpr, auroc] = self.percent_fields();
        writeln!(f, "AP        {ap}")?;
        writeln!(f, "FPR95     {fpr}")?;
        writeln!(f, "AUROC     {auroc}")?;
        writeln!(f, "positive  {}", self.num_positive)?;
        writeln!(f, "negative  {}", self.num_negative)?;
        writeln!(f, "ignored   {}", self.num_ignored)
    }
}
