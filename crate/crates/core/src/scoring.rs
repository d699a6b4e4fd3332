//! Normalization, weighted fusion and mask-level refinement of anomaly maps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{AnomalyMap, DiffKind, FusionWeights, InstanceLabelMap};

/// Per-frame min-max scaling to [0, 1]. A constant map becomes all zeros.
pub fn normalize_map(m: &AnomalyMap) -> Result<AnomalyMap> {
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("cannot normalize a map with non-finite values"));
    }
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let data = if hi > lo {
        let (lo, span) = (lo as f64, hi as f64 - lo as f64);
        m.data()
            .iter()
            .map(|&v| (((v as f64 - lo) / span) as f32).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; m.data().len()]
    };
    AnomalyMap::new_normalized(m.height(), m.width(), data)
}

/// Up to five difference maps keyed by kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffSet {
    maps: [Option<AnomalyMap>; 5],
}

impl DiffSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: DiffKind, map: AnomalyMap) {
        self.maps[kind.index()] = Some(map);
    }

    pub fn with(mut self, kind: DiffKind, map: AnomalyMap) -> Self {
        self.insert(kind, map);
        self
    }

    pub fn get(&self, kind: DiffKind) -> Option<&AnomalyMap> {
        self.maps[kind.index()].as_ref()
    }
}

/// Convex combination of normalized maps with sum-normalized weights.
/// Maps with zero weight are ignored and may be absent.
pub fn fuse(maps: &DiffSet, w: &FusionWeights) -> Result<AnomalyMap> {
    fuse_weighted(maps, w.as_array())
}

/// [`fuse`] for arbitrary non-negative weights in `DiffKind` order; only
/// their ratios matter.
pub fn fuse_weighted(maps: &DiffSet, w: [f64; 5]) -> Result<AnomalyMap> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::contract(format!("fusion weights must be finite and non-negative, got {w:?}")));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::contract("fusion weights must not all be zero"));
    }
    let mut shape = None;
    let mut acc: Vec<f64> = Vec::new();
    for kind in DiffKind::ALL.into_iter().filter(|k| w[k.index()] > 0.0) {
        let m = maps.get(kind).ok_or_else(|| {
            Error::contract(format!("{} map missing but weighted", kind.name()))
        })?;
        if !m.is_normalized() {
            return Err(Error::contract(format!(
                "{} map must be normalized before fusion",
                kind.name()
            )));
        }
        match shape {
            None => {
                shape = Some(m.shape());
                acc = vec![0.0; m.data().len()];
            }
            Some(s) if s != m.shape() => {
                return Err(Error::contract(format!(
                    "{} map shape {:?} differs from {:?}",
                    kind.name(),
                    m.shape(),
                    s
                )))
            }
            Some(_) => {}
        }
        let share = w[kind.index()] / total;
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += share * v as f64;
        }
    }
    let (h, wd) = shape.expect("at least one active weight");
    AnomalyMap::new_normalized(
        h,
        wd,
        acc.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskScore {
    pub instance: u32,
    pub pixels: usize,
    pub score: f64,
}

/// Aggregated score per instance, ordered by ascending instance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskScoreTable {
    pub entries: Vec<MaskScore>,
}

impl MaskScoreTable {
    pub fn get(&self, instance: u32) -> Option<&MaskScore> {
        self.entries
            .binary_search_by_key(&instance, |e| e.instance)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// `instance_id pixel_count score` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {:.9}\n", e.instance, e.pixels, e.score))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Aggregate {
    Mean,
    Max,
}

/// Per-instance aggregates over labeled pixels. Values are sorted within each
/// instance before summation so the mean does not depend on pixel order.
fn aggregate(m: &AnomalyMap, masks: &InstanceLabelMap, how: Aggregate) -> Result<MaskScoreTable> {
    if m.shape() != masks.shape() {
        return Err(Error::contract(format!(
            "map shape {:?} differs from mask shape {:?}",
            m.shape(),
            masks.shape()
        )));
    }
    let mut pairs: Vec<(u32, f32)> = masks
        .labels()
        .iter()
        .zip(m.data())
        .filter(|(&l, _)| l != 0)
        .map(|(&l, &v)| (l, v))
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut entries = Vec::new();
    for group in pairs.chunk_by(|a, b| a.0 == b.0) {
        let score = match how {
            Aggregate::Mean => {
                group.iter().map(|&(_, v)| v as f64).sum::<f64>() / group.len() as f64
            }
            Aggregate::Max => group.last().map(|&(_, v)| v as f64).unwrap_or(0.0),
        };
        entries.push(MaskScore {
            instance: group[0].0,
            pixels: group.len(),
            score,
        });
    }
    Ok(MaskScoreTable { entries })
}

fn require_normalized(m: &AnomalyMap) -> Result<()> {
    if !m.is_normalized() {
        return Err(Error::contract("refinement expects a normalized map"));
    }
    Ok(())
}

fn paint(m: &AnomalyMap, masks: &InstanceLabelMap, table: &MaskScoreTable) -> Result<AnomalyMap> {
    let data = masks
        .labels()
        .iter()
        .zip(m.data())
        .map(|(&l, &v)| match l {
            0 => v,
            id => table.get(id).map(|e| e.score as f32).unwrap_or(v),
        })
        .collect();
    AnomalyMap::new_normalized(m.height(), m.width(), data)
}

/// Every instance pixel takes its instance's mean score; background keeps its value.
pub fn refine_mean(m: &AnomalyMap, masks: &InstanceLabelMap) -> Result<(AnomalyMap, MaskScoreTable)> {
    require_normalized(m)?;
    let table = aggregate(m, masks, Aggregate::Mean)?;
    Ok((paint(m, masks, &table)?, table))
}

/// Every instance pixel takes its instance's maximum score; background keeps its value.
pub fn refine_max(m: &AnomalyMap, masks: &InstanceLabelMap) -> Result<(AnomalyMap, MaskScoreTable)> {
    require_normalized(m)?;
    let table = aggregate(m, masks, Aggregate::Max)?;
    Ok((paint(m, masks, &table)?, table))
}

/// Keeps only the instance with the highest mean score (ties go to the
/// smallest id); every other pixel, background included, is set to zero.
pub fn refine_top1(m: &AnomalyMap, masks: &InstanceLabelMap) -> Result<(AnomalyMap, MaskScoreTable)> {
    require_normalized(m)?;
    let table = aggregate(m, masks, Aggregate::Mean)?;
    let best = table
        .entries
        .iter()
        .fold(None::<&MaskScore>, |best, e| match best {
            Some(b) if b.score >= e.score => Some(b),
            _ => Some(e),
        })
        .ok_or_else(|| Error::contract("top-1 refinement needs at least one instance"))?;
    let data = masks
        .labels()
        .iter()
        .map(|&l| if l == best.instance { best.score as f32 } else { 0.0 })
        .collect();
    let map = AnomalyMap::new_normalized(m.height(), m.width(), data)?;
    Ok((map, table))
}

/// Mask-level refinement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Refinement {
    None,
    Mean,
    Max,
    Top1,
}

impl Refinement {
    pub fn uses_masks(self) -> bool {
        self != Refinement::None
    }

    pub fn name(self) -> &'static str {
        match self {
            Refinement::None => "none",
            Refinement::Mean => "mean",
            Refinement::Max => "max",
            Refinement::Top1 => "top1",
        }
    }

    /// Applies the strategy. `masks` is required unless the strategy is `None`.
    pub fn apply(
        self,
        m: &AnomalyMap,
        masks: Option<&InstanceLabelMap>,
    ) -> Result<(AnomalyMap, Option<MaskScoreTable>)> {
        let need = || masks.ok_or_else(|| Error::contract(format!("strategy {} needs masks", self.name())));
        let (map, table) = match self {
            Refinement::None => return Ok((m.clone(), None)),
            Refinement::Mean => refine_mean(m, need()?)?,
            Refinement::Max => refine_max(m, need()?)?,
            Refinement::Top1 => refine_top1(m, need()?)?,
        };
        Ok((map, Some(table)))
    }
}

impl fmt::Display for Refinement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Refinement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Refinement::None),
            "mean" => Ok(Refinement::Mean),
            "max" => Ok(Refinement::Max),
            "top1" => Ok(Refinement::Top1),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nmap(h: usize, w: usize, v: &[f32]) -> AnomalyMap {
        AnomalyMap::new_normalized(h, w, v.to_vec()).unwrap()
    }

    fn close_all(a: &[f32], b: &[f32]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6)
    }

    #[test]
    fn normalize_examples() {
        let m = AnomalyMap::new(1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        let n = normalize_map(&m).unwrap();
        assert!(n.is_normalized());
        assert!(close_all(n.data(), &[0.0, 0.5, 1.0]));

        let c = normalize_map(&AnomalyMap::new(2, 2, vec![0.3; 4]).unwrap()).unwrap();
        assert_eq!(c.data(), &[0.0; 4]);

        let span = AnomalyMap::new(1, 4, vec![0.0, 0.3, 1.0, 0.7]).unwrap();
        let n = normalize_map(&span).unwrap();
        assert_eq!(n.data()[0], 0.0);
        assert_eq!(n.data()[2], 1.0);
    }

    #[test]
    fn fuse_examples() {
        let a = nmap(1, 3, &[0.1, 0.5, 0.9]);
        let b = nmap(1, 3, &[0.3, 0.2, 0.6]);
        let set = DiffSet::new().with(DiffKind::Abs, a.clone()).with(DiffKind::Mse, b.clone());

        let only_abs = FusionWeights::new(1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(fuse(&set, &only_abs).unwrap().data(), a.data());

        let twin = DiffSet::new().with(DiffKind::Abs, a.clone()).with(DiffKind::Mse, a.clone());
        let half = FusionWeights::new(0.5, 0.5, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(fuse(&twin, &half).unwrap().data(), a.data());

        assert_eq!(
            fuse_weighted(&set, [2.0, 2.0, 0.0, 0.0, 0.0]).unwrap(),
            fuse(&set, &half).unwrap()
        );
        assert!(fuse_weighted(&set, [0.0; 5]).is_err());
        assert!(fuse_weighted(&set, [-1.0, 2.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn fuse_errors() {
        let a = nmap(1, 2, &[0.0, 1.0]);
        let raw = AnomalyMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let w = FusionWeights::new(0.5, 0.5, 0.0, 0.0, 0.0).unwrap();
        let missing = DiffSet::new().with(DiffKind::Abs, a.clone());
        assert!(fuse(&missing, &w).is_err());
        let unnormalized = DiffSet::new().with(DiffKind::Abs, a.clone()).with(DiffKind::Mse, raw);
        assert!(fuse(&unnormalized, &w).is_err());
        let mismatched = DiffSet::new()
            .with(DiffKind::Abs, a)
            .with(DiffKind::Mse, nmap(2, 1, &[0.0, 1.0]));
        assert!(fuse(&mismatched, &w).is_err());
    }

    #[test]
    fn refine_mean_examples() {
        let labels = InstanceLabelMap::new(1, 3, vec![1, 1, 0]).unwrap();
        let (m, t) = refine_mean(&nmap(1, 3, &[0.2, 0.4, 0.7]), &labels).unwrap();
        assert!(close_all(m.data(), &[0.3, 0.3, 0.7]));
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.entries[0].pixels, 2);

        let labels = InstanceLabelMap::new(1, 4, vec![1, 1, 2, 2]).unwrap();
        let (m, t) = refine_mean(&nmap(1, 4, &[0.1, 0.1, 0.8, 0.6]), &labels).unwrap();
        assert!(close_all(m.data(), &[0.1, 0.1, 0.7, 0.7]));
        assert_eq!(t.to_text().lines().count(), 2);
    }

    #[test]
    fn refine_max_examples() {
        let labels = InstanceLabelMap::new(1, 4, vec![3, 3, 9, 0]).unwrap();
        let (m, t) = refine_max(&nmap(1, 4, &[0.2, 0.4, 0.55, 0.9]), &labels).unwrap();
        assert_eq!(m.data(), &[0.4, 0.4, 0.55, 0.9]);
        assert_eq!(t.get(9).unwrap().score, 0.55f32 as f64);
    }

    #[test]
    fn refine_top1_examples() {
        let labels = InstanceLabelMap::new(1, 5, vec![1, 1, 2, 2, 0]).unwrap();
        let (m, _) = refine_top1(&nmap(1, 5, &[0.6, 0.8, 0.4, 0.4, 0.95]), &labels).unwrap();
        assert!(close_all(m.data(), &[0.7, 0.7, 0.0, 0.0, 0.0]));

        let (m, _) = refine_top1(&nmap(1, 5, &[0.5, 0.5, 0.5, 0.5, 0.1]), &labels).unwrap();
        assert_eq!(m.data(), &[0.5, 0.5, 0.0, 0.0, 0.0]);

        let single = InstanceLabelMap::new(1, 3, vec![0, 4, 0]).unwrap();
        let (m, _) = refine_top1(&nmap(1, 3, &[0.9, 0.2, 0.9]), &single).unwrap();
        assert_eq!(m.data(), &[0.0, 0.2, 0.0]);

        let empty = InstanceLabelMap::new(1, 3, vec![0; 3]).unwrap();
        assert!(matches!(refine_top1(&nmap(1, 3, &[0.1; 3]), &empty), Err(Error::Contract(_))));
    }

    #[test]
    fn refine_shape_mismatch() {
        let labels = InstanceLabelMap::new(2, 2, vec![1; 4]).unwrap();
        assert!(refine_mean(&nmap(1, 4, &[0.0; 4]), &labels).is_err());
        assert!(refine_max(&nmap(1, 4, &[0.0; 4]), &labels).is_err());
    }

    #[test]
    fn strategy_parsing() {
        for s in ["none", "mean", "max", "top1"] {
            assert_eq!(s.parse::<Refinement>().unwrap().name(), s);
        }
        assert!("median".parse::<Refinement>().is_err());
        assert!(Refinement::Mean.apply(&nmap(1, 1, &[0.0]), None).is_err());
    }

    fn frame() -> impl Strategy<Value = (AnomalyMap, InstanceLabelMap)> {
        (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
            (
                prop::collection::vec(0.0f32..=1.0, h * w),
                prop::collection::vec(0u32..5, h * w),
            )
                .prop_map(move |(v, l)| {
                    (
                        AnomalyMap::new_normalized(h, w, v).unwrap(),
                        InstanceLabelMap::new(h, w, l).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn normalize_bounds_and_degeneracy(v in prop::collection::vec(0.0f32..100.0, 1..50)) {
            let n = v.len();
            let out = normalize_map(&AnomalyMap::new(1, n, v.clone()).unwrap()).unwrap();
            prop_assert!(out.data().iter().all(|x| (0.0..=1.0).contains(x)));
            let constant = normalize_map(&AnomalyMap::new(1, n, vec![v[0]; n]).unwrap()).unwrap();
            prop_assert!(constant.data().iter().all(|&x| x == 0.0));
        }

        #[test]
        fn fuse_convex_and_scale_invariant(
            maps in prop::collection::vec(prop::collection::vec(0.0f32..=1.0, 12), 5),
            w in prop::array::uniform5(0.0f64..=1.0),
            scale in 0.05f64..1.0,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let mut set = DiffSet::new();
            for (k, m) in DiffKind::ALL.iter().zip(&maps) {
                set.insert(*k, AnomalyMap::new_normalized(3, 4, m.clone()).unwrap());
            }
            let a = fuse(&set, &FusionWeights::from_array(w).unwrap()).unwrap();
            let b = fuse_weighted(&set, w.map(|x| x * scale)).unwrap();
            let c = fuse_weighted(&set, w.map(|x| x / scale)).unwrap();
            prop_assert!(b.data().iter().zip(c.data()).all(|(p, q)| (p - q).abs() <= 1e-6));
            for (p, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                prop_assert!((0.0..=1.0).contains(x));
                prop_assert!((x - y).abs() <= 1e-6);
                let lo = maps.iter().zip(&w).filter(|(_, &wi)| wi > 0.0).map(|(m, _)| m[p]).fold(f32::INFINITY, f32::min);
                let hi = maps.iter().zip(&w).filter(|(_, &wi)| wi > 0.0).map(|(m, _)| m[p]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(*x >= lo - 1e-6 && *x <= hi + 1e-6);
            }
        }

        #[test]
        fn refinement_idempotent((m, labels) in frame()) {
            let (once, _) = refine_mean(&m, &labels).unwrap();
            let (twice, _) = refine_mean(&once, &labels).unwrap();
            prop_assert_eq!(once, twice);
            let (once, _) = refine_max(&m, &labels).unwrap();
            let (twice, _) = refine_max(&once, &labels).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn refinement_within_mask_permutation_invariant((m, labels) in frame(), seed in any::<u64>()) {
            // Shuffle values among the pixels of one instance.
            let ids = labels.instance_ids();
            prop_assume!(!ids.is_empty());
            let target = ids[(seed as usize) % ids.len()];
            let idx: Vec<usize> = labels.labels().iter().enumerate().filter(|(_, &l)| l == target).map(|(i, _)| i).collect();
            let mut values: Vec<f32> = idx.iter().map(|&i| m.data()[i]).collect();
            let mut rng = crate::rng::SplitMix64::new(seed);
            for i in (1..values.len()).rev() {
                let j = (rng.next() % (i as u64 + 1)) as usize;
                values.swap(i, j);
            }
            let mut data = m.data().to_vec();
            for (&i, v) in idx.iter().zip(values) { data[i] = v; }
            let permuted = AnomalyMap::new_normalized(m.height(), m.width(), data).unwrap();
            prop_assert_eq!(refine_mean(&m, &labels).unwrap(), refine_mean(&permuted, &labels).unwrap());
            prop_assert_eq!(refine_max(&m, &labels).unwrap(), refine_max(&permuted, &labels).unwrap());
        }

        #[test]
        fn refine_mean_shrinks_masked_range((m, labels) in frame()) {
            let (out, _) = refine_mean(&m, &labels).unwrap();
            let masked = |map: &AnomalyMap| -> Vec<f32> {
                labels.labels().iter().zip(map.data()).filter(|(&l, _)| l != 0).map(|(_, &v)| v).collect()
            };
            let before = masked(&m);
            let after = masked(&out);
            if !before.is_empty() {
                let max_b = before.iter().cloned().fold(f32::MIN, f32::max);
                let min_b = before.iter().cloned().fold(f32::MAX, f32::min);
                prop_assert!(after.iter().all(|&v| v <= max_b && v >= min_b));
            }
            let global_max = m.data().iter().cloned().fold(f32::MIN, f32::max);
            prop_assert!(out.data().iter().all(|&v| v <= global_max));
        }

        #[test]
        fn table_matches_independent_scan((m, labels) in frame()) {
            let (_, mean_t) = refine_mean(&m, &labels).unwrap();
            let (_, max_t) = refine_max(&m, &labels).unwrap();
            prop_assert_eq!(mean_t.entries.iter().map(|e| e.instance).collect::<Vec<_>>(), labels.instance_ids());
            for id in labels.instance_ids() {
                let vals: Vec<f64> = labels.labels().iter().zip(m.data()).filter(|(&l, _)| l == id).map(|(_, &v)| v as f64).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let max = vals.iter().cloned().fold(f64::MIN, f64::max);
                let e = mean_t.get(id).unwrap();
                prop_assert_eq!(e.pixels, vals.len());
                prop_assert!((e.score - mean).abs() < 1e-9);
                prop_assert_eq!(max_t.get(id).unwrap().score, max);
            }
        }
    }
}
