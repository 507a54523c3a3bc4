//! Data-independent stability analysis by equivalence-class enumeration.
//!
//! The leaves of the ensemble induce a partition of the feature space into
//! classes `(H, y)`: every instance of `H` reaches the same leaf in every tree
//! and so receives label `y`. Two classes with different labels that overlap
//! once the sensitive features are projected away, and that differ on some
//! sensitive feature, contain a pair of instances that differ only in
//! sensitive values yet are classified differently. Both regions go into the
//! unstable set `U`. Every discriminated instance lies in some region of `U`;
//! the converse does not hold in general.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HyperRectangle, Interval};
use crate::model::{majority, Ensemble, FeatureId, FeatureKind, LabelId, LeafRegion, SensitiveSet, TreeNode};

pub const DEFAULT_MAX_CLASSES: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalysisConfig {
    /// Upper bound on enumerated equivalence classes. The pair walk in
    /// [`analyze`] applies the same bound to completed class pairs.
    pub max_classes: usize,
    /// Stop refining a leaf combination as soon as its majority vote is
    /// settled, taking trees in ensemble order. Classes become coarser
    /// regions that still share one label, and `U` grows into a coarser but
    /// still sound over-approximation, usually with far fewer rectangles.
    pub coarse: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            max_classes: DEFAULT_MAX_CLASSES,
            coarse: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceClass {
    pub region: HyperRectangle,
    pub label: LabelId,
}

/// Rectangles over-approximating where the ensemble may discriminate.
/// Ids are dense, `0..len`, in list order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UnstableSet {
    rectangles: Vec<HyperRectangle>,
}

impl UnstableSet {
    /// Drops exact duplicates (first occurrence wins) and renumbers.
    pub fn new(rectangles: impl IntoIterator<Item = HyperRectangle>) -> UnstableSet {
        let mut rectangles: Vec<HyperRectangle> = rectangles.into_iter().collect();
        let keep: Vec<bool> = {
            let mut seen = HashSet::with_capacity(rectangles.len());
            rectangles.iter().map(|r| seen.insert(r)).collect()
        };
        let mut keep = keep.into_iter();
        rectangles.retain(|_| keep.next().unwrap_or(false));
        rectangles.shrink_to_fit();
        for (id, r) in rectangles.iter_mut().enumerate() {
            r.id = Some(id);
        }
        UnstableSet { rectangles }
    }

    pub fn rectangles(&self) -> &[HyperRectangle] {
        &self.rectangles
    }

    pub fn len(&self) -> usize {
        self.rectangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rectangles.is_empty()
    }

    pub fn get(&self, id: usize) -> &HyperRectangle {
        &self.rectangles[id]
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.rectangles.iter().any(|h| h.contains_point(x))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("rectangles always serialize")
    }

    /// Reads a rectangle array, checking that features exist.
    pub fn from_json_str(text: &str, num_features: usize) -> Result<UnstableSet> {
        let rects = crate::geometry::rectangles_from_json(text)?;
        for (i, r) in rects.iter().enumerate() {
            if let Some(f) = r.max_feature().filter(|f| *f >= num_features) {
                return Err(Error::parse(format!("[{i}]"), format!("unknown feature {f}")));
            }
        }
        Ok(UnstableSet::new(rects))
    }
}

impl<'de> Deserialize<'de> for UnstableSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(UnstableSet::new(Vec::<HyperRectangle>::deserialize(d)?))
    }
}

fn tree_leaves(ensemble: &Ensemble) -> Vec<Vec<LeafRegion>> {
    ensemble.trees().iter().map(|t| t.leaf_regions()).collect()
}

/// Partitions the feature space into equivalence classes, in the order of a
/// depth-first walk over trees (ensemble order) and leaves (left first).
/// Leaf combinations whose regions do not intersect are abandoned as soon as
/// the conflict appears. In coarse mode a combination becomes a class as soon
/// as its majority is settled.
pub fn enumerate_equivalence_classes(
    ensemble: &Ensemble,
    limits: AnalysisConfig,
) -> Result<Vec<EquivalenceClass>> {
    let leaves = tree_leaves(ensemble);
    let mut out = Vec::new();
    let mut votes = vec![0u32; ensemble.labels().len()];
    enumerate_rec(&leaves, 0, &HyperRectangle::full(), &mut votes, limits, &mut out)?;
    Ok(out)
}

fn enumerate_rec(
    leaves: &[Vec<LeafRegion>],
    depth: usize,
    region: &HyperRectangle,
    votes: &mut [u32],
    limits: AnalysisConfig,
    out: &mut Vec<EquivalenceClass>,
) -> Result<()> {
    let remaining = (leaves.len() - depth) as u32;
    let label = if limits.coarse {
        settled(votes, remaining)
    } else {
        (remaining == 0).then(|| majority(votes))
    };
    if let Some(label) = label {
        if out.len() >= limits.max_classes {
            return Err(Error::ResourceLimit(format!(
                "more than {} equivalence classes",
                limits.max_classes
            )));
        }
        out.push(EquivalenceClass {
            region: region.clone(),
            label,
        });
        return Ok(());
    }
    for leaf in &leaves[depth] {
        if let Some(next) = region.intersect(&leaf.region) {
            votes[leaf.label] += 1;
            let res = enumerate_rec(leaves, depth + 1, &next, votes, limits, out);
            votes[leaf.label] -= 1;
            res?;
        }
    }
    Ok(())
}

/// The two classes can host a discriminated pair: labels differ, regions
/// overlap on every non-sensitive feature and differ on a sensitive one.
fn classes_conflict(a: &EquivalenceClass, b: &EquivalenceClass, sensitive: &SensitiveSet) -> bool {
    a.label != b.label
        && a.region.intersects_where(&b.region, |f| !sensitive.contains(f))
        && sensitive.iter().any(|k| a.region.get(k) != b.region.get(k))
}

/// Builds `U` from an explicit class list by comparing classes with
/// different labels. Quadratic; kept as the reference for [`analyze`].
pub fn unstable_from_classes(classes: &[EquivalenceClass], sensitive: &SensitiveSet) -> UnstableSet {
    let mut by_label: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        by_label.entry(c.label).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_label.values().collect();
    let mut marked = vec![false; classes.len()];
    for (gi, ga) in groups.iter().enumerate() {
        for gb in &groups[gi + 1..] {
            for &i in ga.iter() {
                for &j in gb.iter() {
                    if classes_conflict(&classes[i], &classes[j], sensitive) {
                        marked[i] = true;
                        marked[j] = true;
                    }
                }
            }
        }
    }
    UnstableSet::new(
        classes
            .iter()
            .zip(marked)
            .filter(|(_, m)| *m)
            .map(|(c, _)| c.region.clone()),
    )
}

/// Reference pipeline: enumerate every class, then compare pairs.
pub fn analyze_pairwise(
    ensemble: &Ensemble,
    sensitive: &SensitiveSet,
    limits: AnalysisConfig,
) -> Result<UnstableSet> {
    check_sensitive(ensemble, sensitive)?;
    let classes = enumerate_equivalence_classes(ensemble, limits)?;
    Ok(unstable_from_classes(&classes, sensitive))
}

fn check_sensitive(ensemble: &Ensemble, sensitive: &SensitiveSet) -> Result<()> {
    if sensitive.is_empty() {
        return Err(Error::InvalidInput("the sensitive feature set is empty".into()));
    }
    if let Some(bad) = sensitive.iter().find(|f| *f >= ensemble.num_features()) {
        return Err(Error::UnknownFeature(bad.to_string()));
    }
    Ok(())
}

/// Computes the unstable set.
///
/// Rather than materialising every class and comparing all pairs, this walks
/// the trees once for both members of a pair at the same time. A partial
/// pair is dropped as soon as
///
/// - the two regions stop overlapping on the non-sensitive features,
/// - both majorities are settled on the same label, or
/// - no remaining tree can send the two sides to different leaves and the
///   votes they will receive in common cannot separate their majorities.
///
/// In exact mode trees that split on a sensitive feature are visited first;
/// coarse classes depend on the tree order, so coarse mode keeps ensemble
/// order and stops refining each side once its majority is settled. Either
/// way the result, including rectangle order (class enumeration order), is
/// identical to [`analyze_pairwise`] with the same configuration.
pub fn analyze(ensemble: &Ensemble, sensitive: &SensitiveSet, limits: AnalysisConfig) -> Result<UnstableSet> {
    check_sensitive(ensemble, sensitive)?;
    let splits: Vec<Vec<HyperRectangle>> = ensemble
        .trees()
        .iter()
        .map(|t| {
            let mut out = Vec::new();
            sensitive_splits(t, HyperRectangle::full(), sensitive, &mut out);
            out
        })
        .collect();
    if splits.iter().all(Vec::is_empty) {
        return Ok(UnstableSet::default());
    }
    let mut order: Vec<usize> = (0..ensemble.trees().len()).collect();
    if !limits.coarse {
        order.sort_by_key(|t| splits[*t].is_empty());
    }
    let leaves = tree_leaves(ensemble);
    let walker = PairWalker {
        leaves: order.iter().map(|t| leaves[*t].clone()).collect(),
        splits: order.iter().map(|t| splits[*t].clone()).collect(),
        order,
        sensitive,
        num_labels: ensemble.labels().len(),
        completed: AtomicUsize::new(0),
        exceeded: AtomicBool::new(false),
        limit: limits.max_classes,
        coarse: limits.coarse,
    };
    let first = &walker.leaves[0];
    let roots: Vec<(usize, usize)> = (0..first.len())
        .flat_map(|i| (i..first.len()).map(move |j| (i, j)))
        .collect();

    let found: Vec<BTreeMap<Vec<u32>, HyperRectangle>> = roots
        .into_par_iter()
        .map(|(i, j)| {
            let mut found = Vec::new();
            let (a, b) = (&first[i], &first[j]);
            if walker.overlap(&a.region, &b.region) {
                let mut side_a = Side::new(walker.num_labels, a, i);
                let mut side_b = Side::new(walker.num_labels, b, j);
                walker.walk(1, &mut side_a, &mut side_b, i == j, &mut found);
            }
            found
                .into_iter()
                .map(|(path, region)| (walker.ensemble_path(&path), region))
                .collect()
        })
        .collect();

    if walker.exceeded.load(Ordering::Relaxed) {
        return Err(Error::ResourceLimit(format!(
            "more than {} equivalence-class pairs",
            limits.max_classes
        )));
    }
    let mut classes: BTreeMap<Vec<u32>, HyperRectangle> = BTreeMap::new();
    for part in found {
        classes.extend(part);
    }
    Ok(UnstableSet::new(classes.into_values()))
}

/// Regions of the internal nodes of `node` that test a sensitive feature.
fn sensitive_splits(node: &TreeNode, region: HyperRectangle, sensitive: &SensitiveSet, out: &mut Vec<HyperRectangle>) {
    if let TreeNode::Internal {
        feature,
        threshold,
        left,
        right,
    } = node
    {
        if sensitive.contains(*feature) {
            out.push(region.clone());
        }
        if let Some(r) = region.restrict(*feature, &Interval::at_most(*threshold)) {
            sensitive_splits(left, r, sensitive, out);
        }
        if let Some(r) = region.restrict(*feature, &Interval::greater_than(*threshold)) {
            sensitive_splits(right, r, sensitive, out);
        }
    }
}

struct Side {
    region: HyperRectangle,
    votes: Vec<u32>,
    path: Vec<u32>,
}

impl Side {
    fn new(num_labels: usize, leaf: &LeafRegion, index: usize) -> Side {
        let mut votes = vec![0; num_labels];
        votes[leaf.label] += 1;
        Side {
            region: leaf.region.clone(),
            votes,
            path: vec![index as u32],
        }
    }
}

struct PairWalker<'a> {
    /// Leaf regions per tree, in visiting order.
    leaves: Vec<Vec<LeafRegion>>,
    /// Sensitive split regions per tree, in visiting order.
    splits: Vec<Vec<HyperRectangle>>,
    /// Ensemble position of each visited tree.
    order: Vec<usize>,
    sensitive: &'a SensitiveSet,
    num_labels: usize,
    completed: AtomicUsize,
    exceeded: AtomicBool,
    limit: usize,
    coarse: bool,
}

impl PairWalker<'_> {
    fn overlap(&self, a: &HyperRectangle, b: &HyperRectangle) -> bool {
        a.intersects_where(b, |f| !self.sensitive.contains(f))
    }

    /// Whether some tree from `depth` on may put the sides in different
    /// leaves. Two leaves of one tree that both overlap the sides on the
    /// non-sensitive features part ways at a sensitive split reachable from
    /// both sides.
    fn can_diverge(&self, depth: usize, a: &Side, b: &Side) -> bool {
        self.splits
            .iter()
            .skip(depth)
            .flatten()
            .any(|r| r.intersects(&a.region) && r.intersects(&b.region))
    }

    /// Reorders a walk-order path into ensemble tree order. Coarse paths may
    /// stop early; those are walked in ensemble order already.
    fn ensemble_path(&self, path: &[u32]) -> Vec<u32> {
        if path.len() < self.order.len() {
            return path.to_vec();
        }
        let mut key = vec![0; path.len()];
        for (pos, tree) in self.order.iter().enumerate() {
            key[*tree] = path[pos];
        }
        key
    }

    fn emit(&self, a: &Side, b: &Side, found: &mut Vec<(Vec<u32>, HyperRectangle)>) {
        if self.completed.fetch_add(1, Ordering::Relaxed) >= self.limit {
            self.exceeded.store(true, Ordering::Relaxed);
            return;
        }
        let (ya, yb) = (majority(&a.votes), majority(&b.votes));
        if ya != yb && self.sensitive.iter().any(|k| a.region.get(k) != b.region.get(k)) {
            found.push((a.path.clone(), a.region.clone()));
            found.push((b.path.clone(), b.region.clone()));
        }
    }

    /// `tied` holds while both sides followed identical leaves; only pairs
    /// whose leaf sequences satisfy `a <= b` are visited.
    fn walk(
        &self,
        depth: usize,
        a: &mut Side,
        b: &mut Side,
        tied: bool,
        found: &mut Vec<(Vec<u32>, HyperRectangle)>,
    ) {
        if self.exceeded.load(Ordering::Relaxed) {
            return;
        }
        let remaining = (self.leaves.len() - depth) as u32;
        let (sa, sb) = (settled(&a.votes, remaining), settled(&b.votes, remaining));
        if let (Some(ya), Some(yb)) = (sa, sb) {
            if ya == yb {
                return;
            }
        }
        // a frozen side keeps its region and casts no further votes
        let (frozen_a, frozen_b) = (self.coarse && sa.is_some(), self.coarse && sb.is_some());
        if !frozen_a && !frozen_b && !self.can_diverge(depth, a, b) && !may_separate(&a.votes, &b.votes, remaining) {
            return;
        }
        if depth == self.leaves.len() || (frozen_a && frozen_b) {
            self.emit(a, b, found);
            return;
        }
        let tree = &self.leaves[depth];
        let choices = |frozen: bool| if frozen { 1 } else { tree.len() };
        for i in 0..choices(frozen_a) {
            let (ra, la) = if frozen_a {
                (a.region.clone(), None)
            } else {
                match a.region.intersect(&tree[i].region) {
                    Some(r) => (r, Some(&tree[i])),
                    None => continue,
                }
            };
            let start = if tied { i } else { 0 };
            for j in start..choices(frozen_b) {
                let (rb, lb) = if frozen_b {
                    (b.region.clone(), None)
                } else {
                    match b.region.intersect(&tree[j].region) {
                        Some(r) => (r, Some(&tree[j])),
                        None => continue,
                    }
                };
                if !self.overlap(&ra, &rb) {
                    continue;
                }
                let saved_a = std::mem::replace(&mut a.region, ra.clone());
                let saved_b = std::mem::replace(&mut b.region, rb);
                if let Some(la) = la {
                    a.votes[la.label] += 1;
                    a.path.push(i as u32);
                }
                if let Some(lb) = lb {
                    b.votes[lb.label] += 1;
                    b.path.push(j as u32);
                }
                self.walk(depth + 1, a, b, tied && i == j, found);
                if let Some(la) = la {
                    a.votes[la.label] -= 1;
                    a.path.pop();
                }
                if let Some(lb) = lb {
                    b.votes[lb.label] -= 1;
                    b.path.pop();
                }
                a.region = saved_a;
                b.region = saved_b;
            }
        }
    }
}

/// Whether adding the same `remaining` votes to both tallies can leave them
/// with different majorities. Exact for two labels, conservative otherwise.
fn may_separate(va: &[u32], vb: &[u32], remaining: u32) -> bool {
    if va == vb {
        return false;
    }
    if va.len() != 2 {
        return true;
    }
    // label 0 wins iff votes[0] - votes[1] >= 0; common votes shift both
    // margins by some s in {-r, -r + 2, ..., r}
    let da = i64::from(va[0]) - i64::from(va[1]);
    let db = i64::from(vb[0]) - i64::from(vb[1]);
    let r = i64::from(remaining);
    let (lo, hi) = (da.min(db), da.max(db));
    let (mut s, last) = ((-hi).max(-r), (-lo - 1).min(r));
    if (s + r) % 2 != 0 {
        s += 1;
    }
    s <= last
}

/// The final majority label if it can no longer change with `remaining`
/// votes still to be cast (ties resolve to the smaller label).
fn settled(votes: &[u32], remaining: u32) -> Option<LabelId> {
    let leader = majority(votes);
    let safe = votes.iter().enumerate().all(|(label, &count)| {
        label == leader
            || if label < leader {
                votes[leader] > count + remaining
            } else {
                votes[leader] >= count + remaining
            }
    });
    safe.then_some(leader)
}

/// Finite representatives of the flip set of instances.
///
/// Tree predictions only depend on which threshold cell each feature value
/// falls in, so one value per cell is enough. For a numeric sensitive
/// feature the candidates are every threshold, every midpoint between
/// consecutive thresholds, one value below the least and one above the
/// greatest. Binary features take 0 and 1. One-hot sensitive features are
/// flipped jointly so that their group keeps exactly one active column.
#[derive(Clone, Debug)]
pub struct FlipSet {
    slots: Vec<FlipSlot>,
}

#[derive(Clone, Debug)]
enum FlipSlot {
    Value { feature: FeatureId, candidates: Vec<f64> },
    Group { sensitive: Vec<FeatureId>, others: Vec<FeatureId> },
}

impl FlipSet {
    pub fn new(ensemble: &Ensemble, sensitive: &SensitiveSet) -> FlipSet {
        let meta = ensemble.metadata();
        let thresholds = ensemble.thresholds();
        let mut slots = Vec::new();
        let mut seen_groups: Vec<&str> = Vec::new();
        for f in sensitive.iter() {
            let feature = meta.feature(f);
            match feature.kind {
                FeatureKind::Numeric => slots.push(FlipSlot::Value {
                    feature: f,
                    candidates: cell_representatives(thresholds.get(&f).map_or(&[][..], |t| t)),
                }),
                FeatureKind::Binary => slots.push(FlipSlot::Value {
                    feature: f,
                    candidates: vec![0.0, 1.0],
                }),
                FeatureKind::Onehot => {
                    let group = meta.group_of(f).expect("validated onehot feature");
                    if seen_groups.contains(&group) {
                        continue;
                    }
                    seen_groups.push(group);
                    let (sens, others) = meta
                        .features()
                        .iter()
                        .filter(|g| meta.group_of(g.id) == Some(group))
                        .map(|g| g.id)
                        .partition(|id| sensitive.contains(*id));
                    slots.push(FlipSlot::Group {
                        sensitive: sens,
                        others,
                    });
                }
            }
        }
        FlipSet { slots }
    }

    /// All representatives for `x`, `x` itself first, without duplicates.
    pub fn representatives(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![x.to_vec()];
        for slot in &self.slots {
            let mut next = Vec::with_capacity(out.len() * 4);
            for base in &out {
                match slot {
                    FlipSlot::Value { feature, candidates } => {
                        next.push(base.clone());
                        for v in candidates.iter().filter(|v| **v != x[*feature]) {
                            let mut z = base.clone();
                            z[*feature] = *v;
                            next.push(z);
                        }
                    }
                    FlipSlot::Group { sensitive, others } => {
                        next.push(base.clone());
                        let fixed_ones = others.iter().filter(|f| x[**f] > 0.5).count();
                        let mut assignments: Vec<Option<FeatureId>> = match fixed_ones {
                            0 => sensitive.iter().copied().map(Some).collect(),
                            1 => vec![None],
                            _ => Vec::new(),
                        };
                        assignments.retain(|active| {
                            sensitive
                                .iter()
                                .any(|f| x[*f] != if Some(*f) == *active { 1.0 } else { 0.0 })
                        });
                        for active in assignments {
                            let mut z = base.clone();
                            for f in sensitive {
                                z[*f] = if Some(*f) == active { 1.0 } else { 0.0 };
                            }
                            next.push(z);
                        }
                    }
                }
            }
            out = next;
        }
        out
    }
}

/// One value per threshold cell of a feature, plus the thresholds.
pub fn cell_representatives(thresholds: &[f64]) -> Vec<f64> {
    let (Some(first), Some(last)) = (thresholds.first(), thresholds.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(2 * thresholds.len() + 1);
    out.push(first - 1.0);
    for (i, t) in thresholds.iter().enumerate() {
        if i > 0 {
            out.push((thresholds[i - 1] + t) / 2.0);
        }
        out.push(*t);
    }
    out.push(last + 1.0);
    out
}

/// Representatives of `flip_S(x)`; see [`FlipSet`].
pub fn flip_set_representatives(ensemble: &Ensemble, sensitive: &SensitiveSet, x: &[f64]) -> Vec<Vec<f64>> {
    FlipSet::new(ensemble, sensitive).representatives(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bound, Interval};
    use crate::model::fixtures::*;
    use crate::model::{Feature, FeatureMetadata, TreeNode};

    fn s(ids: &[usize]) -> SensitiveSet {
        SensitiveSet::new(ids.iter().copied(), 2).unwrap()
    }

    fn rect(x1: Interval, x2: Interval) -> HyperRectangle {
        HyperRectangle::from_intervals([(0, x1), (1, x2)]).unwrap()
    }

    fn le(v: f64) -> Interval {
        Interval::at_most(v)
    }

    fn gt(v: f64) -> Interval {
        Interval::greater_than(v)
    }

    #[test]
    fn example_tree_has_four_classes() {
        let classes = enumerate_equivalence_classes(&example_ensemble(1), AnalysisConfig::default()).unwrap();
        let got: Vec<(HyperRectangle, LabelId)> = classes.into_iter().map(|c| (c.region, c.label)).collect();
        assert_eq!(
            got,
            vec![
                (rect(le(8.0), le(6.0)), 0),
                (rect(le(8.0), gt(6.0)), 1),
                (rect(gt(8.0), le(7.0)), 0),
                (rect(gt(8.0), gt(7.0)), 1),
            ]
        );
    }

    #[test]
    fn constant_model_has_one_class() {
        let classes = enumerate_equivalence_classes(&constant_ensemble(3), AnalysisConfig::default()).unwrap();
        assert_eq!(classes.len(), 1);
        assert!(classes[0].region.is_full());
    }

    #[test]
    fn duplicate_trees_merge_paths() {
        let one = enumerate_equivalence_classes(&example_ensemble(1), AnalysisConfig::default()).unwrap();
        let two = enumerate_equivalence_classes(&example_ensemble(2), AnalysisConfig::default()).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn class_limit_is_enforced() {
        let err = enumerate_equivalence_classes(&example_ensemble(1), AnalysisConfig { max_classes: 3, ..Default::default() })
            .unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
        let err = analyze(&example_ensemble(1), &s(&[1]), AnalysisConfig { max_classes: 1, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
    }

    #[test]
    fn sensitive_x2_marks_every_class() {
        let u = analyze(&example_ensemble(1), &s(&[1]), AnalysisConfig::default()).unwrap();
        assert_eq!(
            u.rectangles(),
            &[
                rect(le(8.0), le(6.0)),
                rect(le(8.0), gt(6.0)),
                rect(gt(8.0), le(7.0)),
                rect(gt(8.0), gt(7.0)),
            ]
        );
        assert_eq!(u.rectangles().iter().map(|r| r.id).collect::<Vec<_>>(), [0, 1, 2, 3].map(Some));
    }

    #[test]
    fn sensitive_x1_marks_middle_classes() {
        let u = analyze(&example_ensemble(1), &s(&[0]), AnalysisConfig::default()).unwrap();
        assert_eq!(u.rectangles(), &[rect(le(8.0), gt(6.0)), rect(gt(8.0), le(7.0))]);
        // over-approximation: <9, 5> is inside U yet not discriminated
        assert!(u.contains_point(&[9.0, 5.0]));
    }

    #[test]
    fn constant_model_is_stable() {
        let ens = constant_ensemble(2);
        assert!(analyze(&ens, &s(&[0]), AnalysisConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn empty_sensitive_set_is_rejected() {
        let err = analyze(&example_ensemble(1), &SensitiveSet::empty(), AnalysisConfig::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pair_walk_matches_pairwise_reference() {
        for sens in [&[0][..], &[1], &[0, 1]] {
            for copies in 1..=3 {
                let ens = example_ensemble(copies);
                let fast = analyze(&ens, &s(sens), AnalysisConfig::default()).unwrap();
                let slow = analyze_pairwise(&ens, &s(sens), AnalysisConfig::default()).unwrap();
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn coarse_pair_walk_matches_coarse_reference() {
        let coarse = AnalysisConfig {
            coarse: true,
            ..AnalysisConfig::default()
        };
        for sens in [&[0][..], &[1], &[0, 1]] {
            for copies in 1..=3 {
                let ens = example_ensemble(copies);
                let fast = analyze(&ens, &s(sens), coarse).unwrap();
                let slow = analyze_pairwise(&ens, &s(sens), coarse).unwrap();
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn may_separate_matches_brute_force() {
        let add = |v: &[u32], extra: &[u32]| -> Vec<u32> { v.iter().zip(extra).map(|(a, b)| a + b).collect() };
        for r in 0..5u32 {
            for a0 in 0..4 {
                for a1 in 0..4 {
                    for b0 in 0..4 {
                        for b1 in 0..4 {
                            let (va, vb) = ([a0, a1], [b0, b1]);
                            let brute = (0..=r).any(|k| {
                                let extra = [k, r - k];
                                majority(&add(&va, &extra)) != majority(&add(&vb, &extra))
                            });
                            assert_eq!(may_separate(&va, &vb, r), brute, "{va:?} {vb:?} r={r}");
                        }
                    }
                }
            }
        }
        for r in 0..3u32 {
            for va in [[1, 0, 0], [0, 1, 1], [2, 1, 0]] {
                for vb in [[1, 0, 0], [0, 0, 2], [1, 1, 1]] {
                    let brute = (0..=r).any(|k0| {
                        (0..=r - k0).any(|k1| {
                            let extra = [k0, k1, r - k0 - k1];
                            majority(&add(&va, &extra)) != majority(&add(&vb, &extra))
                        })
                    });
                    assert!(!brute || may_separate(&va, &vb, r), "{va:?} {vb:?} r={r}");
                }
            }
        }
    }

    #[test]
    fn settled_respects_tie_break() {
        assert_eq!(settled(&[2, 0], 2), Some(0));
        assert_eq!(settled(&[2, 0], 3), None);
        assert_eq!(settled(&[0, 3], 2), Some(1));
        assert_eq!(settled(&[0, 3], 3), None);
    }

    #[test]
    fn flip_set_of_numeric_feature() {
        let reps = flip_set_representatives(&example_ensemble(1), &s(&[1]), &[10.0, 6.0]);
        let mut x2: Vec<f64> = reps.iter().map(|z| z[1]).collect();
        x2.sort_by(f64::total_cmp);
        assert_eq!(x2, vec![5.0, 6.0, 6.5, 7.0, 8.0]);
        assert!(reps.iter().all(|z| z[0] == 10.0));
    }

    #[test]
    fn flip_set_without_sensitive_features() {
        let reps = flip_set_representatives(&example_ensemble(1), &SensitiveSet::empty(), &[3.0, 4.0]);
        assert_eq!(reps, vec![vec![3.0, 4.0]]);
    }

    #[test]
    fn flip_set_of_binary_and_onehot() {
        let meta = FeatureMetadata::new(vec![
            Feature::binary(0, "sex"),
            Feature::onehot(1, "race_a", "race"),
            Feature::onehot(2, "race_b", "race"),
            Feature::onehot(3, "race_c", "race"),
        ])
        .unwrap();
        let ens = Ensemble::new(vec![TreeNode::leaf(0)], vec!["y".into()], meta.clone()).unwrap();
        let sex = meta.resolve_sensitive(&["sex"]).unwrap();
        let reps = flip_set_representatives(&ens, &sex, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(reps, vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]);

        let race = meta.resolve_sensitive(&["race"]).unwrap();
        let reps = flip_set_representatives(&ens, &race, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(reps.len(), 3);
        assert!(reps.iter().all(|z| z[1] + z[2] + z[3] == 1.0));
    }

    #[test]
    fn cell_representatives_cover_all_cells() {
        assert_eq!(cell_representatives(&[6.0, 7.0]), vec![5.0, 6.0, 6.5, 7.0, 8.0]);
        assert!(cell_representatives(&[]).is_empty());
    }

    #[test]
    fn unstable_json_round_trip() {
        let u = analyze(&example_ensemble(1), &s(&[0]), AnalysisConfig::default()).unwrap();
        let back = UnstableSet::from_json_str(&u.to_json_string(), 2).unwrap();
        assert_eq!(back, u);
        assert_eq!(back.get(1).get(0).lo(), Bound::finite(8.0));
        assert!(UnstableSet::from_json_str(&u.to_json_string(), 1).is_err());
    }
}
