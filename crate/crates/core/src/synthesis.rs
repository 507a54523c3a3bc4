//! Iterative synthesis of sufficient conditions for fairness.
//!
//! Starting from the face complements of every unstable rectangle, the loop
//! keeps each candidate itemset that avoids all of `U` and combines the rest
//! pairwise with [`meet`], one cardinality level per iteration, in the manner
//! of Apriori. Stopping early keeps every emitted condition sound; running to
//! convergence covers exactly the complement of `U`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::itemsets::{check_fair_uncached, gen_itemsets, itemset_from_json, meet, IdCache, Item, Itemset, SparseMask};
use crate::model::{Ensemble, FeatureId, FeatureMetadata, SensitiveSet};
use crate::stability::{analyze, AnalysisConfig, UnstableSet};

pub const DEFAULT_MAX_ITERS: usize = 6;
pub const DEFAULT_MAX_CANDIDATES: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthesisConfig {
    /// `None` runs until no candidates remain.
    pub max_iters: Option<usize>,
    /// Bound on the candidates of a single iteration.
    pub max_candidates: usize,
    /// Decide fairness from per-item sets of rectangle ids instead of
    /// rescanning all of `U` for every candidate.
    pub use_id_cache: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            max_iters: Some(DEFAULT_MAX_ITERS),
            max_candidates: DEFAULT_MAX_CANDIDATES,
            use_id_cache: true,
        }
    }
}

impl SynthesisConfig {
    pub fn unbounded() -> Self {
        SynthesisConfig {
            max_iters: None,
            ..SynthesisConfig::default()
        }
    }

    pub fn with_max_iters(max_iters: usize) -> Self {
        SynthesisConfig {
            max_iters: Some(max_iters),
            ..SynthesisConfig::default()
        }
    }
}

/// Fair itemsets in discovery order.
#[derive(Clone, Debug, PartialEq)]
pub struct FormulaSet {
    pub itemsets: Vec<Itemset>,
    /// Number of itemsets added by each iteration, indexed by iteration.
    /// Entry 0 is nonzero only for the trivially true condition.
    pub per_iteration: Vec<usize>,
    /// Number of candidates left open by each iteration, indexed like
    /// `per_iteration`. Not recorded when reading formulas back from JSON.
    pub open_per_iteration: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a resource limit cut the run short.
    pub limit_hit: Option<String>,
    /// Candidates left for the next iteration when the run stopped.
    pub pending_candidates: PendingCandidates,
}

impl FormulaSet {
    pub fn len(&self) -> usize {
        self.itemsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itemsets.is_empty()
    }

    /// The itemsets known after `k` iterations.
    pub fn after_iteration(&self, k: usize) -> &[Itemset] {
        let n: usize = self.per_iteration.iter().take(k + 1).sum();
        &self.itemsets[..n]
    }

    pub fn covers(&self, x: &[f64]) -> bool {
        self.itemsets.iter().any(|i| i.contains_point(x))
    }

    /// Reads back the `formulas` and `per_iteration_counts` fields of a
    /// synthesis output document.
    pub fn from_json_value(value: &Value, meta: &FeatureMetadata) -> Result<FormulaSet> {
        let formulas = value
            .get("formulas")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::parse("formulas", "missing or not an array"))?;
        let itemsets = formulas
            .iter()
            .enumerate()
            .map(|(i, v)| itemset_from_json(v, meta).map_err(|e| Error::parse(format!("formulas[{i}]"), e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let per_iteration: Vec<usize> = match value.get("per_iteration_counts") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::parse("per_iteration_counts", e.to_string()))?,
            None => vec![itemsets.len()],
        };
        if per_iteration.iter().sum::<usize>() != itemsets.len() {
            return Err(Error::parse(
                "per_iteration_counts",
                format!("counts do not add up to {} formulas", itemsets.len()),
            ));
        }
        Ok(FormulaSet {
            iterations: value
                .get("iterations")
                .and_then(Value::as_u64)
                .map_or(per_iteration.len().saturating_sub(1), |v| v as usize),
            converged: value.get("converged").and_then(Value::as_bool).unwrap_or(false),
            itemsets,
            per_iteration,
            open_per_iteration: Vec::new(),
            limit_hit: None,
            pending_candidates: PendingCandidates::default(),
        })
    }
}

/// Fair itemsets indexed by their smallest constrained feature. A fair
/// itemset can only cover a candidate if every feature it constrains is
/// also constrained by the candidate.
#[derive(Default)]
struct FairIndex {
    top: bool,
    by_first_feature: HashMap<FeatureId, Vec<Itemset>>,
}

impl FairIndex {
    fn insert(&mut self, itemset: &Itemset) {
        match itemset.region().intervals().first() {
            None => self.top = true,
            Some((f, _)) => self.by_first_feature.entry(*f).or_default().push(itemset.clone()),
        }
    }

    fn covers(&self, itemset: &Itemset) -> bool {
        self.top
            || itemset.region().intervals().iter().any(|(f, _)| {
                self.by_first_feature
                    .get(f)
                    .is_some_and(|fair| fair.iter().any(|g| itemset.region().is_subset_of(g.region())))
            })
    }
}

/// Open candidates of one level, each a sorted tuple of indices into a
/// sorted item table. Tuples are stored back to back and kept in
/// lexicographic order, which is also the order of the itemsets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PendingCandidates {
    table: Vec<Item>,
    width: usize,
    ids: Vec<u32>,
}

impl PendingCandidates {
    fn new(table: Vec<Item>, width: usize) -> Self {
        PendingCandidates {
            table,
            width,
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn tuple(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..(i + 1) * self.width]
    }

    fn itemset(&self, tuple: &[u32]) -> Itemset {
        Itemset::from_items(tuple.iter().map(|&i| self.table[i as usize]).collect())
            .expect("candidates are satisfiable")
    }

    pub fn iter(&self) -> impl Iterator<Item = Itemset> + '_ {
        (0..self.len()).map(|i| self.itemset(self.tuple(i)))
    }

    pub fn contains(&self, itemset: &Itemset) -> bool {
        self.iter().any(|c| &c == itemset)
    }

    /// Index ranges of runs sharing all but the last item, longer than one.
    fn prefix_groups(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let prefix = |i: usize| &self.tuple(i)[..self.width - 1];
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || prefix(i) != prefix(start) {
                if i - start > 1 {
                    groups.push((start, i));
                }
                start = i;
            }
        }
        groups
    }
}

/// What one worker produced from a run of prefix groups.
#[derive(Default)]
struct TaskOutput {
    fair: Vec<Itemset>,
    open: Vec<u32>,
}

/// Prefix groups handed to one worker at a time. Neighbouring groups share
/// long prefixes, so a worker reuses most of its prefix masks.
const GROUPS_PER_TASK: usize = 64;

/// Runs the analysis and then the synthesis loop.
pub fn synthesize(
    ensemble: &Ensemble,
    sensitive: &SensitiveSet,
    config: SynthesisConfig,
    limits: AnalysisConfig,
) -> Result<(UnstableSet, FormulaSet)> {
    let unstable = analyze(ensemble, sensitive, limits)?;
    let formulas = synthesize_from_unstable(&unstable, ensemble.metadata(), config)?;
    Ok((unstable, formulas))
}

/// The synthesis loop over a precomputed unstable set.
pub fn synthesize_from_unstable(
    unstable: &UnstableSet,
    meta: &FeatureMetadata,
    config: SynthesisConfig,
) -> Result<FormulaSet> {
    if config.max_iters == Some(0) {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if unstable.is_empty() {
        return Ok(FormulaSet {
            itemsets: vec![Itemset::top()],
            per_iteration: vec![1],
            open_per_iteration: vec![0],
            iterations: 0,
            converged: true,
            limit_hit: None,
            pending_candidates: PendingCandidates::default(),
        });
    }

    let mut fair: Vec<Itemset> = Vec::new();
    let mut index = FairIndex::default();
    let mut per_iteration = vec![0];
    let mut open_per_iteration = vec![0];
    let mut limit_hit = None;

    let singletons = gen_itemsets(unstable, meta);
    let table: Vec<Item> = singletons.iter().map(|s| s.items()[0]).collect();
    let cache = config.use_id_cache.then(|| IdCache::new(unstable, table.iter().copied()));
    debug_assert!(cache.as_ref().is_none_or(|c| c.items() == table.as_slice()));

    let fair_singletons: Vec<bool> = singletons
        .par_iter()
        .enumerate()
        .map(|(i, s)| match &cache {
            Some(cache) => cache.mask_at(i).is_clear(),
            None => check_fair_uncached(s, unstable),
        })
        .collect();
    let mut first = TaskOutput::default();
    for (i, (s, is_fair)) in singletons.into_iter().zip(fair_singletons).enumerate() {
        if is_fair {
            first.fair.push(s);
        } else {
            first.open.push(i as u32);
        }
    }
    let mut candidates = PendingCandidates::new(table, 1);
    absorb(vec![first], &mut candidates, &mut fair, &mut index, &mut per_iteration);
    open_per_iteration.push(candidates.len());
    let mut iterations = 1;

    while !candidates.is_empty() && config.max_iters.is_none_or(|m| iterations < m) {
        let groups = candidates.prefix_groups();
        let produced = AtomicUsize::new(0);
        let exceeded = AtomicBool::new(false);
        let current = &candidates;

        let outputs: Vec<TaskOutput> = groups
            .par_chunks(GROUPS_PER_TASK)
            .map(|task| {
                let mut prefixes = cache.as_ref().map(PrefixMasks::new);
                let mut out = TaskOutput::default();
                'groups: for &(start, end) in task {
                    let tuples: Vec<&[u32]> = (start..end).map(|i| current.tuple(i)).collect();
                    let members: Vec<Itemset> = tuples.iter().map(|t| current.itemset(t)).collect();
                    let prefix = &tuples[0][..current.width - 1];
                    let prefix_mask = prefixes.as_mut().map(|p| p.mask_for(prefix));
                    for a in 0..members.len() {
                        let first_open = match (&cache, prefix_mask) {
                            (Some(cache), Some(p)) => Some(open_ids(cache, p, *tuples[a].last().unwrap())),
                            _ => None,
                        };
                        for b in a + 1..members.len() {
                            if exceeded.load(Ordering::Relaxed) {
                                break 'groups;
                            }
                            let Some(m) = meet(&members[a], &members[b], meta) else {
                                continue;
                            };
                            if index.covers(&m) {
                                continue;
                            }
                            let last = *tuples[b].last().unwrap();
                            let is_fair = match (&cache, &first_open) {
                                (Some(cache), Some(open)) => open.is_disjoint(cache.mask_at(last as usize)),
                                _ => check_fair_uncached(&m, unstable),
                            };
                            if is_fair {
                                out.fair.push(m);
                            } else if produced.fetch_add(1, Ordering::Relaxed) >= config.max_candidates {
                                exceeded.store(true, Ordering::Relaxed);
                                break 'groups;
                            } else {
                                out.open.extend_from_slice(tuples[a]);
                                out.open.push(last);
                            }
                        }
                    }
                }
                out
            })
            .collect();

        if exceeded.load(Ordering::Relaxed) {
            limit_hit = Some(format!(
                "iteration {} produced more than {} candidates; stopped after iteration {iterations}",
                iterations + 1,
                config.max_candidates
            ));
            break;
        }
        iterations += 1;
        drop(groups);
        let mut next = PendingCandidates::new(std::mem::take(&mut candidates.table), candidates.width + 1);
        candidates.ids = Vec::new();
        absorb(outputs, &mut next, &mut fair, &mut index, &mut per_iteration);
        candidates = next;
        open_per_iteration.push(candidates.len());
    }

    Ok(FormulaSet {
        itemsets: fair,
        per_iteration,
        open_per_iteration,
        iterations,
        converged: candidates.is_empty() && limit_hit.is_none(),
        limit_hit,
        pending_candidates: candidates,
    })
}

/// Rectangles a candidate may still meet, given the mask of its prefix
/// (`None` for an empty prefix) and the index of its last item.
fn open_ids(cache: &IdCache, prefix: Option<&FixedBitSet>, last: u32) -> SparseMask {
    let last = cache.mask_at(last as usize);
    match prefix {
        None => SparseMask::new(last),
        Some(p) => {
            let mut open = p.clone();
            open.intersect_with(last);
            SparseMask::new(&open)
        }
    }
}

/// Masks of successive prefixes of the current prefix, so that moving to the
/// next group only recomputes the items that changed.
struct PrefixMasks<'a> {
    cache: &'a IdCache,
    items: Vec<u32>,
    masks: Vec<FixedBitSet>,
}

impl<'a> PrefixMasks<'a> {
    fn new(cache: &'a IdCache) -> Self {
        PrefixMasks {
            cache,
            items: Vec::new(),
            masks: Vec::new(),
        }
    }

    fn mask_for(&mut self, prefix: &[u32]) -> Option<&FixedBitSet> {
        let common = self.items.iter().zip(prefix).take_while(|(a, b)| a == b).count();
        self.items.truncate(common);
        self.masks.truncate(common);
        for &item in &prefix[common..] {
            let own = self.cache.mask_at(item as usize);
            let mask = match self.masks.last() {
                None => own.clone(),
                Some(m) => {
                    let mut m = m.clone();
                    m.intersect_with(own);
                    m
                }
            };
            self.items.push(item);
            self.masks.push(mask);
        }
        self.masks.last()
    }
}

/// Appends one iteration's fair itemsets, skipping any covered by an
/// itemset kept earlier, and collects the open candidates into `next`.
fn absorb(
    outputs: Vec<TaskOutput>,
    next: &mut PendingCandidates,
    fair: &mut Vec<Itemset>,
    index: &mut FairIndex,
    per_iteration: &mut Vec<usize>,
) {
    next.ids.reserve(outputs.iter().map(|o| o.open.len()).sum());
    let mut added = 0;
    for output in outputs {
        next.ids.extend_from_slice(&output.open);
        for itemset in output.fair {
            if !index.covers(&itemset) {
                index.insert(&itemset);
                fair.push(itemset);
                added += 1;
            }
        }
    }
    debug_assert!((1..next.len()).all(|i| next.tuple(i - 1) < next.tuple(i)));
    per_iteration.push(added);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bound, HyperRectangle, Interval};
    use crate::itemsets::Item;
    use crate::model::fixtures::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(Bound::finite(lo), Bound::finite(hi)).unwrap()
    }

    fn walkthrough_u() -> UnstableSet {
        UnstableSet::new([
            HyperRectangle::from_intervals([(0, iv(1.0, 5.0)), (1, iv(3.0, 8.0))]).unwrap(),
            HyperRectangle::from_intervals([(0, iv(4.0, 7.0)), (1, iv(2.0, 6.0))]).unwrap(),
        ])
    }

    fn set(items: Vec<Item>) -> Itemset {
        Itemset::from_items(items).unwrap()
    }

    #[test]
    fn walkthrough_first_two_iterations() {
        let f = synthesize_from_unstable(&walkthrough_u(), &FeatureMetadata::numeric(2), SynthesisConfig::with_max_iters(2))
            .unwrap();
        let mut first = f.after_iteration(1).to_vec();
        first.sort();
        let mut expected = vec![
            set(vec![Item::le(0, 1.0)]),
            set(vec![Item::gt(1, 8.0)]),
            set(vec![Item::gt(0, 7.0)]),
            set(vec![Item::le(1, 2.0)]),
        ];
        expected.sort();
        assert_eq!(first, expected);
        assert!(f.itemsets.contains(&set(vec![Item::gt(0, 5.0), Item::gt(1, 6.0)])));
        assert!(f.pending_candidates.contains(&set(vec![Item::gt(0, 5.0), Item::le(1, 3.0)])));
        assert!(!f.converged);
        assert_eq!(f.iterations, 2);
    }

    #[test]
    fn empty_unstable_set_yields_top() {
        let f = synthesize_from_unstable(&UnstableSet::default(), &FeatureMetadata::numeric(2), SynthesisConfig::default())
            .unwrap();
        assert_eq!(f.itemsets, vec![Itemset::top()]);
        assert!(f.converged);
        assert_eq!(f.iterations, 0);
        assert_eq!(f.after_iteration(0).len(), 1);
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = SynthesisConfig {
            max_iters: Some(0),
            ..SynthesisConfig::default()
        };
        assert!(synthesize_from_unstable(&walkthrough_u(), &FeatureMetadata::numeric(2), cfg).is_err());
    }

    #[test]
    fn example_tree_sensitive_x1_converges_to_complement() {
        let ens = example_ensemble(1);
        let s = SensitiveSet::new([0], 2).unwrap();
        let (u, f) = synthesize(&ens, &s, SynthesisConfig::unbounded(), AnalysisConfig::default()).unwrap();
        assert!(f.converged);
        for a in 0..=40 {
            for b in 0..=40 {
                let x = [a as f64 * 0.5 - 1.0, b as f64 * 0.5 - 1.0];
                assert_eq!(f.covers(&x), !u.contains_point(&x), "{x:?}");
            }
        }
    }

    #[test]
    fn candidate_limit_stops_the_run() {
        let cfg = SynthesisConfig {
            max_iters: None,
            max_candidates: 0,
            use_id_cache: true,
        };
        let f = synthesize_from_unstable(&walkthrough_u(), &FeatureMetadata::numeric(2), cfg).unwrap();
        assert!(f.limit_hit.is_some());
        assert!(!f.converged);
        assert_eq!(f.iterations, 1);
    }

    #[test]
    fn id_cache_does_not_change_result() {
        let meta = FeatureMetadata::numeric(2);
        let with = synthesize_from_unstable(&walkthrough_u(), &meta, SynthesisConfig::unbounded()).unwrap();
        let without = synthesize_from_unstable(
            &walkthrough_u(),
            &meta,
            SynthesisConfig {
                use_id_cache: false,
                ..SynthesisConfig::unbounded()
            },
        )
        .unwrap();
        assert_eq!(with, without);
    }
}
