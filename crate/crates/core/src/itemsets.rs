//! Items, itemsets and the meet operator.
//!
//! An item is an atomic predicate `x_f <= v` or `x_f > v`; an itemset is the
//! conjunction of its items and denotes a hyper-rectangle. Items are kept in
//! canonical order: by feature, `<=` before `>`, `<=` items by decreasing
//! threshold and `>` items by increasing threshold. Itemsets compare
//! lexicographically by their items, so itemsets sharing a prefix sit next
//! to each other in a sorted candidate list.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HyperRectangle, Interval};
use crate::model::{FeatureId, FeatureMetadata};
use crate::stability::UnstableSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Le,
    Gt,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Item {
    pub feature: FeatureId,
    pub op: Op,
    pub threshold: f64,
}

impl Item {
    pub fn le(feature: FeatureId, threshold: f64) -> Item {
        Item {
            feature,
            op: Op::Le,
            threshold,
        }
    }

    pub fn gt(feature: FeatureId, threshold: f64) -> Item {
        Item {
            feature,
            op: Op::Gt,
            threshold,
        }
    }

    pub fn interval(&self) -> Interval {
        match self.op {
            Op::Le => Interval::at_most(self.threshold),
            Op::Gt => Interval::greater_than(self.threshold),
        }
    }

    /// `x_f > v` on a one-hot column asserts that the category is active.
    pub(crate) fn asserts_category(&self, meta: &FeatureMetadata) -> bool {
        self.op == Op::Gt && self.threshold < 1.0 && meta.group_of(self.feature).is_some()
    }
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        self.feature
            .cmp(&other.feature)
            .then(self.op.cmp(&other.op))
            .then_with(|| match self.op {
                Op::Le => other.threshold.total_cmp(&self.threshold),
                Op::Gt => self.threshold.total_cmp(&other.threshold),
            })
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            Op::Le => "<=",
            Op::Gt => ">",
        };
        write!(f, "x{} {op} {}", self.feature + 1, self.threshold)
    }
}

/// A conjunction of items with its cached interpretation.
#[derive(Clone, Debug)]
pub struct Itemset {
    items: Vec<Item>,
    region: HyperRectangle,
}

impl Itemset {
    /// The empty conjunction, true everywhere.
    pub fn top() -> Itemset {
        Itemset {
            items: Vec::new(),
            region: HyperRectangle::full(),
        }
    }

    /// Sorts the items; `None` when their conjunction is unsatisfiable.
    pub fn from_items(mut items: Vec<Item>) -> Option<Itemset> {
        items.sort();
        items.dedup();
        let region = HyperRectangle::from_intervals(items.iter().map(|i| (i.feature, i.interval())))?;
        Some(Itemset { items, region })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn region(&self) -> &HyperRectangle {
        &self.region
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.region.contains_point(x)
    }

    /// At most one active category per one-hot group.
    pub fn respects_onehot(&self, meta: &FeatureMetadata) -> bool {
        let mut active: Vec<&str> = Vec::new();
        for item in self.items.iter().filter(|i| i.asserts_category(meta)) {
            let group = meta.group_of(item.feature).expect("category item");
            if active.contains(&group) {
                return false;
            }
            active.push(group);
        }
        true
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "items": self.items })
    }
}

impl PartialEq for Itemset {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

impl Eq for Itemset {}

impl PartialOrd for Itemset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Itemset {
    fn cmp(&self, other: &Self) -> Ordering {
        self.items.cmp(&other.items)
    }
}

impl fmt::Display for Itemset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Itemset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Raw<'a> {
            items: &'a [Item],
        }
        Raw { items: &self.items }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Itemset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            items: Vec<Item>,
        }
        let raw = Raw::deserialize(d)?;
        if raw.items.iter().any(|i| !i.threshold.is_finite()) {
            return Err(serde::de::Error::custom("non-finite item threshold"));
        }
        Itemset::from_items(raw.items).ok_or_else(|| serde::de::Error::custom("unsatisfiable itemset"))
    }
}

/// Singleton itemsets describing the complement of every rectangle face by
/// face: `{x_f <= l}` and `{x_f > u}` for each bounded side `(l, u]` of each
/// rectangle, deduplicated and in canonical order.
pub fn gen_itemsets(unstable: &UnstableSet, meta: &FeatureMetadata) -> Vec<Itemset> {
    let mut items: BTreeSet<Item> = BTreeSet::new();
    for h in unstable.rectangles() {
        for (f, iv) in h.intervals() {
            if let Some(l) = iv.lo().value() {
                items.insert(Item::le(*f, l));
            }
            if let Some(u) = iv.hi().value() {
                items.insert(Item::gt(*f, u));
            }
        }
    }
    items
        .into_iter()
        .filter(|item| admissible(item, meta))
        .map(|item| Itemset::from_items(vec![item]).expect("single items are satisfiable"))
        .collect()
}

/// A predicate on a 0/1 feature must hold for 0 or for 1.
fn admissible(item: &Item, meta: &FeatureMetadata) -> bool {
    let boolean = meta.features().get(item.feature).is_some_and(|f| f.is_boolean());
    !boolean || {
        let iv = item.interval();
        iv.contains(0.0) || iv.contains(1.0)
    }
}

/// `I1 ⊓ I2` for two itemsets of equal size sharing all but one item.
///
/// The result is `I1` plus the item `i*` of `I2` missing from `I1`, provided
/// the conjunction is satisfiable, is strictly smaller than both operands and
/// asserts at most one category per one-hot group.
pub fn meet(i1: &Itemset, i2: &Itemset, meta: &FeatureMetadata) -> Option<Itemset> {
    if i1.len() != i2.len() || i1.is_empty() {
        return None;
    }
    let mut extra = i2.items.iter().filter(|i| i1.items.binary_search(i).is_err());
    let (Some(new_item), None) = (extra.next(), extra.next()) else {
        return None;
    };

    let region = i1.region.restrict(new_item.feature, &new_item.interval())?;
    let shrinks_first = !region.same_region(&i1.region);
    let shrinks_second = !region.same_region(&i2.region);
    // For prefix-sharing operands in canonical order, the appended item is
    // later in the order and always tightens the first operand.
    debug_assert!(
        shrinks_first || i1.items.last() > Some(new_item),
        "first-operand strictness failed for ordered prefix pair {i1} / {i2}"
    );
    if !shrinks_first || !shrinks_second {
        return None;
    }
    if new_item.asserts_category(meta) {
        let group = meta.group_of(new_item.feature);
        if i1
            .items
            .iter()
            .any(|i| i.asserts_category(meta) && meta.group_of(i.feature) == group)
        {
            return None;
        }
    }

    let mut items = i1.items.clone();
    let pos = items.binary_search(new_item).unwrap_err();
    items.insert(pos, *new_item);
    Some(Itemset { items, region })
}

/// For every item, the set of rectangle ids of `U` its half-space meets.
///
/// A box meets the region of an itemset iff it meets the half-space of each
/// of its items, so the rectangles an itemset has not been shown to avoid are
/// the intersection of its items' sets. An itemset is fair when that
/// intersection is empty.
#[derive(Clone, Debug)]
pub struct IdCache {
    items: Vec<Item>,
    masks: Vec<FixedBitSet>,
    universe: usize,
}

impl IdCache {
    pub fn new(unstable: &UnstableSet, items: impl IntoIterator<Item = Item>) -> IdCache {
        let mut items: Vec<Item> = items.into_iter().collect();
        items.sort();
        items.dedup();
        let n = unstable.len();
        let mut masks = Vec::with_capacity(items.len());
        let mut column: Vec<(f64, f64)> = Vec::new();
        let mut column_feature = None;
        for item in &items {
            if column_feature != Some(item.feature) {
                column.clear();
                column.extend(unstable.rectangles().iter().map(|h| {
                    let iv = h.get(item.feature);
                    (
                        iv.lo().value().unwrap_or(f64::NEG_INFINITY),
                        iv.hi().value().unwrap_or(f64::INFINITY),
                    )
                }));
                column_feature = Some(item.feature);
            }
            let mut mask = FixedBitSet::with_capacity(n);
            let v = item.threshold;
            for (id, &(lo, hi)) in column.iter().enumerate() {
                let meets = match item.op {
                    Op::Le => lo < v,
                    Op::Gt => hi > v,
                };
                if meets {
                    mask.insert(id);
                }
            }
            masks.push(mask);
        }
        IdCache {
            items,
            masks,
            universe: n,
        }
    }

    /// The items the cache was built with, in canonical order.
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    /// The mask of `self.items()[index]`.
    pub fn mask_at(&self, index: usize) -> &FixedBitSet {
        &self.masks[index]
    }

    /// Rectangle ids meeting the half-space of `item`; `None` for an item the
    /// cache was not built with.
    pub fn mask(&self, item: &Item) -> Option<&FixedBitSet> {
        self.items.binary_search(item).ok().map(|i| &self.masks[i])
    }

    /// Ids of rectangles the itemset may still meet.
    pub fn unresolved(&self, itemset: &Itemset) -> Option<FixedBitSet> {
        let mut acc = FixedBitSet::with_capacity(self.universe);
        acc.insert_range(..);
        for item in itemset.items() {
            acc.intersect_with(self.mask(item)?);
        }
        Some(acc)
    }

    /// Ids of rectangles known to be disjoint from the itemset, ascending.
    pub fn disjoint_ids(&self, itemset: &Itemset) -> Option<Vec<u32>> {
        let unresolved = self.unresolved(itemset)?;
        Some((0..self.universe).filter(|id| !unresolved.contains(*id)).map(|id| id as u32).collect())
    }

    pub fn is_fair(&self, itemset: &Itemset) -> Option<bool> {
        Some(self.unresolved(itemset)?.is_clear())
    }
}

/// The nonzero blocks of a bitset, for fast disjointness tests against it.
#[derive(Clone, Debug, Default)]
pub(crate) struct SparseMask {
    blocks: Vec<(usize, usize)>,
}

impl SparseMask {
    pub(crate) fn new(set: &FixedBitSet) -> SparseMask {
        SparseMask {
            blocks: set
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, b)| **b != 0)
                .map(|(i, b)| (i, *b))
                .collect(),
        }
    }

    pub(crate) fn is_disjoint(&self, other: &FixedBitSet) -> bool {
        let other = other.as_slice();
        self.blocks.iter().all(|&(i, b)| b & other[i] == 0)
    }
}

/// Fairness by scanning all of `U`.
pub fn check_fair_uncached(itemset: &Itemset, unstable: &UnstableSet) -> bool {
    unstable.rectangles().iter().all(|h| !h.intersects(itemset.region()))
}

/// Whether some already-fair itemset covers `itemset`.
pub fn subsumed_by_any<'a>(itemset: &Itemset, fair: impl IntoIterator<Item = &'a Itemset>) -> bool {
    fair.into_iter().any(|f| itemset.region().is_subset_of(f.region()))
}

/// Parses an itemset from its JSON form, checking feature ids.
pub fn itemset_from_json(value: &serde_json::Value, meta: &FeatureMetadata) -> Result<Itemset> {
    let itemset: Itemset = serde_json::from_value(value.clone())?;
    if let Some(bad) = itemset.items().iter().find(|i| i.feature >= meta.len()) {
        return Err(Error::UnknownFeature(bad.feature.to_string()));
    }
    Ok(itemset)
}
