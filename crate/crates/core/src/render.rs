//! Human-readable rendering of fair itemsets.
//!
//! Numeric constraints print as ranges (`lo < name <= hi`, one-sided when a
//! bound is infinite). One-hot columns print as categorical (in)equalities on
//! their group. Itemsets that differ only in which value of one categorical
//! group they assert are folded into a single formula with a disjunction.

use std::collections::BTreeMap;
use std::fmt;

use crate::geometry::{Bound, Interval};
use crate::itemsets::{Item, Itemset};
use crate::model::{FeatureId, FeatureKind, FeatureMetadata};

#[derive(Clone, Debug, PartialEq)]
pub enum Conjunct {
    Range {
        feature: FeatureId,
        name: String,
        interval: Interval,
    },
    /// `name = 1` or `name = 0` for a binary column.
    Flag { name: String, value: bool },
    /// `group = v1 ∨ group = v2 ...`, or `group ≠ v` when negated.
    Category {
        group: String,
        values: Vec<String>,
        negated: bool,
    },
}

impl fmt::Display for Conjunct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conjunct::Range { name, interval, .. } => match (interval.lo(), interval.hi()) {
                (Bound::NegInf, Bound::PosInf) => write!(f, "TRUE"),
                (Bound::NegInf, hi) => write!(f, "{name} ≤ {hi}"),
                (lo, Bound::PosInf) => write!(f, "{name} > {lo}"),
                (lo, hi) => write!(f, "{lo} < {name} ≤ {hi}"),
            },
            Conjunct::Flag { name, value } => write!(f, "{name} = {}", u8::from(*value)),
            Conjunct::Category {
                group,
                values,
                negated,
            } => {
                let op = if *negated { "≠" } else { "=" };
                if values.len() == 1 {
                    return write!(f, "{group} {op} {}", values[0]);
                }
                f.write_str("(")?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ∨ ")?;
                    }
                    write!(f, "{group} {op} {v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFormula {
    pub conjuncts: Vec<Conjunct>,
    /// Indices of the itemsets this formula stands for.
    pub sources: Vec<usize>,
}

impl fmt::Display for RenderedFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjuncts.is_empty() {
            return f.write_str("TRUE");
        }
        for (i, c) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" ∧ ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Renders every itemset, merging categorical alternatives.
pub fn render_formulas(itemsets: &[Itemset], meta: &FeatureMetadata) -> Vec<RenderedFormula> {
    // Key: the itemset without one asserted category, plus that category's group.
    let mut merges: BTreeMap<(Vec<Item>, FeatureId), Vec<usize>> = BTreeMap::new();
    for (idx, set) in itemsets.iter().enumerate() {
        for (pos, item) in set.items().iter().enumerate() {
            if asserted_category(item, meta) {
                let mut rest = set.items().to_vec();
                rest.remove(pos);
                let group_head = group_head(meta, item.feature);
                merges.entry((rest, group_head)).or_default().push(idx);
            }
        }
    }

    let mut consumed = vec![false; itemsets.len()];
    let mut out = Vec::with_capacity(itemsets.len());
    for idx in 0..itemsets.len() {
        if consumed[idx] {
            continue;
        }
        let set = &itemsets[idx];
        let merged = set.items().iter().enumerate().find_map(|(pos, item)| {
            if !asserted_category(item, meta) {
                return None;
            }
            let mut rest = set.items().to_vec();
            rest.remove(pos);
            let members: Vec<usize> = merges
                .get(&(rest.clone(), group_head(meta, item.feature)))?
                .iter()
                .copied()
                .filter(|m| !consumed[*m])
                .collect();
            (members.len() > 1).then_some((rest, *item, members))
        });

        match merged {
            Some((rest, item, members)) => {
                let mut values: Vec<(FeatureId, String)> = members
                    .iter()
                    .map(|m| {
                        let chosen = itemsets[*m]
                            .items()
                            .iter()
                            .find(|i| !rest.contains(i) && asserted_category(i, meta))
                            .expect("merged itemsets differ by one category");
                        (chosen.feature, meta.feature(chosen.feature).category_value().to_string())
                    })
                    .collect();
                values.sort();
                values.dedup();
                for m in &members {
                    consumed[*m] = true;
                }
                let mut conjuncts = conjuncts_of(&rest, meta);
                let group = meta.group_of(item.feature).unwrap_or_default().to_string();
                let at = conjuncts
                    .iter()
                    .position(|c| conjunct_feature(c, meta) > item.feature)
                    .unwrap_or(conjuncts.len());
                conjuncts.insert(
                    at,
                    Conjunct::Category {
                        group,
                        values: values.into_iter().map(|(_, v)| v).collect(),
                        negated: false,
                    },
                );
                out.push(RenderedFormula {
                    conjuncts,
                    sources: members,
                });
            }
            None => {
                consumed[idx] = true;
                out.push(RenderedFormula {
                    conjuncts: conjuncts_of(set.items(), meta),
                    sources: vec![idx],
                });
            }
        }
    }
    out
}

fn asserted_category(item: &Item, meta: &FeatureMetadata) -> bool {
    item.asserts_category(meta)
}

/// First feature of the one-hot group containing `feature`.
fn group_head(meta: &FeatureMetadata, feature: FeatureId) -> FeatureId {
    let group = meta.group_of(feature);
    meta.features()
        .iter()
        .find(|f| meta.group_of(f.id) == group)
        .map_or(feature, |f| f.id)
}

fn conjunct_feature(c: &Conjunct, meta: &FeatureMetadata) -> FeatureId {
    match c {
        Conjunct::Range { feature, .. } => *feature,
        Conjunct::Flag { name, .. } => meta.by_name(name).map_or(usize::MAX, |f| f.id),
        Conjunct::Category { group, .. } => meta
            .features()
            .iter()
            .find(|f| meta.group_of(f.id) == Some(group.as_str()))
            .map_or(usize::MAX, |f| f.id),
    }
}

fn conjuncts_of(items: &[Item], meta: &FeatureMetadata) -> Vec<Conjunct> {
    let mut by_feature: BTreeMap<FeatureId, Interval> = BTreeMap::new();
    for item in items {
        let slot = by_feature.entry(item.feature).or_insert(Interval::FULL);
        *slot = slot.intersect(&item.interval()).unwrap_or(*slot);
    }
    by_feature
        .into_iter()
        .map(|(feature, interval)| {
            let f = meta.feature(feature);
            let boolean_value = || {
                let (zero, one) = (interval.contains(0.0), interval.contains(1.0));
                (zero != one).then_some(one)
            };
            match (f.kind, boolean_value()) {
                (FeatureKind::Binary, Some(value)) => Conjunct::Flag {
                    name: f.name.clone(),
                    value,
                },
                (FeatureKind::Onehot, Some(value)) => Conjunct::Category {
                    group: f.group.clone().unwrap_or_default(),
                    values: vec![f.category_value().to_string()],
                    negated: !value,
                },
                _ => Conjunct::Range {
                    feature,
                    name: f.name.clone(),
                    interval,
                },
            }
        })
        .collect()
}
