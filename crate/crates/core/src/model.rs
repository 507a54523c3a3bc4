//! Decision-tree ensembles with majority-vote prediction.
//!
//! Models are read from a small JSON format:
//!
//! ```json
//! { "num_features": 2, "labels": ["+1", "-1"],
//!   "features": [{"id": 0, "name": "x1", "kind": "numeric", "group": null}, ...],
//!   "trees": [{"feature": 0, "threshold": 8, "left": {"leaf": 0}, "right": {"leaf": 1}}] }
//! ```
//!
//! An instance goes left at a node iff `x[feature] <= threshold`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{HyperRectangle, Interval};

pub type FeatureId = usize;
pub type LabelId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf {
        label: LabelId,
    },
    Internal {
        feature: FeatureId,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(label: LabelId) -> TreeNode {
        TreeNode::Leaf { label }
    }

    pub fn split(feature: FeatureId, threshold: f64, left: TreeNode, right: TreeNode) -> TreeNode {
        TreeNode::Internal {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn predict(&self, x: &[f64]) -> LabelId {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label } => return *label,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn internal_nodes(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => {
                1 + left.internal_nodes() + right.internal_nodes()
            }
        }
    }

    /// Root-to-leaf regions, left subtrees first. Paths whose predicates
    /// contradict each other (a feature tested twice inconsistently) are
    /// unreachable and skipped.
    pub fn leaf_regions(&self) -> Vec<LeafRegion> {
        let mut out = Vec::new();
        self.collect_leaves(HyperRectangle::full(), &mut out);
        out
    }

    fn collect_leaves(&self, region: HyperRectangle, out: &mut Vec<LeafRegion>) {
        match self {
            TreeNode::Leaf { label } => out.push(LeafRegion {
                region,
                label: *label,
            }),
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if let Some(r) = region.restrict(*feature, &Interval::at_most(*threshold)) {
                    left.collect_leaves(r, out);
                }
                if let Some(r) = region.restrict(*feature, &Interval::greater_than(*threshold)) {
                    right.collect_leaves(r, out);
                }
            }
        }
    }

    fn visit_splits(&self, visit: &mut impl FnMut(FeatureId, f64)) {
        if let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } = self
        {
            visit(*feature, *threshold);
            left.visit_splits(visit);
            right.visit_splits(visit);
        }
    }

    fn to_json(&self) -> Value {
        match self {
            TreeNode::Leaf { label } => serde_json::json!({ "leaf": label }),
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => serde_json::json!({
                "feature": feature,
                "threshold": threshold,
                "left": left.to_json(),
                "right": right.to_json(),
            }),
        }
    }
}

/// The region of one root-to-leaf path together with the leaf label.
#[derive(Clone, Debug)]
pub struct LeafRegion {
    pub region: HyperRectangle,
    pub label: LabelId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Binary,
    Onehot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: FeatureId,
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub group: Option<String>,
}

impl Feature {
    pub fn numeric(id: FeatureId, name: impl Into<String>) -> Feature {
        Feature {
            id,
            name: name.into(),
            kind: FeatureKind::Numeric,
            group: None,
        }
    }

    pub fn binary(id: FeatureId, name: impl Into<String>) -> Feature {
        Feature {
            id,
            name: name.into(),
            kind: FeatureKind::Binary,
            group: None,
        }
    }

    pub fn onehot(id: FeatureId, name: impl Into<String>, group: impl Into<String>) -> Feature {
        Feature {
            id,
            name: name.into(),
            kind: FeatureKind::Onehot,
            group: Some(group.into()),
        }
    }

    /// Binary and one-hot features only take the values 0 and 1.
    pub fn is_boolean(&self) -> bool {
        matches!(self.kind, FeatureKind::Binary | FeatureKind::Onehot)
    }

    /// The category value named by a one-hot column: the feature name with a
    /// leading `"<group>_"` stripped when present.
    pub fn category_value(&self) -> &str {
        match &self.group {
            Some(g) => self
                .name
                .strip_prefix(g.as_str())
                .and_then(|rest| rest.strip_prefix('_'))
                .filter(|rest| !rest.is_empty())
                .unwrap_or(&self.name),
            None => &self.name,
        }
    }
}

/// Per-feature description of the input space.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureMetadata {
    features: Vec<Feature>,
}

impl FeatureMetadata {
    /// Validates ids (dense, in order) and one-hot grouping.
    pub fn new(features: Vec<Feature>) -> Result<FeatureMetadata> {
        for (pos, f) in features.iter().enumerate() {
            let loc = format!("features[{pos}]");
            if f.id != pos {
                return Err(Error::parse(loc, format!("id {} out of order, expected {pos}", f.id)));
            }
            match (&f.kind, &f.group) {
                (FeatureKind::Onehot, None) => {
                    return Err(Error::parse(loc, format!("onehot feature `{}` without group", f.name)))
                }
                (FeatureKind::Onehot, Some(g)) if g.is_empty() => {
                    return Err(Error::parse(loc, format!("onehot feature `{}` has an empty group", f.name)))
                }
                (FeatureKind::Numeric | FeatureKind::Binary, Some(g)) => {
                    return Err(Error::parse(
                        loc,
                        format!("feature `{}` is in group `{g}` but is not onehot", f.name),
                    ))
                }
                _ => {}
            }
        }
        Ok(FeatureMetadata { features })
    }

    /// `d` numeric features named `x1..xd`.
    pub fn numeric(d: usize) -> FeatureMetadata {
        FeatureMetadata {
            features: (0..d).map(|i| Feature::numeric(i, format!("x{}", i + 1))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, id: FeatureId) -> &Feature {
        &self.features[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    /// One-hot group of a feature, if it has one.
    pub fn group_of(&self, id: FeatureId) -> Option<&str> {
        self.features
            .get(id)
            .filter(|f| f.kind == FeatureKind::Onehot)
            .and_then(|f| f.group.as_deref())
    }

    /// One-hot groups with their member features, in first-appearance order.
    pub fn groups(&self) -> Vec<(String, Vec<FeatureId>)> {
        let mut out: Vec<(String, Vec<FeatureId>)> = Vec::new();
        for f in &self.features {
            if let Some(g) = self.group_of(f.id) {
                match out.iter_mut().find(|(name, _)| name == g) {
                    Some((_, members)) => members.push(f.id),
                    None => out.push((g.to_string(), vec![f.id])),
                }
            }
        }
        out
    }

    /// Resolves sensitive features given by name or numeric id. A one-hot
    /// group name selects every member of the group.
    pub fn resolve_sensitive<S: AsRef<str>>(&self, names: &[S]) -> Result<SensitiveSet> {
        let mut ids = BTreeSet::new();
        for name in names {
            let name = name.as_ref().trim();
            if let Some(f) = self.by_name(name) {
                ids.insert(f.id);
                continue;
            }
            let members: Vec<FeatureId> = self
                .features
                .iter()
                .filter(|f| self.group_of(f.id) == Some(name))
                .map(|f| f.id)
                .collect();
            if !members.is_empty() {
                ids.extend(members);
                continue;
            }
            match name.parse::<FeatureId>() {
                Ok(id) if id < self.len() => {
                    ids.insert(id);
                }
                _ => return Err(Error::UnknownFeature(name.to_string())),
            }
        }
        SensitiveSet::new(ids, self.len())
    }
}

/// The sensitive features `S`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SensitiveSet(BTreeSet<FeatureId>);

impl SensitiveSet {
    pub fn new(ids: impl IntoIterator<Item = FeatureId>, num_features: usize) -> Result<SensitiveSet> {
        let ids: BTreeSet<FeatureId> = ids.into_iter().collect();
        if let Some(bad) = ids.iter().find(|id| **id >= num_features) {
            return Err(Error::UnknownFeature(bad.to_string()));
        }
        Ok(SensitiveSet(ids))
    }

    pub fn empty() -> SensitiveSet {
        SensitiveSet::default()
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.0.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    trees: Vec<TreeNode>,
    labels: Vec<String>,
    metadata: FeatureMetadata,
}

impl Ensemble {
    pub fn new(trees: Vec<TreeNode>, labels: Vec<String>, metadata: FeatureMetadata) -> Result<Ensemble> {
        if trees.is_empty() {
            return Err(Error::parse("trees", "ensemble has no trees"));
        }
        if labels.is_empty() {
            return Err(Error::parse("labels", "no labels"));
        }
        for (i, tree) in trees.iter().enumerate() {
            validate_node(tree, &format!("trees[{i}]"), metadata.len(), labels.len())?;
        }
        Ok(Ensemble {
            trees,
            labels,
            metadata,
        })
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn metadata(&self) -> &FeatureMetadata {
        &self.metadata
    }

    pub fn num_features(&self) -> usize {
        self.metadata.len()
    }

    /// Majority vote over the trees; ties go to the smallest label id.
    pub fn predict(&self, x: &[f64]) -> LabelId {
        let mut votes = vec![0u32; self.labels.len()];
        for tree in &self.trees {
            votes[tree.predict(x)] += 1;
        }
        majority(&votes)
    }

    /// Checked variant of [`Ensemble::predict`].
    pub fn try_predict(&self, x: &[f64]) -> Result<LabelId> {
        if x.len() != self.num_features() {
            return Err(Error::DimensionMismatch {
                expected: self.num_features(),
                found: x.len(),
            });
        }
        Ok(self.predict(x))
    }

    /// Distinct split thresholds of every feature, ascending. Features that
    /// are never tested are absent.
    pub fn thresholds(&self) -> BTreeMap<FeatureId, Vec<f64>> {
        let mut map: BTreeMap<FeatureId, Vec<f64>> = BTreeMap::new();
        for tree in &self.trees {
            tree.visit_splits(&mut |f, v| map.entry(f).or_default().push(v));
        }
        for values in map.values_mut() {
            values.sort_by(f64::total_cmp);
            values.dedup();
        }
        map
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "num_features": self.num_features(),
            "labels": self.labels,
            "features": self.metadata.features(),
            "trees": self.trees.iter().map(TreeNode::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Ensemble> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        Ensemble::from_json_value(&value)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Ensemble> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ensemble::from_json_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn from_json_value(value: &Value) -> Result<Ensemble> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse("$", "model must be a JSON object"))?;
        let num_features = obj
            .get("num_features")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::parse("num_features", "missing or not a non-negative integer"))?
            as usize;
        let labels: Vec<String> = serde_json::from_value(
            obj.get("labels").cloned().ok_or_else(|| Error::parse("labels", "missing"))?,
        )
        .map_err(|e| Error::parse("labels", e.to_string()))?;
        let features: Vec<Feature> = serde_json::from_value(
            obj.get("features").cloned().ok_or_else(|| Error::parse("features", "missing"))?,
        )
        .map_err(|e| Error::parse("features", e.to_string()))?;
        if features.len() != num_features {
            return Err(Error::parse(
                "features",
                format!("{} features listed but num_features is {num_features}", features.len()),
            ));
        }
        let metadata = FeatureMetadata::new(features)?;
        let trees = obj
            .get("trees")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::parse("trees", "missing or not an array"))?
            .iter()
            .enumerate()
            .map(|(i, node)| parse_node(node, &format!("trees[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(trees, labels, metadata)
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let depth = self.trees.iter().map(TreeNode::depth).max().unwrap_or(0);
        write!(
            f,
            "{} trees, max depth {depth}, {} features, {} labels",
            self.trees.len(),
            self.num_features(),
            self.labels.len()
        )
    }
}

/// Index of the largest count, smallest index on ties.
pub(crate) fn majority(votes: &[u32]) -> LabelId {
    let mut best = 0;
    for (label, count) in votes.iter().enumerate() {
        if *count > votes[best] {
            best = label;
        }
    }
    best
}

fn parse_node(value: &Value, loc: &str) -> Result<TreeNode> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(loc, "node must be an object"))?;
    if let Some(leaf) = obj.get("leaf") {
        if obj.len() != 1 {
            return Err(Error::parse(loc, "leaf node has extra fields"));
        }
        let label = leaf
            .as_u64()
            .ok_or_else(|| Error::parse(loc, "leaf label must be a non-negative integer"))?;
        return Ok(TreeNode::leaf(label as usize));
    }
    let feature = obj
        .get("feature")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::parse(loc, "internal node needs an integer `feature`"))?;
    let threshold = obj
        .get("threshold")
        .and_then(Value::as_f64)
        .filter(|t| t.is_finite())
        .ok_or_else(|| Error::parse(loc, "internal node needs a finite numeric `threshold`"))?;
    let left = obj
        .get("left")
        .ok_or_else(|| Error::parse(loc, "internal node without `left`"))?;
    let right = obj
        .get("right")
        .ok_or_else(|| Error::parse(loc, "internal node without `right`"))?;
    Ok(TreeNode::split(
        feature as usize,
        threshold,
        parse_node(left, &format!("{loc}.left"))?,
        parse_node(right, &format!("{loc}.right"))?,
    ))
}

fn validate_node(node: &TreeNode, loc: &str, num_features: usize, num_labels: usize) -> Result<()> {
    match node {
        TreeNode::Leaf { label } if *label >= num_labels => Err(Error::parse(
            loc,
            format!("label id {label} out of range ({num_labels} labels)"),
        )),
        TreeNode::Leaf { .. } => Ok(()),
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            if *feature >= num_features {
                return Err(Error::parse(
                    loc,
                    format!("unknown feature {feature} ({num_features} features)"),
                ));
            }
            if !threshold.is_finite() {
                return Err(Error::parse(loc, "non-finite threshold"));
            }
            validate_node(left, &format!("{loc}.left"), num_features, num_labels)?;
            validate_node(right, &format!("{loc}.right"), num_features, num_labels)
        }
    }
}
