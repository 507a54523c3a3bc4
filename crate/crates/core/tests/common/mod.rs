//! Shared helpers for the integration suites: a seeded generator of small
//! random ensembles, an independent brute-force oracle that walks the model
//! JSON itself, and the threshold-cell grid of a model.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use treefair::{Ensemble, HyperRectangle, Itemset, SensitiveSet};

pub const MAX_TREES: usize = 5;
pub const MAX_DEPTH: usize = 4;
pub const MAX_FEATURES: usize = 6;

/// The two-feature, single-tree example model.
pub fn example_model_json() -> Value {
    json!({
        "num_features": 2,
        "labels": ["+1", "-1"],
        "features": [
            {"id": 0, "name": "x1", "kind": "numeric"},
            {"id": 1, "name": "x2", "kind": "numeric"}
        ],
        "trees": [{
            "feature": 0, "threshold": 8.0,
            "left": {"feature": 1, "threshold": 6.0, "left": {"leaf": 0}, "right": {"leaf": 1}},
            "right": {"feature": 1, "threshold": 7.0, "left": {"leaf": 0}, "right": {"leaf": 1}}
        }]
    })
}

/// A random binary-classification ensemble: feature 0 is the binary
/// sensitive feature `s`, the others are numeric with thresholds on the
/// 0.1 grid of `[0, 1]`.
pub fn random_model_json(seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(2..=MAX_FEATURES);
    let n_trees = rng.gen_range(1..=MAX_TREES);
    let mut features = vec![json!({"id": 0, "name": "s", "kind": "binary"})];
    for f in 1..d {
        features.push(json!({"id": f, "name": format!("x{f}"), "kind": "numeric"}));
    }
    let trees: Vec<Value> = (0..n_trees)
        .map(|_| {
            let depth = rng.gen_range(1..=MAX_DEPTH);
            random_tree(&mut rng, d, depth)
        })
        .collect();
    json!({
        "num_features": d,
        "labels": ["no", "yes"],
        "features": features,
        "trees": trees,
    })
}

fn random_tree(rng: &mut ChaCha8Rng, d: usize, depth: usize) -> Value {
    if depth == 0 || rng.gen_bool(0.2) {
        return json!({"leaf": rng.gen_range(0..2)});
    }
    let feature = rng.gen_range(0..d);
    let threshold = if feature == 0 {
        0.5
    } else {
        f64::from(rng.gen_range(0..=10u8)) / 10.0
    };
    json!({
        "feature": feature,
        "threshold": threshold,
        "left": random_tree(rng, d, depth - 1),
        "right": random_tree(rng, d, depth - 1),
    })
}

pub fn ensemble(model: &Value) -> Ensemble {
    Ensemble::from_json_value(model).expect("generated models are valid")
}

pub fn sensitive_s(ens: &Ensemble) -> SensitiveSet {
    SensitiveSet::new([0], ens.num_features()).unwrap()
}

/// A model tree walked directly from its JSON form.
pub enum Node {
    Leaf(usize),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn parse(v: &Value) -> Node {
        if let Some(label) = v.get("leaf") {
            return Node::Leaf(label.as_u64().unwrap() as usize);
        }
        Node::Split {
            feature: v["feature"].as_u64().unwrap() as usize,
            threshold: v["threshold"].as_f64().unwrap(),
            left: Box::new(Node::parse(&v["left"])),
            right: Box::new(Node::parse(&v["right"])),
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        match self {
            Node::Leaf(label) => *label,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Brute-force reference: majority vote with ties to the smallest label,
/// and discrimination as disagreement between `s = 0` and `s = 1`.
pub struct Oracle {
    trees: Vec<Node>,
    labels: usize,
}

impl Oracle {
    pub fn new(model: &Value) -> Oracle {
        Oracle {
            trees: model["trees"].as_array().unwrap().iter().map(Node::parse).collect(),
            labels: model["labels"].as_array().unwrap().len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.labels];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        let best = *votes.iter().max().unwrap();
        votes.iter().position(|v| *v == best).unwrap()
    }

    /// Whether flipping the binary feature `s` (id 0) changes the prediction.
    pub fn discriminated(&self, x: &[f64]) -> bool {
        let mut z = x.to_vec();
        z[0] = 0.0;
        let p0 = self.predict(&z);
        z[0] = 1.0;
        p0 != self.predict(&z)
    }
}

/// One representative per threshold cell of every feature: for thresholds
/// `t1 < ... < tk` the cells are `(-inf, t1], (t1, t2], ..., (tk, +inf)`,
/// represented by `t1 - 1, t1 ... tk, tk + 1`. Binary features take 0 and 1.
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(model: &Value) -> Grid {
        let features = model["features"].as_array().unwrap();
        let mut thresholds = vec![Vec::new(); features.len()];
        fn collect(v: &Value, out: &mut [Vec<f64>]) {
            if v.get("leaf").is_some() {
                return;
            }
            out[v["feature"].as_u64().unwrap() as usize].push(v["threshold"].as_f64().unwrap());
            collect(&v["left"], out);
            collect(&v["right"], out);
        }
        for t in model["trees"].as_array().unwrap() {
            collect(t, &mut thresholds);
        }
        let axes = features
            .iter()
            .zip(thresholds)
            .map(|(f, mut ts)| {
                if f["kind"] != "numeric" {
                    return vec![0.0, 1.0];
                }
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                match (ts.first(), ts.last()) {
                    (Some(&lo), Some(&hi)) => {
                        let mut axis = vec![lo - 1.0];
                        axis.extend(&ts);
                        axis.push(hi + 1.0);
                        axis
                    }
                    _ => vec![0.0],
                }
            })
            .collect();
        Grid { axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        self.axes
            .iter()
            .map(|axis| {
                let v = axis[index % axis.len()];
                index /= axis.len();
                v
            })
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Marks every grid point inside `rect`.
    pub fn mark(&self, rect: &HyperRectangle, marks: &mut [bool]) {
        let ranges: Vec<Vec<usize>> = self
            .axes
            .iter()
            .enumerate()
            .map(|(f, axis)| {
                let iv = rect.get(f);
                (0..axis.len()).filter(|&i| iv.contains(axis[i])).collect()
            })
            .collect();
        if ranges.iter().any(Vec::is_empty) {
            return;
        }
        let mut cursor = vec![0usize; ranges.len()];
        loop {
            let mut index = 0;
            for f in (0..ranges.len()).rev() {
                index = index * self.axes[f].len() + ranges[f][cursor[f]];
            }
            marks[index] = true;
            let mut f = 0;
            loop {
                if f == ranges.len() {
                    return;
                }
                cursor[f] += 1;
                if cursor[f] < ranges[f].len() {
                    break;
                }
                cursor[f] = 0;
                f += 1;
            }
        }
    }

    pub fn marks_of_rects<'a>(&self, rects: impl IntoIterator<Item = &'a HyperRectangle>) -> Vec<bool> {
        let mut marks = vec![false; self.len()];
        for r in rects {
            self.mark(r, &mut marks);
        }
        marks
    }

    pub fn marks_of_itemsets<'a>(&self, itemsets: impl IntoIterator<Item = &'a Itemset>) -> Vec<bool> {
        self.marks_of_rects(itemsets.into_iter().map(Itemset::region))
    }
}
