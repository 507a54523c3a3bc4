//! Discrimination scores, coverage curves, formula ranking and the
//! brute-force discrimination oracle.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::itemsets::Itemset;
use crate::model::{Ensemble, FeatureKind, FeatureMetadata, LabelId, SensitiveSet};
use crate::stability::{FlipSet, UnstableSet};
use crate::synthesis::FormulaSet;

/// Above this size instance counts are no longer exact in an `f64`.
const MAX_EXACT_COUNT: usize = 1 << 53;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Test,
    Train,
    Random,
    Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSet {
    pub instances: Vec<Vec<f64>>,
    pub labels: Option<Vec<LabelId>>,
    pub provenance: Provenance,
}

impl InstanceSet {
    pub fn new(instances: Vec<Vec<f64>>, provenance: Provenance) -> InstanceSet {
        InstanceSet {
            instances,
            labels: None,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Checks dimensions and one-hot integrity against `meta`.
    pub fn validate(&self, meta: &FeatureMetadata) -> Result<()> {
        let groups = meta.groups();
        for (row, x) in self.instances.iter().enumerate() {
            if x.len() != meta.len() {
                return Err(Error::DimensionMismatch {
                    expected: meta.len(),
                    found: x.len(),
                });
            }
            for (group, members) in &groups {
                let active = members.iter().filter(|f| x[**f] > 0.5).count();
                if active != 1 {
                    return Err(Error::InvalidInput(format!(
                        "row {row}: one-hot group `{group}` has {active} active columns"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads a preprocessed CSV: one column per feature, named and ordered as
    /// in `meta`, plus an optional trailing `label` column holding label names
    /// or label ids.
    pub fn from_csv_path(
        path: impl AsRef<Path>,
        ensemble: &Ensemble,
        provenance: Provenance,
    ) -> Result<InstanceSet> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        InstanceSet::from_csv_reader(file, ensemble, provenance).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn from_csv_reader<R: std::io::Read>(
        reader: R,
        ensemble: &Ensemble,
        provenance: Provenance,
    ) -> Result<InstanceSet> {
        let meta = ensemble.metadata();
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
        let has_label = header.last().is_some_and(|h| h == "label");
        let width = header.len() - usize::from(has_label);
        if width != meta.len() {
            return Err(Error::DimensionMismatch {
                expected: meta.len(),
                found: width,
            });
        }
        for (col, (name, feature)) in header.iter().zip(meta.features()).enumerate() {
            if *name != feature.name {
                return Err(Error::parse(
                    format!("header column {col}"),
                    format!("expected `{}`, found `{name}`", feature.name),
                ));
            }
        }

        let mut instances = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in csv.records().enumerate() {
            let record = record?;
            let loc = |col: usize| format!("row {} column {col}", row + 2);
            let x = (0..width)
                .map(|col| {
                    record[col]
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(loc(col), format!("not a number: {:?}", &record[col])))
                })
                .collect::<Result<Vec<f64>>>()?;
            if has_label {
                let raw = &record[width];
                let label = ensemble
                    .labels()
                    .iter()
                    .position(|l| l == raw)
                    .or_else(|| raw.parse::<usize>().ok().filter(|l| *l < ensemble.labels().len()))
                    .ok_or_else(|| Error::parse(loc(width), format!("unknown label {raw:?}")))?;
                labels.push(label);
            }
            instances.push(x);
        }
        let set = InstanceSet {
            instances,
            labels: has_label.then_some(labels),
            provenance,
        };
        set.validate(meta)?;
        Ok(set)
    }
}

/// `count / total`, kept as integers so comparisons stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Fraction {
    pub count: usize,
    pub total: usize,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }
}

fn check_nonempty(data: &InstanceSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInstanceSet);
    }
    if data.len() > MAX_EXACT_COUNT {
        return Err(Error::InvalidInput("instance set too large for exact scoring".into()));
    }
    Ok(())
}

/// Share of instances falling inside some unstable rectangle.
pub fn score_d(unstable: &UnstableSet, data: &InstanceSet) -> Result<Fraction> {
    check_nonempty(data)?;
    let count = data
        .instances
        .par_iter()
        .filter(|x| unstable.contains_point(x))
        .count();
    Ok(Fraction {
        count,
        total: data.len(),
    })
}

/// Share of instances not covered by any of the given fair itemsets.
pub fn score_dtilde(formulas: &[Itemset], data: &InstanceSet) -> Result<Fraction> {
    check_nonempty(data)?;
    let count = data
        .instances
        .par_iter()
        .filter(|x| !formulas.iter().any(|i| i.contains_point(x)))
        .count();
    Ok(Fraction {
        count,
        total: data.len(),
    })
}

/// Share of correctly classified labelled instances.
pub fn accuracy(ensemble: &Ensemble, data: &InstanceSet) -> Option<Fraction> {
    let labels = data.labels.as_ref()?;
    let count = data
        .instances
        .par_iter()
        .zip(labels.par_iter())
        .filter(|(x, y)| ensemble.predict(x) == **y)
        .count();
    Some(Fraction {
        count,
        total: data.len(),
    })
}

/// Decides causal discrimination on single instances by enumerating the
/// representatives of their flip sets.
pub struct DiscriminationOracle<'a> {
    ensemble: &'a Ensemble,
    flips: FlipSet,
}

impl<'a> DiscriminationOracle<'a> {
    pub fn new(ensemble: &'a Ensemble, sensitive: &SensitiveSet) -> Self {
        DiscriminationOracle {
            ensemble,
            flips: FlipSet::new(ensemble, sensitive),
        }
    }

    pub fn is_discriminated(&self, x: &[f64]) -> bool {
        let label = self.ensemble.predict(x);
        self.flips
            .representatives(x)
            .iter()
            .any(|z| self.ensemble.predict(z) != label)
    }
}

pub fn oracle_is_discriminated(ensemble: &Ensemble, sensitive: &SensitiveSet, x: &[f64]) -> bool {
    DiscriminationOracle::new(ensemble, sensitive).is_discriminated(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoveragePoint {
    pub iteration: usize,
    /// Oracle-fair instances covered by the formulas known at this iteration.
    pub covered: Fraction,
}

/// Coverage of the oracle-fair instances of `data` by the formulas known
/// after each iteration `0..=k_max` of a synthesis run. Iterations beyond the
/// run's last reuse its final formula set.
pub fn coverage_curve(
    ensemble: &Ensemble,
    sensitive: &SensitiveSet,
    formulas: &FormulaSet,
    data: &InstanceSet,
    k_max: usize,
) -> Result<Vec<CoveragePoint>> {
    check_nonempty(data)?;
    let oracle = DiscriminationOracle::new(ensemble, sensitive);
    let fair: Vec<&Vec<f64>> = data
        .instances
        .par_iter()
        .filter(|x| !oracle.is_discriminated(x))
        .collect();
    Ok((0..=k_max)
        .map(|k| {
            let known = formulas.after_iteration(k);
            let count = fair
                .par_iter()
                .filter(|x| known.iter().any(|i| i.contains_point(x)))
                .count();
            CoveragePoint {
                iteration: k,
                covered: Fraction {
                    count,
                    total: fair.len(),
                },
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedFormula {
    /// Index into the formula list.
    pub index: usize,
    /// Instances newly covered when this formula was picked.
    pub marginal: usize,
    /// Instances covered by this formula alone.
    pub covered: usize,
}

/// Greedy ranking: repeatedly pick the formula covering the most instances
/// not yet covered, ties going to the smaller itemset in canonical order.
/// Stops after `k` picks or when no formula covers anything new.
pub fn top_k_greedy(formulas: &[Itemset], data: &InstanceSet, k: usize) -> Result<Vec<RankedFormula>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let coverage: Vec<Vec<usize>> = formulas
        .par_iter()
        .map(|f| {
            data.instances
                .iter()
                .enumerate()
                .filter(|(_, x)| f.contains_point(x))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let mut taken = vec![false; data.len()];
    let mut picked = vec![false; formulas.len()];
    let mut out = Vec::new();
    while out.len() < k {
        let best = (0..formulas.len())
            .filter(|i| !picked[*i])
            .map(|i| (i, coverage[i].iter().filter(|j| !taken[**j]).count()))
            .filter(|(_, gain)| *gain > 0)
            .max_by(|(a, ga), (b, gb)| ga.cmp(gb).then_with(|| formulas[*b].cmp(&formulas[*a])));
        let Some((index, marginal)) = best else {
            break;
        };
        picked[index] = true;
        for j in &coverage[index] {
            taken[*j] = true;
        }
        out.push(RankedFormula {
            index,
            marginal,
            covered: coverage[index].len(),
        });
    }
    Ok(out)
}

/// Uniform random instances: numeric features in `[0, 1]`, binary features
/// in `{0, 1}`, and one active column per one-hot group.
pub fn gen_random_instances(meta: &FeatureMetadata, n: usize, seed: u64) -> InstanceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = meta.groups();
    let instances = (0..n)
        .map(|_| {
            let mut x = vec![0.0; meta.len()];
            for f in meta.features() {
                match f.kind {
                    FeatureKind::Numeric => x[f.id] = rng.gen_range(0.0..=1.0),
                    FeatureKind::Binary => x[f.id] = f64::from(rng.gen_range(0..2u8)),
                    FeatureKind::Onehot => {}
                }
            }
            for (_, members) in &groups {
                x[members[rng.gen_range(0..members.len())]] = 1.0;
            }
            x
        })
        .collect();
    InstanceSet::new(instances, Provenance::Random)
}
