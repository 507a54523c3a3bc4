//! Interval and hyper-rectangle algebra.
//!
//! Every interval is left-open and right-closed, `(lo, hi]`, which is exactly
//! the shape carved out by tree predicates `x <= v` / `x > v`. A threshold
//! therefore always lands on a boundary and the cells of a tree partition the
//! real line without overlap. Infinite ends are explicit [`Bound`] markers.
//!
//! Rectangles are sparse: a feature missing from the map spans the whole line.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An extended real number.
#[derive(Clone, Copy, Debug)]
pub enum Bound {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Bound {
    /// Builds a finite bound. `-0.0` is folded onto `0.0` so that equality,
    /// hashing and ordering all agree with numeric comparison.
    pub fn finite(v: f64) -> Bound {
        Bound::Finite(finite(v))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(v),
            _ => None,
        }
    }

    fn rank(self) -> u8 {
        match self {
            Bound::NegInf => 0,
            Bound::Finite(_) => 1,
            Bound::PosInf => 2,
        }
    }
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Bound {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        if let Bound::Finite(v) = self {
            v.to_bits().hash(state);
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::NegInf => f.write_str("-inf"),
            Bound::Finite(v) => write!(f, "{v}"),
            Bound::PosInf => f.write_str("+inf"),
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bound::NegInf => serializer.serialize_str("-inf"),
            Bound::Finite(v) => serializer.serialize_f64(*v),
            Bound::PosInf => serializer.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) if v.is_finite() => Ok(Bound::finite(v)),
            Raw::Num(v) => Err(de::Error::custom(format!("non-finite bound {v}"))),
            Raw::Str(s) => match s.as_str() {
                "-inf" => Ok(Bound::NegInf),
                "+inf" => Ok(Bound::PosInf),
                other => Err(de::Error::custom(format!(
                    "expected a number, \"-inf\" or \"+inf\", found {other:?}"
                ))),
            },
        }
    }
}

/// A non-empty left-open right-closed interval `(lo, hi]`.
///
/// Ends are stored as plain floats, with the infinities standing for the
/// unbounded ends; finite bounds are never infinite, so the two forms map
/// one to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// Returns `None` when `(lo, hi]` would be empty or malformed.
    pub fn new(lo: Bound, hi: Bound) -> Option<Interval> {
        if matches!(lo, Bound::PosInf) || matches!(hi, Bound::NegInf) || lo >= hi {
            return None;
        }
        Some(Interval {
            lo: lo.value().unwrap_or(f64::NEG_INFINITY),
            hi: hi.value().unwrap_or(f64::INFINITY),
        })
    }

    /// `(-inf, v]`
    pub fn at_most(v: f64) -> Interval {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: finite(v),
        }
    }

    /// `(v, +inf)`
    pub fn greater_than(v: f64) -> Interval {
        Interval {
            lo: finite(v),
            hi: f64::INFINITY,
        }
    }

    pub fn lo(&self) -> Bound {
        if self.lo == f64::NEG_INFINITY {
            Bound::NegInf
        } else {
            Bound::Finite(self.lo)
        }
    }

    pub fn hi(&self) -> Bound {
        if self.hi == f64::INFINITY {
            Bound::PosInf
        } else {
            Bound::Finite(self.hi)
        }
    }

    pub fn is_full(&self) -> bool {
        *self == Interval::FULL
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let (lo, hi) = (self.lo.max(other.lo), self.hi.min(other.hi));
        (lo < hi).then_some(Interval { lo, hi })
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo.max(other.lo) < self.hi.min(other.hi)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

fn finite(v: f64) -> f64 {
    debug_assert!(v.is_finite(), "finite bound from {v}");
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

impl Eq for Interval {}

impl Hash for Interval {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.lo.to_bits().hash(state);
        self.hi.to_bits().hash(state);
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Raw {
            lo: Bound,
            hi: Bound,
        }
        Raw {
            lo: self.lo(),
            hi: self.hi(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            lo: Bound,
            hi: Bound,
        }
        let raw = Raw::deserialize(deserializer)?;
        Interval::new(raw.lo, raw.hi).ok_or_else(|| {
            de::Error::custom(format!("empty interval ({}, {}]", raw.lo, raw.hi))
        })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi() {
            Bound::PosInf => write!(f, "({}, +inf)", self.lo()),
            hi => write!(f, "({}, {}]", self.lo(), hi),
        }
    }
}

/// Box in feature space, stored sparsely as a feature-sorted list of
/// non-full intervals.
#[derive(Clone, Debug, Default)]
pub struct HyperRectangle {
    pub id: Option<usize>,
    intervals: Vec<(usize, Interval)>,
}

impl HyperRectangle {
    /// The whole feature space.
    pub fn full() -> HyperRectangle {
        HyperRectangle::default()
    }

    /// Intersects every listed constraint; `None` if the result is empty.
    pub fn from_intervals<I>(intervals: I) -> Option<HyperRectangle>
    where
        I: IntoIterator<Item = (usize, Interval)>,
    {
        intervals
            .into_iter()
            .try_fold(HyperRectangle::full(), |r, (f, iv)| r.restrict(f, &iv))
    }

    pub fn with_id(mut self, id: usize) -> HyperRectangle {
        self.id = Some(id);
        self
    }

    /// Interval on `feature`; full when unconstrained.
    pub fn get(&self, feature: usize) -> Interval {
        match self.intervals.binary_search_by_key(&feature, |(f, _)| *f) {
            Ok(pos) => self.intervals[pos].1,
            Err(_) => Interval::FULL,
        }
    }

    /// Constrained features with their intervals, ascending by feature.
    pub fn intervals(&self) -> &[(usize, Interval)] {
        &self.intervals
    }

    pub fn is_full(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Intersects the interval on one feature.
    pub fn restrict(&self, feature: usize, interval: &Interval) -> Option<HyperRectangle> {
        let mut out = self.clone();
        out.id = None;
        match out.intervals.binary_search_by_key(&feature, |(f, _)| *f) {
            Ok(pos) => {
                out.intervals[pos].1 = out.intervals[pos].1.intersect(interval)?;
            }
            Err(pos) => {
                if !interval.is_full() {
                    out.intervals.insert(pos, (feature, *interval));
                }
            }
        }
        Some(out)
    }

    pub fn intersect(&self, other: &HyperRectangle) -> Option<HyperRectangle> {
        let mut intervals = Vec::with_capacity(self.intervals.len() + other.intervals.len());
        let mut ok = true;
        merge_join(&self.intervals, &other.intervals, |f, a, b| match (a, b) {
            (Some(a), Some(b)) => match a.intersect(b) {
                Some(iv) => {
                    intervals.push((f, iv));
                    true
                }
                None => {
                    ok = false;
                    false
                }
            },
            (Some(iv), None) | (None, Some(iv)) => {
                intervals.push((f, *iv));
                true
            }
            (None, None) => unreachable!(),
        });
        ok.then_some(HyperRectangle { id: None, intervals })
    }

    /// Non-empty intersection. Features absent from both sides are full.
    pub fn intersects(&self, other: &HyperRectangle) -> bool {
        self.intersects_where(other, |_| true)
    }

    /// Non-empty intersection when only features accepted by `keep` are
    /// compared; the others are projected away.
    pub fn intersects_where(&self, other: &HyperRectangle, keep: impl Fn(usize) -> bool) -> bool {
        merge_join(&self.intervals, &other.intervals, |f, a, b| match (a, b) {
            (Some(a), Some(b)) => !keep(f) || a.intersects(b),
            _ => true,
        })
    }

    pub fn is_subset_of(&self, other: &HyperRectangle) -> bool {
        merge_join(&self.intervals, &other.intervals, |_, a, b| match (a, b) {
            (Some(a), Some(b)) => a.is_subset_of(b),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!(),
        })
    }

    /// Point membership. Features beyond `x.len()` are treated as unconstrained
    /// only if the rectangle does not mention them.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.intervals
            .iter()
            .all(|(f, iv)| x.get(*f).is_some_and(|v| iv.contains(*v)))
    }

    /// Same intervals on every feature, ignoring ids.
    pub fn same_region(&self, other: &HyperRectangle) -> bool {
        self.intervals == other.intervals
    }

    /// Largest feature index mentioned, if any.
    pub fn max_feature(&self) -> Option<usize> {
        self.intervals.last().map(|(f, _)| *f)
    }
}

impl PartialEq for HyperRectangle {
    fn eq(&self, other: &Self) -> bool {
        self.same_region(other)
    }
}

impl Eq for HyperRectangle {}

impl Hash for HyperRectangle {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.intervals.hash(state);
    }
}

impl fmt::Display for HyperRectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return f.write_str("<full>");
        }
        f.write_str("<")?;
        for (i, (feature, iv)) in self.intervals.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "x{feature} in {iv}")?;
        }
        f.write_str(">")
    }
}

/// Walks two feature-sorted interval lists in lockstep, calling `visit` for
/// every feature present in at least one of them. Stops as soon as `visit`
/// returns false and reports whether the walk completed.
fn merge_join(
    a: &[(usize, Interval)],
    b: &[(usize, Interval)],
    mut visit: impl FnMut(usize, Option<&Interval>, Option<&Interval>) -> bool,
) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let keep_going = match (a.get(i), b.get(j)) {
            (Some((fa, ia)), Some((fb, ib))) => match fa.cmp(fb) {
                Ordering::Less => {
                    i += 1;
                    visit(*fa, Some(ia), None)
                }
                Ordering::Greater => {
                    j += 1;
                    visit(*fb, None, Some(ib))
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                    visit(*fa, Some(ia), Some(ib))
                }
            },
            (Some((fa, ia)), None) => {
                i += 1;
                visit(*fa, Some(ia), None)
            }
            (None, Some((fb, ib))) => {
                j += 1;
                visit(*fb, None, Some(ib))
            }
            (None, None) => unreachable!(),
        };
        if !keep_going {
            return false;
        }
    }
    true
}

impl Serialize for HyperRectangle {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Intervals<'a>(&'a [(usize, Interval)]);
        impl Serialize for Intervals<'_> {
            fn serialize<S: Serializer>(
                &self,
                serializer: S,
            ) -> std::result::Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.len()))?;
                for (f, iv) in self.0 {
                    map.serialize_entry(&f.to_string(), iv)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("id", &self.id)?;
        map.serialize_entry("intervals", &Intervals(&self.intervals))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for HyperRectangle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(default)]
            id: Option<usize>,
            #[serde(default)]
            intervals: BTreeMap<String, Interval>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut intervals = Vec::with_capacity(raw.intervals.len());
        for (key, iv) in raw.intervals {
            let f: usize = key
                .parse()
                .map_err(|_| de::Error::custom(format!("feature key {key:?} is not an integer")))?;
            if !iv.is_full() {
                intervals.push((f, iv));
            }
        }
        intervals.sort_by_key(|(f, _)| *f);
        Ok(HyperRectangle { id: raw.id, intervals })
    }
}

/// Parses a JSON array of rectangles.
pub fn rectangles_from_json(text: &str) -> Result<Vec<HyperRectangle>> {
    serde_json::from_str(text).map_err(|e| Error::parse(format!("line {}", e.line()), e.to_string()))
}
