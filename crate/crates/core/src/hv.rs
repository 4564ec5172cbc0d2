//! Bi-objective dominance, non-dominated fronts and hypervolume quantities.
//!
//! All objectives are minimized. A [`ParetoFront`] stores mutually
//! non-dominated points that strictly dominate its reference point, sorted by
//! the first objective, so every query is a single linear pass.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

/// Image of a search point in the two-dimensional objective space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectivePair {
    f1: f64,
    f2: f64,
}

impl ObjectivePair {
    pub fn new(f1: f64, f2: f64) -> Result<Self> {
        if !f1.is_finite() || !f2.is_finite() {
            return Err(invalid(format!("objective pair ({f1}, {f2}) is not finite")));
        }
        Ok(Self { f1, f2 })
    }

    #[inline]
    pub fn f1(&self) -> f64 {
        self.f1
    }

    #[inline]
    pub fn f2(&self) -> f64 {
        self.f2
    }

    /// True iff both coordinates are strictly below the reference point.
    #[inline]
    pub fn strictly_below(&self, r: &ReferencePoint) -> bool {
        self.f1 < r.r1 && self.f2 < r.r2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    r1: f64,
    r2: f64,
}

impl ReferencePoint {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        if !r1.is_finite() || !r2.is_finite() {
            return Err(invalid(format!("reference point ({r1}, {r2}) is not finite")));
        }
        Ok(Self { r1, r2 })
    }

    #[inline]
    pub fn r1(&self) -> f64 {
        self.r1
    }

    #[inline]
    pub fn r2(&self) -> f64 {
        self.r2
    }
}

pub fn weakly_dominates(a: &ObjectivePair, b: &ObjectivePair) -> bool {
    a.f1 <= b.f1 && a.f2 <= b.f2
}

pub fn dominates(a: &ObjectivePair, b: &ObjectivePair) -> bool {
    weakly_dominates(a, b) && (a.f1 < b.f1 || a.f2 < b.f2)
}

/// Outcome of [`ParetoFront::insert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertReport {
    pub accepted: bool,
    pub removed_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UhviBranch {
    Improvement,
    DistancePenalty,
}

/// Uncrowded hypervolume improvement of a point with respect to a front.
///
/// Non-dominated points inside the reference box get their hypervolume
/// improvement; every other point gets minus its Euclidean distance to the
/// empirical front.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UhviValue {
    pub value: f64,
    pub branch: UhviBranch,
}

/// Neumaier summation, so that adding a point never lowers the computed
/// hypervolume through rounding alone.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sorted archive of mutually non-dominated objective pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    reference: ReferencePoint,
    // strictly increasing f1, strictly decreasing f2
    points: Vec<ObjectivePair>,
}

impl ParetoFront {
    pub fn new(reference: ReferencePoint) -> Self {
        Self {
            reference,
            points: Vec::new(),
        }
    }

    /// Builds the non-dominated, reference-dominating subset of `points`.
    pub fn from_points<'a, I>(reference: ReferencePoint, points: I) -> Self
    where
        I: IntoIterator<Item = &'a ObjectivePair>,
    {
        let mut front = Self::new(reference);
        for p in points {
            front.insert(*p);
        }
        front
    }

    pub fn reference(&self) -> &ReferencePoint {
        &self.reference
    }

    pub fn points(&self) -> &[ObjectivePair] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the first stored point whose f1 exceeds `f1`.
    #[inline]
    fn upper_index(&self, f1: f64) -> usize {
        self.points.partition_point(|s| s.f1 <= f1)
    }

    /// True iff some stored point weakly dominates `p`.
    pub fn weakly_dominates_point(&self, p: &ObjectivePair) -> bool {
        let idx = self.upper_index(p.f1);
        // the predecessor has the smallest f2 among points with f1 <= p.f1
        idx > 0 && self.points[idx - 1].f2 <= p.f2
    }

    /// True iff some stored point strictly dominates `p`.
    pub fn dominates_point(&self, p: &ObjectivePair) -> bool {
        let idx = self.upper_index(p.f1);
        if idx == 0 {
            return false;
        }
        let pred = &self.points[idx - 1];
        if pred.f2 < p.f2 {
            return true;
        }
        // pred.f2 == p.f2 only dominates strictly in f1
        pred.f2 == p.f2 && pred.f1 < p.f1
    }

    pub fn insert(&mut self, p: ObjectivePair) -> InsertReport {
        let rejected = InsertReport {
            accepted: false,
            removed_count: 0,
        };
        if !p.strictly_below(&self.reference) || self.weakly_dominates_point(&p) {
            return rejected;
        }
        let idx = self.upper_index(p.f1);
        // a stored point with equal f1 has larger f2 here and is dominated
        let start = if idx > 0 && self.points[idx - 1].f1 == p.f1 {
            idx - 1
        } else {
            idx
        };
        let end = start
            + self.points[start..]
                .iter()
                .take_while(|s| s.f2 >= p.f2)
                .count();
        self.points.splice(start..end, std::iter::once(p));
        InsertReport {
            accepted: true,
            removed_count: end - start,
        }
    }

    pub fn hypervolume(&self) -> f64 {
        let r = &self.reference;
        let mut hv = CompensatedSum::default();
        for (i, s) in self.points.iter().enumerate() {
            let next_f1 = self.points.get(i + 1).map_or(r.r1, |n| n.f1);
            hv.add((next_f1 - s.f1) * (r.r2 - s.f2));
        }
        hv.value()
    }

    /// Hypervolume gained by adding `p`, without modifying the front.
    pub fn hvi(&self, p: &ObjectivePair) -> f64 {
        let r = &self.reference;
        if !p.strictly_below(r) {
            return 0.0;
        }
        let idx = self.upper_index(p.f1);
        let mut ceiling = if idx > 0 { self.points[idx - 1].f2 } else { r.r2 };
        if ceiling <= p.f2 {
            return 0.0;
        }
        let mut left = p.f1;
        let mut gain = 0.0;
        for s in &self.points[idx..] {
            gain += (s.f1 - left) * (ceiling - p.f2);
            if s.f2 <= p.f2 {
                return gain;
            }
            left = s.f1;
            ceiling = s.f2;
        }
        gain + (r.r1 - left) * (ceiling - p.f2)
    }

    /// Vertices of the empirical front as an axis-parallel polyline, from the
    /// ray at `f2 = r2` to the ray at `f1 = r1`.
    fn boundary_vertices(&self) -> Vec<(f64, f64)> {
        let r = &self.reference;
        let mut v = Vec::with_capacity(2 * self.points.len() + 3);
        v.push((f64::NEG_INFINITY, r.r2));
        let mut prev_f2 = r.r2;
        for s in &self.points {
            v.push((s.f1, prev_f2));
            v.push((s.f1, s.f2));
            prev_f2 = s.f2;
        }
        v.push((r.r1, prev_f2));
        v.push((r.r1, f64::NEG_INFINITY));
        v
    }

    /// Euclidean distance from `p` to the boundary of the region that
    /// dominates the reference point and is not dominated by the front.
    pub fn distance_to_front(&self, p: &ObjectivePair) -> f64 {
        self.boundary_vertices()
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let cx = p.f1.clamp(a.0.min(b.0), a.0.max(b.0));
                let cy = p.f2.clamp(a.1.min(b.1), a.1.max(b.1));
                (p.f1 - cx).hypot(p.f2 - cy)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn uhvi(&self, p: &ObjectivePair) -> UhviValue {
        if p.strictly_below(&self.reference) && !self.weakly_dominates_point(p) {
            UhviValue {
                value: self.hvi(p),
                branch: UhviBranch::Improvement,
            }
        } else {
            let d = self.distance_to_front(p);
            UhviValue {
                value: if d == 0.0 { 0.0 } else { -d },
                branch: UhviBranch::DistancePenalty,
            }
        }
    }
}

/// Ordered key over finite first objectives; `-0.0` is stored as `0.0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct F1Key(f64);

impl Eq for F1Key {}

impl PartialOrd for F1Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for F1Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Non-dominated archive with logarithmic insertion, for unbounded point counts.
///
/// Holds the same set as a [`ParetoFront`] fed the same insertions, and
/// computes the hypervolume with the same summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    reference: ReferencePoint,
    points: BTreeMap<F1Key, f64>,
}

impl Archive {
    pub fn new(reference: ReferencePoint) -> Self {
        Self {
            reference,
            points: BTreeMap::new(),
        }
    }

    pub fn reference(&self) -> &ReferencePoint {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points in increasing f1 order.
    pub fn iter(&self) -> impl Iterator<Item = ObjectivePair> + '_ {
        self.points.iter().map(|(k, &f2)| ObjectivePair { f1: k.0, f2 })
    }

    pub fn to_front(&self) -> ParetoFront {
        ParetoFront {
            reference: self.reference,
            points: self.iter().collect(),
        }
    }

    pub fn weakly_dominates_point(&self, p: &ObjectivePair) -> bool {
        let key = F1Key(p.f1 + 0.0);
        self.points
            .range(..=key)
            .next_back()
            .is_some_and(|(_, &f2)| f2 <= p.f2)
    }

    pub fn insert(&mut self, p: ObjectivePair) -> InsertReport {
        if !p.strictly_below(&self.reference) || self.weakly_dominates_point(&p) {
            return InsertReport {
                accepted: false,
                removed_count: 0,
            };
        }
        let key = F1Key(p.f1 + 0.0);
        let doomed: Vec<F1Key> = self
            .points
            .range(key..)
            .take_while(|(_, &f2)| f2 >= p.f2)
            .map(|(k, _)| *k)
            .collect();
        for k in &doomed {
            self.points.remove(k);
        }
        self.points.insert(key, p.f2);
        InsertReport {
            accepted: true,
            removed_count: doomed.len(),
        }
    }

    pub fn hypervolume(&self) -> f64 {
        let r = &self.reference;
        let mut hv = CompensatedSum::default();
        let mut it = self.points.iter().peekable();
        while let Some((k, &f2)) = it.next() {
            let next_f1 = it.peek().map_or(r.r1, |(n, _)| n.0);
            hv.add((next_f1 - k.0) * (r.r2 - f2));
        }
        hv.value()
    }
}
