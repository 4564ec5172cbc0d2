#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use comocma::harness::{GapOffsets, OffsetSource, OFFSET_EPSILON};
use comocma::problems::{make_problem, BiObjectiveProblem, DiagonalKind, DiagonalSpec, ProblemClass, RotationSeeds};
use comocma::{ObjectivePair, ReferencePoint, Sofomore, SofomoreConfig};
use rand::Rng;
use serde::Deserialize;

pub const R: f64 = 1.1;

pub fn r11() -> ReferencePoint {
    ReferencePoint::new(R, R).unwrap()
}

pub fn op(f1: f64, f2: f64) -> ObjectivePair {
    ObjectivePair::new(f1, f2).unwrap()
}

/// Reference Pareto front of every sep-1 problem: `f2 = (1 - sqrt(f1))^2`.
pub fn front_curve(t: f64) -> f64 {
    (1.0 - t.sqrt()).powi(2)
}

pub fn sep1(kind: DiagonalKind, n: usize) -> BiObjectiveProblem {
    make_problem(ProblemClass::SepK(1), DiagonalSpec::new(kind, n).unwrap(), RotationSeeds::default()).unwrap()
}

pub fn bi_sphere(n: usize) -> BiObjectiveProblem {
    sep1(DiagonalKind::Sphere, n)
}

pub fn config(p: usize, n: usize, sigma0: f64, lo: f64, hi: f64, seed: u64) -> SofomoreConfig {
    SofomoreConfig::new(p, sigma0, vec![lo; n], vec![hi; n], r11(), seed)
}

pub fn state(problem: BiObjectiveProblem, cfg: &SofomoreConfig) -> Sofomore<BiObjectiveProblem> {
    Sofomore::new(problem, cfg).unwrap()
}

/// Random mutually non-dominated points strictly inside `[0, 1.1)^2`.
pub fn random_front_points<G: Rng>(rng: &mut G, max_len: usize) -> Vec<ObjectivePair> {
    let m = rng.random_range(0..=max_len);
    let raw: Vec<(f64, f64)> = (0..m)
        .map(|_| (rng.random_range(0.0..R), rng.random_range(0.0..R)))
        .collect();
    raw.iter()
        .filter(|a| !raw.iter().any(|b| b != *a && b.0 <= a.0 && b.1 <= a.1))
        .map(|&(x, y)| op(x, y))
        .collect()
}

// ---- hypervolume oracles ----

pub fn mc_hypervolume<G: Rng>(rng: &mut G, pts: &[ObjectivePair], samples: usize) -> f64 {
    let hits = (0..samples)
        .filter(|_| {
            let (x, y) = (rng.random_range(0.0..R), rng.random_range(0.0..R));
            pts.iter().any(|p| p.f1() <= x && p.f2() <= y)
        })
        .count();
    hits as f64 / samples as f64 * R * R
}

/// Area of the union of boxes `[f, r]` by inclusion-exclusion over subsets.
pub fn inclusion_exclusion(pts: &[ObjectivePair], r: (f64, f64)) -> f64 {
    let m = pts.len();
    let mut total = 0.0;
    for mask in 1u32..(1 << m) {
        let (mut x, mut y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (i, p) in pts.iter().enumerate() {
            if mask & (1 << i) != 0 {
                x = x.max(p.f1());
                y = y.max(p.f2());
            }
        }
        let area = (r.0 - x).max(0.0) * (r.1 - y).max(0.0);
        total += if mask.count_ones() % 2 == 1 { area } else { -area };
    }
    total
}

/// Area of the union of boxes `[f, r]` on the grid spanned by all coordinates.
pub fn union_area(pts: &[ObjectivePair], r: (f64, f64)) -> f64 {
    let inside: Vec<_> = pts.iter().filter(|p| p.f1() < r.0 && p.f2() < r.1).collect();
    let mut xs: Vec<f64> = inside.iter().map(|p| p.f1()).chain([r.0]).collect();
    let mut ys: Vec<f64> = inside.iter().map(|p| p.f2()).chain([r.1]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for wx in xs.windows(2) {
        for wy in ys.windows(2) {
            let covered = inside.iter().any(|p| p.f1() <= wx[0] && p.f2() <= wy[0]);
            if covered {
                area += (wx[1] - wx[0]) * (wy[1] - wy[0]);
            }
        }
    }
    area
}

/// Area of the cells covered by the box of `q` but by no box of `pts`.
pub fn hvi_oracle(pts: &[ObjectivePair], q: ObjectivePair) -> f64 {
    if !(q.f1() < R && q.f2() < R) {
        return 0.0;
    }
    let inside: Vec<_> = pts.iter().filter(|p| p.f1() < R && p.f2() < R).collect();
    let mut xs: Vec<f64> = inside.iter().map(|p| p.f1()).filter(|&x| x > q.f1()).chain([q.f1(), R]).collect();
    let mut ys: Vec<f64> = inside.iter().map(|p| p.f2()).filter(|&y| y > q.f2()).chain([q.f2(), R]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for wx in xs.windows(2) {
        for wy in ys.windows(2) {
            let covered = inside.iter().any(|p| p.f1() <= wx[0] && p.f2() <= wy[0]);
            if !covered {
                area += (wx[1] - wx[0]) * (wy[1] - wy[0]);
            }
        }
    }
    area
}

/// Corner points of the attainment boundary, from the upper-left ray end
/// to the lower-right one; rays are truncated at `-far`.
pub fn epf_polyline(pts: &[ObjectivePair], far: f64) -> Vec<(f64, f64)> {
    let mut nd: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| p.f1() < R && p.f2() < R)
        .filter(|a| !pts.iter().any(|b| b != *a && b.f1() <= a.f1() && b.f2() <= a.f2()))
        .map(|p| (p.f1(), p.f2()))
        .collect();
    nd.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut poly = vec![(-far, R)];
    let mut level = R;
    for &(x, y) in &nd {
        poly.push((x, level));
        poly.push((x, y));
        level = y;
    }
    poly.push((R, level));
    poly.push((R, -far));
    poly
}

/// Distance to the boundary by sampling every segment densely.
pub fn sampled_distance(poly: &[(f64, f64)], q: (f64, f64), per_unit: f64) -> f64 {
    let mut best = f64::INFINITY;
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let steps = ((len * per_unit).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            best = best.min(((x - q.0).powi(2) + (y - q.1).powi(2)).sqrt());
        }
    }
    best
}

// ---- optimal p-distribution on the sep-1 front ----

/// Maximizes `(b - t)(c - g(t))` over `t = s^2`, `s` in `[0, sqrt(min(b, 1))]`,
/// by bisection on the sign of the derivative in `s`.
fn best_coordinate(c: f64, b: f64) -> f64 {
    let dh = |s: f64| -2.0 * s * (c - (1.0 - s).powi(2)) + 2.0 * (b - s * s) * (1.0 - s);
    let (mut lo, mut hi) = (0.0_f64, b.min(1.0).sqrt());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dh(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    s * s
}

/// Hypervolume of the optimal p-distribution on the sep-1 front w.r.t. (1.1, 1.1),
/// by coordinate ascent over the first objectives of the p points.
pub fn optimal_p_hypervolume(p: usize) -> f64 {
    let mut ts: Vec<f64> = (0..p).map(|i| (i as f64 + 0.5) / p as f64).collect();
    for _ in 0..100_000 {
        let mut change = 0.0_f64;
        for i in 0..p {
            let c = if i == 0 { R } else { front_curve(ts[i - 1]) };
            let b = if i + 1 == p { R } else { ts[i + 1] };
            let t = best_coordinate(c, b);
            change = change.max((t - ts[i]).abs());
            ts[i] = t;
        }
        if change < 1e-15 {
            break;
        }
    }
    let pts: Vec<ObjectivePair> = ts.iter().map(|&t| op(t, front_curve(t))).collect();
    let mut hv = 0.0;
    for (i, q) in pts.iter().enumerate() {
        let next = pts.get(i + 1).map_or(R, |n| n.f1());
        hv += (next - q.f1()) * (R - q.f2());
    }
    hv
}

// ---- fixture offsets ----

#[derive(Debug, Deserialize)]
pub struct FixtureEntry {
    pub hv_max: f64,
    pub hvarchive_max: f64,
}

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/offsets.json")
}

pub fn fixtures() -> BTreeMap<String, FixtureEntry> {
    let text = std::fs::read_to_string(fixture_path()).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Pinned offsets for `key`; the same epsilon as persisted offsets keeps gaps positive.
pub fn fixture_offsets(key: &str) -> GapOffsets {
    let all = fixtures();
    let e = all.get(key).unwrap_or_else(|| panic!("no fixture for {key}"));
    GapOffsets {
        problem_key: key.to_string(),
        hv_max: e.hv_max + OFFSET_EPSILON,
        hv_max_source: OffsetSource::Analytic,
        hvarchive_max: e.hvarchive_max,
        hvarchive_source: OffsetSource::Analytic,
    }
}
