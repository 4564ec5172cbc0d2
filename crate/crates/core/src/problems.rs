//! Bi-objective convex-quadratic benchmark problems.
//!
//! Three classes are provided. `SepK(k)` has axis-aligned Hessians with
//! optima at `0` and `e_k`. `One` rotates both objectives by the same
//! orthogonal matrix with optima at `0` and the all-ones vector. `Two` uses
//! independent rotations for the two objectives.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hv::ObjectivePair;

/// Hypervolume of the Pareto front shared by all `SepK` and `One` problems
/// for the reference point (1.1, 1.1).
pub const SHARED_FRONT_HYPERVOLUME: f64 = 1.21 - 1.0 / 6.0;

/// Something the multiobjective framework can evaluate.
pub trait BiObjective: Sync {
    fn dimension(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<ObjectivePair>;
}

/// `(x - y)^T P (x - y)`.
pub fn quad(p: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n || p.nrows() != n || p.ncols() != n {
        return Err(invalid(format!(
            "dimension mismatch: P is {}x{}, x has {}, y has {}",
            p.nrows(),
            p.ncols(),
            n,
            y.len()
        )));
    }
    Ok(dense_quad(p, x, y))
}

fn dense_quad(p: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let w: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[(i, j)] * w[j];
        }
        acc += w[i] * row;
    }
    acc
}

fn diagonal_quad(d: &[f64], x: &[f64], y: &[f64]) -> f64 {
    d.iter()
        .zip(x.iter().zip(y))
        .map(|(di, (a, b))| {
            let w = a - b;
            di * w * w
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalKind {
    Sphere,
    Elli,
    Cigtab,
}

impl fmt::Display for DiagonalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagonalKind::Sphere => "sphere",
            DiagonalKind::Elli => "elli",
            DiagonalKind::Cigtab => "cigtab",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagonalSpec {
    pub kind: DiagonalKind,
    pub n: usize,
}

impl DiagonalSpec {
    pub fn new(kind: DiagonalKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("dimension {n} < 2")));
        }
        Ok(Self { kind, n })
    }
}

/// Diagonal entries of the Hessian for `spec`.
pub fn make_diagonal(spec: DiagonalSpec) -> Vec<f64> {
    let n = spec.n;
    match spec.kind {
        DiagonalKind::Sphere => vec![1.0; n],
        DiagonalKind::Elli => (0..n)
            .map(|i| 10f64.powf(6.0 * i as f64 / (n - 1) as f64))
            .collect(),
        DiagonalKind::Cigtab => (0..n)
            .map(|i| match i {
                0 => 1e-4,
                1 => 1e4,
                _ => 1.0,
            })
            .collect(),
    }
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with
/// the signs fixed so that `R` has a positive diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(invalid(format!("dimension {n} < 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        entries.push(StandardNormal.sample(&mut rng));
    }
    let gaussian = DMatrix::from_row_slice(n, n, &entries);
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
enum Hessian {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Hessian::Diagonal(d) => diagonal_quad(d, x, y),
            Hessian::Dense(p) => dense_quad(p, x, y),
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            Hessian::Dense(p) => p.clone(),
        }
    }
}

/// `quad(P, x, center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    hessian: Hessian,
    center: Vec<f64>,
    scale: f64,
}

impl QuadForm {
    fn new(hessian: Hessian, center: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("quadratic form scale {scale} must be positive")));
        }
        Ok(Self { hessian, center, scale })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.hessian.dense()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.hessian.eval(x, &self.center) / self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "class", content = "k", rename_all = "lowercase")]
pub enum ProblemClass {
    #[serde(rename = "sep")]
    SepK(usize),
    One,
    Two,
}

impl fmt::Display for ProblemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemClass::SepK(k) => write!(f, "sep-{k}"),
            ProblemClass::One => f.write_str("one"),
            ProblemClass::Two => f.write_str("two"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RotationSeeds {
    pub first: u64,
    pub second: u64,
}

pub struct BiObjectiveProblem {
    name: String,
    n: usize,
    obj1: QuadForm,
    obj2: QuadForm,
    evaluations: AtomicU64,
}

impl fmt::Debug for BiObjectiveProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BiObjectiveProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("evaluations", &self.evaluation_count())
            .finish()
    }
}

impl Clone for BiObjectiveProblem {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            n: self.n,
            obj1: self.obj1.clone(),
            obj2: self.obj2.clone(),
            evaluations: AtomicU64::new(self.evaluation_count()),
        }
    }
}

impl BiObjectiveProblem {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn objectives(&self) -> (&QuadForm, &QuadForm) {
        (&self.obj1, &self.obj2)
    }

    pub fn evaluation_count(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl BiObjective for BiObjectiveProblem {
    fn dimension(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: &[f64]) -> Result<ObjectivePair> {
        if x.len() != self.n {
            return Err(invalid(format!("point has dimension {}, expected {}", x.len(), self.n)));
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        ObjectivePair::new(self.obj1.value(x), self.obj2.value(x))
    }
}

fn rotated(diag: &[f64], rotation: &DMatrix<f64>) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
    let p = rotation.transpose() * d * rotation;
    (&p + p.transpose()) * 0.5
}

pub fn make_problem(
    class: ProblemClass,
    spec: DiagonalSpec,
    seeds: RotationSeeds,
) -> Result<BiObjectiveProblem> {
    let n = spec.n;
    if n < 2 {
        return Err(invalid(format!("dimension {n} < 2")));
    }
    let diag = make_diagonal(spec);
    let zeros = vec![0.0; n];
    let ones = vec![1.0; n];
    let skip_rotation = spec.kind == DiagonalKind::Sphere;
    let hessian_for = |seed: u64| -> Result<Hessian> {
        if skip_rotation {
            Ok(Hessian::Diagonal(diag.clone()))
        } else {
            Ok(Hessian::Dense(rotated(&diag, &random_orthogonal(n, seed)?)))
        }
    };

    let (obj1, obj2) = match class {
        ProblemClass::SepK(k) => {
            if k < 1 || k > n {
                return Err(invalid(format!("sep-k index {k} outside 1..={n}")));
            }
            let mut e_k = zeros.clone();
            e_k[k - 1] = 1.0;
            // quad(diag, 0, e_k) = diag[k-1]
            let scale = diag[k - 1];
            (
                QuadForm::new(Hessian::Diagonal(diag.clone()), zeros, scale)?,
                QuadForm::new(Hessian::Diagonal(diag.clone()), e_k, scale)?,
            )
        }
        ProblemClass::One => {
            let h = hessian_for(seeds.first)?;
            let scale = h.eval(&zeros, &ones);
            (
                QuadForm::new(h.clone(), zeros, scale)?,
                QuadForm::new(h, ones, scale)?,
            )
        }
        ProblemClass::Two => {
            let h1 = hessian_for(seeds.first)?;
            let h2 = hessian_for(seeds.second)?;
            let alpha = h1.eval(&zeros, &ones).max(h2.eval(&zeros, &ones));
            (
                QuadForm::new(h1, zeros, alpha)?,
                QuadForm::new(h2, ones, alpha)?,
            )
        }
    };

    Ok(BiObjectiveProblem {
        name: format!("{}-{}", spec.kind, class),
        n,
        obj1,
        obj2,
        evaluations: AtomicU64::new(0),
    })
}

/// Hypervolume of the true Pareto front at the reference point (1.1, 1.1),
/// if known in closed form.
pub fn true_front_value(class: ProblemClass) -> Option<f64> {
    match class {
        ProblemClass::SepK(_) | ProblemClass::One => Some(SHARED_FRONT_HYPERVOLUME),
        ProblemClass::Two => None,
    }
}
