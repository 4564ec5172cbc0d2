//! Python bindings: Pareto fronts and UHVI, a single CMA-ES, the benchmark
//! problems and the Sofomore driver.

use comocma::problems::make_problem;
use comocma::{
    BiObjective, BiObjectiveProblem, CmaState, DiagonalKind, DiagonalSpec, ObjectivePair, ProblemClass,
    ReferencePoint, RotationSeeds, Sofomore as CoreSofomore, SofomoreConfig, UhviBranch, UpdateMode,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: comocma::Error) -> PyErr {
    match e {
        comocma::Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn pair(f1: f64, f2: f64) -> PyResult<ObjectivePair> {
    ObjectivePair::new(f1, f2).map_err(to_py)
}

fn reference(r: (f64, f64)) -> PyResult<ReferencePoint> {
    ReferencePoint::new(r.0, r.1).map_err(to_py)
}

fn branch_name(b: UhviBranch) -> &'static str {
    match b {
        UhviBranch::Improvement => "improvement",
        UhviBranch::DistancePenalty => "distance",
    }
}

/// Sorted non-dominated set of objective pairs below a reference point.
#[pyclass(name = "ParetoFront")]
struct PyParetoFront {
    inner: comocma::ParetoFront,
}

#[pymethods]
impl PyParetoFront {
    #[new]
    #[pyo3(signature = (reference = (1.1, 1.1), points = Vec::new()))]
    fn new(reference: (f64, f64), points: Vec<(f64, f64)>) -> PyResult<Self> {
        let mut inner = comocma::ParetoFront::new(self::reference(reference)?);
        for (a, b) in points {
            inner.insert(pair(a, b)?);
        }
        Ok(Self { inner })
    }

    /// Returns whether the point entered the front.
    fn insert(&mut self, f1: f64, f2: f64) -> PyResult<bool> {
        Ok(self.inner.insert(pair(f1, f2)?).accepted)
    }

    fn hypervolume(&self) -> f64 {
        self.inner.hypervolume()
    }

    fn hvi(&self, f1: f64, f2: f64) -> PyResult<f64> {
        Ok(self.inner.hvi(&pair(f1, f2)?))
    }

    fn distance(&self, f1: f64, f2: f64) -> PyResult<f64> {
        Ok(self.inner.distance_to_front(&pair(f1, f2)?))
    }

    /// `(value, branch)` where branch is "improvement" or "distance".
    fn uhvi(&self, f1: f64, f2: f64) -> PyResult<(f64, &'static str)> {
        let u = self.inner.uhvi(&pair(f1, f2)?);
        Ok((u.value, branch_name(u.branch)))
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.inner.points().iter().map(|p| (p.f1(), p.f2())).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Ask-and-tell CMA-ES; `tell` takes fitness values in the order of the last `ask`.
#[pyclass(name = "CmaEs")]
struct PyCmaEs {
    inner: CmaState,
    pending: Vec<u64>,
}

#[pymethods]
impl PyCmaEs {
    #[new]
    #[pyo3(signature = (x0, sigma0, seed = 1, popsize = None))]
    fn new(x0: Vec<f64>, sigma0: f64, seed: u64, popsize: Option<usize>) -> PyResult<Self> {
        let inner = CmaState::with_lambda(&x0, sigma0, seed, popsize).map_err(to_py)?;
        Ok(Self { inner, pending: Vec::new() })
    }

    fn ask(&mut self) -> PyResult<Vec<Vec<f64>>> {
        let cands = self.inner.ask().map_err(to_py)?;
        self.pending = cands.iter().map(|c| c.id).collect();
        Ok(cands.into_iter().map(|c| c.x).collect())
    }

    fn tell(&mut self, fitnesses: Vec<f64>) -> PyResult<()> {
        if fitnesses.len() != self.pending.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} fitness values, got {}",
                self.pending.len(),
                fitnesses.len()
            )));
        }
        let pairs: Vec<(u64, f64)> = self.pending.iter().copied().zip(fitnesses).collect();
        self.inner.tell(&pairs).map_err(to_py)?;
        self.pending.clear();
        Ok(())
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    #[getter]
    fn popsize(&self) -> usize {
        self.inner.lambda()
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration()
    }

    fn incumbent(&self) -> Vec<f64> {
        self.inner.incumbent()
    }

    fn condition_number(&self) -> f64 {
        self.inner.condition_number()
    }
}

/// Bi-objective convex-quadratic benchmark problem.
#[pyclass(name = "Problem")]
struct PyProblem {
    inner: BiObjectiveProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (diag, n, problem = "sep", k = 1, rotation_seeds = (1, 2)))]
    fn new(diag: &str, n: usize, problem: &str, k: usize, rotation_seeds: (u64, u64)) -> PyResult<Self> {
        let class = match problem {
            "sep" => ProblemClass::SepK(k),
            "one" => ProblemClass::One,
            "two" => ProblemClass::Two,
            _ => return Err(PyValueError::new_err(format!("unknown problem class {problem:?}"))),
        };
        let kind: DiagonalKind = diag.parse().map_err(PyValueError::new_err)?;
        let spec = DiagonalSpec::new(kind, n).map_err(to_py)?;
        let seeds = RotationSeeds {
            first: rotation_seeds.0,
            second: rotation_seeds.1,
        };
        let inner = make_problem(class, spec, seeds).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        let f = self.inner.evaluate(&x).map_err(to_py)?;
        Ok((f.f1(), f.f2()))
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn evaluations(&self) -> u64 {
        self.inner.evaluation_count()
    }
}

/// p cooperating CMA-ES kernels maximizing the UHVI of their incumbents.
#[pyclass(name = "Sofomore")]
struct PySofomore {
    inner: CoreSofomore<BiObjectiveProblem>,
}

#[pymethods]
impl PySofomore {
    #[new]
    #[pyo3(signature = (problem, p, sigma0, lower, upper, reference = (1.1, 1.1), seed = 1, mode = "sequential", popsize = None, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        problem: &PyProblem,
        p: usize,
        sigma0: f64,
        lower: f64,
        upper: f64,
        reference: (f64, f64),
        seed: u64,
        mode: &str,
        popsize: Option<usize>,
        workers: usize,
    ) -> PyResult<Self> {
        let n = problem.inner.dimension();
        let mut cfg = SofomoreConfig::new(p, sigma0, vec![lower; n], vec![upper; n], self::reference(reference)?, seed);
        cfg.mode = mode.parse::<UpdateMode>().map_err(PyValueError::new_err)?;
        cfg.lambda = popsize;
        cfg.workers = workers;
        let inner = CoreSofomore::new(problem.inner.clone(), &cfg).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Runs one ask/tell step of kernel `i`; returns the evaluations spent.
    fn step_kernel(&mut self, i: usize) -> PyResult<u64> {
        Ok(self.inner.step_kernel(i).map_err(to_py)?.evaluations())
    }

    /// Visits every kernel once; returns the visiting order.
    fn run_epoch(&mut self) -> PyResult<Vec<usize>> {
        Ok(self.inner.run_epoch().map_err(to_py)?.permutation)
    }

    /// Runs epochs until the evaluation budget is spent; returns the number of epochs.
    fn run(&mut self, py: Python<'_>, budget: u64) -> PyResult<usize> {
        let inner = &mut self.inner;
        py.detach(|| inner.run(budget, |_, _| Ok(()))).map_err(to_py)
    }

    fn incumbents(&self) -> Vec<Vec<f64>> {
        self.inner.incumbents()
    }

    fn incumbent_objectives(&self) -> Vec<(f64, f64)> {
        self.inner.incumbent_objectives().iter().map(|f| (f.f1(), f.f2())).collect()
    }

    fn incumbent_hypervolume(&self) -> f64 {
        self.inner.incumbent_front().hypervolume()
    }

    fn archive_hypervolume(&self) -> f64 {
        self.inner.archive().hypervolume()
    }

    fn archive_points(&self) -> Vec<(f64, f64)> {
        self.inner.archive().iter().map(|f| (f.f1(), f.f2())).collect()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn eval_count(&self) -> u64 {
        self.inner.eval_count()
    }

    #[getter]
    fn kernel_steps(&self) -> u64 {
        self.inner.kernel_steps()
    }
}

#[pymodule]
pub fn pycomocma(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParetoFront>()?;
    m.add_class::<PyCmaEs>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySofomore>()?;
    Ok(())
}
