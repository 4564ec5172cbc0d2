//! Cooperative multiobjective optimization with `p` single-objective
//! CMA-ES kernels.
//!
//! Each kernel maximizes the uncrowded hypervolume improvement of its
//! samples with respect to the incumbents of all other kernels. Kernels are
//! visited once per epoch in a uniformly random order, one ask/tell
//! iteration per visit. After each visit the new mean is evaluated and its
//! objective vector replaces the cached one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cma::CmaState;
use crate::error::{invalid, Result};
use crate::hv::{Archive, ObjectivePair, ParetoFront, ReferencePoint, UhviValue};
use crate::problems::BiObjective;

const STREAM_INIT: u64 = 0;
const STREAM_SCHEDULER: u64 = 1;
const STREAM_KERNEL_SEEDS: u64 = 2;
/// Stream reserved for run-level choices outside the framework (e.g. which
/// kernels get their spectra logged).
pub const STREAM_HARNESS: u64 = 3;

/// Generator on one of the independent streams of the master seed.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn derived_kernel_seeds(seed: u64, p: usize) -> Vec<u64> {
    let mut rng = derived_rng(seed, STREAM_KERNEL_SEEDS);
    (0..p).map(|_| rng.random()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Each kernel sees the incumbents updated by its predecessors.
    #[default]
    Sequential,
    /// All kernels of an epoch see the incumbents frozen at epoch start.
    Postponed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationScheduler {
    permutation: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl PermutationScheduler {
    pub fn new(p: usize, rng: ChaCha8Rng) -> Self {
        Self {
            permutation: (0..p).collect(),
            cursor: p,
            rng,
        }
    }

    pub fn current_permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Draws a fresh uniform permutation and rewinds the cursor.
    pub fn draw(&mut self) -> &[usize] {
        self.permutation.sort_unstable();
        self.permutation.shuffle(&mut self.rng);
        self.cursor = 0;
        &self.permutation
    }

    /// Next kernel in the current permutation, drawing a new one when the
    /// current permutation is exhausted.
    pub fn next_kernel(&mut self) -> usize {
        if self.cursor >= self.permutation.len() {
            self.draw();
        }
        let i = self.permutation[self.cursor];
        self.cursor += 1;
        i
    }
}

#[derive(Debug, Clone)]
pub struct SofomoreConfig {
    pub p: usize,
    pub sigma0: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub reference: ReferencePoint,
    pub seed: u64,
    pub mode: UpdateMode,
    /// Population size override for every kernel.
    pub lambda: Option<usize>,
    /// Worker threads for postponed epochs.
    pub workers: usize,
}

impl SofomoreConfig {
    pub fn new(p: usize, sigma0: f64, lower: Vec<f64>, upper: Vec<f64>, reference: ReferencePoint, seed: u64) -> Self {
        Self {
            p,
            sigma0,
            lower,
            upper,
            reference,
            seed,
            mode: UpdateMode::Sequential,
            lambda: None,
            workers: 1,
        }
    }
}

/// What happened during one kernel visit.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub kernel: usize,
    pub offspring: Vec<ObjectivePair>,
    pub fitness: Vec<UhviValue>,
    pub mean_objectives: ObjectivePair,
}

impl StepReport {
    pub fn evaluations(&self) -> u64 {
        self.offspring.len() as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub permutation: Vec<usize>,
    /// Sequential: in visiting order. Postponed: in kernel-index order.
    pub steps: Vec<StepReport>,
}

pub struct Sofomore<P> {
    problem: P,
    kernels: Vec<CmaState>,
    incumbent_objs: Vec<ObjectivePair>,
    reference: ReferencePoint,
    archive: Archive,
    eval_count: u64,
    kernel_steps: u64,
    scheduler: PermutationScheduler,
    mode: UpdateMode,
    kernel_seeds: Vec<u64>,
    pool: Option<rayon::ThreadPool>,
}

/// One ask/tell iteration of `kernel` on the UHVI against `front`.
fn advance_kernel<P: BiObjective>(
    problem: &P,
    kernel: &mut CmaState,
    front: &ParetoFront,
    index: usize,
) -> Result<StepReport> {
    let candidates = kernel.ask()?;
    let mut offspring = Vec::with_capacity(candidates.len());
    let mut fitness = Vec::with_capacity(candidates.len());
    let mut told = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let f = problem.evaluate(&c.x)?;
        let u = front.uhvi(&f);
        // the kernel minimizes
        told.push((c.id, -u.value));
        offspring.push(f);
        fitness.push(u);
    }
    kernel.tell(&told)?;
    let mean_objectives = problem.evaluate(kernel.mean())?;
    Ok(StepReport {
        kernel: index,
        offspring,
        fitness,
        mean_objectives,
    })
}

impl<P: BiObjective> Sofomore<P> {
    pub fn new(problem: P, config: &SofomoreConfig) -> Result<Self> {
        let n = problem.dimension();
        let p = config.p;
        if p < 1 {
            return Err(invalid("at least one kernel is required"));
        }
        if config.lower.len() != n || config.upper.len() != n {
            return Err(invalid(format!(
                "bounds have lengths {} and {}, expected {n}",
                config.lower.len(),
                config.upper.len()
            )));
        }
        if config.lower.iter().zip(&config.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(invalid("lower bounds must be strictly below upper bounds"));
        }
        if !(config.sigma0 > 0.0 && config.sigma0.is_finite()) {
            return Err(invalid(format!("initial step-size {} must be positive", config.sigma0)));
        }

        let mut init_rng = derived_rng(config.seed, STREAM_INIT);
        let starts: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                config
                    .lower
                    .iter()
                    .zip(&config.upper)
                    .map(|(l, u)| init_rng.random_range(*l..*u))
                    .collect()
            })
            .collect();

        let mut incumbent_objs = Vec::with_capacity(p);
        let mut archive = Archive::new(config.reference);
        for x in &starts {
            let f = problem.evaluate(x)?;
            archive.insert(f);
            incumbent_objs.push(f);
        }

        let kernel_seeds = derived_kernel_seeds(config.seed, p);
        let kernels = starts
            .iter()
            .zip(&kernel_seeds)
            .map(|(x, s)| CmaState::with_lambda(x, config.sigma0, *s, config.lambda))
            .collect::<Result<Vec<_>>>()?;

        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?,
            )
        } else {
            None
        };

        Ok(Self {
            problem,
            kernels,
            incumbent_objs,
            reference: config.reference,
            archive,
            eval_count: p as u64,
            kernel_steps: 0,
            scheduler: PermutationScheduler::new(p, derived_rng(config.seed, STREAM_SCHEDULER)),
            mode: config.mode,
            kernel_seeds,
            pool,
        })
    }

    pub fn p(&self) -> usize {
        self.kernels.len()
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn kernels(&self) -> &[CmaState] {
        &self.kernels
    }

    pub fn kernel_seeds(&self) -> &[u64] {
        &self.kernel_seeds
    }

    pub fn incumbents(&self) -> Vec<Vec<f64>> {
        self.kernels.iter().map(CmaState::incumbent).collect()
    }

    pub fn incumbent_objectives(&self) -> &[ObjectivePair] {
        &self.incumbent_objs
    }

    pub fn reference(&self) -> &ReferencePoint {
        &self.reference
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    pub fn kernel_steps(&self) -> u64 {
        self.kernel_steps
    }

    pub fn scheduler(&self) -> &PermutationScheduler {
        &self.scheduler
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    /// Evaluations consumed by one kernel visit.
    pub fn evaluations_per_step(&self) -> u64 {
        self.kernels[0].lambda() as u64 + 1
    }

    /// Non-dominated front of all cached incumbent objective vectors.
    pub fn incumbent_front(&self) -> ParetoFront {
        ParetoFront::from_points(self.reference, &self.incumbent_objs)
    }

    /// Front of the incumbents of every kernel except `i`.
    pub fn subspace_front(&self, i: usize) -> Result<ParetoFront> {
        self.check_index(i)?;
        let others = self
            .incumbent_objs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, f)| f);
        Ok(ParetoFront::from_points(self.reference, others))
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.p() {
            return Err(invalid(format!("kernel index {i} out of range 0..{}", self.p())));
        }
        Ok(())
    }

    /// UHVI of `x` against the incumbents of all kernels but `i`. Costs one
    /// objective evaluation.
    pub fn subspace_fitness(&mut self, i: usize, x: &[f64]) -> Result<UhviValue> {
        let front = self.subspace_front(i)?;
        let f = self.problem.evaluate(x)?;
        self.eval_count += 1;
        Ok(front.uhvi(&f))
    }

    fn absorb(&mut self, report: &StepReport) {
        self.eval_count += report.evaluations();
        self.kernel_steps += 1;
        self.incumbent_objs[report.kernel] = report.mean_objectives;
        for f in report.offspring.iter().chain(std::iter::once(&report.mean_objectives)) {
            self.archive.insert(*f);
        }
    }

    pub fn step_kernel(&mut self, i: usize) -> Result<StepReport> {
        let front = self.subspace_front(i)?;
        let report = advance_kernel(&self.problem, &mut self.kernels[i], &front, i)?;
        self.absorb(&report);
        Ok(report)
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let permutation = self.scheduler.draw().to_vec();
        let steps = match self.mode {
            UpdateMode::Sequential => {
                let mut steps = Vec::with_capacity(permutation.len());
                for &i in &permutation {
                    steps.push(self.step_kernel(i)?);
                }
                self.scheduler.cursor = permutation.len();
                steps
            }
            UpdateMode::Postponed => {
                let fronts = (0..self.p())
                    .map(|i| self.subspace_front(i))
                    .collect::<Result<Vec<_>>>()?;
                let problem = &self.problem;
                let kernels = &mut self.kernels;
                let work = || {
                    kernels
                        .par_iter_mut()
                        .zip(fronts.par_iter())
                        .enumerate()
                        .map(|(i, (k, front))| advance_kernel(problem, k, front, i))
                        .collect::<Vec<_>>()
                };
                let results = match &self.pool {
                    Some(pool) => pool.install(work),
                    None => kernels
                        .iter_mut()
                        .zip(&fronts)
                        .enumerate()
                        .map(|(i, (k, front))| advance_kernel(problem, k, front, i))
                        .collect(),
                };
                let steps = results.into_iter().collect::<Result<Vec<_>>>()?;
                for s in &steps {
                    self.absorb(s);
                }
                self.scheduler.cursor = permutation.len();
                steps
            }
        };
        Ok(EpochReport { permutation, steps })
    }

    /// Runs whole epochs until at least `budget` evaluations are spent,
    /// calling `on_epoch` after each one. Returns the number of epochs.
    pub fn run<F>(&mut self, budget: u64, mut on_epoch: F) -> Result<usize>
    where
        F: FnMut(&Self, &EpochReport) -> Result<()>,
    {
        let mut epochs = 0;
        while self.eval_count < budget {
            let report = self.run_epoch()?;
            on_epoch(self, &report)?;
            epochs += 1;
        }
        Ok(epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, DiagonalKind, DiagonalSpec, ProblemClass};

    fn bisphere(n: usize) -> crate::problems::BiObjectiveProblem {
        make_problem(
            ProblemClass::One,
            DiagonalSpec::new(DiagonalKind::Sphere, n).unwrap(),
            Default::default(),
        )
        .unwrap()
    }

    fn config(p: usize, n: usize, seed: u64) -> SofomoreConfig {
        SofomoreConfig::new(
            p,
            0.2,
            vec![0.0; n],
            vec![1.0; n],
            ReferencePoint::new(1.1, 1.1).unwrap(),
            seed,
        )
    }

    #[test]
    fn scheduler_yields_permutations() {
        let mut s = PermutationScheduler::new(7, derived_rng(3, STREAM_SCHEDULER));
        for _ in 0..5 {
            let mut seen: Vec<usize> = (0..7).map(|_| s.next_kernel()).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
            assert_eq!(s.cursor(), 7);
        }
    }

    #[test]
    fn single_kernel_init() {
        let s = Sofomore::new(bisphere(3), &config(1, 3, 0)).unwrap();
        assert_eq!(s.p(), 1);
        assert_eq!(s.eval_count(), 1);
        assert_eq!(s.problem().evaluation_count(), 1);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Sofomore::new(bisphere(4), &config(5, 4, 17)).unwrap();
        let b = Sofomore::new(bisphere(4), &config(5, 4, 17)).unwrap();
        let c = Sofomore::new(bisphere(4), &config(5, 4, 18)).unwrap();
        assert_eq!(a.incumbents(), b.incumbents());
        assert_ne!(a.incumbents(), c.incumbents());
        for x in a.incumbents() {
            assert!(x.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn init_validation() {
        let mut c = config(0, 3, 0);
        assert!(Sofomore::new(bisphere(3), &c).is_err());
        c = config(2, 3, 0);
        c.lower = vec![0.0, 2.0, 0.0];
        assert!(Sofomore::new(bisphere(3), &c).is_err());
        c = config(2, 3, 0);
        c.upper = vec![1.0; 2];
        assert!(Sofomore::new(bisphere(3), &c).is_err());
        c = config(2, 3, 0);
        c.sigma0 = 0.0;
        assert!(Sofomore::new(bisphere(3), &c).is_err());
    }

    #[test]
    fn single_kernel_fitness_is_box_area() {
        let mut s = Sofomore::new(bisphere(2), &config(1, 2, 1)).unwrap();
        let u = s.subspace_fitness(0, &[0.3, 0.3]).unwrap();
        // f = (0.18 / 2, 0.98 / 2)
        assert!((u.value - (1.1 - 0.09) * (1.1 - 0.49)).abs() < 1e-12);
        assert!(s.subspace_fitness(1, &[0.3, 0.3]).is_err());
        assert_eq!(s.eval_count(), 2);
    }

    #[test]
    fn step_kernel_costs_lambda_plus_one() {
        let mut s = Sofomore::new(bisphere(10), &config(3, 10, 2)).unwrap();
        let before = s.eval_count();
        let hv_before = s.archive().hypervolume();
        let rep = s.step_kernel(1).unwrap();
        assert_eq!(rep.evaluations(), 11);
        assert_eq!(s.eval_count() - before, 11);
        assert!(s.archive().hypervolume() >= hv_before);
        assert_eq!(s.incumbent_objectives()[1], rep.mean_objectives);
    }

    #[test]
    fn epoch_accounting_in_both_modes() {
        for mode in [UpdateMode::Sequential, UpdateMode::Postponed] {
            let mut c = config(4, 5, 3);
            c.mode = mode;
            let mut s = Sofomore::new(bisphere(5), &c).unwrap();
            for _ in 0..3 {
                let before = s.eval_count();
                s.run_epoch().unwrap();
                assert_eq!(s.eval_count() - before, 4 * 9);
            }
            assert_eq!(s.eval_count(), 4 + s.kernel_steps() * 9);
            assert_eq!(s.eval_count(), s.problem().evaluation_count());
        }
    }

    #[test]
    fn run_with_exhausted_budget_does_nothing() {
        let mut s = Sofomore::new(bisphere(3), &config(2, 3, 4)).unwrap();
        let epochs = s.run(2, |_, _| Ok(())).unwrap();
        assert_eq!(epochs, 0);
        assert_eq!(s.eval_count(), 2);
    }
}
