//! (mu/mu_w, lambda)-CMA-ES with an ask-and-tell interface.
//!
//! Fitness is minimized. The optimizer never stops by itself; callers decide
//! when to stop and may pause and resume between any two iterations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Strategy parameters derived from the dimension and population size.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
    /// Iterations between two eigendecompositions of the covariance matrix.
    pub eigen_interval: u64,
}

impl CmaParams {
    pub fn default_lambda(n: usize) -> usize {
        4 + (3.0 * (n as f64).ln()).floor() as usize
    }

    pub fn new(n: usize, lambda: Option<usize>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let lambda = lambda.unwrap_or_else(|| Self::default_lambda(n));
        if lambda < 2 {
            return Err(invalid(format!("population size {lambda} < 2")));
        }
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let eigen_interval = ((1.0 / (10.0 * nf * (c_1 + c_mu))).floor() as u64).max(1);

        Ok(Self {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
        })
    }
}

/// One sampled search point; `id` must be handed back to [`CmaState::tell`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingSample {
    first_id: u64,
    z: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    params: CmaParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    iteration: u64,
    // cov = basis * diag(scales^2) * basis^T as of the last decomposition
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    last_decomposition: u64,
    condition_number: f64,
    next_id: u64,
    pending: Option<PendingSample>,
    rng: ChaCha8Rng,
}

impl CmaState {
    pub fn new(x0: &[f64], sigma0: f64, seed: u64) -> Result<Self> {
        Self::with_lambda(x0, sigma0, seed, None)
    }

    pub fn with_lambda(x0: &[f64], sigma0: f64, seed: u64, lambda: Option<usize>) -> Result<Self> {
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("initial mean is not finite"));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(invalid(format!("initial step-size {sigma0} must be positive")));
        }
        let n = x0.len();
        let params = CmaParams::new(n, lambda)?;
        Ok(Self {
            params,
            mean: DVector::from_column_slice(x0),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            iteration: 0,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            last_decomposition: 0,
            condition_number: 1.0,
            next_id: 0,
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn params(&self) -> &CmaParams {
        &self.params
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// The current estimate of the optimum (the distribution mean).
    pub fn incumbent(&self) -> Vec<f64> {
        self.mean.as_slice().to_vec()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn path_sigma(&self) -> &[f64] {
        self.path_sigma.as_slice()
    }

    pub fn path_c(&self) -> &[f64] {
        self.path_c.as_slice()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Condition number of `cov` at the last eigendecomposition.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn has_pending_ask(&self) -> bool {
        self.pending.is_some()
    }

    /// Square roots of the eigenvalues of `cov`, ascending.
    pub fn sqrt_eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut v: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0).sqrt()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn ask(&mut self) -> Result<Vec<Candidate>> {
        if self.pending.is_some() {
            return Err(Error::Protocol("ask called twice without tell".into()));
        }
        let n = self.dimension();
        let lambda = self.params.lambda;
        let first_id = self.next_id;
        let mut z = Vec::with_capacity(lambda);
        let mut y = Vec::with_capacity(lambda);
        let mut out = Vec::with_capacity(lambda);
        for j in 0..lambda {
            let zj = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
            let yj = &self.basis * zj.component_mul(&self.scales);
            let x = &self.mean + &yj * self.sigma;
            out.push(Candidate {
                id: first_id + j as u64,
                x: x.as_slice().to_vec(),
            });
            z.push(zj);
            y.push(yj);
        }
        self.next_id += lambda as u64;
        self.pending = Some(PendingSample { first_id, z, y });
        Ok(out)
    }

    /// Updates the distribution from `(id, fitness)` pairs of the last ask.
    pub fn tell(&mut self, fitnesses: &[(u64, f64)]) -> Result<()> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Protocol("tell without a pending ask".into()))?;
        let lambda = self.params.lambda;
        if fitnesses.len() != lambda {
            return Err(Error::Protocol(format!(
                "expected {lambda} fitness values, got {}",
                fitnesses.len()
            )));
        }
        let mut by_slot: Vec<Option<f64>> = vec![None; lambda];
        for &(id, f) in fitnesses {
            let slot = id
                .checked_sub(pending.first_id)
                .filter(|s| *s < lambda as u64)
                .ok_or_else(|| Error::Protocol(format!("unknown candidate id {id}")))?
                as usize;
            if by_slot[slot].replace(f).is_some() {
                return Err(Error::Protocol(format!("duplicate candidate id {id}")));
            }
        }
        let values: Vec<f64> = by_slot.into_iter().map(|f| f.unwrap()).collect();
        if let Some(bad) = values.iter().find(|f| !f.is_finite()) {
            return Err(invalid(format!("non-finite fitness {bad}")));
        }
        let pending = self.pending.take().unwrap();
        let mut order: Vec<usize> = (0..lambda).collect();
        // values are finite; -0.0 and 0.0 tie
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
        self.update(&pending, &order[..self.params.mu]);
        Ok(())
    }

    fn update(&mut self, sample: &PendingSample, selected: &[usize]) {
        let n = self.dimension();
        let nf = n as f64;
        let p = &self.params;

        let mut y_w = DVector::zeros(n);
        let mut z_w = DVector::zeros(n);
        for (w, &k) in p.weights.iter().zip(selected) {
            y_w.axpy(*w, &sample.y[k], 1.0);
            z_w.axpy(*w, &sample.z[k], 1.0);
        }

        self.mean.axpy(self.sigma, &y_w, 1.0);

        // basis * z_w == cov^{-1/2} * y_w for the decomposition used at ask
        let cs_coeff = (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let whitened = &self.basis * &z_w;
        self.path_sigma *= 1.0 - p.c_sigma;
        self.path_sigma.axpy(cs_coeff, &whitened, 1.0);

        let ps_norm = self.path_sigma.norm();
        let decay = 1.0 - (1.0 - p.c_sigma).powf(2.0 * (self.iteration + 1) as f64);
        let h_sigma = ps_norm / decay.sqrt() / p.chi_n < 1.4 + 2.0 / (nf + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc_coeff = (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt();
        self.path_c *= 1.0 - p.c_c;
        self.path_c.axpy(h * cc_coeff, &y_w, 1.0);

        let c1_eff = p.c_1 * (1.0 - (1.0 - h) * p.c_c * (2.0 - p.c_c));
        self.cov *= 1.0 - c1_eff - p.c_mu;
        self.cov.ger(p.c_1, &self.path_c, &self.path_c, 1.0);
        for (w, &k) in p.weights.iter().zip(selected) {
            self.cov.ger(p.c_mu * w, &sample.y[k], &sample.y[k], 1.0);
        }
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;

        let log_step = (p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0);
        self.sigma *= log_step.min(1.0).exp();

        self.iteration += 1;
        if self.iteration - self.last_decomposition >= p.eigen_interval {
            self.decompose();
        }
    }

    fn decompose(&mut self) {
        let n = self.dimension();
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut values = eig.eigenvalues.clone();
        let max_ev = values.iter().cloned().fold(f64::MIN, f64::max);
        let floor = max_ev.abs().max(f64::MIN_POSITIVE) * 1e-20;
        let mut repaired = false;
        for v in values.iter_mut() {
            if !(*v > floor) {
                *v = floor;
                repaired = true;
            }
        }
        if repaired {
            let d = DMatrix::from_diagonal(&values);
            let rebuilt = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            self.cov = (&rebuilt + rebuilt.transpose()) * 0.5;
        }
        let min_ev = values.iter().cloned().fold(f64::MAX, f64::min);
        let max_ev = values.iter().cloned().fold(f64::MIN, f64::max);
        self.condition_number = max_ev / min_ev;
        self.scales = DVector::from_fn(n, |i, _| values[i].sqrt());
        self.basis = eig.eigenvectors;
        self.last_decomposition = self.iteration;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn step(es: &mut CmaState, f: impl Fn(&[f64]) -> f64) {
        let cands = es.ask().unwrap();
        let fit: Vec<(u64, f64)> = cands.iter().map(|c| (c.id, f(&c.x))).collect();
        es.tell(&fit).unwrap();
    }

    #[test]
    fn default_population_sizes() {
        assert_eq!(CmaParams::default_lambda(10), 10);
        assert_eq!(CmaParams::default_lambda(5), 8);
        let p = CmaParams::new(10, None).unwrap();
        assert_eq!(p.mu, 5);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.weights.windows(2).all(|w| w[0] > w[1] && w[1] > 0.0));
        for rate in [p.c_sigma, p.c_c, p.c_1, p.c_mu] {
            assert!(rate > 0.0 && rate <= 1.0);
        }
        assert!(p.d_sigma >= 1.0);
    }

    #[test]
    fn init_state() {
        let es = CmaState::new(&[0.0; 4], 1.0, 7).unwrap();
        assert_eq!(es.incumbent(), vec![0.0; 4]);
        assert_eq!(es.cov(), &DMatrix::identity(4, 4));
        assert_eq!(es.iteration(), 0);
        assert_eq!(es.sigma(), 1.0);
    }

    #[test]
    fn init_rejects_bad_arguments() {
        assert!(CmaState::new(&[f64::NAN, 0.0], 1.0, 0).is_err());
        assert!(CmaState::new(&[0.0, 0.0], 0.0, 0).is_err());
        assert!(CmaState::new(&[0.0, 0.0], -1.0, 0).is_err());
        assert!(CmaState::with_lambda(&[0.0, 0.0], 1.0, 0, Some(1)).is_err());
    }

    #[test]
    fn ask_sizes_and_determinism() {
        let mut a = CmaState::new(&[1.0; 10], 0.5, 42).unwrap();
        let mut b = CmaState::new(&[1.0; 10], 0.5, 42).unwrap();
        let ca = a.ask().unwrap();
        assert_eq!(ca.len(), 10);
        assert_eq!(ca, b.ask().unwrap());
    }

    #[test]
    fn tiny_sigma_samples_the_mean() {
        let mut es = CmaState::new(&[0.3, -0.2, 1.5], 1e-300, 1).unwrap();
        for c in es.ask().unwrap() {
            assert_eq!(c.x, vec![0.3, -0.2, 1.5]);
        }
    }

    #[test]
    fn ask_does_not_move_incumbent() {
        let mut es = CmaState::new(&[2.0, 1.0], 1.0, 3).unwrap();
        let before = es.incumbent();
        es.ask().unwrap();
        assert_eq!(es.incumbent(), before);
    }

    #[test]
    fn protocol_errors() {
        let mut es = CmaState::new(&[0.0; 3], 1.0, 0).unwrap();
        assert!(matches!(es.tell(&[]), Err(Error::Protocol(_))));
        let cands = es.ask().unwrap();
        assert!(matches!(es.ask(), Err(Error::Protocol(_))));

        let mut dup: Vec<(u64, f64)> = cands.iter().map(|c| (c.id, 0.0)).collect();
        dup[1].0 = dup[0].0;
        assert!(matches!(es.tell(&dup), Err(Error::Protocol(_))));

        let mut missing: Vec<(u64, f64)> = cands.iter().map(|c| (c.id, 0.0)).collect();
        missing.pop();
        assert!(matches!(es.tell(&missing), Err(Error::Protocol(_))));

        let mut stale: Vec<(u64, f64)> = cands.iter().map(|c| (c.id, 0.0)).collect();
        stale[0].0 = 999;
        assert!(matches!(es.tell(&stale), Err(Error::Protocol(_))));

        let mut nan: Vec<(u64, f64)> = cands.iter().map(|c| (c.id, 0.0)).collect();
        nan[2].1 = f64::NAN;
        assert!(matches!(es.tell(&nan), Err(Error::InvalidArgument(_))));

        // failed tells leave the ask pending
        let ok: Vec<(u64, f64)> = cands.iter().map(|c| (c.id, 0.0)).collect();
        es.tell(&ok).unwrap();
        assert_eq!(es.iteration(), 1);
    }

    #[test]
    fn tell_accepts_any_id_order() {
        let mut a = CmaState::new(&[1.0; 3], 1.0, 5).unwrap();
        let mut b = a.clone();
        let ca = a.ask().unwrap();
        b.ask().unwrap();
        let fit: Vec<(u64, f64)> = ca.iter().map(|c| (c.id, sphere(&c.x))).collect();
        let mut rev = fit.clone();
        rev.reverse();
        a.tell(&fit).unwrap();
        b.tell(&rev).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equal_fitness_does_not_crash() {
        let mut es = CmaState::new(&[1.0; 4], 1.0, 9).unwrap();
        let sigma0 = es.sigma();
        step(&mut es, |_| 1.0);
        assert_eq!(es.iteration(), 1);
        assert!(es.sigma() != sigma0);
        assert!(es.mean().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_offset_invariance() {
        let mut a = CmaState::new(&[1.0; 5], 0.7, 11).unwrap();
        let mut b = a.clone();
        for _ in 0..30 {
            step(&mut a, sphere);
            step(&mut b, |x| sphere(x) + 1.0);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn covariance_stays_healthy() {
        let elli = |x: &[f64]| -> f64 {
            let n = x.len();
            x.iter()
                .enumerate()
                .map(|(i, v)| 10f64.powf(6.0 * i as f64 / (n - 1) as f64) * v * v)
                .sum()
        };
        let mut es = CmaState::new(&[1.0; 6], 1.0, 2).unwrap();
        for _ in 0..300 {
            step(&mut es, elli);
            let c = es.cov();
            assert!((c - c.transpose()).amax() <= 1e-12);
            let eig = SymmetricEigen::new(c.clone());
            assert!(eig.eigenvalues.iter().all(|v| *v > 0.0));
            assert!(es.condition_number().is_finite());
        }
    }
}
