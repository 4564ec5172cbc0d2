//! Convergence diagnostics: gap offsets, per-epoch run records and their
//! CSV form, non-dominated ratios and log-linear rate fits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hv::{dominates, Archive, ObjectivePair, ParetoFront, ReferencePoint};
use crate::problems::BiObjective;
use crate::sofomore::{derived_rng, EpochReport, Sofomore, STREAM_HARNESS};

/// Added once to stored maxima when offsets are read.
pub const OFFSET_EPSILON: f64 = 1e-14;

pub const RECORD_HEADER: &str = "epoch,evals_per_kernel,hv,hvarchive,convergence_gap,archive_gap,ratio_global,ratio_q25,ratio_q50,ratio_q75,sigma_min,sigma_med,sigma_max";
pub const EIGEN_HEADER: &str = "epoch,kernel_id,eig_index,sqrt_eig";

const LOGGED_KERNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSource {
    EmpiricalBest,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapOffsets {
    pub problem_key: String,
    pub hv_max: f64,
    pub hv_max_source: OffsetSource,
    pub hvarchive_max: f64,
    pub hvarchive_source: OffsetSource,
}

pub fn problem_key(problem_name: &str, n: usize, p: usize, reference: &ReferencePoint) -> String {
    format!("{problem_name}/n{n}/p{p}/r{},{}", reference.r1(), reference.r2())
}

pub fn convergence_gap(offsets: &GapOffsets, incumbents_front: &ParetoFront) -> f64 {
    offsets.hv_max - incumbents_front.hypervolume()
}

pub fn archive_gap(offsets: &GapOffsets, archive: &Archive) -> f64 {
    offsets.hvarchive_max - archive.hypervolume()
}

/// Raw maxima as persisted, before [`OFFSET_EPSILON`] is added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredOffsets {
    pub hv_max: f64,
    pub hvarchive_max: f64,
    pub source: OffsetSource,
}

/// Best hypervolumes seen per problem key, persisted as one JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffsetStore {
    entries: BTreeMap<String, StoredOffsets>,
}

impl OffsetStore {
    /// Reads a store; a missing file yields an empty store.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::Persistence(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::Persistence(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Option<&StoredOffsets> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, offsets: StoredOffsets) {
        self.entries.insert(key.into(), offsets);
    }

    /// Offsets for `key` as they would be read, without updating.
    pub fn read(&self, key: &str) -> Option<GapOffsets> {
        self.get(key).map(|s| GapOffsets {
            problem_key: key.to_string(),
            hv_max: s.hv_max + OFFSET_EPSILON,
            hv_max_source: OffsetSource::EmpiricalBest,
            hvarchive_max: match s.source {
                OffsetSource::Analytic => s.hvarchive_max,
                OffsetSource::EmpiricalBest => s.hvarchive_max + OFFSET_EPSILON,
            },
            hvarchive_source: s.source,
        })
    }
}

/// Merges one run's best hypervolumes into the store and returns the
/// offsets to use for that run. `analytic_archive` overrides the archive
/// offset when the true front hypervolume is known.
pub fn update_offsets(
    store: &mut OffsetStore,
    key: &str,
    observed_hv: f64,
    observed_archive_hv: f64,
    analytic_archive: Option<f64>,
) -> GapOffsets {
    let previous = store.get(key).cloned();
    let hv_max = previous.as_ref().map_or(observed_hv, |s| s.hv_max.max(observed_hv));
    let (hvarchive_max, source) = match analytic_archive {
        Some(v) => (v, OffsetSource::Analytic),
        None => (
            previous
                .as_ref()
                .filter(|s| s.source == OffsetSource::EmpiricalBest)
                .map_or(observed_archive_hv, |s| s.hvarchive_max.max(observed_archive_hv)),
            OffsetSource::EmpiricalBest,
        ),
    };
    store.insert(
        key,
        StoredOffsets {
            hv_max,
            hvarchive_max,
            source,
        },
    );
    store.read(key).expect("entry was just inserted")
}

/// Linear-interpolated quartiles (25, 50, 75 %).
pub fn quartiles(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [f64::NAN; 3];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [at(0.25), at(0.5), at(0.75)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NondominatedRatios {
    pub global: f64,
    pub per_kernel: Vec<f64>,
    pub quartiles: [f64; 3],
}

fn is_nondominated(candidate: &ObjectivePair, pool: &[ObjectivePair], reference: &ReferencePoint) -> bool {
    candidate.strictly_below(reference) && !pool.iter().any(|q| dominates(q, candidate))
}

/// Share of incumbents that are non-dominated and inside the reference box,
/// and for each kernel the share of its incumbent and latest offspring that
/// are non-dominated among themselves and the other incumbents.
///
/// `offspring[i]` holds kernel `i`'s latest batch, or is empty.
pub fn nondominated_ratios(
    incumbents: &[ObjectivePair],
    offspring: &[Vec<ObjectivePair>],
    reference: &ReferencePoint,
) -> NondominatedRatios {
    let p = incumbents.len();
    let global = incumbents
        .iter()
        .filter(|f| is_nondominated(f, incumbents, reference))
        .count() as f64
        / p as f64;
    let per_kernel: Vec<f64> = (0..p)
        .map(|i| {
            let batch = offspring.get(i).map_or(&[][..], Vec::as_slice);
            let mut pool = incumbents.to_vec();
            pool.extend_from_slice(batch);
            let own = std::iter::once(&incumbents[i]).chain(batch);
            let good = own.clone().filter(|f| is_nondominated(f, &pool, reference)).count();
            good as f64 / (batch.len() + 1) as f64
        })
        .collect();
    let quartiles = quartiles(&per_kernel);
    NondominatedRatios {
        global,
        per_kernel,
        quartiles,
    }
}

pub fn state_ratios<P: BiObjective>(state: &Sofomore<P>, last: Option<&EpochReport>) -> NondominatedRatios {
    let mut offspring = vec![Vec::new(); state.p()];
    if let Some(report) = last {
        for step in &report.steps {
            offspring[step.kernel] = step.offspring.clone();
        }
    }
    nondominated_ratios(state.incumbent_objectives(), &offspring, state.reference())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub epoch: usize,
    pub evals_per_kernel: f64,
    pub hv: f64,
    pub hvarchive: f64,
    pub convergence_gap: f64,
    pub archive_gap: f64,
    pub ratio_global: f64,
    pub ratio_quartiles: [f64; 3],
    pub sigma_stats: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenRow {
    pub epoch: usize,
    pub kernel_id: usize,
    pub eig_index: usize,
    pub sqrt_eig: f64,
}

/// Per-epoch time series of one run. Gaps stay NaN until
/// [`RunRecord::apply_offsets`] is called.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
    pub eigen: Vec<EigenRow>,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl RunRecord {
    pub fn max_hv(&self) -> f64 {
        self.rows.iter().map(|r| r.hv).fold(0.0, f64::max)
    }

    pub fn max_hvarchive(&self) -> f64 {
        self.rows.iter().map(|r| r.hvarchive).fold(0.0, f64::max)
    }

    pub fn apply_offsets(&mut self, offsets: &GapOffsets) {
        for row in &mut self.rows {
            row.convergence_gap = offsets.hv_max - row.hv;
            row.archive_gap = offsets.hvarchive_max - row.hvarchive;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(256 * (self.rows.len() + 1));
        out.push_str(RECORD_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.evals_per_kernel,
                r.hv,
                r.hvarchive,
                r.convergence_gap,
                r.archive_gap,
                r.ratio_global,
                r.ratio_quartiles[0],
                r.ratio_quartiles[1],
                r.ratio_quartiles[2],
                r.sigma_stats[0],
                r.sigma_stats[1],
                r.sigma_stats[2],
            ];
            let _ = write!(out, "{}", r.epoch);
            for v in fields {
                out.push(',');
                out.push_str(&fmt17(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn eigen_csv(&self) -> String {
        let mut out = String::from(EIGEN_HEADER);
        out.push('\n');
        for e in &self.eigen {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.kernel_id, e.eig_index, fmt17(e.sqrt_eig));
        }
        out
    }
}

/// Collects one [`RecordRow`] per epoch (plus one for the initial state).
#[derive(Debug, Clone)]
pub struct Recorder {
    logged_kernels: Vec<usize>,
    record: RunRecord,
}

impl Recorder {
    /// Chooses up to three kernels uniformly at random whose covariance
    /// spectra are logged for the whole run.
    pub fn new(p: usize, seed: u64, log_eigen: bool) -> Self {
        let logged_kernels = if log_eigen {
            let mut rng = derived_rng(seed, STREAM_HARNESS);
            let mut chosen = sample(&mut rng, p, LOGGED_KERNELS.min(p)).into_vec();
            chosen.sort_unstable();
            chosen
        } else {
            Vec::new()
        };
        Self {
            logged_kernels,
            record: RunRecord::default(),
        }
    }

    pub fn logged_kernels(&self) -> &[usize] {
        &self.logged_kernels
    }

    pub fn observe<P: BiObjective>(&mut self, state: &Sofomore<P>, last: Option<&EpochReport>) {
        let epoch = self.record.rows.len();
        let ratios = state_ratios(state, last);
        let mut sigmas: Vec<f64> = state.kernels().iter().map(|k| k.sigma()).collect();
        sigmas.sort_by(f64::total_cmp);
        let sigma_med = quartiles(&sigmas)[1];
        self.record.rows.push(RecordRow {
            epoch,
            evals_per_kernel: state.eval_count() as f64 / state.p() as f64,
            hv: state.incumbent_front().hypervolume(),
            hvarchive: state.archive().hypervolume(),
            convergence_gap: f64::NAN,
            archive_gap: f64::NAN,
            ratio_global: ratios.global,
            ratio_quartiles: ratios.quartiles,
            sigma_stats: [sigmas[0], sigma_med, sigmas[sigmas.len() - 1]],
        });
        for &k in &self.logged_kernels {
            for (idx, v) in state.kernels()[k].sqrt_eigenvalues().into_iter().enumerate() {
                self.record.eigen.push(EigenRow {
                    epoch,
                    kernel_id: k,
                    eig_index: idx,
                    sqrt_eig: v,
                });
            }
        }
    }

    pub fn finish(self) -> RunRecord {
        self.record
    }
}

/// Runs `state` until `budget` evaluations are spent and records every
/// epoch. Gaps are left for the caller to fill in.
pub fn record_run<P: BiObjective>(
    state: &mut Sofomore<P>,
    budget: u64,
    recorder: &mut Recorder,
) -> Result<usize> {
    recorder.observe(state, None);
    state.run(budget, |s, report| {
        recorder.observe(s, Some(report));
        Ok(())
    })
}

/// Least-squares fit of `log10(convergence_gap)` against evaluations per
/// kernel over `window` (row indices). Returns the slope and R².
pub fn linear_fit_rate(record: &RunRecord, window: Range<usize>) -> Result<(f64, f64)> {
    let rows = record
        .rows
        .get(window.clone())
        .ok_or_else(|| Error::UndefinedFit(format!("window {window:?} outside record")))?;
    if rows.len() < 2 {
        return Err(Error::UndefinedFit("fewer than two points in window".into()));
    }
    if let Some(bad) = rows.iter().find(|r| !(r.convergence_gap > 0.0)) {
        return Err(Error::UndefinedFit(format!(
            "non-positive convergence gap {} at epoch {}",
            bad.convergence_gap, bad.epoch
        )));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.evals_per_kernel).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.convergence_gap.log10()).collect();
    Ok(least_squares(&xs, &ys))
}

/// Slope and coefficient of determination of the line through `(xs, ys)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}
