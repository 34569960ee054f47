//! Monte Carlo checks of `dB²(N_t) = 2B(N_t)dB(N_t) + dN_t` and of the
//! distributional approximation `B(N_t) ≈ √N_t · Z`.
//!
//! The "actual" path is `B²(N_{t_k})` on the grid; the "conjectured" path is
//! the Euler–Maruyama sum `Σ_k [2B(N_{t_{k-1}})ΔB_k + ΔN_k]` built from the same
//! arrivals and increments. Per cell the two differ by `ΔB_k² - ΔN_k`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hawkes::{check_horizon, check_res, HawkesParams, Sampler};
use crate::rng::{par_ensemble, stream};
use crate::stats::{ks_critical_value, ks_p_value, ks_two_sample, Estimate, PairedHistogram};
use crate::variance_hawkes::{sample_terminal, variance_hawkes_with_rng, VarianceHawkesPath};

/// Bins used for value histograms.
pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItoExperimentConfig {
    pub params: HawkesParams,
    pub horizon: f64,
    pub res: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl ItoExperimentConfig {
    /// α = 600, β = 800, v = 5000, T = 1, RES = 2^20, sixteen runs.
    pub fn reference() -> Self {
        Self {
            params: HawkesParams {
                v: 5000.0,
                v0: 5000.0,
                alpha: 600.0,
                beta: 800.0,
            },
            horizon: 1.0,
            res: 1 << 20,
            n_paths: 16,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        check_horizon(self.horizon)?;
        check_res(self.res, 2)?;
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Both sides of the Itô identity along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoComparison {
    pub times: Vec<f64>,
    pub actual: Vec<f64>,
    pub conjectured: Vec<f64>,
    /// `100·(conjectured - actual)/actual`; 0 when both are 0, `+∞` when only
    /// `actual` is 0.
    pub pct_error: Vec<f64>,
    /// `Σ_{i≤j} [2B_{i-1}ξ_i + ξ_i²]` after each arrival (equals `B_j²`).
    pub per_jump_telescoped: Vec<f64>,
    /// `Σ_{i≤j} [2B_{i-1}ξ_i + 1]` after each arrival.
    pub per_jump_conjectured: Vec<f64>,
    pub histogram: PairedHistogram,
}

pub fn percentage_error(actual: f64, conjectured: f64) -> f64 {
    if actual == 0.0 {
        if conjectured == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        100.0 * (conjectured - actual) / actual
    }
}

impl ItoComparison {
    pub fn from_path(path: &VarianceHawkesPath) -> Self {
        let b = path.values();
        let counts = path.counts();
        let actual: Vec<f64> = b.iter().map(|x| x * x).collect();
        let mut conjectured = Vec::with_capacity(b.len());
        let mut acc = 0.0;
        conjectured.push(0.0);
        for k in 1..b.len() {
            acc += 2.0 * b[k - 1] * (b[k] - b[k - 1]) + (counts[k] - counts[k - 1]) as f64;
            conjectured.push(acc);
        }
        let pct_error = actual
            .iter()
            .zip(&conjectured)
            .map(|(&a, &c)| percentage_error(a, c))
            .collect();

        let mut level = 0.0;
        let (mut tele, mut conj) = (0.0, 0.0);
        let mut per_jump_telescoped = Vec::with_capacity(path.increments().len());
        let mut per_jump_conjectured = Vec::with_capacity(path.increments().len());
        for &xi in path.increments() {
            tele += 2.0 * level * xi + xi * xi;
            conj += 2.0 * level * xi + 1.0;
            level += xi;
            per_jump_telescoped.push(tele);
            per_jump_conjectured.push(conj);
        }
        let histogram = PairedHistogram::new(&actual, &conjectured, HISTOGRAM_BINS);
        Self {
            times: path.grid_times(),
            actual,
            conjectured,
            pct_error,
            per_jump_telescoped,
            per_jump_conjectured,
            histogram,
        }
    }

    pub fn terminal_gap(&self) -> f64 {
        self.actual.last().unwrap() - self.conjectured.last().unwrap()
    }

    /// `Σ (ξ_i² - 1)`: the exact per-jump gap between the two sides.
    pub fn per_jump_gap(&self) -> f64 {
        match (
            self.per_jump_telescoped.last(),
            self.per_jump_conjectured.last(),
        ) {
            (Some(t), Some(c)) => t - c,
            _ => 0.0,
        }
    }

    /// CSV `t, actual, conjectured`, keeping every `stride`-th grid point.
    pub fn write_trajectory_csv<W: Write>(&self, writer: W, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "actual", "conjectured"])?;
        for k in (0..self.times.len()).step_by(stride.max(1)) {
            w.write_record([
                self.times[k].to_string(),
                self.actual[k].to_string(),
                self.conjectured[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `t, pct_error`; singular points are written as `inf`.
    pub fn write_error_csv<W: Write>(&self, writer: W, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "pct_error"])?;
        for k in (0..self.times.len()).step_by(stride.max(1)) {
            w.write_record([self.times[k].to_string(), self.pct_error[k].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `bin_lo, bin_hi, actual, conjectured`.
    pub fn write_histogram_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_histogram(&self.histogram, ["actual", "conjectured"], writer)
    }
}

pub fn write_histogram<W: Write>(h: &PairedHistogram, names: [&str; 2], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", names[0], names[1]])?;
    for k in 0..h.bins() {
        w.write_record([
            h.edges[k].to_string(),
            h.edges[k + 1].to_string(),
            h.first[k].to_string(),
            h.second[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run `index` of the experiment (stream `index` of `cfg.seed`).
pub fn run_ito_path(cfg: &ItoExperimentConfig, index: usize) -> Result<ItoComparison> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, index as u64);
    let path = variance_hawkes_with_rng(&cfg.params, cfg.horizon, cfg.res, &mut rng)?;
    Ok(ItoComparison::from_path(&path))
}

/// First run of the experiment; deterministic in `cfg.seed`.
pub fn run_ito_experiment(cfg: &ItoExperimentConfig) -> Result<ItoComparison> {
    run_ito_path(cfg, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSummary {
    /// Share of non-singular grid points with `|error| ≤ 20%`.
    pub fraction_within_20pct: f64,
    /// Largest finite `|error|`.
    pub max_abs_error: f64,
    pub terminal_error: f64,
    /// Grid points where `actual = 0` but `conjectured ≠ 0`.
    pub singular_points: usize,
    pub points: usize,
}

pub fn percentage_error_summary(cmp: &ItoComparison) -> ErrorSummary {
    let finite: Vec<f64> = cmp
        .pct_error
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .collect();
    let within = finite.iter().filter(|e| e.abs() <= 20.0).count();
    ErrorSummary {
        fraction_within_20pct: if finite.is_empty() {
            1.0
        } else {
            within as f64 / finite.len() as f64
        },
        max_abs_error: finite.iter().fold(0.0, |m, e| m.max(e.abs())),
        terminal_error: *cmp.pct_error.last().unwrap(),
        singular_points: cmp.pct_error.len() - finite.len(),
        points: cmp.pct_error.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ItoEnsemble {
    pub config: ItoExperimentConfig,
    /// `actual(T) - conjectured(T)` per run.
    pub terminal_gaps: Vec<f64>,
    pub mean_gap: Estimate,
    pub mean_actual: Estimate,
    pub mean_conjectured: Estimate,
    pub summaries: Vec<ErrorSummary>,
}

/// Runs `cfg.n_paths` independent experiments in parallel.
pub fn run_ito_ensemble(cfg: &ItoExperimentConfig) -> Result<ItoEnsemble> {
    cfg.validate()?;
    let runs: Vec<(f64, f64, ErrorSummary)> = par_ensemble(cfg.seed, cfg.n_paths, |_, rng| {
        let path = variance_hawkes_with_rng(&cfg.params, cfg.horizon, cfg.res, rng)?;
        let cmp = ItoComparison::from_path(&path);
        Ok::<_, Error>((
            *cmp.actual.last().unwrap(),
            *cmp.conjectured.last().unwrap(),
            percentage_error_summary(&cmp),
        ))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let actual: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let conjectured: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let terminal_gaps: Vec<f64> = runs.iter().map(|r| r.0 - r.1).collect();
    Ok(ItoEnsemble {
        config: *cfg,
        mean_gap: Estimate::of_mean(&terminal_gaps),
        mean_actual: Estimate::of_mean(&actual),
        mean_conjectured: Estimate::of_mean(&conjectured),
        terminal_gaps,
        summaries: runs.into_iter().map(|r| r.2).collect(),
    })
}

/// One resolution of a refinement study on a fixed path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementPoint {
    pub res: usize,
    pub max_abs_error: f64,
    pub fraction_within_20pct: f64,
    pub terminal_conjectured: f64,
    /// `|conjectured(T) - per-jump conjectured(T)|`: the binning error.
    pub binning_gap: f64,
    /// Grid cells that received more than one arrival.
    pub merged_cells: usize,
}

/// Re-bins the same arrivals and increments (run `index`) at each resolution.
pub fn refinement_study(
    cfg: &ItoExperimentConfig,
    resolutions: &[usize],
    index: usize,
) -> Result<Vec<RefinementPoint>> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, index as u64);
    let base = variance_hawkes_with_rng(&cfg.params, cfg.horizon, 2, &mut rng)?;
    resolutions
        .iter()
        .map(|&res| {
            check_res(res, 2)?;
            let path = VarianceHawkesPath::from_parts(
                *base.params(),
                base.jumps().clone(),
                base.increments().to_vec(),
                res,
            )?;
            let cmp = ItoComparison::from_path(&path);
            let summary = percentage_error_summary(&cmp);
            let per_jump = cmp.per_jump_conjectured.last().copied().unwrap_or(0.0);
            let merged_cells = path.counts().windows(2).filter(|w| w[1] - w[0] > 1).count();
            Ok(RefinementPoint {
                res,
                max_abs_error: summary.max_abs_error,
                fraction_within_20pct: summary.fraction_within_20pct,
                terminal_conjectured: *cmp.conjectured.last().unwrap(),
                binning_gap: (cmp.conjectured.last().unwrap() - per_jump).abs(),
                merged_cells,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjectureReport {
    pub params: HawkesParams,
    pub horizon: f64,
    pub n_samples: usize,
    pub ks_distance: f64,
    pub ks_p_value: f64,
    pub ks_critical_1pct: f64,
    pub histogram: PairedHistogram,
    #[serde(skip)]
    pub subordinated: Vec<f64>,
    #[serde(skip)]
    pub scaled_normal: Vec<f64>,
}

/// Compares `n_samples` draws of `B(N_T)` with `n_samples` draws of `√N_T·Z`
/// built from independent counts and normals.
pub fn conjecture_check(
    params: &HawkesParams,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ConjectureReport> {
    params.validate()?;
    check_horizon(horizon)?;
    if n_samples < 2 {
        return Err(Error::InvalidInput("n_samples must be >= 2".to_string()));
    }
    let pairs: Vec<(f64, f64)> = par_ensemble(seed, n_samples, |i, _| {
        let mut first = stream(seed, 2 * i as u64);
        let mut second = stream(seed, 2 * i as u64 + 1);
        let b = sample_terminal(params, horizon, &mut first)?.value;
        let n = Sampler::Exact.sample(params, horizon, &mut second)?.len() as f64;
        let z: f64 = second.sample(StandardNormal);
        Ok::<_, Error>((b, n.sqrt() * z))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (subordinated, scaled_normal): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let ks_distance = ks_two_sample(&subordinated, &scaled_normal);
    Ok(ConjectureReport {
        params: *params,
        horizon,
        n_samples,
        ks_distance,
        ks_p_value: ks_p_value(ks_distance, n_samples, n_samples),
        ks_critical_1pct: ks_critical_value(0.01, n_samples, n_samples),
        histogram: PairedHistogram::new(&subordinated, &scaled_normal, HISTOGRAM_BINS),
        subordinated,
        scaled_normal,
    })
}
