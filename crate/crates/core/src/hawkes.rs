//! Exponential-kernel Hawkes process `(N_t, λ_t)`.
//!
//! The intensity is
//!
//! ```text
//! λ_t = v + (v0 - v)·e^{-βt} + α·Σ_{T_r < t} e^{-β(t - T_r)}
//! ```
//!
//! so that `v0 = v` gives the classic stationary-baseline process. Two samplers
//! are provided: Ogata thinning and an exact inter-arrival sampler that uses the
//! Markov property of the excess intensity `λ_t - v`. They target the same law
//! and are cross-checked against each other in the tests.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};

/// Baseline `v`, initial intensity `v0`, excitation `alpha` and decay `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub v: f64,
    pub v0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HawkesParams {
    /// Parameters with `v0 = v`.
    pub fn new(v: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::with_initial_intensity(v, v, alpha, beta)
    }

    pub fn with_initial_intensity(v: f64, v0: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { v, v0, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.v) {
            return Err(Error::InvalidParams(format!(
                "v must be > 0, got {}",
                self.v
            )));
        }
        if !finite_pos(self.alpha) {
            return Err(Error::InvalidParams(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !finite_pos(self.beta) {
            return Err(Error::InvalidParams(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.v0.is_finite() && self.v0 >= self.v) {
            return Err(Error::InvalidParams(format!(
                "v0 must be >= v ({}), got {}",
                self.v, self.v0
            )));
        }
        if self.alpha == self.beta {
            return Err(Error::AlphaEqualsBeta(self.alpha));
        }
        Ok(())
    }

    /// `alpha < beta`. Unstable sets are allowed but callers may want to warn.
    pub fn is_stable(&self) -> bool {
        self.alpha < self.beta
    }

    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }

    /// Excess of the initial intensity over the baseline.
    pub fn initial_excess(&self) -> f64 {
        self.v0 - self.v
    }
}

/// Arrival times of one realisation of `N_t` on `(0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    horizon: f64,
    arrivals: Vec<f64>,
}

impl JumpPath {
    /// Validates that arrivals are strictly increasing and lie in `(0, horizon]`.
    pub fn new(horizon: f64, arrivals: Vec<f64>) -> Result<Self> {
        check_horizon(horizon)?;
        for (i, &t) in arrivals.iter().enumerate() {
            if !(t > 0.0 && t <= horizon) {
                return Err(Error::InvalidInput(format!(
                    "arrival {i} at {t} is outside (0, {horizon}]"
                )));
            }
            if i > 0 && t <= arrivals[i - 1] {
                return Err(Error::InvalidInput(format!(
                    "arrivals must be strictly increasing (index {i})"
                )));
            }
        }
        Ok(Self { horizon, arrivals })
    }

    pub fn empty(horizon: f64) -> Result<Self> {
        Self::new(horizon, Vec::new())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrivals
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// `N_t`: number of arrivals in `(0, t]` (right-continuous).
    pub fn count(&self, t: f64) -> usize {
        self.arrivals.partition_point(|&a| a <= t)
    }

    /// Number of arrivals strictly before `t` (the left limit `N_{t-}`).
    pub fn count_before(&self, t: f64) -> usize {
        self.arrivals.partition_point(|&a| a < t)
    }

    /// Gaps between consecutive arrivals, the first measured from time 0.
    pub fn inter_arrival_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.arrivals
            .iter()
            .map(|&t| {
                let gap = t - prev;
                prev = t;
                gap
            })
            .collect()
    }

    /// Writes the `arrival_time` CSV representation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["arrival_time"])?;
        for t in &self.arrivals {
            w.write_record([t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(horizon: f64, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("arrival_time") {
            return Err(Error::InvalidInput(
                "expected header `arrival_time`".to_string(),
            ));
        }
        let mut arrivals = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = rec.get(0).unwrap_or("");
            let t: f64 = field.trim().parse().map_err(|_| Error::Row {
                row: i + 2,
                message: format!("cannot parse arrival time {field:?}"),
            })?;
            arrivals.push(t);
        }
        Self::new(horizon, arrivals)
    }
}

/// `λ_t` along a fixed [`JumpPath`].
///
/// The excitation sum right after the k-th arrival is cached through the
/// recursion `S_k = 1 + S_{k-1}·e^{-β(T_k - T_{k-1})}`, so each evaluation is a
/// binary search plus one exponential.
#[derive(Debug, Clone)]
pub struct IntensityPath<'a> {
    params: HawkesParams,
    path: &'a JumpPath,
    excitation: Vec<f64>,
}

impl<'a> IntensityPath<'a> {
    pub fn new(params: HawkesParams, path: &'a JumpPath) -> Result<Self> {
        params.validate()?;
        let mut excitation = Vec::with_capacity(path.len());
        let mut prev: Option<(f64, f64)> = None;
        for &t in path.arrivals() {
            let s = match prev {
                None => 1.0,
                Some((tp, sp)) => 1.0 + sp * (-params.beta * (t - tp)).exp(),
            };
            excitation.push(s);
            prev = Some((t, s));
        }
        Ok(Self {
            params,
            path,
            excitation,
        })
    }

    pub fn params(&self) -> &HawkesParams {
        &self.params
    }

    /// Left-continuous intensity: arrivals at exactly `t` are not included.
    pub fn at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.path.horizon()).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.path.horizon(),
            });
        }
        Ok(self.eval(t))
    }

    fn eval(&self, t: f64) -> f64 {
        let p = &self.params;
        let base = p.v + p.initial_excess() * (-p.beta * t).exp();
        let k = self.path.count_before(t);
        if k == 0 {
            return base;
        }
        let last = self.path.arrivals()[k - 1];
        base + p.alpha * self.excitation[k - 1] * (-p.beta * (t - last)).exp()
    }

    /// Intensity just after the arrival with index `k`.
    pub fn after_arrival(&self, k: usize) -> f64 {
        let p = &self.params;
        let t = self.path.arrivals()[k];
        p.v + p.initial_excess() * (-p.beta * t).exp() + p.alpha * self.excitation[k]
    }

    /// Evaluates on the uniform grid `t_k = k·T/res`, `k = 0..=res`.
    pub fn on_grid(&self, res: usize) -> Result<Vec<f64>> {
        check_res(res, 1)?;
        let dt = self.path.horizon() / res as f64;
        Ok((0..=res).map(|k| self.eval(k as f64 * dt)).collect())
    }
}

/// `λ_t` on `path` (left limit at arrival times).
pub fn intensity_at(path: &JumpPath, params: &HawkesParams, t: f64) -> Result<f64> {
    IntensityPath::new(*params, path)?.at(t)
}

/// Index (1-based) of the grid cell `((k-1)Δt, kΔt]` containing `t`.
pub(crate) fn cell_of(t: f64, horizon: f64, res: usize) -> usize {
    let k = (t * res as f64 / horizon).ceil() as usize;
    k.clamp(1, res)
}

/// Bins arrivals onto `res` uniform cells; entry `k` counts arrivals in
/// `(0, kΔt]`. Each arrival is recorded at the right endpoint of its cell.
pub fn discretize(path: &JumpPath, res: usize) -> Result<Vec<u64>> {
    check_res(res, 1)?;
    let mut counts = vec![0u64; res + 1];
    for &t in path.arrivals() {
        counts[cell_of(t, path.horizon(), res)] += 1;
    }
    for k in 1..=res {
        counts[k] += counts[k - 1];
    }
    Ok(counts)
}

/// Simulation algorithm for [`JumpPath`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Thinning,
    Exact,
}

impl Sampler {
    pub fn sample(self, params: &HawkesParams, horizon: f64, rng: &mut SimRng) -> Result<JumpPath> {
        params.validate()?;
        check_horizon(horizon)?;
        let arrivals = match self {
            Sampler::Thinning => thinning_arrivals(params, horizon, rng),
            Sampler::Exact => exact_arrivals(params, horizon, rng),
        };
        Ok(JumpPath { horizon, arrivals })
    }
}

/// Ogata thinning, deterministic in `seed`.
pub fn simulate_thinning(params: &HawkesParams, horizon: f64, seed: u64) -> Result<JumpPath> {
    Sampler::Thinning.sample(params, horizon, &mut rng_from_seed(seed))
}

/// Exact inter-arrival sampling, deterministic in `seed`.
pub fn simulate_exact(params: &HawkesParams, horizon: f64, seed: u64) -> Result<JumpPath> {
    Sampler::Exact.sample(params, horizon, &mut rng_from_seed(seed))
}

fn unit_exp(rng: &mut SimRng) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln()
}

// Between arrivals the excess `x = λ - v` only decays, so the intensity just
// after the current time bounds it until the next arrival.
fn thinning_arrivals(p: &HawkesParams, horizon: f64, rng: &mut SimRng) -> Vec<f64> {
    let mut arrivals = Vec::new();
    let mut t = 0.0;
    let mut excess = p.initial_excess();
    loop {
        let bound = p.v + excess;
        let wait = unit_exp(rng) / bound;
        let next = t + wait;
        if next > horizon {
            break;
        }
        excess *= (-p.beta * wait).exp();
        let u: f64 = rng.random();
        if u * bound <= p.v + excess && next > t {
            excess += p.alpha;
            arrivals.push(next);
        }
        t = next;
    }
    arrivals
}

// Next arrival is the earlier of a baseline Poisson arrival (rate v) and the
// first arrival of the decaying excess, whose inverse CDF is explicit:
// P(S > s) = exp(-x(1 - e^{-βs})/β).
fn exact_arrivals(p: &HawkesParams, horizon: f64, rng: &mut SimRng) -> Vec<f64> {
    let mut arrivals = Vec::new();
    let mut t = 0.0;
    let mut excess = p.initial_excess();
    loop {
        let from_excess = if excess > 0.0 {
            let d = 1.0 - p.beta * unit_exp(rng) / excess;
            if d > 0.0 {
                -d.ln() / p.beta
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        let from_baseline = unit_exp(rng) / p.v;
        let wait = from_excess.min(from_baseline);
        let next = t + wait;
        if next > horizon {
            break;
        }
        excess = excess * (-p.beta * wait).exp() + p.alpha;
        if next > t {
            arrivals.push(next);
        }
        t = next;
    }
    arrivals
}

pub(crate) fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHorizon(horizon))
    }
}

pub(crate) fn check_res(res: usize, min: usize) -> Result<()> {
    if res >= min {
        Ok(())
    } else {
        Err(Error::InvalidResolution { got: res, min })
    }
}
