//! The variance-Hawkes process `B(N_t)` and the clustered models built on it.
//!
//! Because `N_t` is integer valued, `B` is only ever evaluated at integers, so a
//! path is the cumulative sum of one standard normal per arrival. Grid values
//! use the right-endpoint binning of [`crate::hawkes::discretize`]; jumps that
//! share a cell contribute the sum of their increments.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hawkes::{
    check_horizon, check_res, discretize, HawkesParams, IntensityPath, JumpPath, Sampler,
};
use crate::rng::{rng_from_seed, stream, SimRng};

/// One realisation of `B(N_t)` together with its grid representation.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceHawkesPath {
    params: HawkesParams,
    jumps: JumpPath,
    increments: Vec<f64>,
    counts: Vec<u64>,
    values: Vec<f64>,
}

impl VarianceHawkesPath {
    /// Builds a path from arrivals and one Brownian increment per arrival.
    pub fn from_parts(
        params: HawkesParams,
        jumps: JumpPath,
        increments: Vec<f64>,
        res: usize,
    ) -> Result<Self> {
        if increments.len() != jumps.len() {
            return Err(Error::InvalidInput(format!(
                "{} increments for {} arrivals",
                increments.len(),
                jumps.len()
            )));
        }
        let counts = discretize(&jumps, res)?;
        let partial = cumulative(&increments);
        let values = counts.iter().map(|&c| partial[c as usize]).collect();
        Ok(Self {
            params,
            jumps,
            increments,
            counts,
            values,
        })
    }

    pub fn params(&self) -> &HawkesParams {
        &self.params
    }

    pub fn jumps(&self) -> &JumpPath {
        &self.jumps
    }

    /// Per-arrival increments `B(i) - B(i-1)`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn res(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.jumps.horizon() / self.res() as f64
    }

    pub fn grid_times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.res()).map(|k| k as f64 * dt).collect()
    }

    /// Binned `N_{t_k}`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Binned `B(N_{t_k})`, `k = 0..=res`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `B(0), B(1), ..., B(N_T)`: the exact per-arrival representation.
    pub fn exact_values(&self) -> Vec<f64> {
        cumulative(&self.increments)
    }

    /// Exact `B(N_t)` at any `t` in `[0, T]`.
    pub fn value_at(&self, t: f64) -> f64 {
        self.increments[..self.jumps.count(t)].iter().sum()
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("res >= 1")
    }

    /// CSV with columns `t, N_t, lambda_t, B_N_t` on the grid.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let lambda = IntensityPath::new(self.params, &self.jumps)?.on_grid(self.res())?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "N_t", "lambda_t", "B_N_t"])?;
        for (k, t) in self.grid_times().into_iter().enumerate() {
            w.write_record([
                t.to_string(),
                self.counts[k].to_string(),
                lambda[k].to_string(),
                self.values[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cumulative(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for x in xs {
        acc += x;
        out.push(acc);
    }
    out
}

fn normals(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Simulates `B(N_t)` on `[0, horizon]`, deterministic in `seed`.
pub fn simulate_variance_hawkes(
    params: &HawkesParams,
    horizon: f64,
    res: usize,
    seed: u64,
) -> Result<VarianceHawkesPath> {
    variance_hawkes_with_rng(params, horizon, res, &mut rng_from_seed(seed))
}

/// As [`simulate_variance_hawkes`] with a caller-owned generator. The arrivals
/// are drawn first, then the increments, so `res` never changes the randomness.
pub fn variance_hawkes_with_rng(
    params: &HawkesParams,
    horizon: f64,
    res: usize,
    rng: &mut SimRng,
) -> Result<VarianceHawkesPath> {
    check_res(res, 1)?;
    let jumps = Sampler::Exact.sample(params, horizon, rng)?;
    let increments = normals(rng, jumps.len());
    VarianceHawkesPath::from_parts(*params, jumps, increments, res)
}

/// `(N_T, λ_T, B(N_T))` without building a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalDraw {
    pub count: usize,
    pub intensity: f64,
    pub value: f64,
}

/// Draws the terminal state with the same construction as full paths.
pub fn sample_terminal(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<TerminalDraw> {
    let jumps = Sampler::Exact.sample(params, horizon, rng)?;
    let intensity = IntensityPath::new(*params, &jumps)?.at(horizon)?;
    let value = (0..jumps.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .sum();
    Ok(TerminalDraw {
        count: jumps.len(),
        intensity,
        value,
    })
}

/// `G(N_t) = mu + sigma·B(N_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSubordination {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianSubordination {
    pub fn apply(&self, b_value: f64) -> f64 {
        self.mu + self.sigma * b_value
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    /// `Var G(N_t) = sigma²·E[N_t]`.
    pub fn variance(&self, mean_count: f64) -> f64 {
        self.sigma * self.sigma * mean_count
    }
}

/// Log-return model `ln(S_{t+1}/S_t) = a + b·σ̂·B(N_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteredGaussianModel {
    pub a: f64,
    pub b: f64,
    pub sigma_hat: f64,
    pub params: HawkesParams,
    pub horizon: f64,
    /// Observations taken from each simulated path (one per trading step).
    pub steps_per_path: usize,
}

impl ClusteredGaussianModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        check_horizon(self.horizon)?;
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "b must be > 0, got {}",
                self.b
            )));
        }
        if !(self.sigma_hat.is_finite() && self.sigma_hat > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma_hat must be > 0, got {}",
                self.sigma_hat
            )));
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidInput("a must be finite".to_string()));
        }
        check_res(self.steps_per_path, 1)
    }

    pub fn scale(&self) -> f64 {
        self.b * self.sigma_hat
    }
}

/// Model values along simulated paths, each sampled at `steps_per_path`
/// equally spaced times `k·T/steps`, `k = 1..=steps`. Paths are added until
/// `n_samples` values are collected; with `n_samples == steps_per_path` this
/// is a single path, the comparison used for a year of daily returns.
pub fn simulate_clustered_gaussian(
    model: &ClusteredGaussianModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    model.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".to_string()));
    }
    let steps = model.steps_per_path;
    let n_paths = n_samples.div_ceil(steps);
    let dt = model.horizon / steps as f64;
    let mut out = Vec::with_capacity(n_paths * steps);
    for r in 0..n_paths {
        let mut rng = stream(seed, r as u64);
        let jumps = Sampler::Exact.sample(&model.params, model.horizon, &mut rng)?;
        let partial = cumulative(&normals(&mut rng, jumps.len()));
        for k in 1..=steps {
            let b = partial[jumps.count(k as f64 * dt)];
            out.push(model.a + model.scale() * b);
        }
    }
    out.truncate(n_samples);
    Ok(out)
}

/// Law of the Lévy increment attached to each subordinator jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum JumpLaw {
    #[default]
    StandardNormal,
    Normal {
        mean: f64,
        std_dev: f64,
    },
    Constant {
        value: f64,
    },
}

impl JumpLaw {
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            JumpLaw::StandardNormal => rng.sample(StandardNormal),
            JumpLaw::Normal { mean, std_dev } => {
                mean + std_dev * rng.sample::<f64, _>(StandardNormal)
            }
            JumpLaw::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum SdeVariant {
    /// `dS = κ(θ - S)dt + σdW + d(L(N_t))`
    ClusteredOu { theta: f64 },
    /// `dS = κ(L(N_t) - S)dt + σdW`
    StochasticMeanOu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteredSdeSpec {
    pub variant: SdeVariant,
    pub kappa: f64,
    pub sigma: f64,
    pub jump_law: JumpLaw,
    pub params: HawkesParams,
}

impl ClusteredSdeSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        // κ = 0 is admitted so the pure jump term can be isolated.
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "kappa must be >= 0, got {}",
                self.kappa
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Euler–Maruyama path of a clustered SDE on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub counts: Vec<u64>,
    pub intensity: Vec<f64>,
    /// `L(N_{t_k})`.
    pub levy: Vec<f64>,
    pub values: Vec<f64>,
}

impl SdePath {
    /// CSV with columns `t, N_t, lambda_t, B_N_t, S_t`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "N_t", "lambda_t", "B_N_t", "S_t"])?;
        for k in 0..self.times.len() {
            w.write_record([
                self.times[k].to_string(),
                self.counts[k].to_string(),
                self.intensity[k].to_string(),
                self.levy[k].to_string(),
                self.values[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates a clustered OU model. Randomness is consumed as arrivals, then
/// one jump draw per arrival, then one Gaussian per cell, so with the
/// standard-normal law `levy` coincides with [`simulate_variance_hawkes`] on
/// the same seed.
pub fn simulate_clustered_sde(
    spec: &ClusteredSdeSpec,
    horizon: f64,
    res: usize,
    seed: u64,
    s0: f64,
) -> Result<SdePath> {
    clustered_sde_with_rng(spec, horizon, res, &mut rng_from_seed(seed), s0)
}

/// As [`simulate_clustered_sde`] with a caller-owned generator; the
/// subordinator and jump draws match [`variance_hawkes_with_rng`] on the same
/// generator when the jump law is standard normal.
pub fn clustered_sde_with_rng(
    spec: &ClusteredSdeSpec,
    horizon: f64,
    res: usize,
    rng: &mut SimRng,
    s0: f64,
) -> Result<SdePath> {
    spec.validate()?;
    check_res(res, 1)?;
    let jumps = Sampler::Exact.sample(&spec.params, horizon, rng)?;
    let draws: Vec<f64> = (0..jumps.len())
        .map(|_| spec.jump_law.sample(rng))
        .collect();
    let partial = cumulative(&draws);
    let counts = discretize(&jumps, res)?;
    let levy: Vec<f64> = counts.iter().map(|&c| partial[c as usize]).collect();
    let intensity = IntensityPath::new(spec.params, &jumps)?.on_grid(res)?;

    let dt = horizon / res as f64;
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(res + 1);
    let mut s = s0;
    values.push(s);
    for k in 0..res {
        let z: f64 = rng.sample(StandardNormal);
        let diffusion = spec.sigma * sqrt_dt * z;
        s = match spec.variant {
            SdeVariant::ClusteredOu { theta } => {
                s + spec.kappa * (theta - s) * dt + diffusion + (levy[k + 1] - levy[k])
            }
            SdeVariant::StochasticMeanOu => s + spec.kappa * (levy[k] - s) * dt + diffusion,
        };
        values.push(s);
    }
    Ok(SdePath {
        times: (0..=res).map(|k| k as f64 * dt).collect(),
        counts,
        intensity,
        levy,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{ode_moments, DEFAULT_STEP};
    use crate::rng::par_ensemble;
    use crate::stats::{mean, Estimate};

    fn p112() -> HawkesParams {
        HawkesParams::new(1.0, 1.0, 2.0).unwrap()
    }

    fn quiet() -> HawkesParams {
        HawkesParams::new(1e-12, 1.0, 2.0).unwrap()
    }

    #[test]
    fn path_structure() {
        let path = simulate_variance_hawkes(&p112(), 3.0, 300, 5).unwrap();
        assert_eq!(path.values()[0], 0.0);
        assert_eq!(path.values().len(), 301);
        let exact = path.exact_values();
        assert_eq!(exact.len(), path.jumps().len() + 1);
        assert!((path.terminal() - exact.last().unwrap()).abs() < 1e-12);
        // values only move when the binned count moves
        for k in 1..path.values().len() {
            if path.counts()[k] == path.counts()[k - 1] {
                assert_eq!(path.values()[k], path.values()[k - 1]);
            }
        }
        assert_eq!(
            path,
            simulate_variance_hawkes(&p112(), 3.0, 300, 5).unwrap()
        );
        assert!(simulate_variance_hawkes(&p112(), 3.0, 0, 5).is_err());
    }

    #[test]
    fn shared_cell_sums_increments() {
        let jumps = JumpPath::new(1.0, vec![0.1, 0.2, 0.7]).unwrap();
        let path = VarianceHawkesPath::from_parts(p112(), jumps, vec![0.5, -2.0, 1.0], 2).unwrap();
        assert_eq!(path.values(), &[0.0, -1.5, -0.5]);
        assert_eq!(path.value_at(0.15), 0.5);
    }

    #[test]
    fn zero_arrivals_give_zero() {
        let path = simulate_variance_hawkes(&quiet(), 1.0, 16, 3).unwrap();
        assert!(path.jumps().is_empty());
        assert_eq!(path.terminal(), 0.0);
    }

    #[test]
    fn variance_equals_mean_count_and_mean_is_zero() {
        for t in [0.5, 1.0] {
            let draws = par_ensemble(77 + (t * 10.0) as u64, 100_000, |_, rng| {
                sample_terminal(&p112(), t, rng).unwrap().value
            });
            let target = ode_moments(&p112(), t, DEFAULT_STEP).unwrap().e_n;
            let var = Estimate::of_variance(&draws);
            assert!(var.within(target, 3.0), "t={t} {var:?} vs {target}");
            assert!(Estimate::of_mean(&draws).within(0.0, 3.0));
        }
    }

    #[test]
    fn cross_moments_vanish() {
        let p = p112();
        let draws = par_ensemble(91, 100_000, |_, rng| sample_terminal(&p, 1.0, rng).unwrap());
        let nb: Vec<f64> = draws.iter().map(|d| d.count as f64 * d.value).collect();
        let lb: Vec<f64> = draws
            .iter()
            .map(|d| (d.intensity - p.v) * d.value)
            .collect();
        assert!(Estimate::of_mean(&nb).within(0.0, 3.0));
        assert!(Estimate::of_mean(&lb).within(0.0, 3.0));
    }

    #[test]
    fn gaussian_extension_moments() {
        let g = GaussianSubordination {
            mu: 0.3,
            sigma: 2.0,
        };
        let draws: Vec<f64> = par_ensemble(12, 50_000, |_, rng| {
            g.apply(sample_terminal(&p112(), 1.0, rng).unwrap().value)
        });
        let e_n = ode_moments(&p112(), 1.0, DEFAULT_STEP).unwrap().e_n;
        assert!(Estimate::of_mean(&draws).within(g.mean(), 3.0));
        assert!(Estimate::of_variance(&draws).within(g.variance(e_n), 3.0));
    }

    fn futures_model() -> ClusteredGaussianModel {
        ClusteredGaussianModel {
            a: 0.0,
            b: (-1.0f64).exp(),
            sigma_hat: 0.0320,
            params: HawkesParams::with_initial_intensity(400.0, 401.0, 700.0, 800.0).unwrap(),
            horizon: 1.0,
            steps_per_path: 250,
        }
    }

    #[test]
    fn clustered_gaussian_shapes() {
        let m = futures_model();
        let one = simulate_clustered_gaussian(&m, 250, 1).unwrap();
        assert_eq!(one.len(), 250);
        assert_eq!(one, simulate_clustered_gaussian(&m, 250, 1).unwrap());
        let pooled = simulate_clustered_gaussian(&m, 600, 1).unwrap();
        assert_eq!(pooled.len(), 600);
        assert_eq!(&pooled[..250], &one[..]);
        assert!(simulate_clustered_gaussian(&m, 0, 1).is_err());
        assert!(
            simulate_clustered_gaussian(&ClusteredGaussianModel { b: 0.0, ..m }, 5, 1).is_err()
        );
    }

    #[test]
    fn clustered_gaussian_without_jumps_is_constant() {
        let m = ClusteredGaussianModel {
            a: 0.01,
            params: quiet(),
            ..futures_model()
        };
        let draws = simulate_clustered_gaussian(&m, 100, 4).unwrap();
        assert!(draws.iter().all(|&x| x == 0.01));
    }

    fn ou(theta: f64, kappa: f64, sigma: f64, params: HawkesParams) -> ClusteredSdeSpec {
        ClusteredSdeSpec {
            variant: SdeVariant::ClusteredOu { theta },
            kappa,
            sigma,
            jump_law: JumpLaw::StandardNormal,
            params,
        }
    }

    #[test]
    fn ou_at_equilibrium_stays_put() {
        let path = simulate_clustered_sde(&ou(2.0, 1.5, 0.0, quiet()), 1.0, 100, 1, 2.0).unwrap();
        assert!(path.values.iter().all(|&s| s == 2.0));
    }

    #[test]
    fn deterministic_ou_decays() {
        let (kappa, theta, s0) = (3.0, 1.0, 5.0);
        let path =
            simulate_clustered_sde(&ou(theta, kappa, 0.0, quiet()), 2.0, 1000, 1, s0).unwrap();
        let end = *path.values.last().unwrap();
        assert!((end - theta).abs() <= (s0 - theta).abs() * (-kappa * 2.0f64).exp() + 1e-3);
        assert!(path.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pure_jump_ou_reproduces_variance_hawkes() {
        let p = HawkesParams::new(20.0, 10.0, 15.0).unwrap();
        let sde = simulate_clustered_sde(&ou(0.0, 0.0, 0.0, p), 1.0, 512, 33, 0.7).unwrap();
        let vh = simulate_variance_hawkes(&p, 1.0, 512, 33).unwrap();
        for (s, b) in sde.values.iter().zip(vh.values()) {
            assert!((s - 0.7 - b).abs() < 1e-12);
        }
        assert_eq!(sde.levy, vh.values());
    }

    #[test]
    fn stochastic_mean_tracks_levy_level() {
        let p = HawkesParams::new(5.0, 2.0, 4.0).unwrap();
        let spec = ClusteredSdeSpec {
            variant: SdeVariant::StochasticMeanOu,
            kappa: 50.0,
            sigma: 0.0,
            jump_law: JumpLaw::Constant { value: 1.0 },
            params: p,
        };
        let path = simulate_clustered_sde(&spec, 4.0, 40_000, 8, 0.0).unwrap();
        // level is N_t itself; fast reversion keeps S close once a cell has passed
        let gap: Vec<f64> = path
            .values
            .iter()
            .zip(&path.levy)
            .map(|(s, l)| (s - l).abs())
            .collect();
        assert!(mean(&gap) < 0.5);
        assert!(spec.validate().is_ok());
        assert!(ClusteredSdeSpec {
            kappa: -1.0,
            ..spec
        }
        .validate()
        .is_err());
    }

    #[test]
    fn csv_columns() {
        let path = simulate_variance_hawkes(&p112(), 1.0, 4, 2).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,N_t,lambda_t,B_N_t\n"));
        assert_eq!(text.lines().count(), 6);
        let sde = simulate_clustered_sde(&ou(0.0, 1.0, 0.1, p112()), 1.0, 4, 2, 0.0).unwrap();
        let mut buf = Vec::new();
        sde.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,N_t,lambda_t,B_N_t,S_t\n"));
    }
}
