use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vhl_core::generator::{verify_limits, DEFAULT_T_VALUES};
use vhl_core::ito_verify::{
    conjecture_check, percentage_error_summary, ItoComparison, ItoExperimentConfig,
};
use vhl_core::market_data::{
    daily_volume_profile, fit_clustered_gaussian, ingest_prices, ingest_volumes, log_returns,
    qq_exponential, read_column, FitConfig, FitGrid, GridPoint, IngestOptions,
};
use vhl_core::moments::{
    audit_closed_forms, closed_form_moments, compare_printed_rhs, ode_moment_table, MomentSet,
};
use vhl_core::rng::stream;
use vhl_core::stats::PairedHistogram;
use vhl_core::variance_hawkes::{
    clustered_sde_with_rng, variance_hawkes_with_rng, ClusteredSdeSpec, JumpLaw, SdeVariant,
};
use vhl_core::{HawkesParams, IntensityPath};

use crate::output::{Cell, Outputs, Table};
use crate::{
    Common, ConjectureArgs, FitArgs, MomentsArgs, ProfileArgs, QqArgs, SdeKind, SimulateArgs,
    VerifyItoArgs,
};

#[derive(Serialize)]
struct Config<'a, A: Serialize> {
    #[serde(flatten)]
    args: &'a A,
    #[serde(flatten)]
    common: &'a Common,
}

fn commit<A: Serialize>(out: Outputs, command: &str, args: &A, common: &Common) -> Result<()> {
    out.commit(&common.out, command, &Config { args, common })?;
    Ok(())
}

fn params(v: f64, v0: Option<f64>, alpha: f64, beta: f64) -> Result<HawkesParams> {
    Ok(HawkesParams::with_initial_intensity(
        v,
        v0.unwrap_or(v),
        alpha,
        beta,
    )?)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Suffix for per-run files: none for a single run.
fn tag(stem: &str, i: usize, n: usize) -> String {
    if n == 1 {
        stem.to_string()
    } else {
        format!("{stem}_{i:03}")
    }
}

fn histogram_table(h: &PairedHistogram, names: [&'static str; 2]) -> Table {
    let mut t = Table::new(&["bin_lo", "bin_hi", names[0], names[1]]);
    for k in 0..h.bins() {
        t.push(vec![
            h.edges[k].into(),
            h.edges[k + 1].into(),
            h.first[k].into(),
            h.second[k].into(),
        ]);
    }
    t
}

pub fn simulate(args: &SimulateArgs, common: &Common) -> Result<()> {
    let m = &args.model;
    let p = params(m.v, m.v0, m.alpha, m.beta)?;
    if args.n_paths == 0 {
        bail!("--n-paths must be >= 1");
    }
    let mut out = Outputs::new(common.format);
    for i in 0..args.n_paths {
        let mut rng = stream(args.seed, i as u64);
        let mut sde_rng = rng.clone();
        let path = variance_hawkes_with_rng(&p, args.horizon, args.res, &mut rng)?;

        let mut arrivals = Table::new(&["arrival_time"]);
        for &t in path.jumps().arrivals() {
            arrivals.push(vec![t.into()]);
        }
        out.table(&tag("arrivals", i, args.n_paths), &arrivals)?;

        let lambda = IntensityPath::new(p, path.jumps())?.on_grid(args.res)?;
        let mut grid = Table::new(&["t", "N_t", "lambda_t", "B_N_t"]);
        for (k, t) in path.grid_times().into_iter().enumerate() {
            grid.push(vec![
                t.into(),
                path.counts()[k].into(),
                lambda[k].into(),
                path.values()[k].into(),
            ]);
        }
        out.table(&tag("path", i, args.n_paths), &grid)?;

        if let Some(kind) = args.sde {
            let spec = ClusteredSdeSpec {
                variant: match kind {
                    SdeKind::ClusteredOu => SdeVariant::ClusteredOu { theta: args.theta },
                    SdeKind::StochasticMeanOu => SdeVariant::StochasticMeanOu,
                },
                kappa: args.kappa,
                sigma: args.sigma,
                jump_law: JumpLaw::StandardNormal,
                params: p,
            };
            let sde = clustered_sde_with_rng(&spec, args.horizon, args.res, &mut sde_rng, args.s0)?;
            let mut t = Table::new(&["t", "N_t", "lambda_t", "B_N_t", "S_t"]);
            for k in 0..sde.times.len() {
                t.push(vec![
                    sde.times[k].into(),
                    sde.counts[k].into(),
                    sde.intensity[k].into(),
                    sde.levy[k].into(),
                    sde.values[k].into(),
                ]);
            }
            out.table(&tag("sde", i, args.n_paths), &t)?;
        }
    }
    commit(out, "simulate", args, common)
}

fn moment_row(m: &MomentSet) -> Vec<Cell> {
    let mut row: Vec<Cell> = vec![m.t.into()];
    row.extend(m.values().iter().map(|(_, x)| Cell::from(*x)));
    row.push(m.provenance.to_string().into());
    row
}

pub fn moments(args: &MomentsArgs, common: &Common) -> Result<()> {
    let m = &args.model;
    let p = params(m.v, m.v0, m.alpha, m.beta)?;
    if !(args.dt > 0.0 && args.horizon > 0.0 && args.dt <= args.horizon) {
        bail!("need 0 < --dt <= --T");
    }
    let n = (args.horizon / args.dt).round() as usize;
    let times: Vec<f64> = (0..=n)
        .map(|k| (k as f64 * args.dt).min(args.horizon))
        .collect();

    let ode = ode_moment_table(&p, &times, args.step)?;
    let mut table = Table::new(&["t", "e_N", "e_L", "e_L2", "e_NL", "e_N2", "provenance"]);
    for (t, o) in times.iter().zip(&ode) {
        table.push(moment_row(&closed_form_moments(&p, *t)?));
        table.push(moment_row(o));
    }

    let mut disc = Table::new(&["t", "moment", "closed_form", "ode", "abs_diff", "rel_diff"]);
    for r in audit_closed_forms(&p, &times, args.step)? {
        disc.push(vec![
            r.t.into(),
            r.moment.into(),
            r.closed_form.into(),
            r.ode.into(),
            r.abs_diff.into(),
            r.rel_diff.into(),
        ]);
    }

    let mut out = Outputs::new(common.format);
    out.table("moments", &table)?;
    out.table("discrepancy", &disc)?;
    out.json("limits.json", &verify_limits(&p, &DEFAULT_T_VALUES)?)?;
    out.json("rhs_comparison.json", &compare_printed_rhs())?;
    commit(out, "moments", args, common)
}

#[derive(Serialize)]
struct RunSummary {
    run: usize,
    jumps: usize,
    fraction_within_20pct: f64,
    max_abs_error: f64,
    terminal_error: f64,
    singular_points: usize,
    terminal_actual: f64,
    terminal_conjectured: f64,
    terminal_gap: f64,
    per_jump_gap: f64,
}

pub fn verify_ito(args: &VerifyItoArgs, common: &Common) -> Result<()> {
    let m = &args.model;
    let cfg = ItoExperimentConfig {
        params: params(m.v, m.v0, m.alpha, m.beta)?,
        horizon: args.horizon,
        res: args.res,
        n_paths: args.n_runs,
        seed: args.seed,
    };
    cfg.validate()?;
    if args.max_points < 2 {
        bail!("--max-points must be >= 2");
    }
    let stride = args.res.div_ceil(args.max_points - 1).max(1);
    let n = args.n_runs;

    let runs: Vec<(Table, Table, Table, RunSummary)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, i as u64);
            let path = variance_hawkes_with_rng(&cfg.params, cfg.horizon, cfg.res, &mut rng)?;
            let cmp = ItoComparison::from_path(&path);
            let mut traj = Table::new(&["t", "actual", "conjectured"]);
            let mut err = Table::new(&["t", "pct_error"]);
            for k in (0..cmp.times.len()).step_by(stride) {
                traj.push(vec![
                    cmp.times[k].into(),
                    cmp.actual[k].into(),
                    cmp.conjectured[k].into(),
                ]);
                err.push(vec![cmp.times[k].into(), cmp.pct_error[k].into()]);
            }
            let s = percentage_error_summary(&cmp);
            let summary = RunSummary {
                run: i,
                jumps: path.jumps().len(),
                fraction_within_20pct: s.fraction_within_20pct,
                max_abs_error: s.max_abs_error,
                terminal_error: s.terminal_error,
                singular_points: s.singular_points,
                terminal_actual: *cmp.actual.last().unwrap(),
                terminal_conjectured: *cmp.conjectured.last().unwrap(),
                terminal_gap: cmp.terminal_gap(),
                per_jump_gap: cmp.per_jump_gap(),
            };
            Ok((
                traj,
                err,
                histogram_table(&cmp.histogram, ["actual", "conjectured"]),
                summary,
            ))
        })
        .collect::<Result<_>>()?;

    let mut out = Outputs::new(common.format);
    let mut summary = Table::new(&[
        "run",
        "jumps",
        "fraction_within_20pct",
        "max_abs_error",
        "terminal_error",
        "singular_points",
        "terminal_actual",
        "terminal_conjectured",
        "terminal_gap",
        "per_jump_gap",
    ]);
    for (i, (traj, err, hist, s)) in runs.into_iter().enumerate() {
        out.table(&format!("run_{i:02}_trajectory"), &traj)?;
        out.table(&format!("run_{i:02}_error"), &err)?;
        out.table(&format!("run_{i:02}_histogram"), &hist)?;
        summary.push(vec![
            s.run.into(),
            s.jumps.into(),
            s.fraction_within_20pct.into(),
            s.max_abs_error.into(),
            s.terminal_error.into(),
            s.singular_points.into(),
            s.terminal_actual.into(),
            s.terminal_conjectured.into(),
            s.terminal_gap.into(),
            s.per_jump_gap.into(),
        ]);
    }
    out.table("summary", &summary)?;
    commit(out, "verify-ito", args, common)
}

#[derive(Debug, Deserialize)]
struct PanelRow {
    v: f64,
    v0: Option<f64>,
    alpha: f64,
    beta: f64,
    #[serde(rename = "T")]
    horizon: Option<f64>,
}

pub fn conjecture(args: &ConjectureArgs, common: &Common) -> Result<()> {
    let panels: Vec<(HawkesParams, f64)> = match &args.param_grid {
        Some(path) => {
            let mut rdr = csv::Reader::from_reader(open(path)?);
            let mut panels = Vec::new();
            for (i, row) in rdr.deserialize::<PanelRow>().enumerate() {
                let row = row.with_context(|| format!("{} row {}", path.display(), i + 2))?;
                let p = params(row.v, row.v0, row.alpha, row.beta)
                    .with_context(|| format!("{} row {}", path.display(), i + 2))?;
                panels.push((p, row.horizon.unwrap_or(args.horizon)));
            }
            if panels.is_empty() {
                bail!("{} has no parameter rows", path.display());
            }
            panels
        }
        None => {
            let m = &args.model;
            if args.panels == 0 {
                bail!("--panels must be >= 1");
            }
            vec![(params(m.v, m.v0, m.alpha, m.beta)?, args.horizon); args.panels]
        }
    };

    let mut out = Outputs::new(common.format);
    let mut summary = Table::new(&[
        "panel",
        "v",
        "v0",
        "alpha",
        "beta",
        "T",
        "n_samples",
        "ks_distance",
        "ks_p_value",
        "ks_critical_1pct",
    ]);
    for (i, (p, horizon)) in panels.iter().enumerate() {
        let r = conjecture_check(
            p,
            *horizon,
            args.n_samples,
            args.seed.wrapping_add(i as u64),
        )?;
        out.table(
            &format!("panel_{i:02}_histogram"),
            &histogram_table(&r.histogram, ["subordinated", "scaled_normal"]),
        )?;
        summary.push(vec![
            i.into(),
            p.v.into(),
            p.v0.into(),
            p.alpha.into(),
            p.beta.into(),
            (*horizon).into(),
            r.n_samples.into(),
            r.ks_distance.into(),
            r.ks_p_value.into(),
            r.ks_critical_1pct.into(),
        ]);
    }
    out.table("summary", &summary)?;
    commit(out, "conjecture", args, common)
}

pub fn fit(args: &FitArgs, common: &Common) -> Result<()> {
    let opts = IngestOptions {
        date_column: args.date_column.clone(),
        close_column: args.close_column.clone(),
        forward_fill: args.forward_fill,
    };
    let prices = ingest_prices(open(&args.input)?, &opts)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let returns = log_returns(&prices)?;
    let grid = if args.grid_v0.is_empty() {
        let mut points = Vec::new();
        for &v in &args.grid_v {
            for &alpha in &args.grid_alpha {
                for &beta in &args.grid_beta {
                    for &a in &args.grid_a {
                        let gp = GridPoint {
                            v,
                            v0: v + 1.0,
                            alpha,
                            beta,
                            a,
                        };
                        if gp.params().is_ok() {
                            points.push(gp);
                        }
                    }
                }
            }
        }
        FitGrid { points }
    } else {
        FitGrid::cartesian(
            &args.grid_v,
            &args.grid_v0,
            &args.grid_alpha,
            &args.grid_beta,
            &args.grid_a,
        )
    };
    let cfg = FitConfig {
        b: args.b,
        horizon: args.horizon,
        n_sim: args.n_sim,
        steps_per_path: args.steps_per_path,
        sigma_hat: args.sigma_hat,
        seed: args.seed,
    };
    let report = fit_clustered_gaussian(&returns, &grid, &cfg)?;

    let mut table = Table::new(&["v", "v0", "alpha", "beta", "a", "score"]);
    for g in &report.table {
        let q = g.point;
        table.push(vec![
            q.v.into(),
            q.v0.into(),
            q.alpha.into(),
            q.beta.into(),
            q.a.into(),
            g.score.into(),
        ]);
    }
    let mut out = Outputs::new(common.format);
    out.json(
        "fit.json",
        &serde_json::json!({
            "best": report.best,
            "best_score": report.best_score,
            "n_returns": returns.n,
            "sigma_hat": returns.sigma_hat,
            "grid_points": report.table.len(),
        }),
    )?;
    out.table("grid", &table)?;
    commit(out, "fit", args, common)
}

pub fn qq(args: &QqArgs, common: &Common) -> Result<()> {
    let data = read_column(open(&args.input)?, &args.column)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let q = qq_exponential(&data, args.n_quantiles)?;
    let mut table = Table::new(&["p", "empirical", "exponential"]);
    for k in 0..q.levels.len() {
        table.push(vec![
            q.levels[k].into(),
            q.empirical[k].into(),
            q.exponential[k].into(),
        ]);
    }
    let mut out = Outputs::new(common.format);
    out.table("qq", &table)?;
    commit(out, "qq", args, common)
}

pub fn profile(args: &ProfileArgs, common: &Common) -> Result<()> {
    let vols = ingest_volumes(
        open(&args.input)?,
        &args.timestamp_column,
        &args.volume_column,
    )
    .with_context(|| format!("reading {}", args.input.display()))?;
    let prof = daily_volume_profile(&vols)?;
    let mut table = Table::new(&["minute", "mean_volume", "days"]);
    for k in 0..prof.minute.len() {
        table.push(vec![
            prof.minute[k].into(),
            prof.mean_volume[k].into(),
            prof.days[k].into(),
        ]);
    }
    let mut out = Outputs::new(common.format);
    out.table("profile", &table)?;
    commit(out, "profile", args, common)
}
