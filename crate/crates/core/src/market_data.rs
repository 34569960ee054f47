//! Price and volume ingestion, log returns, the clustered Gaussian fit and
//! exponential Q-Q tables.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;
use crate::stats::{ks_two_sample, mean, quantile_sorted, sample_std};
use crate::variance_hawkes::{simulate_clustered_gaussian, ClusteredGaussianModel};

const DATE_FORMATS: [&str; 3] = ["%Y-%m-%d", "%m/%d/%Y", "%Y/%m/%d"];
const TIMESTAMP_FORMATS: [&str; 5] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%m/%d/%Y %H:%M",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub date_column: String,
    pub close_column: String,
    /// Fill empty close cells with the previous close instead of failing.
    pub forward_fill: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            date_column: "date".to_string(),
            close_column: "close".to_string(),
            forward_fill: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    /// Dates strictly increasing, closes finite and positive.
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self> {
        if dates.len() != closes.len() {
            return Err(Error::InvalidInput(
                "dates and closes differ in length".to_string(),
            ));
        }
        if let Some(i) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "dates not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = closes.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "nonpositive close at index {i}"
            )));
        }
        Ok(Self { dates, closes })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::InvalidInput(format!("missing column '{name}'")))
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Parses a number, tolerating thousands separators and a leading `$`.
fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = s
        .trim()
        .trim_start_matches('$')
        .chars()
        .filter(|&c| c != ',')
        .collect();
    cleaned.parse().ok()
}

/// Reads a price CSV. Rows may be in ascending or descending date order (the
/// latter is how most quote sites export); the result is ascending. Row
/// numbers in errors count the header as row 1.
pub fn ingest_prices<R: Read>(reader: R, opts: &IngestOptions) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let di = header_index(&headers, &opts.date_column)?;
    let ci = header_index(&headers, &opts.close_column)?;

    let mut rows: Vec<(usize, NaiveDate, Option<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let date_cell = rec.get(di).unwrap_or("");
        let date = parse_date(date_cell).ok_or_else(|| Error::Row {
            row,
            message: format!("unparseable date '{date_cell}'"),
        })?;
        let close_cell = rec.get(ci).unwrap_or("").trim();
        let close = if close_cell.is_empty() {
            None
        } else {
            let c = parse_number(close_cell).ok_or_else(|| Error::Row {
                row,
                message: format!("unparseable close '{close_cell}'"),
            })?;
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Row {
                    row,
                    message: format!("nonpositive close {c}"),
                });
            }
            Some(c)
        };
        rows.push((row, date, close));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "price file has no data rows".to_string(),
        ));
    }

    if rows.len() >= 2 && rows[0].1 > rows[1].1 {
        rows.reverse();
    }
    for w in rows.windows(2) {
        match w[0].1.cmp(&w[1].1) {
            Ordering::Less => {}
            Ordering::Equal => {
                return Err(Error::Row {
                    row: w[1].0,
                    message: format!("duplicate date {}", w[1].1),
                })
            }
            Ordering::Greater => {
                return Err(Error::Row {
                    row: w[1].0,
                    message: "dates are not monotone".to_string(),
                })
            }
        }
    }

    let mut dates = Vec::with_capacity(rows.len());
    let mut closes = Vec::with_capacity(rows.len());
    for (row, date, close) in rows {
        let c = match (close, closes.last()) {
            (Some(c), _) => c,
            (None, Some(&prev)) if opts.forward_fill => prev,
            (None, _) => {
                return Err(Error::Row {
                    row,
                    message: if opts.forward_fill {
                        "missing close with nothing to carry forward".to_string()
                    } else {
                        "missing close (enable forward fill to carry the previous close)"
                            .to_string()
                    },
                })
            }
        };
        dates.push(date);
        closes.push(c);
    }
    PriceSeries::new(dates, closes)
}

/// Writes `date,close` in ascending order; reads back to an identical series.
pub fn write_prices<W: Write>(prices: &PriceSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "close"])?;
    for (d, c) in prices.dates.iter().zip(&prices.closes) {
        w.write_record([d.format("%Y-%m-%d").to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnsSeries {
    pub returns: Vec<f64>,
    pub sigma_hat: f64,
    pub n: usize,
}

impl ReturnsSeries {
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::InvalidInput("no returns".to_string()));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("non-finite return".to_string()));
        }
        let sigma_hat = if returns.len() < 2 {
            0.0
        } else {
            sample_std(&returns)
        };
        Ok(Self {
            n: returns.len(),
            sigma_hat,
            returns,
        })
    }

    /// True when σ̂ is zero and the series cannot anchor a fit.
    pub fn is_degenerate(&self) -> bool {
        self.sigma_hat == 0.0
    }
}

pub fn log_returns(prices: &PriceSeries) -> Result<ReturnsSeries> {
    if prices.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 closes, got {}",
            prices.len()
        )));
    }
    ReturnsSeries::from_returns(
        prices
            .closes
            .windows(2)
            .map(|w| (w[1] / w[0]).ln())
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSeries {
    minutes: Vec<NaiveDateTime>,
    volumes: Vec<f64>,
    day_boundaries: Vec<usize>,
}

impl VolumeSeries {
    /// Timestamps strictly increasing, volumes finite and nonnegative. A day
    /// ends wherever the calendar date changes.
    pub fn new(minutes: Vec<NaiveDateTime>, volumes: Vec<f64>) -> Result<Self> {
        if minutes.len() != volumes.len() {
            return Err(Error::InvalidInput(
                "timestamps and volumes differ in length".to_string(),
            ));
        }
        if let Some(i) = minutes.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = volumes.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!("negative volume at index {i}")));
        }
        let mut day_boundaries: Vec<usize> = minutes
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].date() != w[1].date())
            .map(|(i, _)| i)
            .collect();
        if !minutes.is_empty() {
            day_boundaries.push(minutes.len() - 1);
        }
        Ok(Self {
            minutes,
            volumes,
            day_boundaries,
        })
    }

    pub fn minutes(&self) -> &[NaiveDateTime] {
        &self.minutes
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Index of the last observation of each day.
    pub fn day_boundaries(&self) -> &[usize] {
        &self.day_boundaries
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Reads a `timestamp,volume` CSV (column names configurable).
pub fn ingest_volumes<R: Read>(
    reader: R,
    timestamp_column: &str,
    volume_column: &str,
) -> Result<VolumeSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ti = header_index(&headers, timestamp_column)?;
    let vi = header_index(&headers, volume_column)?;
    let mut minutes = Vec::new();
    let mut volumes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let ts = rec.get(ti).unwrap_or("");
        let t = parse_timestamp(ts).ok_or_else(|| Error::Row {
            row,
            message: format!("unparseable timestamp '{ts}'"),
        })?;
        let vs = rec.get(vi).unwrap_or("");
        let v = parse_number(vs).ok_or_else(|| Error::Row {
            row,
            message: format!("unparseable volume '{vs}'"),
        })?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Row {
                row,
                message: format!("negative volume {v}"),
            });
        }
        if let Some(prev) = minutes.last() {
            if *prev >= t {
                return Err(Error::Row {
                    row,
                    message: "timestamps are not strictly increasing".to_string(),
                });
            }
        }
        minutes.push(t);
        volumes.push(v);
    }
    if minutes.is_empty() {
        return Err(Error::InvalidInput(
            "volume file has no data rows".to_string(),
        ));
    }
    VolumeSeries::new(minutes, volumes)
}

/// Reads one numeric column of a CSV (thousands separators allowed).
pub fn read_column<R: Read>(reader: R, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ci = header_index(&headers, column)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(ci).unwrap_or("");
        out.push(parse_number(cell).ok_or_else(|| Error::Row {
            row: i + 2,
            message: format!("unparseable value '{cell}' in column '{column}'"),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QqTable {
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
    pub exponential: Vec<f64>,
    /// Fitted rate `1 / mean`.
    pub rate: f64,
}

impl QqTable {
    pub fn max_gap(&self) -> f64 {
        self.empirical
            .iter()
            .zip(&self.exponential)
            .fold(0.0, |m, (e, x)| m.max((e - x).abs()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["p", "empirical", "exponential"])?;
        for k in 0..self.levels.len() {
            w.write_record([
                self.levels[k].to_string(),
                self.empirical[k].to_string(),
                self.exponential[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical quantiles at `p_i = i/(n_quantiles+1)` against an exponential
/// law with rate `1/mean`.
pub fn qq_exponential(data: &[f64], n_quantiles: usize) -> Result<QqTable> {
    if data.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {}",
            data.len()
        )));
    }
    if n_quantiles == 0 {
        return Err(Error::InvalidInput("n_quantiles must be >= 1".to_string()));
    }
    if data.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput(
            "data must be finite and nonnegative".to_string(),
        ));
    }
    let m = mean(data);
    if m == 0.0 {
        return Err(Error::InvalidInput(
            "all-zero data: exponential rate undefined".to_string(),
        ));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let levels: Vec<f64> = (1..=n_quantiles)
        .map(|i| i as f64 / (n_quantiles + 1) as f64)
        .collect();
    Ok(QqTable {
        empirical: levels
            .iter()
            .map(|&p| quantile_sorted(&sorted, p))
            .collect(),
        exponential: levels.iter().map(|&p| -m * (-p).ln_1p()).collect(),
        levels,
        rate: 1.0 / m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeProfile {
    /// Minutes since the first observation of the day.
    pub minute: Vec<i64>,
    pub mean_volume: Vec<f64>,
    /// Days contributing to each minute.
    pub days: Vec<usize>,
}

impl VolumeProfile {
    pub fn peak_minute(&self) -> Option<i64> {
        self.mean_volume
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| self.minute[i])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["minute", "mean_volume", "days"])?;
        for k in 0..self.minute.len() {
            w.write_record([
                self.minute[k].to_string(),
                self.mean_volume[k].to_string(),
                self.days[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Average volume per minute-of-day, aligning each day on its first
/// observation. Minutes no day observed are omitted.
pub fn daily_volume_profile(volumes: &VolumeSeries) -> Result<VolumeProfile> {
    if volumes.is_empty() {
        return Err(Error::InvalidInput("empty volume series".to_string()));
    }
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let mut start = 0;
    for &end in &volumes.day_boundaries {
        let open = volumes.minutes[start];
        for k in start..=end {
            let offset = (volumes.minutes[k] - open).num_minutes();
            let e = acc.entry(offset).or_insert((0.0, 0));
            e.0 += volumes.volumes[k];
            e.1 += 1;
        }
        start = end + 1;
    }
    let mut profile = VolumeProfile {
        minute: Vec::with_capacity(acc.len()),
        mean_volume: Vec::with_capacity(acc.len()),
        days: Vec::with_capacity(acc.len()),
    };
    for (m, (sum, n)) in acc {
        profile.minute.push(m);
        profile.mean_volume.push(sum / n as f64);
        profile.days.push(n);
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub v: f64,
    pub v0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
}

impl GridPoint {
    pub fn params(&self) -> Result<HawkesParams> {
        HawkesParams::with_initial_intensity(self.v, self.v0, self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitGrid {
    pub points: Vec<GridPoint>,
}

impl FitGrid {
    /// All combinations, skipping those that are not valid Hawkes parameters
    /// (`v0 < v`, `α = β`, ...).
    pub fn cartesian(v: &[f64], v0: &[f64], alpha: &[f64], beta: &[f64], a: &[f64]) -> Self {
        let mut points = Vec::new();
        for &v in v {
            for &v0 in v0 {
                for &alpha in alpha {
                    for &beta in beta {
                        for &a in a {
                            let p = GridPoint {
                                v,
                                v0,
                                alpha,
                                beta,
                                a,
                            };
                            if p.params().is_ok() {
                                points.push(p);
                            }
                        }
                    }
                }
            }
        }
        Self { points }
    }

    /// Named parameter sets from the fitted futures datasets.
    pub fn anchors() -> Self {
        let mk = |v, v0| GridPoint {
            v,
            v0,
            alpha: 700.0,
            beta: 800.0,
            a: 0.0,
        };
        Self {
            points: vec![mk(400.0, 401.0), mk(450.0, 451.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitConfig {
    pub b: f64,
    pub horizon: f64,
    /// Simulated replicates per grid point; the score is their mean KS distance.
    pub n_sim: usize,
    /// Observations per simulated path (1 gives independent terminal draws).
    pub steps_per_path: usize,
    /// Overrides the target's σ̂ in the model scale.
    pub sigma_hat: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            b: (-1.0f64).exp(),
            horizon: 1.0,
            n_sim: 4,
            steps_per_path: 1,
            sigma_hat: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridScore {
    pub point: GridPoint,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub best: ClusteredGaussianModel,
    pub best_score: f64,
    pub config: FitConfig,
    /// Scores in grid order.
    pub table: Vec<GridScore>,
}

impl FitReport {
    /// Fraction of grid points scoring strictly better than `point`.
    pub fn rank_fraction(&self, point: &GridPoint) -> Option<f64> {
        let score = self.table.iter().find(|g| g.point == *point)?.score;
        let better = self.table.iter().filter(|g| g.score < score).count();
        Some(better as f64 / self.table.len() as f64)
    }

    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["v", "v0", "alpha", "beta", "a", "score"])?;
        for g in &self.table {
            let p = g.point;
            w.write_record([p.v, p.v0, p.alpha, p.beta, p.a, g.score].map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid search minimising the mean two-sample KS distance between the target
/// returns and `n_sim` simulated samples of the same size. Grid point `i`
/// draws from seed `seed + i`; ties go to the smaller α, then the smaller v.
pub fn fit_clustered_gaussian(
    target: &ReturnsSeries,
    grid: &FitGrid,
    cfg: &FitConfig,
) -> Result<FitReport> {
    if grid.points.is_empty() {
        return Err(Error::InvalidInput("empty fit grid".to_string()));
    }
    if target.is_degenerate() {
        return Err(Error::InvalidInput(
            "target returns are constant (sigma_hat = 0)".to_string(),
        ));
    }
    if cfg.n_sim == 0 {
        return Err(Error::InvalidInput("n_sim must be >= 1".to_string()));
    }
    let sigma_hat = cfg.sigma_hat.unwrap_or(target.sigma_hat);
    let model_at = |p: &GridPoint| -> Result<ClusteredGaussianModel> {
        let m = ClusteredGaussianModel {
            a: p.a,
            b: cfg.b,
            sigma_hat,
            params: p.params()?,
            horizon: cfg.horizon,
            steps_per_path: cfg.steps_per_path,
        };
        m.validate()?;
        Ok(m)
    };
    let n = target.n;
    let table: Vec<GridScore> = grid
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let model = model_at(p)?;
            let sims = simulate_clustered_gaussian(
                &model,
                n * cfg.n_sim,
                cfg.seed.wrapping_add(i as u64),
            )?;
            let total: f64 = sims
                .chunks(n)
                .map(|c| ks_two_sample(&target.returns, c))
                .sum();
            Ok(GridScore {
                point: *p,
                score: total / cfg.n_sim as f64,
            })
        })
        .collect::<Result<_>>()?;
    let best = table
        .iter()
        .min_by(|x, y| {
            x.score
                .total_cmp(&y.score)
                .then(x.point.alpha.total_cmp(&y.point.alpha))
                .then(x.point.v.total_cmp(&y.point.v))
        })
        .unwrap();
    Ok(FitReport {
        best: model_at(&best.point)?,
        best_score: best.score,
        config: *cfg,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::Sampler;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::Exp1;

    fn prices(csv: &str) -> Result<PriceSeries> {
        ingest_prices(csv.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn ingest_basic_and_descending() {
        let p = prices("date,close\n2018-01-02,100\n2018-01-03,110\n2018-01-04,99\n").unwrap();
        let r = log_returns(&p).unwrap();
        assert!((r.returns[0] - 0.09531).abs() < 1e-5);
        assert!((r.returns[1] + 0.10536).abs() < 1e-5);
        assert!((r.returns[0] - 1.1f64.ln()).abs() < 1e-15);

        let d = prices("Date,Close\n01/04/2018,99\n01/03/2018,110\n01/02/2018,100\n").unwrap();
        assert_eq!(d, p);
    }

    #[test]
    fn ingest_handles_quotes_and_separators() {
        let p = prices("date,open,close\n2018-01-02,1,\"1,000.5\"\n2018-01-03,1,$1001\n").unwrap();
        assert_eq!(p.closes(), &[1000.5, 1001.0]);
    }

    #[test]
    fn ingest_errors_name_rows() {
        let e = prices("date,close\n2018-01-02,100\n2018-01-03,0\n").unwrap_err();
        assert!(matches!(e, Error::Row { row: 3, .. }), "{e}");
        let e = prices("date,close\n2018-01-02,100\nnot-a-date,1\n").unwrap_err();
        assert!(matches!(e, Error::Row { row: 3, .. }));
        let e = prices("date,close\n2018-01-02,100\n2018-01-02,101\n").unwrap_err();
        assert!(e.to_string().contains("duplicate"));
        let e = prices("date,close\n2018-01-02,100\n2018-01-04,1\n2018-01-03,1\n").unwrap_err();
        assert!(matches!(e, Error::Row { row: 4, .. }));
        assert!(prices("date,close\n").is_err());
        assert!(prices("").is_err());
        assert!(prices("day,close\n2018-01-02,1\n").is_err());
    }

    #[test]
    fn forward_fill_is_opt_in() {
        let csv = "date,close\n2018-01-02,100\n2018-01-03,\n2018-01-04,102\n";
        assert!(prices(csv).is_err());
        let opts = IngestOptions {
            forward_fill: true,
            ..Default::default()
        };
        let p = ingest_prices(csv.as_bytes(), &opts).unwrap();
        assert_eq!(p.closes(), &[100.0, 100.0, 102.0]);
        assert!(
            ingest_prices("date,close\n2018-01-02,\n2018-01-03,1\n".as_bytes(), &opts).is_err()
        );
    }

    #[test]
    fn returns_examples() {
        let d = |i| NaiveDate::from_ymd_opt(2018, 1, i).unwrap();
        let flat = PriceSeries::new(vec![d(1), d(2)], vec![100.0, 100.0]).unwrap();
        let r = log_returns(&flat).unwrap();
        assert_eq!(r.returns, vec![0.0]);
        assert!(r.is_degenerate());
        let e = PriceSeries::new(vec![d(1), d(2)], vec![1.0, std::f64::consts::E]).unwrap();
        assert!((log_returns(&e).unwrap().returns[0] - 1.0).abs() < 1e-15);
        let one = PriceSeries::new(vec![d(1)], vec![1.0]).unwrap();
        assert!(log_returns(&one).is_err());
        let c = PriceSeries::new(vec![d(1), d(2), d(3)], vec![5.0; 3]).unwrap();
        assert!(log_returns(&c).unwrap().is_degenerate());
    }

    #[test]
    fn sigma_hat_uses_n_minus_one() {
        let r = ReturnsSeries::from_returns(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r.sigma_hat - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.n, 4);
    }

    proptest! {
        #[test]
        fn returns_invert_cumsum(r in prop::collection::vec(-0.2f64..0.2, 1..200)) {
            let mut level = 0.0;
            let mut closes = vec![1.0];
            for x in &r {
                level += x;
                closes.push(level.exp());
            }
            let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
            let dates = (0..closes.len()).map(|i| start + chrono::Days::new(i as u64)).collect();
            let got = log_returns(&PriceSeries::new(dates, closes).unwrap()).unwrap();
            for (a, b) in got.returns.iter().zip(&r) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn price_round_trip(closes in prop::collection::vec(1e-3f64..1e6, 1..50)) {
            let start = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
            let dates = (0..closes.len()).map(|i| start + chrono::Days::new(i as u64 * 2)).collect();
            let p = PriceSeries::new(dates, closes).unwrap();
            let mut buf = Vec::new();
            write_prices(&p, &mut buf).unwrap();
            let q = ingest_prices(buf.as_slice(), &IngestOptions::default()).unwrap();
            prop_assert_eq!(p, q);
        }
    }

    #[test]
    fn qq_exponential_sanity() {
        let mut rng = rng_from_seed(11);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let q = qq_exponential(&xs, 99).unwrap();
        assert!((q.levels[0] - 0.01).abs() < 1e-12 && (q.levels[98] - 0.99).abs() < 1e-12);
        assert!(q.max_gap() < 0.05, "{}", q.max_gap());
    }

    #[test]
    fn read_column_by_name() {
        let xs = read_column("t,Volume\na,1\nb,\"2,500\"\n".as_bytes(), "volume").unwrap();
        assert_eq!(xs, vec![1.0, 2500.0]);
        assert!(matches!(
            read_column("volume\nx\n".as_bytes(), "volume"),
            Err(Error::Row { row: 2, .. })
        ));
        assert!(read_column("".as_bytes(), "volume").is_err());
    }

    #[test]
    fn qq_constant_and_errors() {
        let q = qq_exponential(&[2.0; 10], 4).unwrap();
        assert!(q.empirical.iter().all(|&e| e == 2.0));
        for (p, x) in q.levels.iter().zip(&q.exponential) {
            assert!((x + 2.0 * (1.0 - p).ln()).abs() < 1e-12);
        }
        assert!(qq_exponential(&[1.0], 4).is_err());
        assert!(qq_exponential(&[0.0, 0.0], 4).is_err());
        assert!(qq_exponential(&[1.0, -1.0], 4).is_err());
    }

    #[test]
    fn hawkes_gaps_have_heavier_upper_tail() {
        let p = HawkesParams::new(1.0, 1.0, 2.0).unwrap();
        let mut rng = rng_from_seed(4);
        let path = Sampler::Exact.sample(&p, 20_000.0, &mut rng).unwrap();
        let q = qq_exponential(&path.inter_arrival_times(), 99).unwrap();
        for k in 94..99 {
            assert!(q.empirical[k] > q.exponential[k], "p={}", q.levels[k]);
        }
    }

    fn day(d: u32, vols: &[f64], start_minute: u32) -> Vec<(NaiveDateTime, f64)> {
        let open = NaiveDate::from_ymd_opt(2019, 5, d)
            .unwrap()
            .and_hms_opt(9, start_minute, 0)
            .unwrap();
        vols.iter()
            .enumerate()
            .map(|(i, &v)| (open + chrono::Duration::minutes(i as i64), v))
            .collect()
    }

    fn series(days: Vec<Vec<(NaiveDateTime, f64)>>) -> VolumeSeries {
        let (t, v) = days.into_iter().flatten().unzip();
        VolumeSeries::new(t, v).unwrap()
    }

    #[test]
    fn profile_examples() {
        let one = daily_volume_profile(&series(vec![day(1, &[5.0; 30], 0)])).unwrap();
        assert!(one.mean_volume.iter().all(|&v| v == 5.0));
        assert_eq!(one.minute.len(), 30);

        let s = series(vec![day(1, &[2.0; 30], 0), day(2, &[4.0; 30], 7)]);
        assert_eq!(s.day_boundaries(), &[29, 59]);
        let two = daily_volume_profile(&s).unwrap();
        assert!(two.mean_volume.iter().all(|&v| v == 3.0));
        assert!(two.days.iter().all(|&d| d == 2));

        let peaked: Vec<f64> = (0..390)
            .map(|m| 100.0 - ((m as f64 - 200.0) / 20.0).powi(2))
            .collect();
        let p =
            daily_volume_profile(&series(vec![day(1, &peaked, 0), day(3, &peaked, 0)])).unwrap();
        assert_eq!(p.peak_minute(), Some(200));

        assert!(VolumeSeries::new(vec![], vec![])
            .map(|s| daily_volume_profile(&s))
            .unwrap()
            .is_err());
    }

    #[test]
    fn ingest_volumes_parses_and_validates() {
        let v = ingest_volumes(
            "timestamp,volume\n2019-05-01 09:30,10\n2019-05-01 09:31,\"1,200\"\n2019-05-02 09:30,3\n".as_bytes(),
            "timestamp",
            "volume",
        )
        .unwrap();
        assert_eq!(v.volumes(), &[10.0, 1200.0, 3.0]);
        assert_eq!(v.day_boundaries(), &[1, 2]);
        let bad = ingest_volumes(
            "timestamp,volume\n2019-05-01 09:30,-1\n".as_bytes(),
            "timestamp",
            "volume",
        );
        assert!(matches!(bad, Err(Error::Row { row: 2, .. })));
        assert!(ingest_volumes("timestamp,volume\n".as_bytes(), "timestamp", "volume").is_err());
    }

    fn small_target() -> ReturnsSeries {
        ReturnsSeries::from_returns((0..200).map(|i| ((i as f64) * 0.37).sin() * 0.03).collect())
            .unwrap()
    }

    #[test]
    fn fit_single_point_and_errors() {
        let grid = FitGrid {
            points: vec![GridPoint {
                v: 5.0,
                v0: 5.0,
                alpha: 1.0,
                beta: 2.0,
                a: 0.0,
            }],
        };
        let cfg = FitConfig::default();
        let r = fit_clustered_gaussian(&small_target(), &grid, &cfg).unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.best_score, r.table[0].score);
        assert_eq!(r.best.params.v, 5.0);

        let empty = FitGrid { points: vec![] };
        assert!(fit_clustered_gaussian(&small_target(), &empty, &cfg).is_err());
        let flat = ReturnsSeries::from_returns(vec![0.0; 5]).unwrap();
        assert!(fit_clustered_gaussian(&flat, &grid, &cfg).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_breaks_ties() {
        let grid = FitGrid::cartesian(&[2.0, 5.0], &[5.0], &[0.5, 1.0], &[2.0], &[0.0, 0.01]);
        assert_eq!(grid.points.len(), 8);
        let cfg = FitConfig::default();
        let a = fit_clustered_gaussian(&small_target(), &grid, &cfg).unwrap();
        let b = fit_clustered_gaussian(&small_target(), &grid, &cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.best, b.best);

        // identical scores: smallest α, then smallest v
        let same = GridPoint {
            v: 1e-12,
            v0: 1e-12,
            alpha: 1.0,
            beta: 2.0,
            a: 0.0,
        };
        let tied = FitGrid {
            points: vec![
                GridPoint { alpha: 1.5, ..same },
                GridPoint {
                    v: 1e-11,
                    v0: 1e-11,
                    ..same
                },
                same,
            ],
        };
        let r = fit_clustered_gaussian(&small_target(), &tied, &cfg).unwrap();
        assert!(r.table.iter().all(|g| g.score == r.best_score));
        assert_eq!(r.best.params.alpha, 1.0);
        assert_eq!(r.best.params.v, 1e-12);
    }
}
