//! Moments of `(N_t, λ_t)`.
//!
//! Two sources are provided:
//!
//! * closed forms: `E[N_t]`, `E[λ_t]` and the published second-order
//!   expressions for `E[λ_t²]`, `E[λ_t N_t]`, `E[N_t²]`, transcribed as printed
//!   and assuming `v0 = v`;
//! * an ODE oracle: the linear system for `E[N^j λ^i]` generated by the moment
//!   recursion
//!
//! ```text
//! d/dt E[N^m λ^n] = nβv E[N^m λ^{n-1}] - nβ E[N^m λ^n]
//!                 + Σ_{j<m} C(m,j) E[N^j λ^{n+1}]
//!                 + Σ_{j≤m} Σ_{i<n} C(m,j) C(n,i) α^{n-i} E[N^j λ^{i+1}]
//! ```
//!
//! integrated with fixed-step RK4 from the exact initial state. The ODE oracle
//! is the authoritative source; the second-order closed forms are only audited
//! against it.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    OdeOracle,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::ClosedForm => f.write_str("closed-form"),
            Provenance::OdeOracle => f.write_str("ode-oracle"),
        }
    }
}

/// The five first- and second-order moments at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSet {
    pub t: f64,
    pub e_n: f64,
    pub e_l: f64,
    pub e_l2: f64,
    pub e_nl: f64,
    pub e_n2: f64,
    pub provenance: Provenance,
}

impl MomentSet {
    pub fn values(&self) -> [(&'static str, f64); 5] {
        [
            ("e_N", self.e_n),
            ("e_L", self.e_l),
            ("e_L2", self.e_l2),
            ("e_NL", self.e_nl),
            ("e_N2", self.e_n2),
        ]
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "time must be finite and >= 0, got {t}"
        )))
    }
}

/// `E[N_t]` for `v0 = v`.
pub fn mean_n(params: &HawkesParams, t: f64) -> Result<f64> {
    params.validate()?;
    check_time(t)?;
    let HawkesParams { v, alpha, beta, .. } = *params;
    let r = alpha / beta;
    Ok(v * t / (1.0 - r)
        - r / ((1.0 - r) * (1.0 - r)) * (v / beta) * (1.0 - (-beta * (1.0 - r) * t).exp()))
}

/// `E[λ_t]` for `v0 = v`. For `v0 > v` use [`ode_moments`].
pub fn mean_lambda(params: &HawkesParams, t: f64) -> Result<f64> {
    params.validate()?;
    check_time(t)?;
    let HawkesParams { v, alpha, beta, .. } = *params;
    Ok(v / (beta - alpha) * (beta - alpha * (-(beta - alpha) * t).exp()))
}

/// Closed-form moments as published. `v0` is ignored.
pub fn closed_form_moments(params: &HawkesParams, t: f64) -> Result<MomentSet> {
    let e_n = mean_n(params, t)?;
    let e_l = mean_lambda(params, t)?;
    let HawkesParams {
        v,
        alpha: a,
        beta: b,
        ..
    } = *params;

    let forcing = v * (a * a + 2.0 * b * v);
    let big_a = forcing * (a / (-3.0 * b + 3.0 * a) - b / (-2.0 * b + 2.0 * a)) / (a - b);
    let big_b = forcing
        * (a * (t * (-3.0 * b + 3.0 * a)).exp() / (-3.0 * b + 3.0 * a)
            - b * (t * (-2.0 * b + 2.0 * a)).exp() / (-2.0 * b + 2.0 * a))
        / (a - b);
    let e_l2 = (-t * (-2.0 * b + 2.0 * a)).exp() * (v * v - big_a + big_b);

    // C_t/E_t and D_t/F_t are printed identically.
    let e2 = (2.0 * t * (a - b)).exp();
    let e3 = (3.0 * t * (a - b)).exp();
    let c = 9.0 * a * a * b + 12.0 * a * a * t + 24.0 * b * b * t - 6.0 * a.powi(3)
        + 18.0 * a * a * e3
        + 6.0 * a.powi(3) * e3
        + 18.0 * b * b * e2
        - 9.0 * a * a * b * e2
        - 12.0 * b * b * t * e2;
    let d = 32.0 * a * b * t + 12.0 * b.powi(3) * t * t * e2
        - 18.0 * a * b * e2
        - 18.0 * a * b * e3
        - 12.0 * a * b * b * t * t * e2
        - 12.0 * a * b * t * e2
        + 20.0 * a * b * t * e3;
    let decay = (-t * (a - b)).exp();
    let e_nl = t * t * decay * (c - d) / (36.0 * (a - b).powi(2));
    let e_n2 = t.powi(3) * decay * (c - d) / (18.0 * (a - b).powi(2))
        - t * t * (b / (2.0 * (a - b)) - a * (t * (a - b)).exp() / (2.0 * (a - b)));

    Ok(MomentSet {
        t,
        e_n,
        e_l,
        e_l2,
        e_nl,
        e_n2,
        provenance: Provenance::ClosedForm,
    })
}

/// Index of the mixed moment `E[N^n_pow λ^lambda_pow]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MomentIndex {
    pub n_pow: u32,
    pub lambda_pow: u32,
}

impl MomentIndex {
    pub const ONE: Self = Self::new(0, 0);
    pub const N: Self = Self::new(1, 0);
    pub const LAMBDA: Self = Self::new(0, 1);
    pub const N2: Self = Self::new(2, 0);
    pub const N_LAMBDA: Self = Self::new(1, 1);
    pub const LAMBDA2: Self = Self::new(0, 2);

    pub const fn new(n_pow: u32, lambda_pow: u32) -> Self {
        Self { n_pow, lambda_pow }
    }

    pub fn order(&self) -> u32 {
        self.n_pow + self.lambda_pow
    }
}

fn power(sym: &str, k: u32) -> String {
    const SUP: [&str; 10] = ["⁰", "¹", "²", "³", "⁴", "⁵", "⁶", "⁷", "⁸", "⁹"];
    match k {
        0 => String::new(),
        1 => sym.to_string(),
        k if k < 10 => format!("{sym}{}", SUP[k as usize]),
        k => format!("{sym}^{k}"),
    }
}

impl fmt::Display for MomentIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.order() == 0 {
            return f.write_str("1");
        }
        write!(
            f,
            "E[{}{}]",
            power("N", self.n_pow),
            power("λ", self.lambda_pow)
        )
    }
}

/// `coeff · v^v_pow · α^alpha_pow · β^beta_pow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Monomial {
    pub v_pow: u32,
    pub alpha_pow: u32,
    pub beta_pow: u32,
    pub coeff: i64,
}

impl Monomial {
    pub const fn new(coeff: i64, v_pow: u32, alpha_pow: u32, beta_pow: u32) -> Self {
        Self {
            v_pow,
            alpha_pow,
            beta_pow,
            coeff,
        }
    }

    pub fn evaluate(&self, p: &HawkesParams) -> f64 {
        self.coeff as f64
            * p.v.powi(self.v_pow as i32)
            * p.alpha.powi(self.alpha_pow as i32)
            * p.beta.powi(self.beta_pow as i32)
    }
}

/// A polynomial in `(v, α, β)` with integer coefficients, kept canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Coefficient(Vec<Monomial>);

impl Coefficient {
    pub fn from_monomials(monomials: impl IntoIterator<Item = Monomial>) -> Self {
        let mut merged: BTreeMap<(u32, u32, u32), i64> = BTreeMap::new();
        for m in monomials {
            *merged
                .entry((m.v_pow, m.alpha_pow, m.beta_pow))
                .or_default() += m.coeff;
        }
        let mut monos: Vec<Monomial> = merged
            .into_iter()
            .filter(|&(_, c)| c != 0)
            .map(|((v, a, b), c)| Monomial::new(c, v, a, b))
            .collect();
        monos.sort_by_key(|m| std::cmp::Reverse((m.alpha_pow, m.beta_pow, m.v_pow)));
        Self(monos)
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn evaluate(&self, p: &HawkesParams) -> f64 {
        self.0.iter().map(|m| m.evaluate(p)).sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_monomials(
            self.0
                .iter()
                .copied()
                .chain(other.0.iter().map(|m| Monomial {
                    coeff: -m.coeff,
                    ..*m
                })),
        )
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("0");
        }
        for (i, m) in self.0.iter().enumerate() {
            let sym = format!(
                "{}{}{}",
                power("α", m.alpha_pow),
                power("β", m.beta_pow),
                power("v", m.v_pow)
            );
            let mag = m.coeff.unsigned_abs();
            let body = match (mag, sym.is_empty()) {
                (_, true) => mag.to_string(),
                (1, false) => sym,
                (_, false) => format!("{mag}{sym}"),
            };
            match (i, m.coeff < 0) {
                (0, true) => write!(f, "-{body}")?,
                (0, false) => write!(f, "{body}")?,
                (_, true) => write!(f, " - {body}")?,
                (_, false) => write!(f, " + {body}")?,
            }
        }
        Ok(())
    }
}

/// `d/dt E[N^m λ^n]` as a linear combination of moments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MomentRhs {
    pub m: u32,
    pub n: u32,
    terms: BTreeMap<MomentIndex, Coefficient>,
}

impl MomentRhs {
    fn from_terms(m: u32, n: u32, raw: Vec<(MomentIndex, Monomial)>) -> Self {
        let mut grouped: BTreeMap<MomentIndex, Vec<Monomial>> = BTreeMap::new();
        for (idx, mono) in raw {
            grouped.entry(idx).or_default().push(mono);
        }
        let terms = grouped
            .into_iter()
            .map(|(idx, monos)| (idx, Coefficient::from_monomials(monos)))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        Self { m, n, terms }
    }

    pub fn target(&self) -> MomentIndex {
        MomentIndex::new(self.m, self.n)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MomentIndex, &Coefficient)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, idx: MomentIndex) -> Coefficient {
        self.terms.get(&idx).cloned().unwrap_or_default()
    }

    /// Numeric coefficients at `params`.
    pub fn evaluate(&self, params: &HawkesParams) -> Vec<(MomentIndex, f64)> {
        self.terms
            .iter()
            .map(|(idx, c)| (*idx, c.evaluate(params)))
            .collect()
    }

    /// Terms of `self - other`; empty when the two agree exactly.
    pub fn difference(&self, other: &Self) -> Vec<(MomentIndex, Coefficient)> {
        let keys: std::collections::BTreeSet<_> = self
            .terms
            .keys()
            .chain(other.terms.keys())
            .copied()
            .collect();
        keys.into_iter()
            .map(|k| (k, self.coefficient(k).sub(&other.coefficient(k))))
            .filter(|(_, c)| !c.is_zero())
            .collect()
    }
}

impl fmt::Display for MomentRhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d/dt {} =", self.target())?;
        if self.terms.is_empty() {
            return f.write_str(" 0");
        }
        for (i, (idx, c)) in self.terms.iter().enumerate() {
            let sep = if i == 0 { " " } else { " + " };
            if *idx == MomentIndex::ONE {
                write!(f, "{sep}({c})")?;
            } else {
                write!(f, "{sep}({c})·{idx}")?;
            }
        }
        Ok(())
    }
}

fn binomial(n: u32, k: u32) -> i64 {
    let k = k.min(n - k);
    (0..k).fold(1i64, |acc, i| acc * (n - i) as i64 / (i + 1) as i64)
}

/// Expands the moment recursion for `d/dt E[N^m λ^n]`.
pub fn moment_ode_rhs(m: u32, n: u32) -> Result<MomentRhs> {
    if m == 0 && n == 0 {
        return Err(Error::InvalidInput(
            "moment order m + n must be at least 1".to_string(),
        ));
    }
    let mut raw = Vec::new();
    if n >= 1 {
        raw.push((MomentIndex::new(m, n - 1), Monomial::new(n as i64, 1, 0, 1)));
        raw.push((MomentIndex::new(m, n), Monomial::new(-(n as i64), 0, 0, 1)));
    }
    for j in 0..m {
        raw.push((
            MomentIndex::new(j, n + 1),
            Monomial::new(binomial(m, j), 0, 0, 0),
        ));
    }
    for j in 0..=m {
        for i in 0..n {
            raw.push((
                MomentIndex::new(j, i + 1),
                Monomial::new(binomial(m, j) * binomial(n, i), 0, n - i, 0),
            ));
        }
    }
    Ok(MomentRhs::from_terms(m, n, raw))
}

/// The three second-order equations exactly as published, in the order
/// `E[N²]`, `E[Nλ]`, `E[λ²]`.
pub fn printed_second_order_rhs() -> [MomentRhs; 3] {
    use MomentIndex as I;
    let one = |c| Monomial::new(c, 0, 0, 0);
    [
        MomentRhs::from_terms(2, 0, vec![(I::LAMBDA, one(1)), (I::N_LAMBDA, one(2))]),
        MomentRhs::from_terms(
            1,
            1,
            vec![
                (I::N, Monomial::new(1, 1, 0, 1)),
                (I::N_LAMBDA, Monomial::new(1, 0, 1, 0)),
                (I::N_LAMBDA, Monomial::new(-1, 0, 0, 1)),
                (I::LAMBDA2, one(1)),
                (I::LAMBDA, Monomial::new(1, 0, 1, 0)),
            ],
        ),
        MomentRhs::from_terms(
            0,
            2,
            vec![
                (I::LAMBDA, Monomial::new(2, 1, 0, 1)),
                (I::LAMBDA2, Monomial::new(-2, 0, 0, 1)),
            ],
        ),
    ]
}

/// Recursion-vs-published comparison for one second-order equation.
#[derive(Debug, Clone, Serialize)]
pub struct RhsComparison {
    pub m: u32,
    pub n: u32,
    pub recursion: String,
    pub printed: String,
    /// `recursion - printed`, rendered term by term.
    pub difference: Vec<String>,
}

impl RhsComparison {
    pub fn agrees(&self) -> bool {
        self.difference.is_empty()
    }
}

pub fn compare_printed_rhs() -> Vec<RhsComparison> {
    printed_second_order_rhs()
        .into_iter()
        .map(|printed| {
            let rec = moment_ode_rhs(printed.m, printed.n).expect("order >= 1");
            RhsComparison {
                m: printed.m,
                n: printed.n,
                recursion: rec.to_string(),
                printed: printed.to_string(),
                difference: rec
                    .difference(&printed)
                    .into_iter()
                    .map(|(idx, c)| format!("({c})·{idx}"))
                    .collect(),
            }
        })
        .collect()
}

/// Which right-hand sides drive a [`MomentOdeSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsSource {
    /// Expanded from the moment recursion.
    Recursion,
    /// Second-order rows replaced by the published equations.
    Printed,
}

/// Linear system `y' = A y + c` over all moments `E[N^j λ^i]`, `1 ≤ j+i ≤ order`.
#[derive(Debug, Clone)]
pub struct MomentOdeSystem {
    params: HawkesParams,
    basis: Vec<MomentIndex>,
    matrix: Vec<Vec<f64>>,
    forcing: Vec<f64>,
}

impl MomentOdeSystem {
    /// Second-order system from the recursion: the oracle used everywhere.
    pub fn new(params: HawkesParams) -> Result<Self> {
        Self::with_order(params, 2, RhsSource::Recursion)
    }

    pub fn with_order(params: HawkesParams, order: u32, source: RhsSource) -> Result<Self> {
        params.validate()?;
        if order == 0 {
            return Err(Error::InvalidInput("order must be >= 1".to_string()));
        }
        if source == RhsSource::Printed && order != 2 {
            return Err(Error::InvalidInput(
                "published equations exist for order 2 only".to_string(),
            ));
        }
        let basis: Vec<MomentIndex> = (1..=order)
            .flat_map(|k| (0..=k).map(move |j| MomentIndex::new(j, k - j)))
            .collect();
        let pos = |idx: &MomentIndex| basis.iter().position(|b| b == idx);
        let printed = printed_second_order_rhs();
        let mut matrix = vec![vec![0.0; basis.len()]; basis.len()];
        let mut forcing = vec![0.0; basis.len()];
        for (row, idx) in basis.iter().enumerate() {
            let rhs = match source {
                RhsSource::Printed if idx.order() == 2 => printed
                    .iter()
                    .find(|r| r.target() == *idx)
                    .cloned()
                    .expect("printed table covers order 2"),
                _ => moment_ode_rhs(idx.n_pow, idx.lambda_pow)?,
            };
            for (term, coeff) in rhs.evaluate(&params) {
                if term == MomentIndex::ONE {
                    forcing[row] += coeff;
                } else {
                    let col = pos(&term).ok_or_else(|| {
                        Error::InvalidInput(format!("{term} outside the closed basis"))
                    })?;
                    matrix[row][col] += coeff;
                }
            }
        }
        Ok(Self {
            params,
            basis,
            matrix,
            forcing,
        })
    }

    pub fn basis(&self) -> &[MomentIndex] {
        &self.basis
    }

    pub fn params(&self) -> &HawkesParams {
        &self.params
    }

    /// `E[N^j λ^i](0)`: `v0^i` when `j = 0`, otherwise 0.
    pub fn initial_state(&self) -> Vec<f64> {
        self.basis
            .iter()
            .map(|idx| {
                if idx.n_pow == 0 {
                    self.params.v0.powi(idx.lambda_pow as i32)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn derivative(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.forcing.clone();
        self.derivative_into(y, &mut out);
        out
    }

    fn derivative_into(&self, y: &[f64], out: &mut [f64]) {
        for (row, o) in out.iter_mut().enumerate() {
            *o = self.forcing[row]
                + self.matrix[row]
                    .iter()
                    .zip(y)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
    }

    /// Advances `y` by `steps` RK4 steps of size `h`.
    pub fn advance(&self, y: &mut [f64], h: f64, steps: usize) {
        let d = y.len();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
            vec![0.0; d],
            vec![0.0; d],
            vec![0.0; d],
            vec![0.0; d],
            vec![0.0; d],
        );
        for _ in 0..steps {
            self.derivative_into(y, &mut k1);
            for i in 0..d {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            self.derivative_into(&tmp, &mut k2);
            for i in 0..d {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            self.derivative_into(&tmp, &mut k3);
            for i in 0..d {
                tmp[i] = y[i] + h * k3[i];
            }
            self.derivative_into(&tmp, &mut k4);
            for i in 0..d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }

    /// State at each of the ascending `times`, integrating with step at most `step`.
    pub fn solve(&self, times: &[f64], step: f64) -> Result<Vec<Vec<f64>>> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidInput(format!("step must be > 0, got {step}")));
        }
        let mut y = self.initial_state();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            check_time(t)?;
            if t < now {
                return Err(Error::InvalidInput("times must be ascending".to_string()));
            }
            let span = t - now;
            if span > 0.0 {
                let steps = (span / step).ceil().max(1.0) as usize;
                self.advance(&mut y, span / steps as f64, steps);
            }
            now = t;
            out.push(y.clone());
        }
        Ok(out)
    }

    pub fn get(&self, state: &[f64], idx: MomentIndex) -> Option<f64> {
        self.basis.iter().position(|b| *b == idx).map(|i| state[i])
    }

    fn moment_set(&self, t: f64, state: &[f64]) -> MomentSet {
        let g = |idx| self.get(state, idx).expect("order >= 2");
        MomentSet {
            t,
            e_n: g(MomentIndex::N),
            e_l: g(MomentIndex::LAMBDA),
            e_l2: g(MomentIndex::LAMBDA2),
            e_nl: g(MomentIndex::N_LAMBDA),
            e_n2: g(MomentIndex::N2),
            provenance: Provenance::OdeOracle,
        }
    }
}

/// ODE-oracle moments at `t`.
pub fn ode_moments(params: &HawkesParams, t: f64, step: f64) -> Result<MomentSet> {
    Ok(ode_moment_table(params, &[t], step)?.remove(0))
}

/// ODE-oracle moments at each of the ascending `times`, in one integration pass.
pub fn ode_moment_table(params: &HawkesParams, times: &[f64], step: f64) -> Result<Vec<MomentSet>> {
    let sys = MomentOdeSystem::new(*params)?;
    let states = sys.solve(times, step)?;
    Ok(times
        .iter()
        .zip(&states)
        .map(|(&t, s)| sys.moment_set(t, s))
        .collect())
}

/// One closed-form versus ODE-oracle comparison.
#[derive(Debug, Clone, Serialize)]
pub struct DiscrepancyRow {
    pub t: f64,
    pub moment: &'static str,
    pub closed_form: f64,
    pub ode: f64,
    pub abs_diff: f64,
    /// `|closed - ode| / |ode|`; `NaN` when the oracle value is 0.
    pub rel_diff: f64,
}

/// Compares every closed-form moment with the ODE oracle at `times`.
pub fn audit_closed_forms(
    params: &HawkesParams,
    times: &[f64],
    step: f64,
) -> Result<Vec<DiscrepancyRow>> {
    let ode = ode_moment_table(params, times, step)?;
    let mut rows = Vec::with_capacity(times.len() * 5);
    for o in &ode {
        let cf = closed_form_moments(params, o.t)?;
        for ((name, c), (_, x)) in cf.values().into_iter().zip(o.values()) {
            let abs_diff = (c - x).abs();
            rows.push(DiscrepancyRow {
                t: o.t,
                moment: name,
                closed_form: c,
                ode: x,
                abs_diff,
                rel_diff: if x == 0.0 {
                    if abs_diff == 0.0 {
                        0.0
                    } else {
                        f64::NAN
                    }
                } else {
                    abs_diff / x.abs()
                },
            });
        }
    }
    Ok(rows)
}
