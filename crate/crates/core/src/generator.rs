//! Infinitesimal generator of `Y_t = (λ_t, N_t, B(N_t))` at `y = (v, 0, 0)`,
//! and a numerical audit of the small-time limits it is assembled from.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;
use crate::moments::{closed_form_moments, MomentOdeSystem, MomentSet, Provenance};

/// First and second partial derivatives of `f(l, n, b)` at `(v, 0, 0)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Partials {
    pub f_l: f64,
    pub f_n: f64,
    pub f_b: f64,
    pub f_ll: f64,
    pub f_ln: f64,
    pub f_lb: f64,
    pub f_nb: f64,
    pub f_nn: f64,
    pub f_bb: f64,
}

impl Partials {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.f_l, self.f_n, self.f_b, self.f_ll, self.f_ln, self.f_lb, self.f_nb, self.f_nn,
            self.f_bb,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        let [f_l, f_n, f_b, f_ll, f_ln, f_lb, f_nb, f_nn, f_bb] = a;
        Self {
            f_l,
            f_n,
            f_b,
            f_ll,
            f_ln,
            f_lb,
            f_nb,
            f_nn,
            f_bb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorInput {
    pub partials: Partials,
    pub params: HawkesParams,
}

/// Weights of each partial in `𝒜f(v, 0, 0)`. Terms not listed are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorCoefficients {
    pub c_l: f64,
    pub c_n: f64,
    pub c_ll: f64,
    pub c_ln: f64,
    pub c_bb: f64,
}

impl GeneratorCoefficients {
    pub fn new(p: &HawkesParams) -> Self {
        let HawkesParams { v, alpha, .. } = *p;
        Self {
            c_l: alpha * v,
            c_n: v,
            c_ll: 0.5 * printed_fifth_limit(p),
            c_ln: -v * v,
            c_bb: 0.5 * v,
        }
    }
}

/// `-2v²(α-β) + v(α² + 2βv) - 2v²`, the published value of
/// `lim E[(λ_t - v)²]/t`.
pub fn printed_fifth_limit(p: &HawkesParams) -> f64 {
    let HawkesParams { v, alpha, beta, .. } = *p;
    -2.0 * v * v * (alpha - beta) + v * (alpha * alpha + 2.0 * beta * v) - 2.0 * v * v
}

/// `𝒜f(y) = f_l·αv + f_n·v + ½f_ll·(...) - f_ln·v² + ½f_bb·v`.
pub fn apply_generator(input: &GeneratorInput) -> Result<f64> {
    input.params.validate()?;
    let d = &input.partials;
    if d.as_array().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("partials must be finite".to_string()));
    }
    let c = GeneratorCoefficients::new(&input.params);
    Ok(d.f_l * c.c_l + d.f_n * c.c_n + d.f_ll * c.c_ll + d.f_ln * c.c_ln + d.f_bb * c.c_bb)
}

/// Default decreasing sequence of small times for [`verify_limits`].
pub const DEFAULT_T_VALUES: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

/// Numeric versus published value of one `lim_{t↓0} E[·]/t`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitEstimate {
    pub name: &'static str,
    pub printed: f64,
    /// Extrapolated ODE-oracle estimate.
    pub estimated: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub t_sequence: Vec<f64>,
    /// ODE-oracle `E[·]/t` at each entry of `t_sequence`.
    pub ratios: Vec<f64>,
    /// The same extrapolation applied to the published closed forms.
    pub closed_form_estimate: f64,
}

impl LimitEstimate {
    /// 1% relative agreement, or 1e-2 absolute when the published value is 0.
    pub fn agrees(&self) -> bool {
        if self.printed == 0.0 {
            self.abs_err < 1e-2
        } else {
            self.rel_err < 1e-2
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub params: HawkesParams,
    pub limits: Vec<LimitEstimate>,
}

impl LimitReport {
    pub fn get(&self, name: &str) -> Option<&LimitEstimate> {
        self.limits.iter().find(|l| l.name == name)
    }
}

/// Polynomial extrapolation to `t = 0` through `(t_i, g_i)` (Neville).
pub fn extrapolate_to_zero(ts: &[f64], gs: &[f64]) -> f64 {
    let mut p = gs.to_vec();
    let n = ts.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (ts[i + k] * p[i] - ts[i] * p[i + 1]) / (ts[i + k] - ts[i]);
        }
    }
    p[0]
}

type Numerator = fn(&MomentSet, f64) -> f64;

const LIMITS: [(&str, Numerator); 5] = [
    ("E[lambda_t - v]/t", |m, v| m.e_l - v),
    ("E[N_t]/t", |m, _| m.e_n),
    ("E[lambda_t N_t]/t", |m, _| m.e_nl),
    ("E[N_t^2]/t", |m, _| m.e_n2),
    ("E[(lambda_t - v)^2]/t", |m, v| {
        m.e_l2 - 2.0 * v * m.e_l + v * v
    }),
];

/// Estimates the five limits from the ODE oracle and compares them with the
/// published values. Disagreement is reported, never raised.
pub fn verify_limits(params: &HawkesParams, t_values: &[f64]) -> Result<LimitReport> {
    params.validate()?;
    if t_values.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two t values".to_string(),
        ));
    }
    if t_values.iter().any(|&t| !(t.is_finite() && t > 0.0))
        || t_values.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidInput(
            "t values must be positive and strictly decreasing".to_string(),
        ));
    }
    let sys = MomentOdeSystem::new(*params)?;
    let ode: Vec<MomentSet> = t_values
        .iter()
        .map(|&t| {
            // at least 64 steps, never coarser than 1e-5
            let step = (t / 64.0).min(1e-5);
            let state = sys.solve(&[t], step)?.remove(0);
            let g = |idx| sys.get(&state, idx).expect("second order basis");
            use crate::moments::MomentIndex as I;
            Ok(MomentSet {
                t,
                e_n: g(I::N),
                e_l: g(I::LAMBDA),
                e_l2: g(I::LAMBDA2),
                e_nl: g(I::N_LAMBDA),
                e_n2: g(I::N2),
                provenance: Provenance::OdeOracle,
            })
        })
        .collect::<Result<_>>()?;
    let closed: Vec<MomentSet> = t_values
        .iter()
        .map(|&t| closed_form_moments(params, t))
        .collect::<Result<_>>()?;

    let c = GeneratorCoefficients::new(params);
    let printed = [c.c_l, c.c_n, 0.0, 0.0, printed_fifth_limit(params)];
    let v = params.v;
    let limits = LIMITS
        .iter()
        .zip(printed)
        .map(|(&(name, num), printed)| {
            let ratios: Vec<f64> = ode.iter().map(|m| num(m, v) / m.t).collect();
            let cf: Vec<f64> = closed.iter().map(|m| num(m, v) / m.t).collect();
            let estimated = extrapolate_to_zero(t_values, &ratios);
            let abs_err = (estimated - printed).abs();
            LimitEstimate {
                name,
                printed,
                estimated,
                abs_err,
                rel_err: if printed == 0.0 {
                    f64::NAN
                } else {
                    abs_err / printed.abs()
                },
                t_sequence: t_values.to_vec(),
                ratios,
                closed_form_estimate: extrapolate_to_zero(t_values, &cf),
            }
        })
        .collect();
    Ok(LimitReport {
        params: *params,
        limits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p112() -> HawkesParams {
        HawkesParams::new(1.0, 1.0, 2.0).unwrap()
    }

    fn gen(partials: Partials, params: HawkesParams) -> f64 {
        apply_generator(&GeneratorInput { partials, params }).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        assert_eq!(gen(Partials::default(), p112()), 0.0);
    }

    #[test]
    fn count_coordinate_gives_baseline() {
        let p = HawkesParams::new(2.5, 1.0, 3.0).unwrap();
        let d = Partials {
            f_n: 1.0,
            ..Default::default()
        };
        assert_eq!(gen(d, p), 2.5);
    }

    #[test]
    fn squared_brownian_coordinate() {
        let p = HawkesParams::new(3.0, 1.0, 2.0).unwrap();
        let d = Partials {
            f_bb: 2.0,
            ..Default::default()
        };
        assert_eq!(gen(d, p), 3.0);
    }

    #[test]
    fn coefficient_values() {
        let c = GeneratorCoefficients::new(&p112());
        assert_eq!(c.c_l, 1.0);
        assert_eq!(c.c_n, 1.0);
        // -2(1-2) + (1 + 4) - 2 = 5
        assert_eq!(c.c_ll, 2.5);
        assert_eq!(c.c_ln, -1.0);
        assert_eq!(c.c_bb, 0.5);
    }

    #[test]
    fn rejects_non_finite_partials() {
        let d = Partials {
            f_l: f64::NAN,
            ..Default::default()
        };
        assert!(apply_generator(&GeneratorInput {
            partials: d,
            params: p112()
        })
        .is_err());
    }

    #[test]
    fn neville_recovers_polynomials() {
        let ts = [1e-2, 1e-3, 1e-4, 1e-5];
        let gs: Vec<f64> = ts.iter().map(|t| 3.0 - 2.0 * t + 5.0 * t * t).collect();
        assert!((extrapolate_to_zero(&ts, &gs) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn limits_report() {
        let r = verify_limits(&p112(), &DEFAULT_T_VALUES).unwrap();
        assert_eq!(r.limits.len(), 5);
        let l1 = r.get("E[lambda_t - v]/t").unwrap();
        let l2 = r.get("E[N_t]/t").unwrap();
        assert!(l1.agrees() && l2.agrees());
        // raw ratio at t = 1e-4 is already within 1%
        assert!((l1.ratios[2] - 1.0).abs() < 1e-2);
        assert!((l2.ratios[2] - 1.0).abs() < 1e-2);
        // The ODE oracle gives lim E[λN]/t = v(v + α) and lim E[N²]/t = v,
        // lim E[(λ-v)²]/t = α²v; the published values are 0, 0 and 5 here.
        let l3 = r.get("E[lambda_t N_t]/t").unwrap();
        let l4 = r.get("E[N_t^2]/t").unwrap();
        let l5 = r.get("E[(lambda_t - v)^2]/t").unwrap();
        assert!((l3.estimated - 2.0).abs() < 1e-6, "{}", l3.estimated);
        assert!((l4.estimated - 1.0).abs() < 1e-6, "{}", l4.estimated);
        assert!((l5.estimated - 1.0).abs() < 1e-6, "{}", l5.estimated);
        assert_eq!(l5.printed, 5.0);
        assert!(!l3.agrees() && !l4.agrees());
        // the published closed forms carry t² and t³ prefactors
        assert!(l3.closed_form_estimate.abs() < 1e-6);
        assert!(l4.closed_form_estimate.abs() < 1e-6);
    }

    #[test]
    fn limits_report_is_stable_across_sequences() {
        let a = verify_limits(&p112(), &DEFAULT_T_VALUES).unwrap();
        let b = verify_limits(&p112(), &[2e-2, 2e-3, 2e-4, 2e-5]).unwrap();
        for (x, y) in a.limits.iter().zip(&b.limits) {
            assert!((x.estimated - y.estimated).abs() < 1e-6 * x.estimated.abs().max(1.0));
        }
    }

    #[test]
    fn limits_input_validation() {
        assert!(verify_limits(&p112(), &[1e-3]).is_err());
        assert!(verify_limits(&p112(), &[1e-3, 1e-2]).is_err());
        assert!(verify_limits(&p112(), &[1e-3, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn generator_is_linear(
            a in proptest::array::uniform9(-10.0f64..10.0),
            b in proptest::array::uniform9(-10.0f64..10.0),
            s in -3.0f64..3.0,
            t in -3.0f64..3.0,
        ) {
            let p = HawkesParams::new(1.7, 0.4, 1.1).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + t * y).collect();
            let lhs = gen(Partials::from_array(mix.try_into().unwrap()), p);
            let rhs = s * gen(Partials::from_array(a), p) + t * gen(Partials::from_array(b), p);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
