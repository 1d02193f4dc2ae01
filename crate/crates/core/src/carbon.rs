//! The cap-and-trade model: parameters, the matrices it maps to, and the
//! economic quantities read off the adjoint.
//!
//! State is `(K, X̃)` (capital, bank account net of emissions), control is
//! `(K^f, K^g, α, β)` (fossil and green capital, abatement, trading rate).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lq_problem::{Dims, GeneralLQSpec, LqCoefficients, NoiseChannel, Schedule, TimeGrid};
use crate::riccati::Variant;

/// Piecewise-linear function of time given by `(t, value)` knots, flat outside them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    knots: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn constant(v: f64) -> Self {
        TimeSeries { knots: vec![(0.0, v)] }
    }

    pub fn new(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("time series needs at least one point".into()));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::Config("time series has non-finite points".into()));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("time series has repeated times".into()));
        }
        Ok(TimeSeries { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.knots.as_slice() {
            [(_, v)] => Some(*v),
            _ => None,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|(s, _)| *s <= t);
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarbonParams {
    pub kappa_f: f64,
    pub kappa_g: f64,
    /// Emission intensity of fossil capital.
    pub kappa_e: f64,
    /// Capital depreciation rate.
    pub delta: f64,
    pub sigma: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Volatility of the allowance process.
    pub sigma_tilde2: f64,
    /// Loading of business-as-usual emissions on the common shock.
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    /// Degree of substitution between firms' goods, 0 monopoly, 1 perfect competition.
    pub gamma: f64,
    /// Technology level in the production `A_k K`.
    pub a_k: f64,
    /// Market depth.
    pub nu: f64,
    pub eta: f64,
    pub h: f64,
    pub c11: f64,
    pub c12: f64,
    pub c21: f64,
    pub c22: f64,
    /// Weight of the terminal penalty on the bank account.
    pub lambda: f64,
    /// Allowance allocation rate.
    pub atilde: TimeSeries,
    pub horizon: f64,
    pub kappa0: f64,
    pub e0: f64,
    pub a0: f64,
}

impl Default for CarbonParams {
    fn default() -> Self {
        let gamma = 0.5;
        let horizon = 5.0;
        CarbonParams {
            kappa_f: 5.0,
            kappa_g: 3.0 * gamma + 0.2,
            kappa_e: 2.0,
            delta: 0.01,
            sigma: 0.005,
            sigma1: 0.2,
            sigma2: 0.5,
            sigma_tilde2: 0.2,
            rho: 0.92,
            a: 50.0,
            b: 0.07,
            gamma,
            a_k: 2.0,
            nu: 285.713,
            eta: 0.211,
            h: 80.0,
            c11: 0.01,
            c12: 3.0,
            c21: 0.02,
            c22: 4.0,
            lambda: 7.5e-5,
            atilde: TimeSeries::constant(0.5 / horizon),
            horizon,
            kappa0: 30.0,
            e0: 4.0,
            a0: 0.1,
        }
    }
}

impl CarbonParams {
    /// Green-capital efficiency tied to the competition level.
    pub fn default_kappa_g(gamma: f64) -> f64 {
        3.0 * gamma + 0.2
    }

    pub fn default_atilde(horizon: f64) -> f64 {
        0.5 / horizon
    }

    pub fn initial_state(&self) -> [f64; 2] {
        [self.kappa0, self.a0 - self.e0]
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("kappa_f", self.kappa_f),
            ("kappa_g", self.kappa_g),
            ("kappa_e", self.kappa_e),
            ("delta", self.delta),
            ("sigma", self.sigma),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma_tilde2", self.sigma_tilde2),
            ("rho", self.rho),
            ("a", self.a),
            ("b", self.b),
            ("gamma", self.gamma),
            ("A_k", self.a_k),
            ("nu", self.nu),
            ("eta", self.eta),
            ("h", self.h),
            ("c11", self.c11),
            ("c12", self.c12),
            ("c21", self.c21),
            ("c22", self.c22),
            ("lambda", self.lambda),
            ("T", self.horizon),
            ("kappa0", self.kappa0),
            ("E0", self.e0),
            ("A0", self.a0),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        for (name, v) in [("nu", self.nu), ("eta", self.eta), ("c12", self.c12), ("c22", self.c22), ("T", self.horizon)] {
            if v <= 0.0 {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("sigma", self.sigma),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma_tilde2", self.sigma_tilde2),
            ("b", self.b),
        ] {
            if v < 0.0 {
                return Err(Error::param(name, format!("must be nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::param("rho", format!("must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// `R = diag(c12, c22, 1/(2η), 1/(2ν))`.
    pub fn control_cost(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            self.c12,
            self.c22,
            1.0 / (2.0 * self.eta),
            1.0 / (2.0 * self.nu),
        ]))
    }

    pub fn drift_control(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 4, &[self.kappa_f, self.kappa_g, 0.0, 0.0, -self.kappa_e, 0.0, 1.0, 1.0])
    }

    /// Linear control cost without the price term.
    pub fn clearing_offset(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.c11 / 2.0, self.c21 / 2.0, self.h / 2.0, 0.0])
    }

    /// Coupling that turns `β = −2ν(y₂ + ω̄/2)` into `β = −2ν(y₂ − ȳ₂)` once the
    /// clearing price `ω̄ = −2ȳ₂` is substituted.
    pub fn clearing_coupling(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(4, 2);
        d[(3, 1)] = -1.0;
        d
    }
}

/// Carbon model as a general LQ problem on `grid`.
///
/// Exogenous and mean-field-control variants take the permit price as input; the
/// endogenous variant derives it from market clearing and rejects one.
pub fn build_spec(
    params: &CarbonParams,
    variant: Variant,
    price: Option<&TimeSeries>,
    grid: TimeGrid,
) -> Result<GeneralLQSpec> {
    params.validate()?;
    if (grid.horizon() - params.horizon).abs() > 1e-9 * params.horizon {
        return Err(Error::dim("grid horizon", params.horizon, grid.horizon()));
    }
    let dims = Dims { d: 2, d0: 2, d1: 3, d2: 4 };
    let mut c = LqCoefficients::zeros(dims, grid);
    let p = params;

    c.drift_offset = match p.atilde.as_constant() {
        Some(v) => Schedule::constant(&[0.0, v]),
        None => Schedule::from_fn(grid, |t| DVector::from_vec(vec![0.0, p.atilde.at(t)]))?,
    };
    c.drift_state = DMatrix::from_row_slice(2, 2, &[-p.delta, 0.0, 0.0, 0.0]);
    c.drift_control = p.drift_control();

    let mut capital = NoiseChannel::zeros(2, 4);
    capital.state = DMatrix::from_row_slice(2, 2, &[p.sigma, 0.0, 0.0, 0.0]);
    let idio_emission = Schedule::constant(&[0.0, -p.sigma1 * (1.0 - p.rho * p.rho).max(0.0).sqrt()]);
    let idio_other = Schedule::constant(&[0.0, -p.sigma2]);
    c.idiosyncratic = vec![
        capital,
        NoiseChannel::additive(idio_emission, 2, 4),
        NoiseChannel::additive(idio_other, 2, 4),
    ];
    c.common = vec![
        NoiseChannel::additive(Schedule::constant(&[0.0, -p.sigma1 * p.rho]), 2, 4),
        NoiseChannel::additive(Schedule::constant(&[0.0, p.sigma_tilde2]), 2, 4),
    ];

    let ak2 = p.a_k * p.a_k;
    c.state_cost = DMatrix::from_row_slice(2, 2, &[p.b * (1.0 - p.gamma) * ak2, 0.0, 0.0, 0.0]);
    c.mean_state_cost = DMatrix::from_row_slice(2, 2, &[p.b * p.gamma * ak2 / 2.0, 0.0, 0.0, 0.0]);
    c.control_cost = p.control_cost();
    c.state_linear = Schedule::constant(&[-p.a * p.a_k / 2.0, 0.0]);
    c.terminal = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, p.lambda]);

    let base = p.clearing_offset();
    match variant {
        Variant::Endogenous => {
            if price.is_some() {
                return Err(Error::Config("the endogenous variant computes its own price".into()));
            }
            c.control_linear = Schedule::Constant(base.clone());
            c.clearing_coupling = p.clearing_coupling();
            c.clearing_offset = base;
        }
        Variant::Exogenous | Variant::GeneralMfc => {
            let price = price.ok_or_else(|| Error::Config(format!("the {variant} variant needs a price schedule")))?;
            c.control_linear = match price.as_constant() {
                Some(w) => Schedule::constant(&[base[0], base[1], base[2], w / 2.0]),
                None => Schedule::from_fn(grid, |t| DVector::from_vec(vec![base[0], base[1], base[2], price.at(t) / 2.0]))?,
            };
            c.clearing_offset = base;
        }
    }
    GeneralLQSpec::new(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WellPosedness {
    /// `κ_f²/c12 + κ_g²/c22 − κ_fκ_e/c12`.
    pub capital_margin: f64,
    /// `2η + ν + κ_e²/c12 − κ_fκ_e/c12`.
    pub bank_margin: f64,
}

impl WellPosedness {
    pub fn holds(&self) -> bool {
        self.capital_margin > 0.0 && self.bank_margin > 0.0
    }
}

/// Existence and uniqueness condition for the clearing equilibrium.
pub fn check_wellposedness(params: &CarbonParams) -> WellPosedness {
    let p = params;
    WellPosedness {
        capital_margin: p.kappa_f * p.kappa_f / p.c12 + p.kappa_g * p.kappa_g / p.c22 - p.kappa_f * p.kappa_e / p.c12,
        bank_margin: 2.0 * p.eta + p.nu + p.kappa_e * p.kappa_e / p.c12 - p.kappa_f * p.kappa_e / p.c12,
    }
}

/// Goods price `a − b(1−γ)A_k k − bγA_k k̄`.
pub fn inverse_demand(k: f64, kbar: f64, params: &CarbonParams) -> f64 {
    let p = params;
    p.a - p.b * (1.0 - p.gamma) * p.a_k * k - p.b * p.gamma * p.a_k * kbar
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Controls {
    pub kf: f64,
    pub kg: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Controls {
    pub fn from_slice(v: &[f64]) -> Self {
        Controls {
            kf: v[0],
            kg: v[1],
            alpha: v[2],
            beta: v[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.kf, self.kg, self.alpha, self.beta]
    }
}

/// Firm's trading rate given its own and the mean bank-account adjoint.
pub fn trading_rate(y2: f64, ybar2: f64, nu: f64) -> f64 {
    -2.0 * nu * y2 + 2.0 * nu * ybar2
}

/// Controls minimizing the Hamiltonian at adjoint `y`.
///
/// With an exogenous price `ω̄` the trade is `−2ν y₂ − ν ω̄`; with the clearing price
/// it is `−2ν y₂ + 2ν ȳ₂`.
pub fn coupling_controls(
    y: [f64; 2],
    ybar: [f64; 2],
    omega: Option<f64>,
    params: &CarbonParams,
    variant: Variant,
) -> Result<Controls> {
    let p = params;
    let beta = match variant {
        Variant::Endogenous => trading_rate(y[1], ybar[1], p.nu),
        Variant::Exogenous | Variant::GeneralMfc => {
            let w = omega.ok_or_else(|| Error::Config(format!("the {variant} variant needs a permit price")))?;
            -2.0 * p.nu * y[1] - p.nu * w
        }
    };
    Ok(Controls {
        kf: -(p.kappa_f / p.c12) * y[0] + (p.kappa_e / p.c12) * y[1] - p.c11 / (2.0 * p.c12),
        kg: -(p.kappa_g / p.c22) * y[0] - p.c21 / (2.0 * p.c22),
        alpha: -2.0 * p.eta * y[1] - p.eta * p.h,
        beta,
    })
}

/// Whose output sets the firm's revenue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CostMode {
    /// The firm's own production, as in the Nash game.
    Nash,
    /// The mean production, as in the planner's problem.
    Planner,
}

/// Running cost per unit time at `(x, x̄)` with control `v` and permit price `ω̄`.
pub fn running_cost(x: [f64; 2], xbar: [f64; 2], v: &Controls, omega: f64, params: &CarbonParams, mode: CostMode) -> f64 {
    let p = params;
    let price = inverse_demand(x[0], xbar[0], p);
    let produced = match mode {
        CostMode::Nash => p.a_k * x[0],
        CostMode::Planner => p.a_k * xbar[0],
    };
    -price * produced
        + v.beta * omega
        + v.beta * v.beta / (2.0 * p.nu)
        + p.h * v.alpha
        + v.alpha * v.alpha / (2.0 * p.eta)
        + p.c11 * v.kf
        + p.c12 * v.kf * v.kf
        + p.c21 * v.kg
        + p.c22 * v.kg * v.kg
}

pub fn terminal_cost(x: [f64; 2], params: &CarbonParams) -> f64 {
    params.lambda * x[1] * x[1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_margins() {
        let w = check_wellposedness(&CarbonParams::default());
        assert!((w.capital_margin - 5.7225).abs() < 1e-12);
        assert!((w.bank_margin - 284.135).abs() < 1e-9);
        assert!(w.holds());
    }

    #[test]
    fn zero_adjoint_controls() {
        let p = CarbonParams::default();
        let v = coupling_controls([0.0; 2], [0.0; 2], Some(0.0), &p, Variant::Exogenous).unwrap();
        assert_eq!(v.kf, -p.c11 / (2.0 * p.c12));
        assert_eq!(v.kg, -p.c21 / (2.0 * p.c22));
        assert_eq!(v.alpha, -p.eta * p.h);
        assert_eq!(v.beta, 0.0);
        assert!(coupling_controls([0.0; 2], [0.0; 2], None, &p, Variant::Exogenous).is_err());
    }

    #[test]
    fn running_cost_at_rest() {
        let p = CarbonParams::default();
        let v = Controls { kf: 0.0, kg: 0.0, alpha: 0.0, beta: 0.0 };
        assert_eq!(running_cost([0.0, 1.0], [0.0, 1.0], &v, 3.0, &p, CostMode::Nash), 0.0);
    }

    #[test]
    fn time_series_interpolates() {
        let s = TimeSeries::new(vec![(1.0, 2.0), (0.0, 0.0)]).unwrap();
        assert_eq!(s.at(-1.0), 0.0);
        assert_eq!(s.at(0.25), 0.5);
        assert_eq!(s.at(3.0), 2.0);
    }
}
