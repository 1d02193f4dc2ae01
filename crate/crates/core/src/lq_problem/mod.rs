//! Coefficients of a linear-quadratic mean-field problem with common noise,
//! structural checks on them, and the standing-assumption validators.

mod grid;

pub use grid::{Schedule, TimeGrid};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// One Brownian channel's diffusion coefficient
/// `offset + state·X + mean_state·X̄ + control·v + mean_control·v̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChannel {
    pub offset: Schedule,
    pub state: DMatrix<f64>,
    pub mean_state: DMatrix<f64>,
    pub control: DMatrix<f64>,
    pub mean_control: DMatrix<f64>,
}

impl NoiseChannel {
    pub fn zeros(d: usize, d2: usize) -> Self {
        NoiseChannel {
            offset: Schedule::zeros(d),
            state: DMatrix::zeros(d, d),
            mean_state: DMatrix::zeros(d, d),
            control: DMatrix::zeros(d, d2),
            mean_control: DMatrix::zeros(d, d2),
        }
    }

    /// A channel whose coefficient does not depend on state or control.
    pub fn additive(offset: Schedule, d: usize, d2: usize) -> Self {
        NoiseChannel {
            offset,
            ..Self::zeros(d, d2)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.offset.is_zero()
            && [&self.state, &self.mean_state, &self.control, &self.mean_control]
                .iter()
                .all(|m| m.iter().all(|x| *x == 0.0))
    }
}

/// Raw coefficient data. Turn it into a [`GeneralLQSpec`] to get it checked.
///
/// Running cost is
/// `Q0 + ⟨QX,X⟩ + ⟨Q̄X̄,X̄⟩ + ⟨Rv,v⟩ + ⟨R̄v̄,v̄⟩ + 2⟨SX,v⟩ + 2⟨S̄X̄,v̄⟩
///  + 2⟨q,X⟩ + 2⟨q̄,X̄⟩ + 2⟨r,v⟩ + 2⟨r̄,v̄⟩`, terminal cost `⟨HX,X⟩ + 2⟨H̄X̄,X⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqCoefficients {
    pub grid: TimeGrid,
    pub drift_offset: Schedule,
    pub drift_state: DMatrix<f64>,
    pub drift_mean: DMatrix<f64>,
    pub drift_control: DMatrix<f64>,
    pub drift_mean_control: DMatrix<f64>,
    /// Channels driven by the private Brownian motions.
    pub idiosyncratic: Vec<NoiseChannel>,
    /// Channels driven by the common Brownian motions.
    pub common: Vec<NoiseChannel>,
    pub cost_offset: Schedule,
    pub state_cost: DMatrix<f64>,
    pub mean_state_cost: DMatrix<f64>,
    pub control_cost: DMatrix<f64>,
    pub mean_control_cost: DMatrix<f64>,
    pub cross_cost: DMatrix<f64>,
    pub mean_cross_cost: DMatrix<f64>,
    pub state_linear: Schedule,
    pub mean_state_linear: Schedule,
    pub control_linear: Schedule,
    pub mean_control_linear: Schedule,
    pub terminal: DMatrix<f64>,
    pub mean_terminal: DMatrix<f64>,
    /// Market coupling acting on the mean adjoint in the endogenous-price game.
    pub clearing_coupling: DMatrix<f64>,
    /// Linear control cost used instead of `control_linear` in the endogenous-price game.
    pub clearing_offset: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    /// State dimension.
    pub d: usize,
    /// Common noise channels.
    pub d0: usize,
    /// Idiosyncratic noise channels.
    pub d1: usize,
    /// Control dimension.
    pub d2: usize,
}

impl LqCoefficients {
    /// All-zero coefficients of the given shape.
    pub fn zeros(dims: Dims, grid: TimeGrid) -> Self {
        let Dims { d, d0, d1, d2 } = dims;
        LqCoefficients {
            grid,
            drift_offset: Schedule::zeros(d),
            drift_state: DMatrix::zeros(d, d),
            drift_mean: DMatrix::zeros(d, d),
            drift_control: DMatrix::zeros(d, d2),
            drift_mean_control: DMatrix::zeros(d, d2),
            idiosyncratic: vec![NoiseChannel::zeros(d, d2); d1],
            common: vec![NoiseChannel::zeros(d, d2); d0],
            cost_offset: Schedule::zeros(1),
            state_cost: DMatrix::zeros(d, d),
            mean_state_cost: DMatrix::zeros(d, d),
            control_cost: DMatrix::zeros(d2, d2),
            mean_control_cost: DMatrix::zeros(d2, d2),
            cross_cost: DMatrix::zeros(d2, d),
            mean_cross_cost: DMatrix::zeros(d2, d),
            state_linear: Schedule::zeros(d),
            mean_state_linear: Schedule::zeros(d),
            control_linear: Schedule::zeros(d2),
            mean_control_linear: Schedule::zeros(d2),
            terminal: DMatrix::zeros(d, d),
            mean_terminal: DMatrix::zeros(d, d),
            clearing_coupling: DMatrix::zeros(d2, d),
            clearing_offset: DVector::zeros(d2),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d: self.drift_state.nrows(),
            d0: self.common.len(),
            d1: self.idiosyncratic.len(),
            d2: self.drift_control.ncols(),
        }
    }
}

/// Checked problem data: consistent shapes, finite entries, symmetric cost matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralLQSpec {
    coeffs: LqCoefficients,
}

const SYMMETRY_TOL: f64 = 1e-12;

fn check_shape(what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            what,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if !linalg::all_finite(m) {
        return Err(Error::param(what, "non-finite entries"));
    }
    Ok(())
}

fn check_schedule(what: &str, s: &Schedule, dim: usize, horizon: f64) -> Result<()> {
    if s.dim() != dim {
        return Err(Error::dim(what, dim, s.dim()));
    }
    if let Schedule::Sampled { grid, .. } = s {
        if (grid.horizon() - horizon).abs() > 1e-9 * horizon {
            return Err(Error::dim(
                format!("{what} schedule horizon"),
                horizon,
                grid.horizon(),
            ));
        }
    }
    s.check_finite(what)
}

fn symmetric(what: &str, m: &mut DMatrix<f64>) -> Result<()> {
    let asym = linalg::asymmetry(m);
    let scale = m.amax().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    *m = linalg::symmetrize(m);
    Ok(())
}

impl GeneralLQSpec {
    pub fn new(mut c: LqCoefficients) -> Result<Self> {
        let Dims { d, d0: _, d1: _, d2 } = c.dims();
        if d == 0 || d2 == 0 {
            return Err(Error::dim("state/control dimension", "positive", format!("{d}/{d2}")));
        }
        let horizon = c.grid.horizon();
        check_schedule("drift offset", &c.drift_offset, d, horizon)?;
        check_shape("drift state matrix", &c.drift_state, d, d)?;
        check_shape("drift mean matrix", &c.drift_mean, d, d)?;
        check_shape("drift control matrix", &c.drift_control, d, d2)?;
        check_shape("drift mean-control matrix", &c.drift_mean_control, d, d2)?;
        for (kind, channels) in [("idiosyncratic", &c.idiosyncratic), ("common", &c.common)] {
            for (j, ch) in channels.iter().enumerate() {
                let name = |part: &str| format!("{kind} channel {} {part}", j + 1);
                check_schedule(&name("offset"), &ch.offset, d, horizon)?;
                check_shape(&name("state matrix"), &ch.state, d, d)?;
                check_shape(&name("mean matrix"), &ch.mean_state, d, d)?;
                check_shape(&name("control matrix"), &ch.control, d, d2)?;
                check_shape(&name("mean-control matrix"), &ch.mean_control, d, d2)?;
            }
        }
        check_schedule("cost offset", &c.cost_offset, 1, horizon)?;
        check_shape("state cost", &c.state_cost, d, d)?;
        check_shape("mean state cost", &c.mean_state_cost, d, d)?;
        check_shape("control cost", &c.control_cost, d2, d2)?;
        check_shape("mean control cost", &c.mean_control_cost, d2, d2)?;
        check_shape("cross cost", &c.cross_cost, d2, d)?;
        check_shape("mean cross cost", &c.mean_cross_cost, d2, d)?;
        check_schedule("state linear cost", &c.state_linear, d, horizon)?;
        check_schedule("mean state linear cost", &c.mean_state_linear, d, horizon)?;
        check_schedule("control linear cost", &c.control_linear, d2, horizon)?;
        check_schedule("mean control linear cost", &c.mean_control_linear, d2, horizon)?;
        check_shape("terminal cost", &c.terminal, d, d)?;
        check_shape("mean terminal cost", &c.mean_terminal, d, d)?;
        check_shape("clearing coupling", &c.clearing_coupling, d2, d)?;
        if c.clearing_offset.len() != d2 {
            return Err(Error::dim("clearing offset", d2, c.clearing_offset.len()));
        }
        if !linalg::all_finite_vec(&c.clearing_offset) {
            return Err(Error::param("clearing offset", "non-finite entries"));
        }
        symmetric("state cost", &mut c.state_cost)?;
        symmetric("mean state cost", &mut c.mean_state_cost)?;
        symmetric("control cost", &mut c.control_cost)?;
        symmetric("mean control cost", &mut c.mean_control_cost)?;
        symmetric("terminal cost", &mut c.terminal)?;
        symmetric("mean terminal cost", &mut c.mean_terminal)?;
        Ok(GeneralLQSpec { coeffs: c })
    }

    pub fn coefficients(&self) -> &LqCoefficients {
        &self.coeffs
    }

    pub fn into_coefficients(self) -> LqCoefficients {
        self.coeffs
    }

    pub fn dims(&self) -> Dims {
        self.coeffs.dims()
    }

    pub fn grid(&self) -> TimeGrid {
        self.coeffs.grid
    }

    pub fn horizon(&self) -> f64 {
        self.coeffs.grid.horizon()
    }
}

impl std::ops::Deref for GeneralLQSpec {
    type Target = LqCoefficients;
    fn deref(&self) -> &LqCoefficients {
        &self.coeffs
    }
}

/// Every coefficient evaluated at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSnapshot {
    pub t: f64,
    pub drift_offset: DVector<f64>,
    pub drift_state: DMatrix<f64>,
    pub drift_mean: DMatrix<f64>,
    pub drift_control: DMatrix<f64>,
    pub drift_mean_control: DMatrix<f64>,
    pub idiosyncratic_offsets: Vec<DVector<f64>>,
    pub common_offsets: Vec<DVector<f64>>,
    pub cost_offset: f64,
    pub state_cost: DMatrix<f64>,
    pub mean_state_cost: DMatrix<f64>,
    pub control_cost: DMatrix<f64>,
    pub mean_control_cost: DMatrix<f64>,
    pub cross_cost: DMatrix<f64>,
    pub mean_cross_cost: DMatrix<f64>,
    pub state_linear: DVector<f64>,
    pub mean_state_linear: DVector<f64>,
    pub control_linear: DVector<f64>,
    pub mean_control_linear: DVector<f64>,
}

pub fn coeff_at(spec: &GeneralLQSpec, t: f64) -> Result<CoefficientSnapshot> {
    let horizon = spec.horizon();
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::param("t", format!("{t} outside [0, {horizon}]")));
    }
    let c = spec.coefficients();
    Ok(CoefficientSnapshot {
        t,
        drift_offset: c.drift_offset.at(t),
        drift_state: c.drift_state.clone(),
        drift_mean: c.drift_mean.clone(),
        drift_control: c.drift_control.clone(),
        drift_mean_control: c.drift_mean_control.clone(),
        idiosyncratic_offsets: c.idiosyncratic.iter().map(|ch| ch.offset.at(t)).collect(),
        common_offsets: c.common.iter().map(|ch| ch.offset.at(t)).collect(),
        cost_offset: c.cost_offset.at(t)[0],
        state_cost: c.state_cost.clone(),
        mean_state_cost: c.mean_state_cost.clone(),
        control_cost: c.control_cost.clone(),
        mean_control_cost: c.mean_control_cost.clone(),
        cross_cost: c.cross_cost.clone(),
        mean_cross_cost: c.mean_cross_cost.clone(),
        state_linear: c.state_linear.at(t),
        mean_state_linear: c.mean_state_linear.at(t),
        control_linear: c.control_linear.at(t),
        mean_control_linear: c.mean_control_linear.at(t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub item: String,
    pub passed: bool,
    /// Signed slack; negative when the item fails.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub family: String,
    pub delta1: f64,
    pub delta2: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, item: &str, margin: f64, detail: impl Into<String>) {
        self.checks.push(AssumptionCheck {
            item: item.to_string(),
            passed: margin >= -PSD_TOL,
            margin,
            detail: detail.into(),
        });
    }
}

impl std::fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} assumptions (delta1 = {:e}, delta2 = {:e})", self.family, self.delta1, self.delta2)?;
        for c in &self.checks {
            let verdict = if c.passed { "pass" } else { "FAIL" };
            writeln!(f, "  {:<4} {verdict}  margin {:e}  {}", c.item, c.margin, c.detail)?;
        }
        Ok(())
    }
}

/// Slack allowed on eigenvalue tests.
pub const PSD_TOL: f64 = 1e-10;

fn sup_norm_sq(m: &DMatrix<f64>) -> f64 {
    // operator 2-norm, the spectral norm of a constant matrix
    if m.is_empty() {
        0.0
    } else {
        let s = m.clone().singular_values().max();
        s * s
    }
}

fn cross_cost_check(report: &mut AssumptionReport, item: &str, s: &[&DMatrix<f64>], delta1: f64, delta2: f64) {
    if delta1 > 0.0 {
        let worst = s.iter().map(|m| sup_norm_sq(m)).fold(0.0, f64::max);
        report.push(item, delta1 * delta2 - worst - PSD_TOL, format!("max |S|^2 = {worst:e} vs delta1*delta2"));
    } else {
        let worst = s.iter().map(|m| m.amax()).fold(0.0, f64::max);
        report.push(item, -worst, "delta1 = 0 requires S = S_bar = 0");
    }
}

fn check_deltas(delta1: f64, delta2: f64) -> Result<()> {
    if !(delta1 >= 0.0 && delta1.is_finite()) {
        return Err(Error::param("delta1", "must be a nonnegative number"));
    }
    if !(delta2 > 0.0 && delta2.is_finite()) {
        return Err(Error::param("delta2", "must be positive"));
    }
    Ok(())
}

/// Standing assumptions of the mean-field control problem.
pub fn validate_mfc_assumptions(spec: &GeneralLQSpec, delta1: f64, delta2: f64) -> Result<AssumptionReport> {
    check_deltas(delta1, delta2)?;
    let c = spec.coefficients();
    let mut r = AssumptionReport {
        family: "mean-field control".into(),
        delta1,
        delta2,
        checks: Vec::new(),
    };
    // finiteness and symmetry were enforced when the spec was built
    r.push("M1", 0.0, "bounded time-dependent coefficients");
    r.push("M4", 0.0, "symmetric cost matrices");
    let h_total = &c.terminal + &c.mean_terminal;
    let q_total = &c.state_cost + &c.mean_state_cost;
    let r_total = &c.control_cost + &c.mean_control_cost;
    r.push("M5", linalg::min_eigenvalue(&c.terminal), "H >= 0");
    r.push("M5", linalg::min_eigenvalue(&h_total), "H + H_bar >= 0");
    r.push("M5", linalg::min_eigenvalue(&c.state_cost) - delta1, "Q >= delta1 I");
    r.push("M5", linalg::min_eigenvalue(&q_total) - delta1, "Q + Q_bar >= delta1 I");
    r.push("M5", linalg::min_eigenvalue(&c.control_cost) - delta2, "R >= delta2 I");
    r.push("M5", linalg::min_eigenvalue(&r_total) - delta2, "R + R_bar >= delta2 I");
    let s_total = &c.cross_cost + &c.mean_cross_cost;
    if delta1 > 0.0 {
        cross_cost_check(&mut r, "M7", &[&c.cross_cost, &s_total], delta1, delta2);
    } else {
        cross_cost_check(&mut r, "M7", &[&c.cross_cost, &c.mean_cross_cost], delta1, delta2);
    }
    Ok(r)
}

/// Standing assumptions of the mean-field game.
pub fn validate_mfg_assumptions(spec: &GeneralLQSpec, delta1: f64, delta2: f64) -> Result<AssumptionReport> {
    check_deltas(delta1, delta2)?;
    let c = spec.coefficients();
    let mut r = AssumptionReport {
        family: "mean-field game".into(),
        delta1,
        delta2,
        checks: Vec::new(),
    };
    r.push("N1", 0.0, "bounded time-dependent coefficients");
    r.push("N4", 0.0, "symmetric cost matrices");
    r.push("N5", linalg::min_eigenvalue(&c.terminal), "H >= 0");
    r.push("N5", linalg::min_eigenvalue(&c.state_cost) - delta1, "Q >= delta1 I");
    r.push("N5", linalg::min_eigenvalue(&c.control_cost) - delta2, "R >= delta2 I");
    if delta1 > 0.0 {
        cross_cost_check(&mut r, "N7", &[&c.cross_cost], delta1, delta2);
    } else {
        cross_cost_check(&mut r, "N7", &[&c.cross_cost, &c.mean_cross_cost], delta1, delta2);
    }
    Ok(r)
}
