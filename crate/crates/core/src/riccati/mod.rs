//! Backward Riccati integration for the decoupling field `Y = P(X − X̄) + ΠX̄ + φ`,
//! feedback synthesis and a finite-difference residual check.

mod integrate;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lq_problem::{GeneralLQSpec, Schedule, TimeGrid};
use integrate::{rk4_backward, Dense, OdeState};

/// Which system of Riccati equations a solution belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Game against a given price path.
    Exogenous,
    /// Game whose price is fixed by market clearing.
    Endogenous,
    /// Mean-field control with all mean-field terms.
    GeneralMfc,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Exogenous => "exogenous",
            Variant::Endogenous => "endogenous",
            Variant::GeneralMfc => "general-mfc",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exogenous" => Ok(Variant::Exogenous),
            "endogenous" => Ok(Variant::Endogenous),
            "general-mfc" | "general" | "mfc" => Ok(Variant::GeneralMfc),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub variant: Variant,
    pub grid: TimeGrid,
    pub p: Vec<DMatrix<f64>>,
    pub pi: Vec<DMatrix<f64>>,
    pub phi: Vec<DVector<f64>>,
}

impl RiccatiSolution {
    /// Values at `t`, linear between nodes.
    pub fn at(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        if let Some(k) = self.grid.node_of(t) {
            return (self.p[k].clone(), self.pi[k].clone(), self.phi[k].clone());
        }
        let (k, s) = self.grid.locate(t);
        (
            &self.p[k] * (1.0 - s) + &self.p[k + 1] * s,
            &self.pi[k] * (1.0 - s) + &self.pi[k + 1] * s,
            &self.phi[k] * (1.0 - s) + &self.phi[k + 1] * s,
        )
    }

    pub fn max_asymmetry(&self) -> (f64, f64) {
        let worst = |ms: &[DMatrix<f64>]| ms.iter().map(linalg::asymmetry).fold(0.0, f64::max);
        (worst(&self.p), worst(&self.pi))
    }

    /// One row per node: `t, P.., Pi.., phi..`, row-major for the matrices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.phi[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for name in ["P", "Pi"] {
            for i in 1..=d {
                for j in 1..=d {
                    header.push(format!("{name}{i}{j}"));
                }
            }
        }
        header.extend((1..=d).map(|i| format!("phi{i}")));
        w.write_record(&header)?;
        for k in 0..self.grid.nodes() {
            let mut row = vec![format!("{:e}", self.grid.time(k))];
            for m in [&self.p[k], &self.pi[k]] {
                row.extend(linalg::row_major(m).iter().map(|x| format!("{x:e}")));
            }
            row.extend(self.phi[k].iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Replace symmetric unknowns by their symmetric part after every step.
    pub symmetrize: bool,
    /// Condition number above which a Σ block (or R) counts as singular.
    pub max_condition: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            symmetrize: true,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaLambdaBlocks {
    pub sigma0: DMatrix<f64>,
    pub lambda0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub lambda1: DMatrix<f64>,
}

/// Affine feedback `v = fluctuation·(x − x̄) + mean·x̄ + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGains {
    pub fluctuation: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl FeedbackGains {
    pub fn apply(&self, x: &DVector<f64>, xbar: &DVector<f64>) -> DVector<f64> {
        &self.fluctuation * (x - xbar) + &self.mean * xbar + &self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualNorms {
    pub p: f64,
    pub pi: f64,
    pub phi: f64,
}

/// Per-node residual norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProfile {
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ResidualProfile {
    pub fn max(&self) -> ResidualNorms {
        let m = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        ResidualNorms {
            p: m(&self.p),
            pi: m(&self.pi),
            phi: m(&self.phi),
        }
    }
}

fn inverse(what: &str, m: &DMatrix<f64>, max_condition: f64, t: f64) -> Result<DMatrix<f64>> {
    let cond = linalg::condition_number(m);
    if !(cond <= max_condition) {
        return Err(Error::Singular {
            matrix: what.to_string(),
            node: 0,
            t,
            condition: cond,
        });
    }
    m.clone().try_inverse().ok_or_else(|| Error::Singular {
        matrix: what.to_string(),
        node: 0,
        t,
        condition: f64::INFINITY,
    })
}

type Lu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

fn checked_lu(what: &str, sigma: &DMatrix<f64>, max_condition: f64, t: f64) -> Result<Lu> {
    let cond = linalg::condition_number(sigma);
    if !(cond <= max_condition) {
        return Err(Error::Singular {
            matrix: what.to_string(),
            node: 0,
            t,
            condition: cond,
        });
    }
    Ok(sigma.clone().lu())
}

fn lu_solve<C: nalgebra::Dim>(
    lu: &Lu,
    rhs: &nalgebra::OMatrix<f64, nalgebra::Dyn, C>,
) -> nalgebra::OMatrix<f64, nalgebra::Dyn, C>
where
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<nalgebra::Dyn, C>,
{
    // conditioning was checked, so the factorization is usable
    lu.solve(rhs).expect("well-conditioned block")
}

trait System {
    fn variant(&self) -> Variant;
    fn p_terminal(&self) -> DMatrix<f64>;
    fn pi_terminal(&self) -> DMatrix<f64>;
    fn pi_symmetric(&self) -> bool;
    fn p_rhs(&self, t: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    fn pi_rhs(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    fn phi_rhs(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> Result<DVector<f64>>;
    fn gains(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> Result<FeedbackGains>;
}

enum LinearCost<'a> {
    Schedule(&'a Schedule),
    Fixed(&'a DVector<f64>),
}

/// Reduced structure used by the carbon model: only `A, B, C_j` state terms,
/// additive common noise, no cross or mean-control costs.
struct PaperSystem<'a> {
    spec: &'a GeneralLQSpec,
    variant: Variant,
    r_inv: DMatrix<f64>,
    b_rinv: DMatrix<f64>,
    fluct_quad: DMatrix<f64>,
    mean_lhs: DMatrix<f64>,
    mean_quad: DMatrix<f64>,
    q_total: DMatrix<f64>,
    linear: LinearCost<'a>,
}

fn require_zero(what: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|x| *x != 0.0) {
        return Err(Error::Config(format!(
            "the reduced solver needs {what} = 0; use the general solver instead"
        )));
    }
    Ok(())
}

fn require_zero_schedule(what: &str, s: &Schedule) -> Result<()> {
    if !s.is_zero() {
        return Err(Error::Config(format!(
            "the reduced solver needs {what} = 0; use the general solver instead"
        )));
    }
    Ok(())
}

impl<'a> PaperSystem<'a> {
    fn new(spec: &'a GeneralLQSpec, variant: Variant, opts: &SolveOptions) -> Result<Self> {
        require_zero("the mean drift matrix", &spec.drift_mean)?;
        require_zero("the mean-control drift matrix", &spec.drift_mean_control)?;
        for ch in &spec.idiosyncratic {
            require_zero("the idiosyncratic mean-state diffusion", &ch.mean_state)?;
            require_zero("the idiosyncratic control diffusion", &ch.control)?;
            require_zero("the idiosyncratic mean-control diffusion", &ch.mean_control)?;
        }
        for ch in &spec.common {
            require_zero("the common state diffusion", &ch.state)?;
            require_zero("the common mean-state diffusion", &ch.mean_state)?;
            require_zero("the common control diffusion", &ch.control)?;
            require_zero("the common mean-control diffusion", &ch.mean_control)?;
        }
        require_zero("the cross cost", &spec.cross_cost)?;
        require_zero("the mean cross cost", &spec.mean_cross_cost)?;
        require_zero("the mean control cost", &spec.mean_control_cost)?;
        require_zero("the mean terminal cost", &spec.mean_terminal)?;
        require_zero_schedule("the mean state linear cost", &spec.mean_state_linear)?;
        require_zero_schedule("the mean control linear cost", &spec.mean_control_linear)?;

        let horizon = spec.horizon();
        let r_inv = inverse("R", &spec.control_cost, opts.max_condition, horizon)
            .map_err(|e| tag_node(e, spec.grid().steps()))?;
        let b = &spec.drift_control;
        let bt = b.transpose();
        let b_rinv = b * &r_inv;
        let fluct_quad = &b_rinv * &bt;
        let (mean_lhs, linear) = match variant {
            Variant::Exogenous => (bt.clone(), LinearCost::Schedule(&spec.control_linear)),
            Variant::Endogenous => (&bt + &spec.clearing_coupling, LinearCost::Fixed(&spec.clearing_offset)),
            Variant::GeneralMfc => unreachable!("general variant uses GeneralSystem"),
        };
        let mean_quad = &b_rinv * &mean_lhs;
        Ok(PaperSystem {
            spec,
            variant,
            r_inv,
            b_rinv,
            fluct_quad,
            mean_lhs,
            mean_quad,
            q_total: &spec.state_cost + &spec.mean_state_cost,
            linear,
        })
    }

    fn diffusion_term(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let d = p.nrows();
        let mut s = DMatrix::zeros(d, d);
        for ch in &self.spec.idiosyncratic {
            s += ch.state.transpose() * p * &ch.state;
        }
        s
    }

    fn linear_at(&self, t: f64) -> DVector<f64> {
        match &self.linear {
            LinearCost::Schedule(s) => s.at(t),
            LinearCost::Fixed(v) => (*v).clone(),
        }
    }
}

fn tag_node(e: Error, node: usize) -> Error {
    match e {
        Error::Singular { matrix, t, condition, .. } => Error::Singular { matrix, node, t, condition },
        other => other,
    }
}

impl System for PaperSystem<'_> {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn p_terminal(&self) -> DMatrix<f64> {
        self.spec.terminal.clone()
    }

    fn pi_terminal(&self) -> DMatrix<f64> {
        self.spec.terminal.clone()
    }

    fn pi_symmetric(&self) -> bool {
        // without market coupling the endogenous system is the exogenous one
        self.variant == Variant::Exogenous || self.spec.clearing_coupling.iter().all(|x| *x == 0.0)
    }

    fn p_rhs(&self, _t: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = &self.spec.drift_state;
        let lhs = self.diffusion_term(p) + &self.spec.state_cost - p * &self.fluct_quad * p + p * a + a.transpose() * p;
        Ok(-lhs)
    }

    fn pi_rhs(&self, _t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = &self.spec.drift_state;
        let lhs = self.diffusion_term(p) + &self.q_total - pi * &self.mean_quad * pi + pi * a + a.transpose() * pi;
        Ok(-lhs)
    }

    fn phi_rhs(&self, t: f64, _p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> Result<DVector<f64>> {
        let a = &self.spec.drift_state;
        let r = self.linear_at(t);
        let lhs = -(pi * (&self.b_rinv * r)) + self.spec.state_linear.at(t) + pi * self.spec.drift_offset.at(t)
            - pi * (&self.mean_quad * phi)
            + a.transpose() * phi;
        Ok(-lhs)
    }

    fn gains(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> Result<FeedbackGains> {
        let bt = self.spec.drift_control.transpose();
        Ok(FeedbackGains {
            fluctuation: -(&self.r_inv * (bt * p)),
            mean: -(&self.r_inv * (&self.mean_lhs * pi)),
            offset: -(&self.r_inv * (&self.mean_lhs * phi + self.linear_at(t))),
        })
    }
}

/// Channel matrices with the mean-field parts already added in.
struct ChannelSums {
    state: DMatrix<f64>,
    state_total: DMatrix<f64>,
    control: DMatrix<f64>,
    control_total: DMatrix<f64>,
}

struct GeneralSystem<'a> {
    spec: &'a GeneralLQSpec,
    max_condition: f64,
    a_total: DMatrix<f64>,
    b_total: DMatrix<f64>,
    q_total: DMatrix<f64>,
    r_total: DMatrix<f64>,
    s_total: DMatrix<f64>,
    idio: Vec<ChannelSums>,
    common: Vec<ChannelSums>,
}

struct Blocks {
    lambda0: DMatrix<f64>,
    gamma0: DMatrix<f64>,
    sigma0: DMatrix<f64>,
    lambda1: DMatrix<f64>,
    gamma1: DMatrix<f64>,
    sigma1: DMatrix<f64>,
}

impl<'a> GeneralSystem<'a> {
    fn new(spec: &'a GeneralLQSpec, opts: &SolveOptions) -> Self {
        let sums = |chs: &[crate::lq_problem::NoiseChannel]| {
            chs.iter()
                .map(|ch| ChannelSums {
                    state: ch.state.clone(),
                    state_total: &ch.state + &ch.mean_state,
                    control: ch.control.clone(),
                    control_total: &ch.control + &ch.mean_control,
                })
                .collect::<Vec<_>>()
        };
        GeneralSystem {
            spec,
            max_condition: opts.max_condition,
            a_total: &spec.drift_state + &spec.drift_mean,
            b_total: &spec.drift_control + &spec.drift_mean_control,
            q_total: &spec.state_cost + &spec.mean_state_cost,
            r_total: &spec.control_cost + &spec.mean_control_cost,
            s_total: &spec.cross_cost + &spec.mean_cross_cost,
            idio: sums(&spec.idiosyncratic),
            common: sums(&spec.common),
        }
    }

    fn blocks(&self, p: &DMatrix<f64>, pi: &DMatrix<f64>) -> Blocks {
        let s = self.spec;
        let b = &s.drift_control;
        let mut lambda0 = b.transpose() * p + &s.cross_cost;
        let mut gamma0 = p * b + s.cross_cost.transpose();
        let mut sigma0 = s.control_cost.clone();
        let mut lambda1 = self.b_total.transpose() * pi + &self.s_total;
        let mut gamma1 = pi * &self.b_total + self.s_total.transpose();
        let mut sigma1 = self.r_total.clone();
        for ch in &self.idio {
            lambda0 += ch.control.transpose() * p * &ch.state;
            gamma0 += ch.state.transpose() * p * &ch.control;
            sigma0 += ch.control.transpose() * p * &ch.control;
            lambda1 += ch.control_total.transpose() * p * &ch.state_total;
            gamma1 += ch.state_total.transpose() * p * &ch.control_total;
            sigma1 += ch.control_total.transpose() * p * &ch.control_total;
        }
        for ch in &self.common {
            lambda0 += ch.control.transpose() * p * &ch.state;
            gamma0 += ch.state.transpose() * p * &ch.control;
            sigma0 += ch.control.transpose() * p * &ch.control;
            lambda1 += ch.control_total.transpose() * pi * &ch.state_total;
            gamma1 += ch.state_total.transpose() * pi * &ch.control_total;
            sigma1 += ch.control_total.transpose() * pi * &ch.control_total;
        }
        Blocks {
            lambda0,
            gamma0,
            sigma0,
            lambda1,
            gamma1,
            sigma1,
        }
    }

    /// Linear term of the mean control, `κ` in `v̄ = −Σ1⁻¹(Λ1 x̄ + κ)`.
    fn kappa(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> DVector<f64> {
        let s = self.spec;
        let mut k = s.control_linear.at(t) + s.mean_control_linear.at(t) + self.b_total.transpose() * phi;
        for (ch, raw) in self.idio.iter().zip(&s.idiosyncratic) {
            k += ch.control_total.transpose() * (p * raw.offset.at(t));
        }
        for (ch, raw) in self.common.iter().zip(&s.common) {
            k += ch.control_total.transpose() * (pi * raw.offset.at(t));
        }
        k
    }
}

impl System for GeneralSystem<'_> {
    fn variant(&self) -> Variant {
        Variant::GeneralMfc
    }

    fn p_terminal(&self) -> DMatrix<f64> {
        self.spec.terminal.clone()
    }

    fn pi_terminal(&self) -> DMatrix<f64> {
        &self.spec.terminal + &self.spec.mean_terminal
    }

    fn pi_symmetric(&self) -> bool {
        true
    }

    fn p_rhs(&self, t: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let s = self.spec;
        let a = &s.drift_state;
        let bl = self.blocks(p, &DMatrix::zeros(p.nrows(), p.ncols()));
        let mut lhs = p * a + a.transpose() * p + &s.state_cost;
        for ch in self.idio.iter().chain(&self.common) {
            lhs += ch.state.transpose() * p * &ch.state;
        }
        let lu = checked_lu("Sigma0", &bl.sigma0, self.max_condition, t)?;
        lhs -= &bl.gamma0 * lu_solve(&lu, &bl.lambda0);
        Ok(-lhs)
    }

    fn pi_rhs(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = &self.a_total;
        let bl = self.blocks(p, pi);
        let mut lhs = pi * a + a.transpose() * pi + &self.q_total;
        for ch in &self.idio {
            lhs += ch.state_total.transpose() * p * &ch.state_total;
        }
        for ch in &self.common {
            lhs += ch.state_total.transpose() * pi * &ch.state_total;
        }
        let lu = checked_lu("Sigma1", &bl.sigma1, self.max_condition, t)?;
        lhs -= &bl.gamma1 * lu_solve(&lu, &bl.lambda1);
        Ok(-lhs)
    }

    fn phi_rhs(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.spec;
        let bl = self.blocks(p, pi);
        let mut lhs = self.a_total.transpose() * phi
            + pi * s.drift_offset.at(t)
            + s.state_linear.at(t)
            + s.mean_state_linear.at(t);
        for (ch, raw) in self.idio.iter().zip(&s.idiosyncratic) {
            lhs += ch.state_total.transpose() * (p * raw.offset.at(t));
        }
        for (ch, raw) in self.common.iter().zip(&s.common) {
            lhs += ch.state_total.transpose() * (pi * raw.offset.at(t));
        }
        let lu = checked_lu("Sigma1", &bl.sigma1, self.max_condition, t)?;
        lhs -= &bl.gamma1 * lu_solve(&lu, &self.kappa(t, p, pi, phi));
        Ok(-lhs)
    }

    fn gains(&self, t: f64, p: &DMatrix<f64>, pi: &DMatrix<f64>, phi: &DVector<f64>) -> Result<FeedbackGains> {
        let bl = self.blocks(p, pi);
        let lu0 = checked_lu("Sigma0", &bl.sigma0, self.max_condition, t)?;
        let lu1 = checked_lu("Sigma1", &bl.sigma1, self.max_condition, t)?;
        Ok(FeedbackGains {
            fluctuation: -lu_solve(&lu0, &bl.lambda0),
            mean: -lu_solve(&lu1, &bl.lambda1),
            offset: -lu_solve(&lu1, &self.kappa(t, p, pi, phi)),
        })
    }
}

fn check_grid(spec: &GeneralLQSpec, grid: &TimeGrid) -> Result<()> {
    if (grid.horizon() - spec.horizon()).abs() > 1e-9 * spec.horizon() {
        return Err(Error::dim("grid horizon", spec.horizon(), grid.horizon()));
    }
    Ok(())
}

fn solve_system(sys: &dyn System, grid: TimeGrid, opts: &SolveOptions) -> Result<RiccatiSolution> {
    let sym = |m: DMatrix<f64>| linalg::symmetrize(&m);
    let keep = |m: DMatrix<f64>| m;
    let p_project: &dyn Fn(DMatrix<f64>) -> DMatrix<f64> = if opts.symmetrize { &sym } else { &keep };
    let pi_project: &dyn Fn(DMatrix<f64>) -> DMatrix<f64> =
        if opts.symmetrize && sys.pi_symmetric() { &sym } else { &keep };

    let p = rk4_backward(&grid, sys.p_terminal(), "P", |t, p| sys.p_rhs(t, p), p_project)?;
    let p_dense = Dense::new(grid, &p, |t, pk| sys.p_rhs(t, pk))?;
    let pi = rk4_backward(
        &grid,
        sys.pi_terminal(),
        "Pi",
        |t, pi| sys.pi_rhs(t, &p_dense.at(t), pi),
        pi_project,
    )?;
    let pi_dense = Dense::new(grid, &pi, |t, pik| sys.pi_rhs(t, &p_dense.at(t), pik))?;
    let d = p[0].nrows();
    let phi = rk4_backward(
        &grid,
        DVector::zeros(d),
        "phi",
        |t, phi| sys.phi_rhs(t, &p_dense.at(t), &pi_dense.at(t), phi),
        |v| v,
    )?;
    Ok(RiccatiSolution {
        variant: sys.variant(),
        grid,
        p,
        pi,
        phi,
    })
}

pub fn solve_general(spec: &GeneralLQSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    solve_general_with(spec, grid, &SolveOptions::default())
}

pub fn solve_general_with(spec: &GeneralLQSpec, grid: TimeGrid, opts: &SolveOptions) -> Result<RiccatiSolution> {
    check_grid(spec, &grid)?;
    solve_system(&GeneralSystem::new(spec, opts), grid, opts)
}

/// Price-taking game; the price enters through the linear control cost.
pub fn solve_exogenous(spec: &GeneralLQSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    solve_exogenous_with(spec, grid, &SolveOptions::default())
}

pub fn solve_exogenous_with(spec: &GeneralLQSpec, grid: TimeGrid, opts: &SolveOptions) -> Result<RiccatiSolution> {
    check_grid(spec, &grid)?;
    solve_system(&PaperSystem::new(spec, Variant::Exogenous, opts)?, grid, opts)
}

/// Game with the clearing price substituted through `clearing_coupling` and `clearing_offset`.
pub fn solve_endogenous(spec: &GeneralLQSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    solve_endogenous_with(spec, grid, &SolveOptions::default())
}

pub fn solve_endogenous_with(spec: &GeneralLQSpec, grid: TimeGrid, opts: &SolveOptions) -> Result<RiccatiSolution> {
    check_grid(spec, &grid)?;
    solve_system(&PaperSystem::new(spec, Variant::Endogenous, opts)?, grid, opts)
}

pub fn solve(spec: &GeneralLQSpec, grid: TimeGrid, variant: Variant) -> Result<RiccatiSolution> {
    match variant {
        Variant::Exogenous => solve_exogenous(spec, grid),
        Variant::Endogenous => solve_endogenous(spec, grid),
        Variant::GeneralMfc => solve_general(spec, grid),
    }
}

fn system_for<'a>(spec: &'a GeneralLQSpec, variant: Variant, opts: &SolveOptions) -> Result<Box<dyn System + 'a>> {
    Ok(match variant {
        Variant::GeneralMfc => Box::new(GeneralSystem::new(spec, opts)),
        v => Box::new(PaperSystem::new(spec, v, opts)?),
    })
}

pub fn sigma_lambda(spec: &GeneralLQSpec, p: &DMatrix<f64>, pi: &DMatrix<f64>, _t: f64) -> Result<SigmaLambdaBlocks> {
    let d = spec.dims().d;
    if p.shape() != (d, d) || pi.shape() != (d, d) {
        return Err(Error::dim("P/Pi", format!("{d}x{d}"), format!("{:?}/{:?}", p.shape(), pi.shape())));
    }
    let bl = GeneralSystem::new(spec, &SolveOptions::default()).blocks(p, pi);
    Ok(SigmaLambdaBlocks {
        sigma0: bl.sigma0,
        lambda0: bl.lambda0,
        sigma1: bl.sigma1,
        lambda1: bl.lambda1,
    })
}

pub fn feedback_gains(sol: &RiccatiSolution, spec: &GeneralLQSpec, t: f64) -> Result<FeedbackGains> {
    if !(t >= 0.0 && t <= sol.grid.horizon() * (1.0 + 1e-12)) {
        return Err(Error::param("t", format!("{t} outside [0, {}]", sol.grid.horizon())));
    }
    let sys = system_for(spec, sol.variant, &SolveOptions::default())?;
    let (p, pi, phi) = sol.at(t);
    sys.gains(t, &p, &pi, &phi)
}

/// Gains at every node of `grid`, which must be the solution grid or a coarsening of it.
pub fn feedback_schedule(sol: &RiccatiSolution, spec: &GeneralLQSpec, grid: &TimeGrid) -> Result<Vec<FeedbackGains>> {
    let stride = sol
        .grid
        .coarsen_stride(grid)
        .ok_or_else(|| Error::Config(format!("grid step {} is not a multiple of the Riccati step {}", grid.dt(), sol.grid.dt())))?;
    let sys = system_for(spec, sol.variant, &SolveOptions::default())?;
    (0..grid.nodes())
        .map(|k| {
            let j = k * stride;
            sys.gains(grid.time(k), &sol.p[j], &sol.pi[j], &sol.phi[j])
                .map_err(|e| tag_node(e, j))
        })
        .collect()
}

pub fn feedback_control(
    sol: &RiccatiSolution,
    spec: &GeneralLQSpec,
    t: f64,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(feedback_gains(sol, spec, t)?.apply(x, xbar))
}

/// Finite-difference rule used to approximate the time derivative in residual checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// Three-point rules, error `O(Δt²)`.
    SecondOrder,
    /// Five-point rules, error `O(Δt⁴)`.
    #[default]
    FourthOrder,
}

impl Stencil {
    fn min_nodes(self) -> usize {
        match self {
            Stencil::SecondOrder => 3,
            Stencil::FourthOrder => 5,
        }
    }

    /// Offsets from the first node used and their weights (times `Δt`).
    fn rule(self, k: usize, n: usize) -> (usize, &'static [f64]) {
        match self {
            Stencil::SecondOrder => {
                if k == 0 {
                    (0, &[-1.5, 2.0, -0.5])
                } else if k == n {
                    (n - 2, &[0.5, -2.0, 1.5])
                } else {
                    (k - 1, &[-0.5, 0.0, 0.5])
                }
            }
            Stencil::FourthOrder => {
                const W0: [f64; 5] = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
                const W1: [f64; 5] = [-0.25, -5.0 / 6.0, 1.5, -0.5, 1.0 / 12.0];
                const WC: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
                const WN1: [f64; 5] = [-1.0 / 12.0, 0.5, -1.5, 5.0 / 6.0, 0.25];
                const WN: [f64; 5] = [0.25, -4.0 / 3.0, 3.0, -4.0, 25.0 / 12.0];
                if k == 0 {
                    (0, &W0)
                } else if k == 1 {
                    (0, &W1)
                } else if k == n {
                    (n - 4, &WN)
                } else if k == n - 1 {
                    (n - 4, &WN1)
                } else {
                    (k - 2, &WC)
                }
            }
        }
    }
}

fn derivative<S: OdeState>(ys: &[S], k: usize, h: f64, stencil: Stencil) -> S {
    let (first, w) = stencil.rule(k, ys.len() - 1);
    let mut acc = ys[first].scale(w[0] / h);
    for (i, wi) in w.iter().enumerate().skip(1) {
        acc = acc.axpy(wi / h, &ys[first + i]);
    }
    acc
}

/// Node-wise norm of `ẏ − f(t, y)` with five-point difference quotients.
pub fn residual_profile(sol: &RiccatiSolution, spec: &GeneralLQSpec) -> Result<ResidualProfile> {
    residual_profile_with(sol, spec, Stencil::default())
}

pub fn residual_profile_with(sol: &RiccatiSolution, spec: &GeneralLQSpec, stencil: Stencil) -> Result<ResidualProfile> {
    let grid = sol.grid;
    if grid.nodes() < stencil.min_nodes() {
        return Err(Error::dim("grid nodes for residuals", format!(">= {}", stencil.min_nodes()), grid.nodes()));
    }
    let sys = system_for(spec, sol.variant, &SolveOptions::default())?;
    let h = grid.dt();
    let mut prof = ResidualProfile {
        p: Vec::with_capacity(grid.nodes()),
        pi: Vec::with_capacity(grid.nodes()),
        phi: Vec::with_capacity(grid.nodes()),
    };
    for k in 0..grid.nodes() {
        let t = grid.time(k);
        let (p, pi, phi) = (&sol.p[k], &sol.pi[k], &sol.phi[k]);
        let rp = derivative(&sol.p, k, h, stencil).axpy(-1.0, &sys.p_rhs(t, p).map_err(|e| tag_node(e, k))?);
        let rpi = derivative(&sol.pi, k, h, stencil).axpy(-1.0, &sys.pi_rhs(t, p, pi).map_err(|e| tag_node(e, k))?);
        let rphi = derivative(&sol.phi, k, h, stencil).axpy(-1.0, &sys.phi_rhs(t, p, pi, phi).map_err(|e| tag_node(e, k))?);
        prof.p.push(linalg::frob(&rp));
        prof.pi.push(linalg::frob(&rpi));
        prof.phi.push(rphi.norm());
    }
    Ok(prof)
}

pub fn residual_norms(sol: &RiccatiSolution, spec: &GeneralLQSpec) -> Result<ResidualNorms> {
    Ok(residual_profile(sol, spec)?.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq_problem::{Dims, LqCoefficients};

    fn scalar(b: f64, q: f64, r: f64, h: f64, horizon: f64, dt: f64) -> GeneralLQSpec {
        let grid = TimeGrid::new(horizon, dt).unwrap();
        let mut c = LqCoefficients::zeros(Dims { d: 1, d0: 0, d1: 0, d2: 1 }, grid);
        c.drift_control[(0, 0)] = b;
        c.state_cost[(0, 0)] = q;
        c.control_cost[(0, 0)] = r;
        c.terminal[(0, 0)] = h;
        GeneralLQSpec::new(c).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let spec = scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.1);
        let sol = solve_general(&spec, spec.grid()).unwrap();
        assert!(sol.p.iter().chain(&sol.pi).all(|m| m[(0, 0)] == 0.0));
        assert!(sol.phi.iter().all(|v| v[0] == 0.0));
        let res = residual_norms(&sol, &spec).unwrap();
        assert_eq!((res.p, res.pi, res.phi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn singular_control_cost_names_a_node() {
        let spec = scalar(1.0, 1.0, 0.0, 0.0, 1.0, 0.1);
        match solve_general(&spec, spec.grid()) {
            Err(Error::Singular { node, .. }) => assert_eq!(node, 9),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn residuals_need_enough_nodes() {
        let spec = scalar(1.0, 1.0, 1.0, 0.0, 1.0, 1.0);
        let sol = solve_general(&spec, spec.grid()).unwrap();
        assert!(matches!(residual_norms(&sol, &spec), Err(Error::Dimension { .. })));
    }
}
