use serde::Serialize;

use super::engine::{MeanPath, NodeView, Observer, PathEnsemble};
use super::estimate::Estimate;
use crate::carbon::{inverse_demand, running_cost, terminal_cost, CarbonParams, Controls, CostMode};
use crate::error::{Error, Result};
use crate::market::{PricePath, PriceRule};

/// Trapezoid weight of node `k` out of `steps + 1`.
pub fn trapezoid_weight(k: usize, steps: usize, dt: f64) -> f64 {
    if k == 0 || k == steps {
        0.5 * dt
    } else {
        dt
    }
}

/// Time integrals collected along one firm's path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FirmTotals {
    pub production: f64,
    pub goods_price: f64,
    pub permit_price: f64,
    pub abatement: f64,
    pub trading: f64,
    pub fossil: f64,
    pub green: f64,
    pub penalty: f64,
    pub cost_ne: f64,
    pub cost_lq: f64,
    /// `∫(K − K̄)²`.
    pub dispersion: f64,
}

impl FirmTotals {
    pub fn accumulate(&mut self, wt: f64, x: [f64; 2], xbar: [f64; 2], v: &Controls, omega: f64, params: &CarbonParams) {
        self.production += wt * params.a_k * x[0];
        self.goods_price += wt * inverse_demand(x[0], xbar[0], params);
        self.permit_price += wt * omega;
        self.abatement += wt * v.alpha;
        self.trading += wt * v.beta;
        self.fossil += wt * v.kf;
        self.green += wt * v.kg;
        self.cost_ne += wt * running_cost(x, xbar, v, omega, params, CostMode::Nash);
        self.cost_lq += wt * running_cost(x, xbar, v, omega, params, CostMode::Planner);
        let dk = x[0] - xbar[0];
        self.dispersion += wt * dk * dk;
    }

    pub fn finish(&mut self, x: [f64; 2], params: &CarbonParams) {
        let pen = terminal_cost(x, params);
        self.penalty = pen;
        self.cost_ne += pen;
        self.cost_lq += pen;
    }
}

fn pair(s: &[f64]) -> [f64; 2] {
    [s[0], s[1]]
}

fn check_carbon(d: usize, d2: usize) -> Result<()> {
    if d != 2 || d2 != 4 {
        return Err(Error::dim("carbon state/control", "2/4", format!("{d}/{d2}")));
    }
    Ok(())
}

/// Streams the per-firm integrals of one common path.
#[derive(Debug, Clone)]
pub struct SummaryObserver<'a> {
    params: &'a CarbonParams,
    price: &'a PriceRule,
    pub firms: Vec<FirmTotals>,
    /// `∫K̄²` along the path.
    pub mean_k2: f64,
    v: [f64; 4],
}

impl<'a> SummaryObserver<'a> {
    pub fn new(params: &'a CarbonParams, price: &'a PriceRule) -> Self {
        SummaryObserver {
            params,
            price,
            firms: Vec::new(),
            mean_k2: 0.0,
            v: [0.0; 4],
        }
    }
}

impl Observer for SummaryObserver<'_> {
    fn observe(&mut self, view: &NodeView<'_>) {
        let lp = view.closed_loop();
        let steps = lp.grid().steps();
        let wt = trapezoid_weight(view.k, steps, view.dt());
        if self.firms.len() != view.n {
            self.firms = vec![FirmTotals::default(); view.n];
        }
        let omega = self.price.at(view.t, view.mean_adjoint);
        let xbar = pair(view.mean);
        self.mean_k2 += wt * xbar[0] * xbar[0];
        for i in 0..view.n {
            view.control(i, &mut self.v);
            let x = pair(view.state(i));
            let f = &mut self.firms[i];
            f.accumulate(wt, x, xbar, &Controls::from_slice(&self.v), omega, self.params);
            if view.is_last() {
                f.finish(x, self.params);
            }
        }
    }
}

/// Monte Carlo estimates of the scenario-level quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub production: Estimate,
    pub goods_price: Estimate,
    pub permit_price: Estimate,
    pub abatement: Estimate,
    pub trading: Estimate,
    pub fossil: Estimate,
    pub green: Estimate,
    pub penalty: Estimate,
    pub cost_ne: Estimate,
    pub cost_lq: Estimate,
    pub poa: Estimate,
    /// Direct `J^NE − J^LQ` per firm.
    pub mode_gap: Estimate,
    pub dispersion: Estimate,
}

impl ScenarioSummary {
    pub const FIELDS: [&'static str; 13] = [
        "production",
        "goods_price",
        "permit_price",
        "abatement",
        "trading",
        "fossil",
        "green",
        "penalty",
        "cost_ne",
        "cost_lq",
        "poa",
        "mode_gap",
        "dispersion",
    ];

    pub fn values(&self) -> [Estimate; 13] {
        [
            self.production,
            self.goods_price,
            self.permit_price,
            self.abatement,
            self.trading,
            self.fossil,
            self.green,
            self.penalty,
            self.cost_ne,
            self.cost_lq,
            self.poa,
            self.mode_gap,
            self.dispersion,
        ]
    }
}

pub fn poa_factor(params: &CarbonParams) -> f64 {
    0.5 * params.b * params.gamma * params.a_k * params.a_k
}

pub fn summarize(paths: &[SummaryObserver<'_>], params: &CarbonParams) -> ScenarioSummary {
    let est = |f: &dyn Fn(&FirmTotals) -> f64| {
        let groups: Vec<Vec<f64>> = paths.iter().map(|p| p.firms.iter().map(f).collect()).collect();
        Estimate::from_clusters(&groups)
    };
    let k2: Vec<f64> = paths.iter().map(|p| p.mean_k2).collect();
    ScenarioSummary {
        production: est(&|f| f.production),
        goods_price: est(&|f| f.goods_price),
        permit_price: est(&|f| f.permit_price),
        abatement: est(&|f| f.abatement),
        trading: est(&|f| f.trading),
        fossil: est(&|f| f.fossil),
        green: est(&|f| f.green),
        penalty: est(&|f| f.penalty),
        cost_ne: est(&|f| f.cost_ne),
        cost_lq: est(&|f| f.cost_lq),
        poa: Estimate::from_samples(&k2).scaled(poa_factor(params)),
        mode_gap: est(&|f| f.cost_ne - f.cost_lq),
        dispersion: est(&|f| f.dispersion),
    }
}

/// Per-firm cost of a stored ensemble, grouped by common path.
pub fn firm_costs(ensemble: &PathEnsemble, params: &CarbonParams, price: &PricePath, mode: CostMode) -> Result<Vec<Vec<f64>>> {
    check_carbon(ensemble.dims.d, ensemble.dims.d2)?;
    if price.grid != ensemble.grid || price.values.len() != ensemble.paths.len() {
        return Err(Error::Config("price path does not match the ensemble".into()));
    }
    let steps = ensemble.grid.steps();
    let dt = ensemble.grid.dt();
    Ok(ensemble
        .paths
        .iter()
        .enumerate()
        .map(|(m, path)| {
            (0..path.particles.n)
                .map(|i| {
                    let mut c = 0.0;
                    for k in 0..=steps {
                        let v = Controls::from_slice(path.particles.control(i, k));
                        let x = pair(path.particles.state(i, k));
                        let xbar = pair(path.mean.state(k));
                        c += trapezoid_weight(k, steps, dt) * running_cost(x, xbar, &v, price.at(m, k), params, mode);
                    }
                    c + terminal_cost(pair(path.particles.state(i, steps)), params)
                })
                .collect()
        })
        .collect())
}

/// Trapezoidal running cost plus terminal penalty, averaged over all firms.
pub fn estimate_cost(ensemble: &PathEnsemble, params: &CarbonParams, price: &PricePath, mode: CostMode) -> Result<Estimate> {
    Ok(Estimate::from_clusters(&firm_costs(ensemble, params, price, mode)?))
}

/// `bγA_k²/2 · E∫K̄²`.
pub fn price_of_anarchy(means: &[MeanPath], params: &CarbonParams) -> Estimate {
    let k2: Vec<f64> = means
        .iter()
        .map(|m| {
            let steps = m.grid.steps();
            (0..=steps)
                .map(|k| trapezoid_weight(k, steps, m.grid.dt()) * m.state(k)[0] * m.state(k)[0])
                .sum()
        })
        .collect();
    Estimate::from_samples(&k2).scaled(poa_factor(params))
}
