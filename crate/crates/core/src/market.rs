//! Permit price and market-clearing diagnostics.

use serde::Serialize;

use crate::carbon::TimeSeries;
use crate::error::{Error, Result};
use crate::lq_problem::TimeGrid;
use crate::riccati::{RiccatiSolution, Variant};
use crate::simulator::{CommonPath, MeanPath, NodeView, Observer};

/// Index of the trading rate among the controls.
pub const BETA: usize = 3;

/// How the permit price is obtained at a node.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceRule {
    /// `ω̄ = −2Ȳ₂`, the price that clears the market.
    Clearing,
    Exogenous(TimeSeries),
}

impl PriceRule {
    pub fn for_variant(variant: Variant, price: Option<&TimeSeries>) -> Result<Self> {
        match (variant, price) {
            (Variant::Endogenous, None) => Ok(PriceRule::Clearing),
            (Variant::Endogenous, Some(_)) => Err(Error::Config("the endogenous variant sets its own price".into())),
            (_, Some(p)) => Ok(PriceRule::Exogenous(p.clone())),
            (v, None) => Err(Error::Config(format!("the {v} variant needs a permit price schedule"))),
        }
    }

    pub fn at(&self, t: f64, mean_adjoint: &[f64]) -> f64 {
        match self {
            PriceRule::Clearing => -2.0 * mean_adjoint[1],
            PriceRule::Exogenous(p) => p.at(t),
        }
    }
}

/// `ω̄` per common path and node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricePath {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
}

impl PricePath {
    pub fn exogenous(series: &TimeSeries, grid: TimeGrid, paths: usize) -> Self {
        let row: Vec<f64> = grid.times().iter().map(|&t| series.at(t)).collect();
        PricePath {
            grid,
            values: vec![row; paths],
        }
    }

    pub fn at(&self, path: usize, k: usize) -> f64 {
        self.values[path][k]
    }
}

/// `ω̄ = −2(Π₂₁K̄ + Π₂₂X̄̃) − 2φ₂` along each mean path.
pub fn equilibrium_price(sol: &RiccatiSolution, means: &[MeanPath]) -> Result<PricePath> {
    if sol.variant != Variant::Endogenous {
        return Err(Error::Config(format!("equilibrium price needs the endogenous solution, got {}", sol.variant)));
    }
    let grid = match means.first() {
        Some(m) => m.grid,
        None => sol.grid,
    };
    let stride = sol
        .grid
        .coarsen_stride(&grid)
        .ok_or_else(|| Error::Config("mean paths are not on a coarsening of the Riccati grid".into()))?;
    let mut values = Vec::with_capacity(means.len());
    for m in means {
        if m.grid != grid {
            return Err(Error::Config("mean paths on different grids".into()));
        }
        values.push(
            (0..grid.nodes())
                .map(|k| {
                    let (pi, phi) = (&sol.pi[k * stride], &sol.phi[k * stride]);
                    let x = m.state(k);
                    -2.0 * (pi[(1, 0)] * x[0] + pi[(1, 1)] * x[1]) - 2.0 * phi[1]
                })
                .collect(),
        );
    }
    Ok(PricePath { grid, values })
}

/// `β = −2νY₂ + 2νȲ₂` for every particle (row) and node (column) of a path.
pub fn trading_rates(path: &CommonPath, nu: f64) -> Vec<Vec<f64>> {
    let nodes = path.particles.nodes;
    (0..path.particles.n)
        .map(|i| {
            (0..nodes)
                .map(|k| crate::carbon::trading_rate(path.adjoint(i, k)[1], path.mean_adjoint_at(k)[1], nu))
                .collect()
        })
        .collect()
}

/// Residual `(1/N)Σβⁱ` at selected nodes for each prefix size `N` of the particle set.
#[derive(Debug, Clone)]
pub struct ClearingObserver {
    n_list: Vec<usize>,
    nodes: Vec<usize>,
    /// `[node][n]`.
    pub residuals: Vec<Vec<f64>>,
    cursor: usize,
    beta: Vec<f64>,
}

impl ClearingObserver {
    /// Entries of `n_list` larger than the particle count of the run stay at zero.
    pub fn new(n_list: &[usize], nodes: &[usize]) -> Self {
        let mut n_list = n_list.to_vec();
        n_list.sort_unstable();
        n_list.dedup();
        let mut nodes = nodes.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        ClearingObserver {
            residuals: vec![vec![0.0; n_list.len()]; nodes.len()],
            n_list,
            nodes,
            cursor: 0,
            beta: Vec::new(),
        }
    }

    pub fn n_list(&self) -> &[usize] {
        &self.n_list
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
}

impl Observer for ClearingObserver {
    fn observe(&mut self, view: &NodeView<'_>) {
        if self.nodes.get(self.cursor) != Some(&view.k) {
            return;
        }
        let slot = self.cursor;
        self.cursor += 1;
        let d2 = view.closed_loop().dims().d2;
        self.beta.resize(d2, 0.0);
        let mut sum = 0.0;
        let mut next = 0;
        for i in 0..view.n {
            view.control(i, &mut self.beta);
            sum += self.beta[BETA];
            while next < self.n_list.len() && self.n_list[next] == i + 1 {
                self.residuals[slot][next] = sum / (i + 1) as f64;
                next += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingStats {
    pub n_list: Vec<usize>,
    pub times: Vec<f64>,
    /// `[n][node]`, averaged over common paths.
    pub residual_mean: Vec<Vec<f64>>,
    /// `[n][node]`, `E|(1/N)Σβ|²` over common paths.
    pub residual_sq_mean: Vec<Vec<f64>>,
    /// Node average of `residual_sq_mean` per `N`.
    pub sq_mean: Vec<f64>,
    /// Least-squares fit of `ln sq_mean` on `ln N`; absent when some `sq_mean` is zero.
    pub fit: Option<LogLogFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if xs.len() < 2 || xs.len() != ys.len() || ys.iter().any(|&y| !(y > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LogLogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Aggregates per-path residuals into `E|(1/N)Σβ|²` and the rate fit.
pub fn clearing_residual(per_path: &[ClearingObserver], times: &[f64]) -> Result<ClearingStats> {
    if per_path.first().is_some_and(|o| o.n_list.len() < 2) {
        return Err(Error::Config("clearing study needs at least two distinct N".into()));
    }
    clearing_stats(per_path, times)
}

/// Like [`clearing_residual`] but accepts a single `N`, in which case there is no fit.
pub fn clearing_stats(per_path: &[ClearingObserver], times: &[f64]) -> Result<ClearingStats> {
    let first = per_path.first().ok_or_else(|| Error::Config("no common paths".into()))?;
    let n_list = first.n_list.clone();
    let nodes = first.nodes.len();
    if times.len() != nodes {
        return Err(Error::dim("clearing times", nodes.to_string(), times.len().to_string()));
    }
    let m = per_path.len() as f64;
    let mut residual_mean = vec![vec![0.0; nodes]; n_list.len()];
    let mut residual_sq_mean = vec![vec![0.0; nodes]; n_list.len()];
    for obs in per_path {
        for s in 0..nodes {
            for j in 0..n_list.len() {
                let r = obs.residuals[s][j];
                residual_mean[j][s] += r / m;
                residual_sq_mean[j][s] += r * r / m;
            }
        }
    }
    let sq_mean: Vec<f64> = residual_sq_mean.iter().map(|row| row.iter().sum::<f64>() / nodes as f64).collect();
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    Ok(ClearingStats {
        fit: fit_log_log(&xs, &sq_mean),
        n_list,
        times: times.to_vec(),
        residual_mean,
        residual_sq_mean,
        sq_mean,
    })
}

impl ClearingStats {
    /// Columns `N, t, residual_mean, residual_sq_mean`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "t", "residual_mean", "residual_sq_mean"])?;
        for (j, n) in self.n_list.iter().enumerate() {
            for (s, t) in self.times.iter().enumerate() {
                w.write_record([
                    n.to_string(),
                    format!("{t:e}"),
                    format!("{:e}", self.residual_mean[j][s]),
                    format!("{:e}", self.residual_sq_mean[j][s]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row: `slope, intercept, r_squared` (empty fields without a fit).
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slope", "intercept", "r_squared"])?;
        match self.fit {
            Some(f) => w.write_record([format!("{:e}", f.slope), format!("{:e}", f.intercept), format!("{:e}", f.r_squared)])?,
            None => w.write_record(["", "", ""])?,
        }
        w.flush()?;
        Ok(())
    }
}

/// Evenly spaced interior nodes `k·n/(m+1)`, `k = 1..=m`.
pub fn interior_nodes(grid: &TimeGrid, m: usize) -> Vec<usize> {
    (1..=m).map(|k| (k * grid.steps()) / (m + 1)).collect()
}
