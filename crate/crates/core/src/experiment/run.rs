use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{render_config, ScenarioConfig};
use crate::carbon::{build_spec, check_wellposedness, WellPosedness};
use crate::error::{Error, Result};
use crate::lq_problem::{validate_mfc_assumptions, validate_mfg_assumptions, AssumptionReport, GeneralLQSpec, TimeGrid};
use crate::market::{clearing_residual, clearing_stats, interior_nodes, ClearingObserver, ClearingStats, PriceRule};
use crate::riccati::{residual_norms, solve, ResidualNorms, RiccatiSolution};
use crate::simulator::{summarize, ClosedLoop, EnsembleStats, EnsembleSummary, ScenarioSummary, SummaryObserver};

/// Slack on the smallest eigenvalue of `R` when validating.
pub const DELTA2: f64 = 1e-12;

/// Assumption checks plus the clearing-equilibrium condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub mfc: AssumptionReport,
    pub mfg: AssumptionReport,
    pub wellposedness: WellPosedness,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.mfc.passed() && self.mfg.passed() && self.wellposedness.holds()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.mfc, self.mfg)?;
        let w = &self.wellposedness;
        writeln!(f, "clearing equilibrium")?;
        writeln!(f, "  capital margin {:e}", w.capital_margin)?;
        writeln!(f, "  bank margin    {:e}", w.bank_margin)?;
        writeln!(f, "{}", if self.passed() { "all checks passed" } else { "validation FAILED" })
    }
}

fn grid_of(cfg: &ScenarioConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.params.horizon, cfg.sim.dt)
}

fn spec_of(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<GeneralLQSpec> {
    build_spec(&cfg.params, cfg.sim.variant, cfg.price.as_ref(), grid)
}

pub fn validate(cfg: &ScenarioConfig) -> Result<ValidationReport> {
    let grid = grid_of(cfg)?;
    let spec = spec_of(cfg, grid)?;
    Ok(ValidationReport {
        mfc: validate_mfc_assumptions(&spec, 0.0, DELTA2)?,
        mfg: validate_mfg_assumptions(&spec, 0.0, DELTA2)?,
        wellposedness: check_wellposedness(&cfg.params),
    })
}

fn require_wellposed(cfg: &ScenarioConfig) -> Result<WellPosedness> {
    let w = check_wellposedness(&cfg.params);
    if !w.holds() {
        return Err(Error::WellPosedness(format!(
            "capital margin {:e}, bank margin {:e}",
            w.capital_margin, w.bank_margin
        )));
    }
    Ok(w)
}

/// Riccati solution of a scenario with its plug-back residuals.
pub fn riccati(cfg: &ScenarioConfig) -> Result<(GeneralLQSpec, RiccatiSolution, ResidualNorms)> {
    cfg.validate()?;
    require_wellposed(cfg)?;
    let grid = grid_of(cfg)?;
    let spec = spec_of(cfg, grid)?;
    let sol = solve(&spec, grid, cfg.sim.variant)?;
    let res = residual_norms(&sol, &spec)?;
    Ok((spec, sol, res))
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub solution: RiccatiSolution,
    pub residuals: ResidualNorms,
    pub wellposedness: WellPosedness,
    pub summary: ScenarioSummary,
    pub ensemble: Option<EnsembleSummary>,
    pub market: Option<ClearingStats>,
}

/// Solves and simulates a scenario in memory.
pub fn evaluate(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let wellposedness = require_wellposed(cfg)?;
    let (spec, sol, residuals) = riccati(cfg)?;
    let lp = ClosedLoop::new(&sol, &spec, sol.grid)?;
    let rule = PriceRule::for_variant(cfg.sim.variant, cfg.price.as_ref())?;
    let grid = sol.grid;
    let all: Vec<usize> = (0..grid.nodes()).collect();
    let n = [cfg.sim.n_particles];
    let x0 = cfg.params.initial_state();
    let obs = lp.run(&cfg.sim, &x0, None, |_| {
        (
            SummaryObserver::new(&cfg.params, &rule),
            cfg.emit.ensemble.then(|| EnsembleStats::new(&rule)),
            cfg.emit.market.then(|| ClearingObserver::new(&n, &all)),
        )
    })?;
    let summaries: Vec<_> = obs.iter().map(|o| o.0.clone()).collect();
    let summary = summarize(&summaries, &cfg.params);
    let ensemble = cfg.emit.ensemble.then(|| {
        let parts: Vec<_> = obs.iter().filter_map(|o| o.1.clone()).collect();
        EnsembleSummary::merge(&parts, grid.times())
    });
    let market = if cfg.emit.market {
        let parts: Vec<_> = obs.iter().filter_map(|o| o.2.clone()).collect();
        Some(clearing_stats(&parts, &grid.times())?)
    } else {
        None
    };
    Ok(ScenarioResult {
        config: cfg.clone(),
        solution: sol,
        residuals,
        wellposedness,
        summary,
        ensemble,
        market,
    })
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct GridInfo {
    horizon: f64,
    dt: f64,
    steps: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ScenarioConfig,
    grid: GridInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    residuals: Option<ResidualNorms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wellposedness: Option<WellPosedness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a ScenarioSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clearing: Option<&'a ClearingStats>,
}

fn write_manifest(dir: &Path, m: &Manifest<'_>) -> Result<()> {
    write_atomic(&dir.join("manifest.cfg"), render_config(m.config).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(m)?;
    json.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &json)
}

fn manifest<'a>(cfg: &'a ScenarioConfig) -> Manifest<'a> {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        grid: GridInfo {
            horizon: cfg.params.horizon,
            dt: cfg.sim.dt,
            steps: (cfg.params.horizon / cfg.sim.dt).round() as usize,
        },
        residuals: None,
        wellposedness: None,
        summary: None,
        clearing: None,
    }
}

const SUMMARY_HEAD: &str = "value";

fn summary_header() -> Vec<String> {
    let mut h = vec![SUMMARY_HEAD.to_string()];
    for f in ScenarioSummary::FIELDS {
        h.push(f.to_string());
        h.push(format!("{f}_hw"));
    }
    h
}

fn summary_record(value: Option<f64>, s: &ScenarioSummary) -> Vec<String> {
    let mut r = vec![value.map(|v| format!("{v:e}")).unwrap_or_default()];
    for e in s.values() {
        r.push(format!("{:e}", e.mean));
        r.push(format!("{:e}", e.half_width));
    }
    r
}

fn summary_csv(rows: &[(Option<f64>, &ScenarioSummary)]) -> Result<Vec<u8>> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(summary_header())?;
        for (v, s) in rows {
            w.write_record(summary_record(*v, s))?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn write_outputs(res: &ScenarioResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let emit = res.config.emit;
    if emit.riccati {
        write_atomic(&dir.join("riccati.csv"), &csv_bytes(|b| res.solution.write_csv(b))?)?;
    }
    if let Some(e) = &res.ensemble {
        write_atomic(&dir.join("ensemble.csv"), &csv_bytes(|b| e.write_csv(b))?)?;
    }
    if let Some(m) = &res.market {
        write_atomic(&dir.join("market.csv"), &csv_bytes(|b| m.write_csv(b))?)?;
    }
    if emit.summary {
        write_atomic(&dir.join("summary.csv"), &summary_csv(&[(None, &res.summary)])?)?;
    }
    let mut m = manifest(&res.config);
    m.residuals = Some(res.residuals);
    m.wellposedness = Some(res.wellposedness);
    m.summary = Some(&res.summary);
    write_manifest(dir, &m)
}

/// Solves the Riccati system and writes `riccati.csv` with a manifest under `cfg.out`.
pub fn dump_riccati(cfg: &ScenarioConfig) -> Result<ResidualNorms> {
    let (_, sol, res) = riccati(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    write_atomic(&cfg.out.join("riccati.csv"), &csv_bytes(|b| sol.write_csv(b))?)?;
    let mut m = manifest(cfg);
    m.residuals = Some(res);
    m.wellposedness = Some(check_wellposedness(&cfg.params));
    write_manifest(&cfg.out, &m)?;
    Ok(res)
}

/// Evaluates the scenario and writes its files under `cfg.out`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let res = evaluate(cfg)?;
    write_outputs(&res, &cfg.out)?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub value: f64,
    pub summary: ScenarioSummary,
}

fn value_dir(name: &str, v: f64) -> String {
    format!("{name}={v:e}")
}

/// One summary row per sweep value, all with the same seed.
pub fn sweep_rows(cfg: &ScenarioConfig) -> Result<Vec<SummaryRow>> {
    sweep_impl(cfg, false)
}

/// Runs the sweep, writing each value's files to its own directory and `summary.csv` on top.
pub fn sweep(cfg: &ScenarioConfig) -> Result<Vec<SummaryRow>> {
    sweep_impl(cfg, true)
}

fn sweep_impl(cfg: &ScenarioConfig, write: bool) -> Result<Vec<SummaryRow>> {
    let spec = cfg.sweep.as_ref().ok_or_else(|| Error::Config("no sweep configured (set `sweep = <parameter>`)".into()))?;
    cfg.validate()?;
    let rows = spec
        .values
        .par_iter()
        .map(|&v| {
            let mut c = spec.param.apply(cfg, v)?;
            c.out = cfg.out.join(value_dir(spec.param.name(), v));
            let res = evaluate(&c)?;
            if write {
                write_outputs(&res, &c.out)?;
            }
            Ok(SummaryRow {
                value: v,
                summary: res.summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if write {
        fs::create_dir_all(&cfg.out)?;
        let table: Vec<_> = rows.iter().map(|r| (Some(r.value), &r.summary)).collect();
        write_atomic(&cfg.out.join("summary.csv"), &summary_csv(&table)?)?;
        write_manifest(&cfg.out, &manifest(cfg))?;
    }
    Ok(rows)
}

/// Interior nodes used by the clearing study.
pub const CLEARING_NODES: usize = 5;

/// Residual clearing rate over `cfg.n_list`, reusing one set of common paths for every `N`.
pub fn clearing_study(cfg: &ScenarioConfig) -> Result<ClearingStats> {
    let (spec, sol, _) = riccati(cfg)?;
    let n_max = *cfg.n_list.iter().max().ok_or_else(|| Error::Config("empty n_list".into()))?;
    let mut sim = cfg.sim;
    sim.n_particles = n_max;
    let lp = ClosedLoop::new(&sol, &spec, sol.grid)?;
    let nodes = interior_nodes(&sol.grid, CLEARING_NODES);
    let obs = lp.run(&sim, &cfg.params.initial_state(), None, |_| ClearingObserver::new(&cfg.n_list, &nodes))?;
    let times: Vec<f64> = nodes.iter().map(|&k| sol.grid.time(k)).collect();
    clearing_residual(&obs, &times)
}

pub fn clearing(cfg: &ScenarioConfig) -> Result<ClearingStats> {
    let stats = clearing_study(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    write_atomic(&cfg.out.join("clearing.csv"), &csv_bytes(|b| stats.write_csv(b))?)?;
    write_atomic(&cfg.out.join("clearing_summary.csv"), &csv_bytes(|b| stats.write_summary_csv(b))?)?;
    let mut m = manifest(cfg);
    m.clearing = Some(&stats);
    write_manifest(&cfg.out, &m)?;
    Ok(stats)
}
