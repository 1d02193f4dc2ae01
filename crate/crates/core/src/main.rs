use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carbon_mfg::experiment::{self, parse_config, ScenarioConfig, SweepParam, SweepSpec};
use carbon_mfg::riccati::Variant;
use carbon_mfg::{Error, Result};

#[derive(Parser)]
#[command(name = "carbon-mfg", version, about = "Mean-field cap-and-trade scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file in `key = value` format; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// exogenous or endogenous
    #[arg(long, global = true)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the LQ assumptions and the clearing-equilibrium condition.
    Validate(Common),
    /// Solve the Riccati system, write riccati.csv and report residuals.
    Riccati(Common),
    /// Run a single scenario.
    Simulate(Common),
    /// Run a parameter sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's sweep parameter.
        #[arg(long)]
        param: Option<SweepParam>,
        /// Comma-separated values; the parameter's preset is used otherwise.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Clearing-residual decay over a list of ensemble sizes.
    Clearing {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
}

fn load(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.sim.seed = s;
    }
    if let Some(v) = &c.variant {
        let v: Variant = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        if !matches!(v, Variant::Exogenous | Variant::Endogenous) {
            return Err(Error::Config(format!("--variant must be exogenous or endogenous, got {v}")));
        }
        cfg.sim.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Validate(c) => {
            let report = experiment::validate(&load(&c)?)?;
            print!("{report}");
            Ok(report.passed())
        }
        Cmd::Riccati(c) => {
            let cfg = load(&c)?;
            let r = experiment::dump_riccati(&cfg)?;
            println!("residuals: P {:e}  Pi {:e}  phi {:e}", r.p, r.pi, r.phi);
            println!("wrote {}", cfg.out.join("riccati.csv").display());
            Ok(true)
        }
        Cmd::Simulate(c) => {
            let cfg = load(&c)?;
            let res = experiment::run_scenario(&cfg)?;
            let s = &res.summary;
            println!("production   {:e} ± {:e}", s.production.mean, s.production.half_width);
            println!("permit price {:e} ± {:e}", s.permit_price.mean, s.permit_price.half_width);
            println!("poa          {:e} ± {:e}", s.poa.mean, s.poa.half_width);
            println!("wrote {}", cfg.out.display());
            Ok(true)
        }
        Cmd::Sweep { common, param, values } => {
            let mut cfg = load(&common)?;
            if param.is_some() || values.is_some() {
                let p = param
                    .or(cfg.sweep.as_ref().map(|s| s.param))
                    .ok_or_else(|| Error::Config("--values needs --param or a sweep in the config".into()))?;
                cfg.sweep = Some(SweepSpec {
                    param: p,
                    values: values.unwrap_or_else(|| p.preset()),
                });
                cfg.validate()?;
            }
            let rows = experiment::sweep(&cfg)?;
            for r in &rows {
                println!("{:e}\tproduction {:e}\tpoa {:e}", r.value, r.summary.production.mean, r.summary.poa.mean);
            }
            println!("wrote {}", cfg.out.join("summary.csv").display());
            Ok(true)
        }
        Cmd::Clearing { common, n_list } => {
            let mut cfg = load(&common)?;
            if let Some(n) = n_list {
                cfg.n_list = n;
                cfg.validate()?;
            }
            let stats = experiment::clearing(&cfg)?;
            for (n, v) in stats.n_list.iter().zip(&stats.sq_mean) {
                println!("N {n}\tE|residual|^2 {v:e}");
            }
            if let Some(f) = stats.fit {
                println!("slope {:.4}  r^2 {:.4}", f.slope, f.r_squared);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
