use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::carbon::{CarbonParams, TimeSeries};
use crate::error::{Error, Result};
use crate::riccati::Variant;
use crate::simulator::SimConfig;

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Atilde,
    Lambda,
    Gamma,
    Nu,
    Eta,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [SweepParam::Atilde, SweepParam::Lambda, SweepParam::Gamma, SweepParam::Nu, SweepParam::Eta];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Atilde => "atilde",
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
            SweepParam::Nu => "nu",
            SweepParam::Eta => "eta",
        }
    }

    /// Values used when the config names a sweep without listing values.
    pub fn preset(self) -> Vec<f64> {
        match self {
            SweepParam::Atilde => vec![0.02, 0.1, 1.0, 4.0],
            SweepParam::Lambda => vec![7.5e-7, 7.5e-5, 7.5e-3],
            SweepParam::Gamma => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            SweepParam::Nu => vec![100.0, 285.713, 500.0],
            SweepParam::Eta => vec![0.1, 0.211, 0.4],
        }
    }

    /// Sets the parameter and re-derives what depends on it.
    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = cfg.clone();
        c.sweep = None;
        match self {
            SweepParam::Atilde => {
                c.params.atilde = TimeSeries::constant(value);
                c.atilde_pinned = true;
            }
            SweepParam::Lambda => c.params.lambda = value,
            SweepParam::Gamma => c.params.gamma = value,
            SweepParam::Nu => c.params.nu = value,
            SweepParam::Eta => c.params.eta = value,
        }
        c.resolve();
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep parameter {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Which files a scenario run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Emit {
    pub riccati: bool,
    pub ensemble: bool,
    pub market: bool,
    pub summary: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Emit {
            riccati: true,
            ensemble: true,
            market: true,
            summary: true,
        }
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub params: CarbonParams,
    /// `kappa_g` was given explicitly rather than derived from `gamma`.
    pub kappa_g_pinned: bool,
    /// `atilde` was given explicitly rather than derived from `T`.
    pub atilde_pinned: bool,
    pub sim: SimConfig,
    /// Permit price schedule for the price-taking variants.
    pub price: Option<TimeSeries>,
    pub sweep: Option<SweepSpec>,
    /// Ensemble sizes for the clearing study.
    pub n_list: Vec<usize>,
    pub out: PathBuf,
    pub emit: Emit,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut c = ScenarioConfig {
            params: CarbonParams::default(),
            kappa_g_pinned: false,
            atilde_pinned: false,
            sim: SimConfig::default(),
            price: None,
            sweep: None,
            n_list: vec![10, 100, 1000],
            out: PathBuf::from("out"),
            emit: Emit::default(),
        };
        c.resolve();
        c
    }
}

impl ScenarioConfig {
    /// Applies the derived defaults to whatever was not set explicitly.
    pub fn resolve(&mut self) {
        if !self.kappa_g_pinned {
            self.params.kappa_g = CarbonParams::default_kappa_g(self.params.gamma);
        }
        if !self.atilde_pinned {
            self.params.atilde = TimeSeries::constant(CarbonParams::default_atilde(self.params.horizon));
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sim.validate()?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("sweep value {v} is not finite")));
            }
        }
        if self.n_list.contains(&0) {
            return Err(Error::param("n_list", "ensemble sizes must be positive"));
        }
        Ok(())
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: expected a number, got {v:?}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|_| Error::Parse {
                line,
                message: format!("{key}: bad list entry {s:?}"),
            })
        })
        .collect()
}

/// A number, or comma-separated `t:value` knots.
pub fn parse_series(line: usize, key: &str, v: &str) -> Result<TimeSeries> {
    if !v.contains(':') {
        return Ok(TimeSeries::constant(parse_f64(line, key, v)?));
    }
    let knots = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|kv| {
            let (t, x) = kv.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("{key}: expected t:value, got {kv:?}"),
            })?;
            Ok((parse_f64(line, key, t.trim())?, parse_f64(line, key, x.trim())?))
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(knots).map_err(|e| Error::Parse {
        line,
        message: format!("{key}: {e}"),
    })
}

/// Two-column `t, value` CSV with a header row.
pub fn read_series_csv(path: &std::path::Path) -> Result<TimeSeries> {
    let mut r = csv::Reader::from_path(path)?;
    let mut knots = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                message: format!("{}: expected two columns", path.display()),
            });
        }
        knots.push((parse_f64(line, "t", rec[0].trim())?, parse_f64(line, "value", rec[1].trim())?));
    }
    TimeSeries::new(knots)
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("{key}: expected true or false, got {v:?}"),
        }),
    }
}

/// Reads `key = value` lines; `#` starts a comment. Missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut c = ScenarioConfig::default();
    let mut seen = std::collections::HashSet::new();
    let mut sweep_param: Option<SweepParam> = None;
    let mut sweep_values: Option<Vec<f64>> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected key = value, got {body:?}"),
        })?;
        let (key, v) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("{key} given twice"),
            });
        }
        let p = &mut c.params;
        let num = |target: &mut f64| -> Result<()> {
            *target = parse_f64(line, key, v)?;
            Ok(())
        };
        match key {
            "kappa_f" => num(&mut p.kappa_f)?,
            "kappa_g" => {
                num(&mut p.kappa_g)?;
                c.kappa_g_pinned = true;
            }
            "kappa_e" => num(&mut p.kappa_e)?,
            "delta" => num(&mut p.delta)?,
            "sigma" => num(&mut p.sigma)?,
            "sigma1" => num(&mut p.sigma1)?,
            "sigma2" => num(&mut p.sigma2)?,
            "sigma_tilde2" => num(&mut p.sigma_tilde2)?,
            "rho" => num(&mut p.rho)?,
            "a" => num(&mut p.a)?,
            "b" => num(&mut p.b)?,
            "gamma" => num(&mut p.gamma)?,
            "A_k" => num(&mut p.a_k)?,
            "nu" => num(&mut p.nu)?,
            "eta" => num(&mut p.eta)?,
            "h" => num(&mut p.h)?,
            "c11" => num(&mut p.c11)?,
            "c12" => num(&mut p.c12)?,
            "c21" => num(&mut p.c21)?,
            "c22" => num(&mut p.c22)?,
            "lambda" => num(&mut p.lambda)?,
            "atilde" => {
                p.atilde = parse_series(line, key, v)?;
                c.atilde_pinned = true;
            }
            "T" => num(&mut p.horizon)?,
            "kappa0" => num(&mut p.kappa0)?,
            "E0" => num(&mut p.e0)?,
            "A0" => num(&mut p.a0)?,
            "dt" => c.sim.dt = parse_f64(line, key, v)?,
            "n_common" | "n_particles" => {
                let n = v.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    message: format!("{key}: expected a positive integer, got {v:?}"),
                })?;
                if key == "n_common" {
                    c.sim.n_common = n;
                } else {
                    c.sim.n_particles = n;
                }
            }
            "seed" => {
                c.sim.seed = v.parse::<u64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("seed: expected an unsigned integer, got {v:?}"),
                })?
            }
            "variant" => {
                c.sim.variant = v.parse::<Variant>().map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?
            }
            "price" => c.price = Some(parse_series(line, key, v)?),
            "price_file" => c.price = Some(read_series_csv(std::path::Path::new(v))?),
            "sweep" => {
                sweep_param = Some(v.parse::<SweepParam>().map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?)
            }
            "sweep_values" => sweep_values = Some(parse_list(line, key, v)?),
            "n_list" => c.n_list = parse_list(line, key, v)?,
            "out" => c.out = PathBuf::from(v),
            "emit_riccati" => c.emit.riccati = parse_bool(line, key, v)?,
            "emit_ensemble" => c.emit.ensemble = parse_bool(line, key, v)?,
            "emit_market" => c.emit.market = parse_bool(line, key, v)?,
            "emit_summary" => c.emit.summary = parse_bool(line, key, v)?,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
    }
    c.sweep = match (sweep_param, sweep_values) {
        (Some(param), values) => Some(SweepSpec {
            param,
            values: values.unwrap_or_else(|| param.preset()),
        }),
        (None, Some(_)) => return Err(Error::Config("sweep_values given without sweep".into())),
        (None, None) => None,
    };
    c.resolve();
    c.validate()?;
    Ok(c)
}

fn series_text(s: &TimeSeries) -> String {
    match s.as_constant() {
        Some(v) => format!("{v:?}"),
        None => s.knots().iter().map(|(t, v)| format!("{t:?}:{v:?}")).collect::<Vec<_>>().join(", "),
    }
}

/// Writes `cfg` in the format read by [`parse_config`]; derived values appear as comments.
pub fn render_config(cfg: &ScenarioConfig) -> String {
    let p = &cfg.params;
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("kappa_f", format!("{:?}", p.kappa_f));
    let kg = format!("{:?}", p.kappa_g);
    if cfg.kappa_g_pinned {
        put("kappa_g", kg);
    } else {
        put("# kappa_g", format!("{kg}  (3 gamma + 0.2)"));
    }
    for (k, v) in [
        ("kappa_e", p.kappa_e),
        ("delta", p.delta),
        ("sigma", p.sigma),
        ("sigma1", p.sigma1),
        ("sigma2", p.sigma2),
        ("sigma_tilde2", p.sigma_tilde2),
        ("rho", p.rho),
        ("a", p.a),
        ("b", p.b),
        ("gamma", p.gamma),
        ("A_k", p.a_k),
        ("nu", p.nu),
        ("eta", p.eta),
        ("h", p.h),
        ("c11", p.c11),
        ("c12", p.c12),
        ("c21", p.c21),
        ("c22", p.c22),
        ("lambda", p.lambda),
    ] {
        put(k, format!("{v:?}"));
    }
    if cfg.atilde_pinned {
        put("atilde", series_text(&p.atilde));
    } else {
        put("# atilde", format!("{}  (0.5 / T)", series_text(&p.atilde)));
    }
    for (k, v) in [("T", p.horizon), ("kappa0", p.kappa0), ("E0", p.e0), ("A0", p.a0), ("dt", cfg.sim.dt)] {
        put(k, format!("{v:?}"));
    }
    put("n_common", cfg.sim.n_common.to_string());
    put("n_particles", cfg.sim.n_particles.to_string());
    put("seed", cfg.sim.seed.to_string());
    put("variant", cfg.sim.variant.to_string());
    if let Some(pr) = &cfg.price {
        put("price", series_text(pr));
    }
    if let Some(sw) = &cfg.sweep {
        put("sweep", sw.param.name().to_string());
        put("sweep_values", sw.values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", "));
    }
    put("n_list", cfg.n_list.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", "));
    put("out", cfg.out.display().to_string());
    put("emit_riccati", cfg.emit.riccati.to_string());
    put("emit_ensemble", cfg.emit.ensemble.to_string());
    put("emit_market", cfg.emit.market.to_string());
    put("emit_summary", cfg.emit.summary.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default_scenario() {
        let c = parse_config("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.params.gamma, 0.5);
        assert_eq!(c.params.lambda, 7.5e-5);
        assert_eq!(c.params.kappa_g, 1.7);
    }

    #[test]
    fn gamma_zero_derives_kappa_g() {
        let c = parse_config("gamma = 0\n").unwrap();
        assert!((c.params.kappa_g - 0.2).abs() < 1e-15);
        let c = parse_config("gamma = 0\nkappa_g = 1.0").unwrap();
        assert_eq!(c.params.kappa_g, 1.0);
    }

    #[test]
    fn invalid_input_is_rejected() {
        assert!(matches!(parse_config("nu = -1"), Err(Error::Parameter { .. })));
        assert!(matches!(parse_config("# ok\nfoo = 1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("gamma 0.5"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("a = 1\na = 2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("dt = x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn render_round_trips() {
        let text = "gamma = 0.25\natilde = 0:0.1, 5:0.3\nvariant = exogenous\nprice = 12.5\nsweep = lambda\nseed = 99\n";
        let c = parse_config(text).unwrap();
        assert_eq!(parse_config(&render_config(&c)).unwrap(), c);
        let d = ScenarioConfig::default();
        assert_eq!(parse_config(&render_config(&d)).unwrap(), d);
    }

    #[test]
    fn sweep_without_values_uses_preset() {
        let c = parse_config("sweep = atilde").unwrap();
        assert_eq!(c.sweep.unwrap().values, vec![0.02, 0.1, 1.0, 4.0]);
    }
}
