use std::path::Path;
use std::process::Command;

use carbon_mfg::carbon::TimeSeries;
use carbon_mfg::experiment::{evaluate, parse_config, render_config, run_scenario, sweep_rows, ScenarioConfig, SweepParam, SweepSpec};
use carbon_mfg::riccati::Variant;
use carbon_mfg::Error;
use proptest::prelude::*;

fn small() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.sim.dt = 1e-2;
    c.sim.n_common = 3;
    c.sim.n_particles = 20;
    c
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rendered_config_parses_back(
        gamma in 0.0..1.0f64,
        lambda in 1e-8..1e-2f64,
        nu in 1.0..600.0f64,
        kappa_g in proptest::option::of(0.1..5.0f64),
        atilde in proptest::option::of(0.0..4.0f64),
        steps in 10usize..2000,
        seed in any::<u64>(),
        m in 1usize..200,
        exogenous in any::<bool>(),
        knots in proptest::collection::vec(-5.0..5.0f64, 1..4),
        sweep in proptest::option::of(proptest::collection::vec(0.0..1.0f64, 1..5)),
    ) {
        let mut text = format!("gamma = {gamma:?}\nlambda = {lambda:?}\nnu = {nu:?}\n");
        if let Some(k) = kappa_g {
            text += &format!("kappa_g = {k:?}\n");
        }
        if let Some(a) = atilde {
            text += &format!("atilde = {a:?}\n");
        }
        text += &format!("dt = {:?}\nseed = {seed}\nn_common = {m}\n", 5.0 / steps as f64);
        if exogenous {
            let pts: Vec<String> = knots.iter().enumerate().map(|(i, v)| format!("{:?}:{v:?}", i as f64)).collect();
            text += &format!("variant = exogenous\nprice = {}\n", pts.join(", "));
        }
        if let Some(v) = &sweep {
            let vs: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            text += &format!("sweep = gamma\nsweep_values = {}\n", vs.join(", "));
        }
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&render_config(&cfg)).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.kappa_g_pinned, kappa_g.is_some());
    }
}

#[test]
fn scenario_files_have_headers_and_one_row_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.out = dir.path().to_path_buf();
    run_scenario(&cfg).unwrap();
    let nodes = 501;
    for (name, rows) in [("riccati.csv", nodes), ("ensemble.csv", nodes), ("market.csv", nodes), ("summary.csv", 1)] {
        let (head, body) = read_csv(&dir.path().join(name));
        assert_eq!(body.len(), rows, "{name}");
        assert!(body.iter().all(|r| r.len() == head.len()));
        for r in &body {
            for f in r.iter().filter(|f| !f.is_empty()) {
                assert!(f.parse::<f64>().is_ok(), "{name}: {f}");
            }
        }
    }
    let (head, _) = read_csv(&dir.path().join("riccati.csv"));
    assert_eq!(head[0], "t");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.cfg")).unwrap();
    assert_eq!(parse_config(&manifest).unwrap(), cfg);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["grid"]["dt"], 1e-2);
    assert_eq!(json["grid"]["horizon"], 5.0);
    assert_eq!(json["config"]["sim"]["seed"], 1);
    assert!(json["residuals"]["p"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn exogenous_run_needs_a_price() {
    let mut cfg = small();
    cfg.sim.variant = Variant::Exogenous;
    assert!(matches!(evaluate(&cfg), Err(Error::Config(_))));
    cfg.price = Some(TimeSeries::constant(0.2));
    cfg.emit.market = false;
    assert!(evaluate(&cfg).is_ok());
}

#[test]
fn ill_posed_market_aborts_with_margins() {
    let mut cfg = small();
    cfg.params.kappa_e = 100.0;
    match evaluate(&cfg) {
        Err(Error::WellPosedness(msg)) => assert!(msg.contains("margin")),
        other => panic!("expected a well-posedness error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn sweep_rows_do_not_depend_on_value_order() {
    let mut cfg = small();
    cfg.emit.ensemble = false;
    cfg.emit.market = false;
    let run = |values: Vec<f64>| {
        let mut c = cfg.clone();
        c.sweep = Some(SweepSpec {
            param: SweepParam::Eta,
            values,
        });
        sweep_rows(&c).unwrap()
    };
    let a = run(vec![0.1, 0.211, 0.4]);
    let b = run(vec![0.4, 0.1, 0.211]);
    for r in &a {
        let s = b.iter().find(|x| x.value == r.value).unwrap();
        assert_eq!(r, s);
    }
}

#[test]
fn command_line_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_carbon-mfg");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");

    std::fs::write(&cfg, "kappa_e = 100\n").unwrap();
    let out = Command::new(bin).args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(&cfg, "nu = -1\n").unwrap();
    let out = Command::new(bin).args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu"));

    let out = Command::new(bin).args(["validate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    std::fs::write(&cfg, "dt = 0.05\nn_common = 2\nn_particles = 5\n").unwrap();
    let res = dir.path().join("r");
    let out = Command::new(bin)
        .args(["riccati", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&res)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(res.join("riccati.csv").exists());
    let manifest = parse_config(&std::fs::read_to_string(res.join("manifest.cfg")).unwrap()).unwrap();
    assert_eq!(manifest.sim.seed, 9);
}
