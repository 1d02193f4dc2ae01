use carbon_mfg::carbon::{build_spec, CarbonParams, TimeSeries};
use carbon_mfg::lq_problem::{Dims, GeneralLQSpec, LqCoefficients, NoiseChannel, Schedule, TimeGrid};
use carbon_mfg::riccati::{
    feedback_control, residual_norms, residual_profile_with, sigma_lambda, solve_endogenous, solve_endogenous_with,
    solve_exogenous, solve_exogenous_with, solve_general, solve_general_with, RiccatiSolution, SolveOptions, Stencil, Variant,
};
use nalgebra::{DMatrix, DVector};

fn sup_diff(a: &RiccatiSolution, b: &RiccatiSolution) -> f64 {
    let mut m: f64 = 0.0;
    for k in 0..a.grid.nodes() {
        m = m.max((&a.p[k] - &b.p[k]).amax());
        m = m.max((&a.pi[k] - &b.pi[k]).amax());
        m = m.max((&a.phi[k] - &b.phi[k]).amax());
    }
    m
}

fn carbon(variant: Variant, dt: f64) -> GeneralLQSpec {
    let p = CarbonParams::default();
    let grid = TimeGrid::new(p.horizon, dt).unwrap();
    let price = TimeSeries::constant(0.3);
    let price = (variant != Variant::Endogenous).then_some(&price);
    build_spec(&p, variant, price, grid).unwrap()
}

/// Closed form of `Ṗ = k P² − q`, `P(T) = h`, written in time-to-go.
fn scalar_closed_form(k: f64, q: f64, h: f64, tau: f64) -> f64 {
    let root = (q / k).sqrt();
    let th = ((q * k).sqrt() * tau).tanh();
    root * (h + root * th) / (root + h * th)
}

#[test]
fn scalar_riccati_matches_closed_form_and_dense_heun() {
    let (b, q, r, h, horizon) = (1.5, 2.0, 0.5, 0.3, 1.0);
    let grid = TimeGrid::new(horizon, 1e-3).unwrap();
    let mut c = LqCoefficients::zeros(Dims { d: 1, d0: 0, d1: 0, d2: 1 }, grid);
    c.drift_control[(0, 0)] = b;
    c.state_cost[(0, 0)] = q;
    c.control_cost[(0, 0)] = r;
    c.terminal[(0, 0)] = h;
    let spec = GeneralLQSpec::new(c).unwrap();
    let sol = solve_general(&spec, grid).unwrap();

    let k = b * b / r;
    // Heun with 1e-6 steps, independent of the solver
    let fine = 1_000_000usize;
    let dt = horizon / fine as f64;
    let mut dense = vec![0.0; fine + 1];
    dense[fine] = h;
    for i in (1..=fine).rev() {
        let y = dense[i];
        let f = |p: f64| k * p * p - q;
        let pred = y - dt * f(y);
        dense[i - 1] = y - 0.5 * dt * (f(y) + f(pred));
    }
    for node in (0..grid.nodes()).step_by(50) {
        let t = grid.time(node);
        let exact = scalar_closed_form(k, q, h, horizon - t);
        let heun = dense[node * 1000];
        assert!((sol.p[node][(0, 0)] - exact).abs() <= 1e-8, "node {node}");
        assert!((sol.p[node][(0, 0)] - heun).abs() <= 1e-8, "node {node}");
    }
}

#[test]
fn terminal_conditions_are_exact() {
    let spec = carbon(Variant::Endogenous, 1e-2);
    let sol = solve_endogenous(&spec, spec.grid()).unwrap();
    let n = sol.grid.steps();
    let h = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 7.5e-5]);
    assert_eq!(sol.p[n], h);
    assert_eq!(sol.pi[n], h);
    assert_eq!(sol.phi[n], DVector::zeros(2));
}

#[test]
fn general_reduces_to_exogenous() {
    let spec = carbon(Variant::Exogenous, 1e-3);
    let general = solve_general(&spec, spec.grid()).unwrap();
    let exo = solve_exogenous(&spec, spec.grid()).unwrap();
    let diff = sup_diff(&general, &exo);
    assert!(diff <= 1e-10, "sup difference {diff:e}");
}

#[test]
fn endogenous_without_coupling_is_exogenous() {
    let exo_spec = carbon(Variant::Exogenous, 1e-2);
    let mut c = exo_spec.clone().into_coefficients();
    c.clearing_coupling = DMatrix::zeros(4, 2);
    c.clearing_offset = c.control_linear.at(0.0);
    let endo_spec = GeneralLQSpec::new(c).unwrap();
    let exo = solve_exogenous(&exo_spec, exo_spec.grid()).unwrap();
    let endo = solve_endogenous(&endo_spec, endo_spec.grid()).unwrap();
    assert_eq!(sup_diff(&exo, &endo), 0.0);
}

#[test]
fn zero_costs_give_zero_fields() {
    let p = CarbonParams {
        b: 0.0,
        lambda: 0.0,
        ..CarbonParams::default()
    };
    let grid = TimeGrid::new(p.horizon, 1e-2).unwrap();
    let spec = build_spec(&p, Variant::Exogenous, Some(&TimeSeries::constant(1.0)), grid).unwrap();
    let sol = solve_exogenous(&spec, grid).unwrap();
    assert!(sol.p.iter().chain(&sol.pi).all(|m| m.amax() == 0.0));
}

#[test]
fn carbon_residuals_are_small() {
    for variant in [Variant::Exogenous, Variant::Endogenous] {
        let spec = carbon(variant, 1e-3);
        let sol = solve_endogenous_or_exogenous(&spec, variant);
        let res = residual_norms(&sol, &spec).unwrap();
        assert!(res.p <= 1e-6 && res.pi <= 1e-6 && res.phi <= 1e-6, "{variant}: {res:?}");
    }
}

fn solve_endogenous_or_exogenous(spec: &GeneralLQSpec, variant: Variant) -> RiccatiSolution {
    match variant {
        Variant::Exogenous => solve_exogenous(spec, spec.grid()).unwrap(),
        _ => solve_endogenous(spec, spec.grid()).unwrap(),
    }
}

#[test]
fn residual_order_follows_the_stencil() {
    let coarse = carbon(Variant::Exogenous, 0.05);
    let fine = carbon(Variant::Exogenous, 0.025);
    let sc = solve_exogenous(&coarse, coarse.grid()).unwrap();
    let sf = solve_exogenous(&fine, fine.grid()).unwrap();
    let max_p = |sol, spec, st| residual_profile_with(sol, spec, st).unwrap().max().p;
    let ratio2 = max_p(&sc, &coarse, Stencil::SecondOrder) / max_p(&sf, &fine, Stencil::SecondOrder);
    assert!((3.0..=5.0).contains(&ratio2), "second-order ratio {ratio2}");
    let ratio4 = max_p(&sc, &coarse, Stencil::FourthOrder) / max_p(&sf, &fine, Stencil::FourthOrder);
    assert!((12.0..=20.0).contains(&ratio4), "fourth-order ratio {ratio4}");
}

#[test]
fn residual_sees_a_perturbed_node() {
    let spec = carbon(Variant::Exogenous, 1e-3);
    let dt = spec.grid().dt();
    let eps = 1e-3;
    for stencil in [Stencil::SecondOrder, Stencil::FourthOrder] {
        let mut sol = solve_exogenous(&spec, spec.grid()).unwrap();
        sol.p[0][(0, 0)] += eps;
        let prof = residual_profile_with(&sol, &spec, stencil).unwrap();
        assert!(prof.p[0] >= eps / dt, "end node residual {}", prof.p[0]);
        // central rules put no weight on their own node, so an interior bump shows next door
        let mut sol = solve_exogenous(&spec, spec.grid()).unwrap();
        sol.p[100][(1, 1)] += eps;
        let prof = residual_profile_with(&sol, &spec, stencil).unwrap();
        assert!(prof.p[99] >= 0.49 * eps / dt && prof.p[101] >= 0.49 * eps / dt);
    }
}

#[test]
fn fourth_order_convergence() {
    let dts = [0.1, 0.05, 0.025];
    let sols: Vec<_> = dts
        .iter()
        .map(|&dt| {
            let s = carbon(Variant::Endogenous, dt);
            solve_endogenous(&s, s.grid()).unwrap()
        })
        .collect();
    let gap = |a: &RiccatiSolution, b: &RiccatiSolution| {
        let stride = b.grid.steps() / a.grid.steps();
        (0..a.grid.nodes())
            .map(|k| {
                (&a.p[k] - &b.p[k * stride])
                    .amax()
                    .max((&a.pi[k] - &b.pi[k * stride]).amax())
                    .max((&a.phi[k] - &b.phi[k * stride]).amax())
            })
            .fold(0.0, f64::max)
    };
    let e1 = gap(&sols[0], &sols[1]);
    let e2 = gap(&sols[1], &sols[2]);
    assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
}

#[test]
fn symmetry_without_projection() {
    let spec = carbon(Variant::Exogenous, 1e-3);
    let opts = SolveOptions { symmetrize: false, ..Default::default() };
    for sol in [
        solve_exogenous_with(&spec, spec.grid(), &opts).unwrap(),
        solve_general_with(&spec, spec.grid(), &opts).unwrap(),
    ] {
        let (ap, api) = sol.max_asymmetry();
        assert!(ap <= 1e-10 && api <= 1e-10);
    }
    let sol = solve_exogenous(&spec, spec.grid()).unwrap();
    assert_eq!(sol.max_asymmetry(), (0.0, 0.0));
    let endo = carbon(Variant::Endogenous, 1e-3);
    let sol = solve_endogenous_with(&endo, endo.grid(), &opts).unwrap();
    let (ap, _) = sol.max_asymmetry();
    assert!(ap <= 1e-10);
}

#[test]
fn p_stays_positive_semidefinite() {
    let spec = carbon(Variant::Exogenous, 1e-3);
    let sol = solve_exogenous(&spec, spec.grid()).unwrap();
    for p in &sol.p {
        let m = p.clone().symmetric_eigenvalues().min();
        assert!(m >= -1e-10);
    }
}

#[test]
fn sigma_lambda_blocks() {
    let spec = carbon(Variant::Exogenous, 1e-2);
    let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
    let pi = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.1]);
    let bl = sigma_lambda(&spec, &p, &pi, 1.0).unwrap();
    assert_eq!(bl.sigma0, spec.control_cost);
    assert_eq!(bl.lambda0, spec.drift_control.transpose() * &p);

    let grid = TimeGrid::new(1.0, 0.1).unwrap();
    let d = 3;
    let mut c = LqCoefficients::zeros(Dims { d, d0: 1, d1: 1, d2: d }, grid);
    c.control_cost = DMatrix::identity(d, d);
    c.idiosyncratic[0].control = DMatrix::identity(d, d);
    c.cross_cost = DMatrix::from_fn(d, d, |i, j| 0.1 * (i + 2 * j) as f64);
    let spec = GeneralLQSpec::new(c).unwrap();
    let zero = DMatrix::zeros(d, d);
    let bl = sigma_lambda(&spec, &zero, &zero, 0.0).unwrap();
    assert_eq!(bl.sigma0, DMatrix::identity(d, d));
    assert_eq!(bl.lambda0, spec.cross_cost);
    assert_eq!(bl.lambda1, spec.cross_cost);
    let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 2.0, 0.0, -0.3, 0.4, 1.5]);
    let psd = &l * l.transpose();
    let bl = sigma_lambda(&spec, &psd, &zero, 0.0).unwrap();
    assert!((bl.sigma0 - (&psd + DMatrix::identity(d, d))).amax() < 1e-15);
}

#[test]
fn endogenous_terminal_feedback_by_hand() {
    let p = CarbonParams::default();
    let spec = carbon(Variant::Endogenous, 1e-2);
    let sol = solve_endogenous(&spec, spec.grid()).unwrap();
    let xbar = DVector::from_vec(vec![31.0, -3.5]);
    let v = feedback_control(&sol, &spec, p.horizon, &xbar, &xbar).unwrap();
    // (Bᵀ + D) H x̄ has only λ x̄₂ terms: (−κ_e λx̄₂, 0, λx̄₂, λx̄₂ − λx̄₂)
    let lx = p.lambda * xbar[1];
    let expected = [
        -(-p.kappa_e * lx + p.c11 / 2.0) / p.c12,
        -(p.c21 / 2.0) / p.c22,
        -2.0 * p.eta * (lx + p.h / 2.0),
        0.0,
    ];
    for i in 0..4 {
        assert!((v[i] - expected[i]).abs() < 1e-12, "component {i}: {} vs {}", v[i], expected[i]);
    }
}

#[test]
fn general_feedback_matches_reduced_feedback() {
    let spec = carbon(Variant::Exogenous, 1e-2);
    let general = solve_general(&spec, spec.grid()).unwrap();
    let exo = solve_exogenous(&spec, spec.grid()).unwrap();
    let x = DVector::from_vec(vec![29.0, -3.0]);
    let xbar = DVector::from_vec(vec![30.0, -3.9]);
    for t in [0.0, 1.234, 5.0] {
        let a = feedback_control(&general, &spec, t, &x, &xbar).unwrap();
        let b = feedback_control(&exo, &spec, t, &x, &xbar).unwrap();
        assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn zero_state_and_data_give_zero_control() {
    let grid = TimeGrid::new(1.0, 0.1).unwrap();
    let mut c = LqCoefficients::zeros(Dims { d: 2, d0: 0, d1: 0, d2: 2 }, grid);
    c.control_cost = DMatrix::identity(2, 2);
    c.state_cost = DMatrix::identity(2, 2);
    c.drift_control = DMatrix::identity(2, 2);
    let spec = GeneralLQSpec::new(c).unwrap();
    for sol in [solve_general(&spec, grid).unwrap(), solve_endogenous(&spec, grid).unwrap()] {
        let z = DVector::zeros(2);
        assert_eq!(feedback_control(&sol, &spec, 0.5, &z, &z).unwrap(), DVector::zeros(2));
    }
}

/// Mean adjoint `Ȳ = Πx̄ + φ` along the mean trajectory must solve
/// `dȲ/dt = −[(A+Ā)ᵀȲ + Σ(C+C̄)ᵀZ̄ + (Q+Q̄)x̄ + (S+S̄)ᵀv̄ + q + q̄]`, `Z̄ = P(C₀ + (C+C̄)x̄ + (D+D̄)v̄)`.
#[test]
fn general_mean_adjoint_solves_pontryagin_system() {
    let horizon = 1.0;
    let grid = TimeGrid::new(horizon, 1e-3).unwrap();
    let (d, d2) = (2, 2);
    let mut c = LqCoefficients::zeros(Dims { d, d0: 0, d1: 1, d2 }, grid);
    c.drift_offset = Schedule::from_fn(grid, |t| DVector::from_vec(vec![0.2 + 0.1 * t, -0.1])).unwrap();
    c.drift_state = DMatrix::from_row_slice(2, 2, &[-0.3, 0.2, 0.1, -0.1]);
    c.drift_mean = DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 0.1]);
    c.drift_control = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.7]);
    c.drift_mean_control = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -0.2]);
    let mut ch = NoiseChannel::zeros(d, d2);
    ch.offset = Schedule::constant(&[0.3, -0.2]);
    ch.state = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.1]);
    ch.mean_state = DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.0, 0.0]);
    ch.control = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]);
    ch.mean_control = DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.02, 0.0]);
    c.idiosyncratic = vec![ch];
    c.state_cost = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
    c.mean_state_cost = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.1]);
    c.control_cost = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]);
    c.mean_control_cost = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.1]);
    c.cross_cost = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.05, 0.1]);
    c.mean_cross_cost = DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.0, 0.0]);
    c.state_linear = Schedule::constant(&[0.4, -0.3]);
    c.mean_state_linear = Schedule::constant(&[0.1, 0.0]);
    c.control_linear = Schedule::from_fn(grid, |t| DVector::from_vec(vec![0.2 * t, 0.1])).unwrap();
    c.mean_control_linear = Schedule::constant(&[0.0, 0.05]);
    c.terminal = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]);
    c.mean_terminal = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]);
    let spec = GeneralLQSpec::new(c).unwrap();
    let sol = solve_general(&spec, grid).unwrap();
    assert!(residual_norms(&sol, &spec).unwrap().phi < 1e-6);

    // RK2 on the deterministic mean dynamics along the grid
    let a_tot = &spec.drift_state + &spec.drift_mean;
    let b_tot = &spec.drift_control + &spec.drift_mean_control;
    let vbar = |k: usize, xb: &DVector<f64>| feedback_control(&sol, &spec, grid.time(k), xb, xb).unwrap();
    let drift = |k: usize, xb: &DVector<f64>| spec.drift_offset.at(grid.time(k)) + &a_tot * xb + &b_tot * vbar(k, xb);
    let mut xs = vec![DVector::from_vec(vec![1.0, -0.5])];
    let dt = grid.dt();
    for k in 0..grid.steps() {
        let x = xs[k].clone();
        let k1 = drift(k, &x);
        let pred = &x + &k1 * dt;
        let k2 = drift(k + 1, &pred);
        xs.push(&x + (k1 + k2) * (0.5 * dt));
    }
    let ybar: Vec<_> = (0..grid.nodes()).map(|k| &sol.pi[k] * &xs[k] + &sol.phi[k]).collect();
    let ch = &spec.idiosyncratic[0];
    let c_tot = &ch.state + &ch.mean_state;
    let d_tot = &ch.control + &ch.mean_control;
    let mut worst: f64 = 0.0;
    for k in (50..grid.steps() - 50).step_by(50) {
        let t = grid.time(k);
        let lhs = (&ybar[k + 1] - &ybar[k - 1]) / (2.0 * dt);
        let v = vbar(k, &xs[k]);
        let zbar = &sol.p[k] * (ch.offset.at(t) + &c_tot * &xs[k] + &d_tot * &v);
        let rhs = -(a_tot.transpose() * &ybar[k]
            + c_tot.transpose() * zbar
            + (&spec.state_cost + &spec.mean_state_cost) * &xs[k]
            + (&spec.cross_cost + &spec.mean_cross_cost).transpose() * &v
            + spec.state_linear.at(t)
            + spec.mean_state_linear.at(t));
        worst = worst.max((lhs - rhs).amax());
    }
    assert!(worst < 1e-4, "adjoint mismatch {worst:e}");
    // the first-order condition for v̄ holds as well
    for k in [0, 400, 999] {
        let t = grid.time(k);
        let v = vbar(k, &xs[k]);
        let zbar = &sol.p[k] * (ch.offset.at(t) + &c_tot * &xs[k] + &d_tot * &v);
        let foc = (&spec.control_cost + &spec.mean_control_cost) * &v
            + (&spec.cross_cost + &spec.mean_cross_cost) * &xs[k]
            + b_tot.transpose() * &ybar[k]
            + d_tot.transpose() * zbar
            + spec.control_linear.at(t)
            + spec.mean_control_linear.at(t);
        assert!(foc.amax() < 1e-12, "first-order condition {:e}", foc.amax());
    }
}
