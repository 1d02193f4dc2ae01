use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::noise::{CommonIncrements, Increments, NoiseBundle, NoiseSource};
use crate::error::{Error, Result};
use crate::lq_problem::{Dims, GeneralLQSpec, TimeGrid};
use crate::riccati::{feedback_schedule, RiccatiSolution, Variant};

/// Monte Carlo layout: `n_common` common-noise paths, each carrying `n_particles` firms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_common: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            n_common: 50,
            n_particles: 100,
            seed: 1,
            variant: Variant::Endogenous,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        if self.n_common == 0 {
            return Err(Error::param("n_common", "must be at least 1"));
        }
        if self.n_particles == 0 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        self.validate()?;
        TimeGrid::new(horizon, self.dt)
    }
}

#[derive(Debug, Clone)]
struct Channel {
    active: bool,
    /// C + D·K_f per node.
    state: Vec<f64>,
    /// C̄ − D·K_f per node.
    mean: Vec<f64>,
    offset: Vec<f64>,
    /// D + D̄.
    control: Vec<f64>,
    /// D, for a deviation of one firm only.
    own_control: Vec<f64>,
}

/// The optimally controlled dynamics tabulated on a simulation grid.
///
/// With `v = K_f(x − x̄) + w` and `w = K_m x̄ + k₀` the drift is
/// `a₀ + (A + BK_f)x + (Ā − BK_f)x̄ + (B + B̄)w`, and each noise channel has the same shape.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    grid: TimeGrid,
    dims: Dims,
    variant: Variant,
    kf: Vec<f64>,
    km: Vec<f64>,
    k0: Vec<f64>,
    fd: Vec<f64>,
    md: Vec<f64>,
    a0: Vec<f64>,
    bc: Vec<f64>,
    b: Vec<f64>,
    idio: Vec<Channel>,
    common: Vec<Channel>,
    p: Vec<f64>,
    pi: Vec<f64>,
    phi: Vec<f64>,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}

#[inline]
fn affine(out: &mut [f64], base: &[f64], m: &[f64], x: &[f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let mut s = base[r];
        for c in 0..n {
            s += m[r * n + c] * x[c];
        }
        *o = s;
    }
}

#[inline]
fn add_matvec(out: &mut [f64], m: &[f64], x: &[f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for c in 0..n {
            s += m[r * n + c] * x[c];
        }
        *o += s;
    }
}

/// Drift and channel offsets at one node for a given `(x̄, w)`.
#[derive(Debug, Clone)]
pub(crate) struct NodeCoeffs {
    drift: Vec<f64>,
    idio: Vec<f64>,
    common: Vec<f64>,
}

impl ClosedLoop {
    /// `grid` must be the Riccati grid or a coarsening of it.
    pub fn new(sol: &RiccatiSolution, spec: &GeneralLQSpec, grid: TimeGrid) -> Result<Self> {
        let dims = spec.dims();
        let Dims { d, d2, .. } = dims;
        let stride = sol
            .grid
            .coarsen_stride(&grid)
            .ok_or_else(|| Error::Config(format!("simulation step {} is not a multiple of the Riccati step {}", grid.dt(), sol.grid.dt())))?;
        NoiseSource::check_capacity(0, 0, dims.d1.max(dims.d0))?;
        let gains = feedback_schedule(sol, spec, &grid)?;
        let nodes = grid.nodes();
        let c = spec.coefficients();
        let bc = &c.drift_control + &c.drift_mean_control;
        let mut lp = ClosedLoop {
            grid,
            dims,
            variant: sol.variant,
            kf: Vec::with_capacity(nodes * d2 * d),
            km: Vec::with_capacity(nodes * d2 * d),
            k0: Vec::with_capacity(nodes * d2),
            fd: Vec::with_capacity(nodes * d * d),
            md: Vec::with_capacity(nodes * d * d),
            a0: Vec::with_capacity(nodes * d),
            bc: flat(&bc),
            b: flat(&c.drift_control),
            idio: Vec::new(),
            common: Vec::new(),
            p: Vec::with_capacity(nodes * d * d),
            pi: Vec::with_capacity(nodes * d * d),
            phi: Vec::with_capacity(nodes * d),
        };
        let mk_channel = |ch: &crate::lq_problem::NoiseChannel| Channel {
            active: !ch.is_zero(),
            state: Vec::with_capacity(nodes * d * d),
            mean: Vec::with_capacity(nodes * d * d),
            offset: Vec::with_capacity(nodes * d),
            control: flat(&(&ch.control + &ch.mean_control)),
            own_control: flat(&ch.control),
        };
        lp.idio = c.idiosyncratic.iter().map(mk_channel).collect();
        lp.common = c.common.iter().map(mk_channel).collect();
        for (k, g) in gains.iter().enumerate() {
            let t = grid.time(k);
            let bk = &c.drift_control * &g.fluctuation;
            lp.kf.extend(flat(&g.fluctuation));
            lp.km.extend(flat(&g.mean));
            lp.k0.extend(g.offset.iter());
            lp.fd.extend(flat(&(&c.drift_state + &bk)));
            lp.md.extend(flat(&(&c.drift_mean - &bk)));
            lp.a0.extend(c.drift_offset.at(t).iter());
            for (dst, src) in lp.idio.iter_mut().zip(&c.idiosyncratic).chain(lp.common.iter_mut().zip(&c.common)) {
                let dk = &src.control * &g.fluctuation;
                dst.state.extend(flat(&(&src.state + &dk)));
                dst.mean.extend(flat(&(&src.mean_state - &dk)));
                dst.offset.extend(src.offset.at(t).iter());
            }
            let j = k * stride;
            lp.p.extend(flat(&sol.p[j]));
            lp.pi.extend(flat(&sol.pi[j]));
            lp.phi.extend(sol.phi[j].iter());
        }
        Ok(lp)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    fn mat(v: &[f64], k: usize, size: usize) -> &[f64] {
        &v[k * size..(k + 1) * size]
    }

    pub fn p(&self, k: usize) -> &[f64] {
        let d = self.dims.d;
        Self::mat(&self.p, k, d * d)
    }

    pub fn pi(&self, k: usize) -> &[f64] {
        let d = self.dims.d;
        Self::mat(&self.pi, k, d * d)
    }

    pub fn phi(&self, k: usize) -> &[f64] {
        Self::mat(&self.phi, k, self.dims.d)
    }

    pub fn fluctuation_gain(&self, k: usize) -> &[f64] {
        let Dims { d, d2, .. } = self.dims;
        Self::mat(&self.kf, k, d2 * d)
    }

    /// Mean control `w = K_m x̄ + k₀`.
    pub fn mean_control(&self, k: usize, xbar: &[f64], out: &mut [f64]) {
        let Dims { d, d2, .. } = self.dims;
        affine(out, Self::mat(&self.k0, k, d2), Self::mat(&self.km, k, d2 * d), xbar);
    }

    /// `Ȳ = Πx̄ + φ`.
    pub fn mean_adjoint(&self, k: usize, xbar: &[f64], out: &mut [f64]) {
        affine(out, self.phi(k), self.pi(k), xbar);
    }

    /// `Y = Ȳ + P(x − x̄)`.
    pub fn adjoint(&self, k: usize, x: &[f64], xbar: &[f64], ybar: &[f64], out: &mut [f64]) {
        let d = self.dims.d;
        let p = self.p(k);
        for r in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += p[r * d + c] * (x[c] - xbar[c]);
            }
            out[r] = ybar[r] + s;
        }
    }

    /// `v = K_f(x − x̄) + w + shift`.
    pub fn control(&self, k: usize, x: &[f64], xbar: &[f64], w: &[f64], shift: Option<&[f64]>, out: &mut [f64]) {
        let Dims { d, d2, .. } = self.dims;
        let kf = self.fluctuation_gain(k);
        for r in 0..d2 {
            let mut s = 0.0;
            for c in 0..d {
                s += kf[r * d + c] * (x[c] - xbar[c]);
            }
            out[r] = s + w[r] + shift.map_or(0.0, |e| e[r]);
        }
    }

    pub(crate) fn new_coeffs(&self) -> NodeCoeffs {
        let Dims { d, d0, d1, .. } = self.dims;
        NodeCoeffs {
            drift: vec![0.0; d],
            idio: vec![0.0; d1 * d],
            common: vec![0.0; d0 * d],
        }
    }

    pub(crate) fn coeffs(&self, k: usize, xbar: &[f64], w: &[f64], out: &mut NodeCoeffs) {
        let Dims { d, .. } = self.dims;
        let dd = d * d;
        affine(&mut out.drift, Self::mat(&self.a0, k, d), Self::mat(&self.md, k, dd), xbar);
        add_matvec(&mut out.drift, &self.bc, w);
        for (chans, buf) in [(&self.idio, &mut out.idio), (&self.common, &mut out.common)] {
            for (j, ch) in chans.iter().enumerate() {
                let o = &mut buf[j * d..(j + 1) * d];
                affine(o, Self::mat(&ch.offset, k, d), Self::mat(&ch.mean, k, dd), xbar);
                add_matvec(o, &ch.control, w);
            }
        }
    }

    /// Adds the effect of one firm deviating by `shift` while the population does not.
    pub(crate) fn deviate(&self, base: &NodeCoeffs, shift: &[f64], out: &mut NodeCoeffs) {
        let d = self.dims.d;
        out.drift.copy_from_slice(&base.drift);
        out.idio.copy_from_slice(&base.idio);
        out.common.copy_from_slice(&base.common);
        add_matvec(&mut out.drift, &self.b, shift);
        for (chans, buf) in [(&self.idio, &mut out.idio), (&self.common, &mut out.common)] {
            for (j, ch) in chans.iter().enumerate() {
                add_matvec(&mut buf[j * d..(j + 1) * d], &ch.own_control, shift);
            }
        }
    }

    /// One Euler–Maruyama step from node `k`; `dw = None` drops the idiosyncratic channels.
    #[inline]
    pub(crate) fn advance(&self, k: usize, nc: &NodeCoeffs, x: &mut [f64], dw: Option<&[f64]>, dw0: &[f64], next: &mut [f64]) {
        let d = self.dims.d;
        let dd = d * d;
        let dt = self.grid.dt();
        let fd = Self::mat(&self.fd, k, dd);
        for r in 0..d {
            let mut s = nc.drift[r];
            for c in 0..d {
                s += fd[r * d + c] * x[c];
            }
            next[r] = x[r] + s * dt;
        }
        if let Some(dw) = dw {
            Self::diffuse(&self.idio, k, d, &nc.idio, x, dw, next);
        }
        Self::diffuse(&self.common, k, d, &nc.common, x, dw0, next);
        x.copy_from_slice(&next[..d]);
    }

    #[inline]
    fn diffuse(chans: &[Channel], k: usize, d: usize, offs: &[f64], x: &[f64], dw: &[f64], next: &mut [f64]) {
        for (j, ch) in chans.iter().enumerate() {
            if !ch.active {
                continue;
            }
            let f = Self::mat(&ch.state, k, d * d);
            for r in 0..d {
                let mut s = offs[j * d + r];
                for c in 0..d {
                    s += f[r * d + c] * x[c];
                }
                next[r] += s * dw[j];
            }
        }
    }

    /// Channel loadings `σ_j(x)` of every noise channel at node `k`.
    pub(crate) fn loadings(&self, k: usize, nc: &NodeCoeffs, x: &[f64], idio: &mut [f64], common: &mut [f64]) {
        let d = self.dims.d;
        for (chans, offs, out) in [(&self.idio, &nc.idio, idio), (&self.common, &nc.common, common)] {
            for (j, ch) in chans.iter().enumerate() {
                affine(&mut out[j * d..(j + 1) * d], &offs[j * d..(j + 1) * d], Self::mat(&ch.state, k, d * d), x);
            }
        }
    }

    fn check(&self, what: &str, k: usize, x: &[f64]) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence {
                what: what.to_string(),
                node: k,
                t: self.grid.time(k),
            })
        }
    }

    /// Conditional-mean path driven by one set of common increments.
    pub fn mean_path(&self, x0: &[f64], common: &CommonIncrements) -> Result<MeanPath> {
        let Dims { d, d2, .. } = self.dims;
        self.check_x0(x0)?;
        let steps = self.grid.steps();
        if common.channels != self.dims.d0 || common.values.len() != steps * common.channels {
            return Err(Error::dim("common increments", format!("{steps}x{}", self.dims.d0), format!("{}", common.values.len())));
        }
        let mut states = Vec::with_capacity((steps + 1) * d);
        let mut controls = Vec::with_capacity((steps + 1) * d2);
        let mut x = x0.to_vec();
        let mut w = vec![0.0; d2];
        let mut next = vec![0.0; d];
        let mut nc = self.new_coeffs();
        for k in 0..=steps {
            self.mean_control(k, &x, &mut w);
            states.extend_from_slice(&x);
            controls.extend_from_slice(&w);
            if k == steps {
                break;
            }
            self.coeffs(k, &x, &w, &mut nc);
            self.advance(k, &nc, &mut x, None, common.step(k), &mut next);
            self.check("mean path", k + 1, &x)?;
        }
        Ok(MeanPath {
            grid: self.grid,
            d,
            d2,
            states,
            controls,
        })
    }

    fn check_x0(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.dims.d {
            return Err(Error::dim("initial state", self.dims.d.to_string(), x0.len().to_string()));
        }
        Ok(())
    }

    /// Particles around a given mean path; `shift` moves every particle's control.
    pub fn particles(
        &self,
        x0: &[f64],
        mean: &MeanPath,
        common: &CommonIncrements,
        noise: &NoiseBundle,
        shift: Option<&[f64]>,
    ) -> Result<ParticlePaths> {
        let Dims { d, d1, d2, .. } = self.dims;
        self.check_x0(x0)?;
        let steps = self.grid.steps();
        if noise.steps != steps || noise.channels != d1 {
            return Err(Error::dim("noise bundle", format!("{steps}x{d1}"), format!("{}x{}", noise.steps, noise.channels)));
        }
        if mean.grid != self.grid {
            return Err(Error::Config("mean path is on a different grid".into()));
        }
        if let Some(e) = shift {
            if e.len() != d2 {
                return Err(Error::dim("control shift", d2.to_string(), e.len().to_string()));
            }
        }
        let n = noise.particles;
        let mut states = vec![0.0; n * (steps + 1) * d];
        let mut controls = vec![0.0; n * (steps + 1) * d2];
        let mut base = self.new_coeffs();
        let mut dev = self.new_coeffs();
        let mut next = vec![0.0; d];
        let mut xs: Vec<f64> = (0..n).flat_map(|_| x0.iter().copied()).collect();
        for k in 0..=steps {
            let xbar = mean.state(k);
            let w = mean.control(k);
            for i in 0..n {
                let x = &xs[i * d..(i + 1) * d];
                let at = (i * (steps + 1) + k) * d;
                states[at..at + d].copy_from_slice(x);
                let at = (i * (steps + 1) + k) * d2;
                self.control(k, x, xbar, w, shift, &mut controls[at..at + d2]);
            }
            if k == steps {
                break;
            }
            self.coeffs(k, xbar, w, &mut base);
            let nc = match shift {
                Some(e) => {
                    self.deviate(&base, e, &mut dev);
                    &dev
                }
                None => &base,
            };
            for i in 0..n {
                let x = &mut xs[i * d..(i + 1) * d];
                self.advance(k, nc, x, Some(noise.step(i, k)), common.step(k), &mut next);
                self.check("particle", k + 1, x)?;
            }
        }
        Ok(ParticlePaths {
            n,
            nodes: steps + 1,
            d,
            d2,
            states,
            controls,
        })
    }

    /// Runs every common path in parallel and returns one observer per path, in path order.
    ///
    /// Noise is drawn on the fly from `source`, so results do not depend on the thread count.
    pub fn run<O, F>(&self, cfg: &SimConfig, x0: &[f64], shift: Option<&[f64]>, factory: F) -> Result<Vec<O>>
    where
        O: Observer + Send,
        F: Fn(usize) -> O + Sync,
    {
        cfg.validate()?;
        self.check_x0(x0)?;
        if (cfg.dt - self.grid.dt()).abs() > 1e-12 * cfg.dt.max(1.0) {
            return Err(Error::Config(format!("config step {} differs from the closed-loop grid step {}", cfg.dt, self.grid.dt())));
        }
        if cfg.variant != self.variant {
            return Err(Error::Config(format!("config variant {} but the solution is {}", cfg.variant, self.variant)));
        }
        if let Some(e) = shift {
            if e.len() != self.dims.d2 {
                return Err(Error::dim("control shift", self.dims.d2.to_string(), e.len().to_string()));
            }
        }
        NoiseSource::check_capacity(cfg.n_common, cfg.n_particles, self.dims.d1.max(self.dims.d0))?;
        let source = NoiseSource::new(cfg.seed);
        (0..cfg.n_common)
            .into_par_iter()
            .map(|path| {
                let mut obs = factory(path);
                self.run_path(&source, path, cfg.n_particles, x0, shift, &mut obs)?;
                Ok(obs)
            })
            .collect()
    }

    fn run_path<O: Observer>(
        &self,
        source: &NoiseSource,
        path: usize,
        n: usize,
        x0: &[f64],
        shift: Option<&[f64]>,
        obs: &mut O,
    ) -> Result<()> {
        let Dims { d, d0, d1, d2 } = self.dims;
        let steps = self.grid.steps();
        let sq = self.grid.dt().sqrt();
        let mut common_rng: Vec<Increments> = (0..d0).map(|c| source.common(path, c)).collect();
        let active: Vec<usize> = (0..d1).filter(|&j| self.idio[j].active).collect();
        let mut rngs: Vec<Increments> = (0..n)
            .flat_map(|i| active.iter().map(move |&j| source.particle(path, i, j)))
            .collect();
        let mut xbar = x0.to_vec();
        let mut xs: Vec<f64> = (0..n).flat_map(|_| x0.iter().copied()).collect();
        let mut w = vec![0.0; d2];
        let mut ybar = vec![0.0; d];
        let mut dw0 = vec![0.0; d0];
        let mut dw = vec![0.0; d1];
        let mut next = vec![0.0; d];
        let mut base = self.new_coeffs();
        let mut dev = self.new_coeffs();
        let zero = vec![0.0; d2];
        for k in 0..=steps {
            self.mean_control(k, &xbar, &mut w);
            self.mean_adjoint(k, &xbar, &mut ybar);
            obs.observe(&NodeView {
                lp: self,
                path,
                k,
                t: self.grid.time(k),
                n,
                mean: &xbar,
                mean_control: &w,
                mean_adjoint: &ybar,
                particles: &xs,
                shift: shift.unwrap_or(&zero),
            });
            if k == steps {
                break;
            }
            self.coeffs(k, &xbar, &w, &mut base);
            let nc = match shift {
                Some(e) => {
                    self.deviate(&base, e, &mut dev);
                    &dev
                }
                None => &base,
            };
            for (c, r) in common_rng.iter_mut().enumerate() {
                dw0[c] = sq * r.next_normal();
            }
            for i in 0..n {
                let streams = &mut rngs[i * active.len()..(i + 1) * active.len()];
                for (s, &j) in streams.iter_mut().zip(&active) {
                    dw[j] = sq * s.next_normal();
                }
                let x = &mut xs[i * d..(i + 1) * d];
                self.advance(k, nc, x, Some(&dw), &dw0, &mut next);
            }
            self.advance(k, &base, &mut xbar, None, &dw0, &mut next);
            self.check("mean path", k + 1, &xbar)?;
            for i in 0..n {
                self.check("particle", k + 1, &xs[i * d..(i + 1) * d])?;
            }
        }
        Ok(())
    }
}

/// Per-node snapshot handed to observers during a streamed run.
pub struct NodeView<'a> {
    lp: &'a ClosedLoop,
    pub path: usize,
    pub k: usize,
    pub t: f64,
    pub n: usize,
    pub mean: &'a [f64],
    pub mean_control: &'a [f64],
    pub mean_adjoint: &'a [f64],
    /// `n × d`, row per particle.
    pub particles: &'a [f64],
    pub shift: &'a [f64],
}

impl NodeView<'_> {
    pub fn closed_loop(&self) -> &ClosedLoop {
        self.lp
    }

    pub fn dt(&self) -> f64 {
        self.lp.grid.dt()
    }

    pub fn is_last(&self) -> bool {
        self.k == self.lp.grid.steps()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.lp.dims.d;
        &self.particles[i * d..(i + 1) * d]
    }

    pub fn control(&self, i: usize, out: &mut [f64]) {
        self.lp.control(self.k, self.state(i), self.mean, self.mean_control, Some(self.shift), out);
    }

    pub fn adjoint(&self, i: usize, out: &mut [f64]) {
        self.lp.adjoint(self.k, self.state(i), self.mean, self.mean_adjoint, out);
    }
}

pub trait Observer {
    fn observe(&mut self, view: &NodeView<'_>);
}

impl<O: Observer> Observer for Option<O> {
    fn observe(&mut self, view: &NodeView<'_>) {
        if let Some(o) = self {
            o.observe(view);
        }
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn observe(&mut self, view: &NodeView<'_>) {
        self.0.observe(view);
        self.1.observe(view);
    }
}

impl<A: Observer, B: Observer, C: Observer> Observer for (A, B, C) {
    fn observe(&mut self, view: &NodeView<'_>) {
        self.0.observe(view);
        self.1.observe(view);
        self.2.observe(view);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanPath {
    pub grid: TimeGrid,
    d: usize,
    d2: usize,
    /// `nodes × d`.
    pub states: Vec<f64>,
    /// Mean control `v̄` per node, `nodes × d2`.
    pub controls: Vec<f64>,
}

impl MeanPath {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.d..(k + 1) * self.d]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.d2..(k + 1) * self.d2]
    }

    pub fn state_vector(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.state(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePaths {
    pub n: usize,
    pub nodes: usize,
    d: usize,
    d2: usize,
    /// `n × nodes × d`.
    pub states: Vec<f64>,
    /// `n × nodes × d2`.
    pub controls: Vec<f64>,
}

impl ParticlePaths {
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let at = (i * self.nodes + k) * self.d;
        &self.states[at..at + self.d]
    }

    pub fn control(&self, i: usize, k: usize) -> &[f64] {
        let at = (i * self.nodes + k) * self.d2;
        &self.controls[at..at + self.d2]
    }
}

/// One common path with its particles, adjoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonPath {
    pub mean: MeanPath,
    pub particles: ParticlePaths,
    /// `Ȳ` per node.
    pub mean_adjoint: Vec<f64>,
    /// `Y` per particle and node, laid out like the states.
    pub adjoints: Vec<f64>,
}

impl CommonPath {
    pub fn adjoint(&self, i: usize, k: usize) -> &[f64] {
        let d = self.mean.d;
        let at = (i * self.particles.nodes + k) * d;
        &self.adjoints[at..at + d]
    }

    pub fn mean_adjoint_at(&self, k: usize) -> &[f64] {
        let d = self.mean.d;
        &self.mean_adjoint[k * d..(k + 1) * d]
    }
}

/// Fully stored simulation; meant for small runs and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub dims: Dims,
    pub variant: Variant,
    pub shift: Option<Vec<f64>>,
    pub paths: Vec<CommonPath>,
}

impl PathEnsemble {
    pub fn n_particles(&self) -> usize {
        self.paths.first().map_or(0, |p| p.particles.n)
    }
}

/// Fills in `Y = P(X − X̄) + ΠX̄ + φ` and `Ȳ = ΠX̄ + φ` along a path.
pub fn reconstruct_adjoint(lp: &ClosedLoop, mean: MeanPath, particles: ParticlePaths) -> CommonPath {
    let d = lp.dims.d;
    let nodes = particles.nodes;
    let mut mean_adjoint = vec![0.0; nodes * d];
    for k in 0..nodes {
        lp.mean_adjoint(k, mean.state(k), &mut mean_adjoint[k * d..(k + 1) * d]);
    }
    let mut adjoints = vec![0.0; particles.states.len()];
    for i in 0..particles.n {
        for k in 0..nodes {
            let at = (i * nodes + k) * d;
            lp.adjoint(k, particles.state(i, k), mean.state(k), &mean_adjoint[k * d..(k + 1) * d], &mut adjoints[at..at + d]);
        }
    }
    CommonPath {
        mean,
        particles,
        mean_adjoint,
        adjoints,
    }
}

pub fn simulate_mean_path(
    sol: &RiccatiSolution,
    spec: &GeneralLQSpec,
    grid: TimeGrid,
    common: &CommonIncrements,
    x0: &[f64],
) -> Result<MeanPath> {
    ClosedLoop::new(sol, spec, grid)?.mean_path(x0, common)
}

pub fn simulate_particles(
    sol: &RiccatiSolution,
    spec: &GeneralLQSpec,
    mean: &MeanPath,
    common: &CommonIncrements,
    noise: &NoiseBundle,
    x0: &[f64],
) -> Result<CommonPath> {
    let lp = ClosedLoop::new(sol, spec, mean.grid)?;
    let parts = lp.particles(x0, mean, common, noise, None)?;
    Ok(reconstruct_adjoint(&lp, mean.clone(), parts))
}

/// Simulates and stores a whole ensemble; identical to the streamed run node by node.
pub fn simulate_ensemble(lp: &ClosedLoop, cfg: &SimConfig, x0: &[f64], shift: Option<&[f64]>) -> Result<PathEnsemble> {
    cfg.validate()?;
    if cfg.variant != lp.variant {
        return Err(Error::Config(format!("config variant {} but the solution is {}", cfg.variant, lp.variant)));
    }
    let Dims { d0, d1, .. } = lp.dims;
    let steps = lp.grid.steps();
    let dt = lp.grid.dt();
    let source = NoiseSource::new(cfg.seed);
    let paths = (0..cfg.n_common)
        .into_par_iter()
        .map(|path| {
            let common = CommonIncrements::draw(&source, path, d0, steps, dt);
            let noise = NoiseBundle::draw(&source, path, cfg.n_particles, d1, steps, dt);
            let mean = lp.mean_path(x0, &common)?;
            let parts = lp.particles(x0, &mean, &common, &noise, shift)?;
            Ok(reconstruct_adjoint(lp, mean, parts))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        grid: lp.grid,
        dims: lp.dims,
        variant: lp.variant,
        shift: shift.map(|s| s.to_vec()),
        paths,
    })
}
