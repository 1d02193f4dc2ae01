use super::engine::{ClosedLoop, CommonPath};
use crate::error::{Error, Result};
use crate::lq_problem::Dims;

/// `Z` (`d × d1`) and `Z₀` (`d × d0`) per particle and node, row-major blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointDiffusions {
    pub n: usize,
    pub nodes: usize,
    dims: Dims,
    pub z: Vec<f64>,
    pub z0: Vec<f64>,
}

impl AdjointDiffusions {
    pub fn z(&self, i: usize, k: usize) -> &[f64] {
        let s = self.dims.d * self.dims.d1;
        let at = (i * self.nodes + k) * s;
        &self.z[at..at + s]
    }

    pub fn z0(&self, i: usize, k: usize) -> &[f64] {
        let s = self.dims.d * self.dims.d0;
        let at = (i * self.nodes + k) * s;
        &self.z0[at..at + s]
    }
}

fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..n).map(|c| m[r * n + c] * x[c]).sum();
    }
}

/// Martingale integrands of the adjoint, read off `Y = P(X − X̄) + ΠX̄ + φ`.
///
/// For an idiosyncratic channel `Z_j = P σ_j(X)`; for a common one
/// `Z₀ = P(σ⁰(X) − σ⁰(X̄)) + Π σ⁰(X̄)`, where `σ⁰(X̄)` is the mean's loading.
pub fn reconstruct_z(lp: &ClosedLoop, path: &CommonPath, shift: Option<&[f64]>) -> Result<AdjointDiffusions> {
    let dims = lp.dims();
    let Dims { d, d0, d1, .. } = dims;
    if let Some(e) = shift {
        if e.len() != dims.d2 {
            return Err(Error::dim("control shift", dims.d2.to_string(), e.len().to_string()));
        }
    }
    let n = path.particles.n;
    let nodes = path.particles.nodes;
    if nodes != lp.grid().nodes() {
        return Err(Error::Config("path is on a different grid".into()));
    }
    let mut out = AdjointDiffusions {
        n,
        nodes,
        dims,
        z: vec![0.0; n * nodes * d * d1],
        z0: vec![0.0; n * nodes * d * d0],
    };
    let mut base = lp.new_coeffs();
    let mut dev = lp.new_coeffs();
    let mut mean_idio = vec![0.0; d1 * d];
    let mut mean_common = vec![0.0; d0 * d];
    let mut idio = vec![0.0; d1 * d];
    let mut common = vec![0.0; d0 * d];
    let mut col = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for k in 0..nodes {
        let xbar = path.mean.state(k);
        lp.coeffs(k, xbar, path.mean.control(k), &mut base);
        lp.loadings(k, &base, xbar, &mut mean_idio, &mut mean_common);
        let nc = match shift {
            Some(e) => {
                lp.deviate(&base, e, &mut dev);
                &dev
            }
            None => &base,
        };
        for i in 0..n {
            lp.loadings(k, nc, path.particles.state(i, k), &mut idio, &mut common);
            let zs = d * d1;
            let z = &mut out.z[(i * nodes + k) * zs..(i * nodes + k + 1) * zs];
            for j in 0..d1 {
                matvec(lp.p(k), &idio[j * d..(j + 1) * d], &mut col);
                for r in 0..d {
                    z[r * d1 + j] = col[r];
                }
            }
            let zs = d * d0;
            let z0 = &mut out.z0[(i * nodes + k) * zs..(i * nodes + k + 1) * zs];
            for l in 0..d0 {
                let sm = &mean_common[l * d..(l + 1) * d];
                for r in 0..d {
                    col[r] = common[l * d + r] - sm[r];
                }
                matvec(lp.p(k), &col, &mut a);
                matvec(lp.pi(k), sm, &mut b);
                for r in 0..d {
                    z0[r * d0 + l] = a[r] + b[r];
                }
            }
        }
    }
    Ok(out)
}
