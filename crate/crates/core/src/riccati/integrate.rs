use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lq_problem::TimeGrid;

pub(crate) trait OdeState: Clone {
    fn axpy(&self, h: f64, k: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn finite(&self) -> bool;
}

impl OdeState for DMatrix<f64> {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    fn finite(&self) -> bool {
        linalg::all_finite(self)
    }
}

impl OdeState for DVector<f64> {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    fn finite(&self) -> bool {
        linalg::all_finite_vec(self)
    }
}

/// Classical RK4 from `t_n = T` down to `t_0`.
///
/// `rhs(t, y)` returns `dy/dt`; `project` is applied after each completed step.
/// Errors from `rhs` bubble up with the node being computed attached.
pub(crate) fn rk4_backward<S: OdeState>(
    grid: &TimeGrid,
    terminal: S,
    what: &str,
    mut rhs: impl FnMut(f64, &S) -> Result<S>,
    project: impl Fn(S) -> S,
) -> Result<Vec<S>> {
    let n = grid.steps();
    let h = grid.dt();
    let mut out = Vec::with_capacity(n + 1);
    out.push(terminal);
    for k in (1..=n).rev() {
        let t = grid.time(k);
        let tm = t - 0.5 * h;
        let t1 = grid.time(k - 1);
        let y = out.last().unwrap();
        let tag = |e: Error| match e {
            Error::Singular { matrix, condition, .. } => Error::Singular {
                matrix,
                node: k - 1,
                t: t1,
                condition,
            },
            other => other,
        };
        let k1 = rhs(t, y).map_err(tag)?;
        let k2 = rhs(tm, &y.axpy(-0.5 * h, &k1)).map_err(tag)?;
        let k3 = rhs(tm, &y.axpy(-0.5 * h, &k2)).map_err(tag)?;
        let k4 = rhs(t1, &y.axpy(-h, &k3)).map_err(tag)?;
        let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
        let next = project(y.axpy(-h / 6.0, &incr));
        if !next.finite() {
            return Err(Error::Divergence {
                what: what.to_string(),
                node: k - 1,
                t: t1,
            });
        }
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

/// Node values plus node derivatives; cubic Hermite in between.
///
/// Keeps fourth-order accuracy when a later equation needs this one at RK4 midpoints.
pub(crate) struct Dense<'a> {
    grid: TimeGrid,
    values: &'a [DMatrix<f64>],
    slopes: Vec<DMatrix<f64>>,
}

impl<'a> Dense<'a> {
    pub(crate) fn new(
        grid: TimeGrid,
        values: &'a [DMatrix<f64>],
        mut slope: impl FnMut(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        let slopes = values
            .iter()
            .enumerate()
            .map(|(k, v)| slope(grid.time(k), v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dense { grid, values, slopes })
    }

    pub(crate) fn at(&self, t: f64) -> DMatrix<f64> {
        if let Some(k) = self.grid.node_of(t) {
            return self.values[k].clone();
        }
        let (k, s) = self.grid.locate(t);
        let h = self.grid.dt();
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        &self.values[k] * h00
            + &self.slopes[k] * (h10 * h)
            + &self.values[k + 1] * h01
            + &self.slopes[k + 1] * (h11 * h)
    }
}
