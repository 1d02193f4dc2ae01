use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

/// Uniform grid `0 = t_0 < ... < t_n = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

const NODE_SNAP: f64 = 1e-9;

impl TimeGrid {
    /// Fails unless `dt` divides the horizon (up to rounding).
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("T", format!("horizon must be positive, got {horizon}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || ((steps * dt - horizon) / horizon).abs() > 1e-9 {
            return Err(Error::param(
                "dt",
                format!("step {dt} does not divide the horizon {horizon}"),
            ));
        }
        Ok(TimeGrid {
            horizon,
            steps: steps as usize,
        })
    }

    pub fn with_steps(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("dt", "grid needs at least one step"));
        }
        Self::new(horizon, horizon / steps as f64)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes()).map(|k| self.time(k)).collect()
    }

    /// Node index if `t` sits on a node.
    pub fn node_of(&self, t: f64) -> Option<usize> {
        let s = t / self.dt();
        let k = s.round();
        if k >= 0.0 && k <= self.steps as f64 && (s - k).abs() <= NODE_SNAP {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Interval `[t_k, t_{k+1}]` holding `t` and the fraction of the way through it.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        if let Some(k) = self.node_of(t) {
            return if k == self.steps {
                (k - 1, 1.0)
            } else {
                (k, 0.0)
            };
        }
        let s = (t / self.dt()).clamp(0.0, self.steps as f64);
        let k = (s.floor() as usize).min(self.steps - 1);
        (k, s - k as f64)
    }

    /// Coarse grid whose nodes are every `stride`-th node of this one.
    pub fn coarsen_stride(&self, coarse: &TimeGrid) -> Option<usize> {
        if (coarse.horizon - self.horizon).abs() > NODE_SNAP * self.horizon {
            return None;
        }
        if coarse.steps == 0 || !self.steps.is_multiple_of(coarse.steps) {
            return None;
        }
        Some(self.steps / coarse.steps)
    }
}

/// Vector-valued coefficient in time, linear between samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(DVector<f64>),
    Sampled {
        grid: TimeGrid,
        values: Vec<DVector<f64>>,
    },
}

impl Schedule {
    pub fn zeros(dim: usize) -> Self {
        Schedule::Constant(DVector::zeros(dim))
    }

    pub fn constant(values: &[f64]) -> Self {
        Schedule::Constant(DVector::from_column_slice(values))
    }

    pub fn sampled(grid: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(Error::dim("schedule samples", grid.nodes(), values.len()));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::dim("schedule sample length", dim, "ragged"));
        }
        Ok(Schedule::Sampled { grid, values })
    }

    /// Sample `f` at every node of `grid`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        Self::sampled(grid, grid.times().into_iter().map(f).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            Schedule::Constant(v) => v.len(),
            Schedule::Sampled { values, .. } => values[0].len(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Schedule::Constant(v) => v.iter().all(|x| *x == 0.0),
            Schedule::Sampled { values, .. } => values.iter().all(|v| v.iter().all(|x| *x == 0.0)),
        }
    }

    /// Exact sample on nodes, linear interpolation in between.
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            Schedule::Constant(v) => v.clone(),
            Schedule::Sampled { grid, values } => {
                if let Some(k) = grid.node_of(t) {
                    return values[k].clone();
                }
                let (k, theta) = grid.locate(t);
                &values[k] * (1.0 - theta) + &values[k + 1] * theta
            }
        }
    }

    pub(crate) fn check_finite(&self, what: &str) -> Result<()> {
        let ok = match self {
            Schedule::Constant(v) => v.iter().all(|x| x.is_finite()),
            Schedule::Sampled { values, .. } => values.iter().all(|v| v.iter().all(|x| x.is_finite())),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(what, "non-finite entries"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_are_exact() {
        let g = TimeGrid::new(5.0, 1e-3).unwrap();
        assert_eq!(g.nodes(), 5001);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(5000), 5.0);
        assert_eq!(g.node_of(2.5), Some(2500));
        assert!(TimeGrid::new(1.0, 0.3).is_err());
    }

    #[test]
    fn sampled_schedule_is_linear_between_nodes() {
        let g = TimeGrid::new(1.0, 0.5).unwrap();
        let s = Schedule::from_fn(g, |t| DVector::from_element(1, 2.0 * t)).unwrap();
        assert_eq!(s.at(0.5)[0], 1.0);
        assert!((s.at(0.75)[0] - 1.5).abs() < 1e-15);
        assert_eq!(s.at(1.0)[0], 2.0);
    }
}
