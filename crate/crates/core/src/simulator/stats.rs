use std::io::Write;

use super::engine::{NodeView, Observer};
use crate::error::Result;
use crate::market::PriceRule;

/// Quantities reported per node: state, controls, adjoint.
pub const COLUMNS: [&str; 8] = ["K", "Xtilde", "Kf", "Kg", "alpha", "beta", "Y1", "Y2"];

/// Per-node sums and sums of squares over the particles of one path.
#[derive(Debug, Clone)]
pub struct EnsembleStats<'a> {
    price: &'a PriceRule,
    /// `nodes × 8` sums, then the same for squares.
    sums: Vec<f64>,
    squares: Vec<f64>,
    prices: Vec<f64>,
    count: usize,
    buf: Vec<f64>,
}

impl<'a> EnsembleStats<'a> {
    pub fn new(price: &'a PriceRule) -> Self {
        EnsembleStats {
            price,
            sums: Vec::new(),
            squares: Vec::new(),
            prices: Vec::new(),
            count: 0,
            buf: Vec::new(),
        }
    }
}

impl Observer for EnsembleStats<'_> {
    fn observe(&mut self, view: &NodeView<'_>) {
        let lp = view.closed_loop();
        let nodes = lp.grid().nodes();
        if self.sums.is_empty() {
            self.sums = vec![0.0; nodes * COLUMNS.len()];
            self.squares = vec![0.0; nodes * COLUMNS.len()];
            self.prices = vec![0.0; nodes];
            self.count = view.n;
        }
        let d = lp.dims().d;
        let d2 = lp.dims().d2;
        self.buf.resize(d2 + d, 0.0);
        let row = view.k * COLUMNS.len();
        self.prices[view.k] = self.price.at(view.t, view.mean_adjoint);
        for i in 0..view.n {
            let (v, y) = self.buf.split_at_mut(d2);
            view.control(i, v);
            view.adjoint(i, y);
            let x = view.state(i);
            let vals = [x[0], x[1], v[0], v[1], v[2], v[3], y[0], y[1]];
            for (c, q) in vals.iter().enumerate() {
                self.sums[row + c] += q;
                self.squares[row + c] += q * q;
            }
        }
    }
}

/// Mean and sample standard deviation per node over all firms and paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    /// `nodes × 9`, the eight columns then `ω̄`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn moments(s: f64, ss: f64, n: f64) -> (f64, f64) {
    let m = s / n;
    let var = if n > 1.0 { ((ss - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
    (m, var.sqrt())
}

impl EnsembleSummary {
    pub const WIDTH: usize = COLUMNS.len() + 1;

    pub fn merge(paths: &[EnsembleStats<'_>], times: Vec<f64>) -> Self {
        let nodes = times.len();
        let c = COLUMNS.len();
        let mut s = vec![0.0; nodes * c];
        let mut ss = vec![0.0; nodes * c];
        let mut ps = vec![0.0; nodes];
        let mut pss = vec![0.0; nodes];
        let mut n = 0.0;
        for p in paths {
            for j in 0..nodes * c {
                s[j] += p.sums[j];
                ss[j] += p.squares[j];
            }
            for k in 0..nodes {
                ps[k] += p.prices[k];
                pss[k] += p.prices[k] * p.prices[k];
            }
            n += p.count as f64;
        }
        let m = paths.len() as f64;
        let mut mean = Vec::with_capacity(nodes * Self::WIDTH);
        let mut std = Vec::with_capacity(nodes * Self::WIDTH);
        for k in 0..nodes {
            for j in 0..c {
                let (a, b) = moments(s[k * c + j], ss[k * c + j], n);
                mean.push(a);
                std.push(b);
            }
            let (a, b) = moments(ps[k], pss[k], m);
            mean.push(a);
            std.push(b);
        }
        EnsembleSummary { times, mean, std }
    }

    pub fn mean_at(&self, k: usize, col: usize) -> f64 {
        self.mean[k * Self::WIDTH + col]
    }

    pub fn std_at(&self, k: usize, col: usize) -> f64 {
        self.std[k * Self::WIDTH + col]
    }

    /// Columns `t` then `<q>_mean, <q>_std` for each quantity and `omega`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for q in COLUMNS.iter().chain(["omega"].iter()) {
            header.push(format!("{q}_mean"));
            header.push(format!("{q}_std"));
        }
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut rec = vec![format!("{t:e}")];
            for j in 0..Self::WIDTH {
                rec.push(format!("{:e}", self.mean_at(k, j)));
                rec.push(format!("{:e}", self.std_at(k, j)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
