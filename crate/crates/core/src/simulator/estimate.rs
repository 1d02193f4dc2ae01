use serde::Serialize;

/// Monte Carlo mean with a 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl Estimate {
    pub const Z95: f64 = 1.96;

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                half_width: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean,
            std_error: se,
            half_width: Self::Z95 * se,
            samples: n,
        }
    }

    /// Samples grouped by common path. With two or more groups the error is taken
    /// across group means, since firms on one path share the common shocks.
    pub fn from_clusters(groups: &[Vec<f64>]) -> Self {
        match groups {
            [] => Self::from_samples(&[]),
            [only] => Self::from_samples(only),
            _ => {
                let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
                let mut e = Self::from_samples(&means);
                e.samples = groups.iter().map(Vec::len).sum();
                e
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Estimate {
            mean: self.mean * s,
            std_error: self.std_error * s.abs(),
            half_width: self.half_width * s.abs(),
            samples: self.samples,
        }
    }
}
