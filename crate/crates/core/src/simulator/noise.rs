use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Channels per source are packed into three bits of the stream id.
pub const MAX_CHANNELS: usize = 8;
const MAX_PARTICLES: usize = (1 << 29) - 1;

/// Deterministic Brownian increments addressed by `(path, source, channel)`.
///
/// Source 0 is the common noise of a path; particle `i` uses source `i + 1`, so a
/// particle sees the same increments whatever the ensemble size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, path: usize, source: usize, channel: usize) -> ChaCha8Rng {
        let id = ((path as u64) << 32) | ((source as u64) << 3) | channel as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    pub fn common(&self, path: usize, channel: usize) -> Increments {
        Increments(self.stream(path, 0, channel))
    }

    pub fn particle(&self, path: usize, particle: usize, channel: usize) -> Increments {
        Increments(self.stream(path, particle + 1, channel))
    }

    pub(crate) fn check_capacity(paths: usize, particles: usize, channels: usize) -> Result<()> {
        if channels > MAX_CHANNELS {
            return Err(Error::Config(format!("at most {MAX_CHANNELS} noise channels per source")));
        }
        if particles > MAX_PARTICLES || paths > u32::MAX as usize {
            return Err(Error::Config("ensemble too large for the stream layout".into()));
        }
        Ok(())
    }
}

/// Standard normal draws from one stream.
#[derive(Debug, Clone)]
pub struct Increments(ChaCha8Rng);

impl Increments {
    pub fn next_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}

/// Common-noise increments of one path, `steps × d0`, already scaled by `√Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonIncrements {
    pub channels: usize,
    pub values: Vec<f64>,
}

impl CommonIncrements {
    pub fn draw(source: &NoiseSource, path: usize, channels: usize, steps: usize, dt: f64) -> Self {
        let sq = dt.sqrt();
        let mut streams: Vec<_> = (0..channels).map(|c| source.common(path, c)).collect();
        let mut values = Vec::with_capacity(steps * channels);
        for _ in 0..steps {
            for s in streams.iter_mut() {
                values.push(sq * s.next_normal());
            }
        }
        CommonIncrements { channels, values }
    }

    pub fn zeros(channels: usize, steps: usize) -> Self {
        CommonIncrements {
            channels,
            values: vec![0.0; channels * steps],
        }
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }
}

/// Idiosyncratic increments of a set of particles, `particles × steps × d1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub particles: usize,
    pub steps: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl NoiseBundle {
    pub fn draw(source: &NoiseSource, path: usize, particles: usize, channels: usize, steps: usize, dt: f64) -> Self {
        let sq = dt.sqrt();
        let mut values = Vec::with_capacity(particles * steps * channels);
        for i in 0..particles {
            let mut streams: Vec<_> = (0..channels).map(|c| source.particle(path, i, c)).collect();
            for _ in 0..steps {
                for s in streams.iter_mut() {
                    values.push(sq * s.next_normal());
                }
            }
        }
        NoiseBundle {
            particles,
            steps,
            channels,
            values,
        }
    }

    pub fn zeros(particles: usize, channels: usize, steps: usize) -> Self {
        NoiseBundle {
            particles,
            steps,
            channels,
            values: vec![0.0; particles * steps * channels],
        }
    }

    pub fn step(&self, particle: usize, k: usize) -> &[f64] {
        let start = (particle * self.steps + k) * self.channels;
        &self.values[start..start + self.channels]
    }
}
