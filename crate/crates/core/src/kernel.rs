//! Time grids and reproducible Brownian path bundles.
//!
//! Every Gaussian increment is a pure function of
//! `(seed, replication_id, stream, step, coordinate)`: the root key is derived
//! from `(seed, replication_id)`, each path owns one ChaCha20 stream, and the
//! position inside the stream is the step/coordinate counter. A bundle can be
//! regenerated with any number of threads, and growing the particle count
//! leaves the existing paths untouched.

use std::io::Write;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{validation, Result};

/// Uniform partition `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return validation(format!("horizon T must be positive and finite, got {horizon}"));
        }
        if steps == 0 {
            return validation("step count N must be at least 1");
        }
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        nodes[steps] = horizon;
        Ok(Self {
            horizon,
            steps,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Index of the grid node closest to `t` (clamped to `[0, T]`).
    pub fn nearest_node(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps)
        }
    }
}

pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

const KEY_TAG: &[u8; 8] = b"chaoslab";

fn root_key(seed: u64, domain: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(KEY_TAG);
    key
}

/// Maps a 64-bit counter output to the open interval (0, 1).
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal quantile of a uniform in (0, 1).
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Counter-addressed random stream keyed by `(seed, domain, stream)`.
///
/// Used for every draw in the crate that is not a Brownian increment
/// (initial conditions, reference-cloud indices), so all of them replay
/// independently of evaluation order.
pub struct CounterRng {
    inner: ChaCha20Rng,
}

impl CounterRng {
    pub fn new(seed: u64, domain: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::from_seed(root_key(seed, domain));
        inner.set_stream(stream);
        inner.set_word_pos(0);
        Self { inner }
    }

    /// Jump to the `index`-th 64-bit draw of the stream.
    pub fn seek(&mut self, index: u64) {
        self.inner.set_word_pos(2 * index as u128);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        open_unit(self.inner.next_u64())
    }

    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    /// Uniform index in `0..len`.
    pub fn index(&mut self, len: usize) -> usize {
        ((self.uniform() * len as f64) as usize).min(len - 1)
    }
}

/// Stream id of particle `particle` in scenario `scenario` of a batch.
pub fn stream_id(scenario: usize, particle: usize) -> u64 {
    ((scenario as u64) << 32) | particle as u64
}

/// `scenarios x particles` independent `d`-dimensional Brownian paths.
///
/// Paths are stored scenario-major: path `s * particles + i` is particle `i`
/// of scenario `s`. Increments are laid out path-major as
/// `[(path * N + step) * d + coordinate]`.
#[derive(Debug, Clone)]
pub struct BrownianBundle {
    grid: TimeGrid,
    scenarios: usize,
    particles: usize,
    dim: usize,
    seed: u64,
    replication_id: u64,
    streams: Vec<u64>,
    increments: Vec<f64>,
}

impl BrownianBundle {
    /// Bundle whose paths use explicitly listed stream ids, grouped into
    /// scenarios of `particles` consecutive paths.
    pub fn from_streams(
        seed: u64,
        replication_id: u64,
        streams: Vec<u64>,
        particles: usize,
        dim: usize,
        grid: &TimeGrid,
    ) -> Result<Self> {
        if streams.is_empty() {
            return validation("a bundle needs at least one path");
        }
        if dim == 0 {
            return validation("Brownian dimension d must be at least 1");
        }
        if particles == 0 || streams.len() % particles != 0 {
            return validation(format!(
                "{} paths cannot be split into scenarios of {particles} particles",
                streams.len()
            ));
        }
        let steps = grid.steps();
        let sd = grid.dt().sqrt();
        let per_path = steps * dim;
        let key = root_key(seed, replication_id);
        let mut increments = vec![0.0; streams.len() * per_path];
        increments
            .par_chunks_mut(per_path)
            .zip(streams.par_iter())
            .for_each(|(chunk, &stream)| {
                let mut rng = ChaCha20Rng::from_seed(key);
                rng.set_stream(stream);
                rng.set_word_pos(0);
                for v in chunk.iter_mut() {
                    *v = sd * normal_quantile(open_unit(rng.next_u64()));
                }
            });
        Ok(Self {
            grid: grid.clone(),
            scenarios: streams.len() / particles,
            particles,
            dim,
            seed,
            replication_id,
            streams,
            increments,
        })
    }

    /// `scenarios` independent batches of `particles` paths each.
    pub fn batched(
        seed: u64,
        replication_id: u64,
        particles: usize,
        scenarios: usize,
        dim: usize,
        grid: &TimeGrid,
    ) -> Result<Self> {
        if particles == 0 || scenarios == 0 {
            return validation("particle and scenario counts must be at least 1");
        }
        let streams = (0..scenarios)
            .flat_map(|s| (0..particles).map(move |i| stream_id(s, i)))
            .collect();
        Self::from_streams(seed, replication_id, streams, particles, dim, grid)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Total number of paths.
    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replication_id(&self) -> u64 {
        self.replication_id
    }

    pub fn streams(&self) -> &[u64] {
        &self.streams
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increment `W(t_{k+1}) - W(t_k)` of one path.
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.grid.steps() + step) * self.dim;
        &self.increments[off..off + self.dim]
    }

    /// Path values at every node, `(N + 1) x d`, starting at the origin.
    pub fn path(&self, path: usize) -> Vec<f64> {
        let steps = self.grid.steps();
        let d = self.dim;
        let mut out = vec![0.0; (steps + 1) * d];
        for k in 0..steps {
            for c in 0..d {
                out[(k + 1) * d + c] = out[k * d + c] + self.increments[(path * steps + k) * d + c];
            }
        }
        out
    }

    /// Node-major path values: `[(k * len + path) * d + c]`.
    pub fn values_node_major(&self) -> Vec<f64> {
        let steps = self.grid.steps();
        let (p, d) = (self.len(), self.dim);
        let mut out = vec![0.0; (steps + 1) * p * d];
        for k in 0..steps {
            let (head, tail) = out.split_at_mut((k + 1) * p * d);
            let prev = &head[k * p * d..];
            let next = &mut tail[..p * d];
            for path in 0..p {
                for c in 0..d {
                    next[path * d + c] =
                        prev[path * d + c] + self.increments[(path * steps + k) * d + c];
                }
            }
        }
        out
    }

    /// Node-major increments: `[(k * len + path) * d + c]`.
    pub fn increments_node_major(&self) -> Vec<f64> {
        let steps = self.grid.steps();
        let (p, d) = (self.len(), self.dim);
        let mut out = vec![0.0; steps * p * d];
        for path in 0..p {
            for k in 0..steps {
                let src = (path * steps + k) * d;
                let dst = (k * p + path) * d;
                out[dst..dst + d].copy_from_slice(&self.increments[src..src + d]);
            }
        }
        out
    }

    /// Flat little-endian dump of the increments in path-major order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.increments
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_le_bytes())?;
        Ok(())
    }

    /// CSV dump, one row per (path, step): `path,stream,step,dw_0,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "path,stream,step")?;
        for c in 0..self.dim {
            write!(out, ",dw_{c}")?;
        }
        writeln!(out)?;
        for p in 0..self.len() {
            for k in 0..self.grid.steps() {
                write!(out, "{p},{},{k}", self.streams[p])?;
                for v in self.increment(p, k) {
                    write!(out, ",{v:e}")?;
                }
                writeln!(out)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `n` independent paths forming a single scenario.
pub fn sample_brownian(
    seed: u64,
    replication_id: u64,
    n: usize,
    dim: usize,
    grid: &TimeGrid,
) -> Result<BrownianBundle> {
    BrownianBundle::batched(seed, replication_id, n, 1, dim, grid)
}

/// Single increment regenerated in isolation from its counter coordinates.
pub fn increment_at(
    seed: u64,
    replication_id: u64,
    stream: u64,
    step: usize,
    coordinate: usize,
    dim: usize,
    grid: &TimeGrid,
) -> f64 {
    let mut rng = ChaCha20Rng::from_seed(root_key(seed, replication_id));
    rng.set_stream(stream);
    rng.set_word_pos(2 * (step * dim + coordinate) as u128);
    grid.dt().sqrt() * normal_quantile(open_unit(rng.next_u64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_examples() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(2.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 2.0]);
        assert!(make_grid(0.0, 4).is_err());
        assert!(make_grid(-1.0, 4).is_err());
        assert!(make_grid(1.0, 0).is_err());
        assert!(make_grid(f64::NAN, 3).is_err());
    }

    #[test]
    fn grid_spacing_is_uniform() {
        let g = make_grid(0.7, 64).unwrap();
        assert_eq!(g.time(64), 0.7);
        for w in g.nodes().windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - g.dt()).abs() < 1e-15);
        }
        assert_eq!(g.nearest_node(0.35), 32);
        assert_eq!(g.nearest_node(5.0), 64);
    }

    #[test]
    fn bundle_is_deterministic() {
        let g = make_grid(1.0, 16).unwrap();
        let a = sample_brownian(7, 3, 5, 2, &g).unwrap();
        let b = sample_brownian(7, 3, 5, 2, &g).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        let c = sample_brownian(7, 4, 5, 2, &g).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn extending_particle_count_keeps_prefix() {
        let g = make_grid(1.0, 8).unwrap();
        let small = sample_brownian(11, 0, 2, 1, &g).unwrap();
        let large = sample_brownian(11, 0, 3, 1, &g).unwrap();
        assert_eq!(small.increments(), &large.increments()[..small.increments().len()]);
    }

    #[test]
    fn isolated_increment_matches_bundle() {
        let g = make_grid(1.0, 10).unwrap();
        let b = BrownianBundle::batched(5, 2, 3, 4, 3, &g).unwrap();
        let path = 2 * 3 + 1;
        let v = increment_at(5, 2, stream_id(2, 1), 7, 2, 3, &g);
        assert_eq!(v, b.increment(path, 7)[2]);
    }

    #[test]
    fn generation_independent_of_thread_count() {
        let g = make_grid(1.0, 32).unwrap();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = serial.install(|| sample_brownian(1, 1, 64, 2, &g).unwrap());
        let b = sample_brownian(1, 1, 64, 2, &g).unwrap();
        assert_eq!(a.increments(), b.increments());
    }

    #[test]
    fn paths_start_at_origin_and_accumulate() {
        let g = make_grid(1.0, 5).unwrap();
        let b = sample_brownian(3, 0, 2, 2, &g).unwrap();
        let p = b.path(1);
        assert_eq!(&p[..2], &[0.0, 0.0]);
        let mut acc = [0.0; 2];
        for k in 0..5 {
            for c in 0..2 {
                acc[c] += b.increment(1, k)[c];
            }
        }
        assert_eq!(&p[10..12], &acc);
        let nm = b.values_node_major();
        assert_eq!(nm[(5 * 2 + 1) * 2], p[10]);
    }

    #[test]
    fn increment_variance_within_three_standard_errors() {
        // Sample variance of 1e5 N(0, dt) draws has standard error
        // dt * sqrt(2 / (n - 1)) (chi-square sampling distribution).
        let g = make_grid(1.0, 100).unwrap();
        let b = sample_brownian(2024, 0, 1000, 1, &g).unwrap();
        let xs = b.increments();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = 0.01 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - 0.01).abs() < 3.0 * se, "var = {var}, se = {se}");
    }

    #[test]
    fn distinct_particles_are_uncorrelated() {
        let g = make_grid(1.0, 50).unwrap();
        let b = sample_brownian(99, 0, 400, 1, &g).unwrap();
        // Correlation of increment k of particles 2j and 2j+1, pooled.
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for j in 0..200 {
            for k in 0..50 {
                let x = b.increment(2 * j, k)[0];
                let y = b.increment(2 * j + 1, k)[0];
                sxy += x * y;
                sxx += x * x;
                syy += y * y;
            }
        }
        let corr = sxy / (sxx * syy).sqrt();
        // 1e4 pairs: standard error of the correlation is 0.01.
        assert!(corr.abs() < 0.04, "corr = {corr}");
    }

    #[test]
    fn binary_dump_is_little_endian_particle_major() {
        let g = make_grid(1.0, 3).unwrap();
        let b = sample_brownian(1, 0, 2, 2, &g).unwrap();
        let bytes = b.to_le_bytes();
        assert_eq!(bytes.len(), 2 * 3 * 2 * 8);
        let third = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        assert_eq!(third, b.increment(0, 1)[0]);
    }

    #[test]
    fn counter_rng_replays() {
        let mut a = CounterRng::new(1, 2, 3);
        let xs: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        let mut b = CounterRng::new(1, 2, 3);
        b.seek(3);
        assert_eq!(b.next_u64(), xs[3]);
    }
}
