//! Seeded Brownian ensembles on uniform time grids, with a little-endian
//! binary container for reuse across runs.
//!
//! Every path draws from its own ChaCha stream selected by the path index,
//! so generation is a pure function of `(seed, M, N, d, T)` regardless of
//! how the work is scheduled.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{param, zeroed, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(param(format!("horizon T must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(param("time grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
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

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    paths: usize,
    dim: usize,
    grid: TimeGrid,
    seed: u64,
    antithetic: bool,
    /// `paths x steps x dim`, path-major.
    increments: Vec<f64>,
    /// `paths x (steps + 1) x dim`, `B_0 = 0`.
    values: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"BSDE";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4 + 4 + 8 + 8;

fn checked_len(m: usize, n: usize, d: usize) -> Result<usize> {
    m.checked_mul(n)
        .and_then(|x| x.checked_mul(d))
        .ok_or(LabError::Allocation(usize::MAX))
}

impl PathEnsemble {
    pub fn generate(paths: usize, steps: usize, dim: usize, horizon: f64, seed: u64) -> Result<Self> {
        Self::generate_with(paths, steps, dim, horizon, seed, false)
    }

    /// With `antithetic`, path `2j+1` is the negation of path `2j`.
    pub fn generate_with(
        paths: usize,
        steps: usize,
        dim: usize,
        horizon: f64,
        seed: u64,
        antithetic: bool,
    ) -> Result<Self> {
        if paths == 0 || dim == 0 {
            return Err(param("ensemble needs M >= 1 and d >= 1"));
        }
        let grid = TimeGrid::new(horizon, steps)?;
        let stride = steps * dim;
        let mut increments = zeroed(checked_len(paths, steps, dim)?)?;
        let sd = grid.dt().sqrt();
        increments.par_chunks_mut(stride).enumerate().for_each(|(m, row)| {
            let source = if antithetic { m - m % 2 } else { m };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(source as u64);
            let sign = if antithetic && m % 2 == 1 { -1.0 } else { 1.0 };
            for x in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = sign * sd * z;
            }
        });
        Self::from_increments(paths, steps, dim, horizon, seed, antithetic, increments)
    }

    fn from_increments(
        paths: usize,
        steps: usize,
        dim: usize,
        horizon: f64,
        seed: u64,
        antithetic: bool,
        increments: Vec<f64>,
    ) -> Result<Self> {
        let grid = TimeGrid::new(horizon, steps)?;
        let mut values = zeroed(checked_len(paths, steps + 1, dim)?)?;
        values
            .par_chunks_mut((steps + 1) * dim)
            .zip(increments.par_chunks(steps * dim))
            .for_each(|(vals, inc)| {
                for i in 0..steps {
                    for c in 0..dim {
                        vals[(i + 1) * dim + c] = vals[i * dim + c] + inc[i * dim + c];
                    }
                }
            });
        Ok(Self { paths, dim, grid, seed, antithetic, increments, values })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `B_{t_i}` on path `m`.
    pub fn value(&self, m: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let off = (m * (self.grid.steps + 1) + i) * d;
        &self.values[off..off + d]
    }

    /// `B_{t_{i+1}} - B_{t_i}` on path `m`.
    pub fn increment(&self, m: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let off = (m * self.grid.steps + i) * d;
        &self.increments[off..off + d]
    }

    /// Gathers `B_{t_i}` for every path into a contiguous `M x d` buffer.
    pub fn state_at(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths * self.dim);
        for m in 0..self.paths {
            out.extend_from_slice(self.value(m, i));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.increments.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.paths as u64).to_le_bytes());
        buf.extend_from_slice(&(self.grid.steps as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&self.grid.horizon.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for x in &self.increments {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    /// The antithetic flag is not part of the format; loaded ensembles report `false`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(LabError::Format(format!("file too short for header ({} bytes)", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(LabError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4]))));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(LabError::Format(format!("unsupported version {version}")));
        }
        let paths = usize::try_from(u64_at(8)).map_err(|_| LabError::Format("M overflows".into()))?;
        let steps = usize::try_from(u64_at(16)).map_err(|_| LabError::Format("N overflows".into()))?;
        let dim = u32_at(24) as usize;
        let horizon = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let seed = u64_at(40);
        if paths == 0 || dim == 0 {
            return Err(LabError::Format("header declares an empty ensemble".into()));
        }
        let count = checked_len(paths, steps, dim)?;
        let expected = count.checked_mul(8).ok_or(LabError::Allocation(count))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(LabError::Length { expected, found: payload.len() });
        }
        let mut increments = Vec::new();
        increments.try_reserve_exact(count).map_err(|_| LabError::Allocation(count))?;
        increments.extend(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        Self::from_increments(paths, steps, dim, horizon, seed, false, increments)
            .map_err(|e| LabError::Format(format!("invalid header: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn generate_ensemble(paths: usize, steps: usize, dim: usize, horizon: f64, seed: u64) -> Result<PathEnsemble> {
    PathEnsemble::generate(paths, steps, dim, horizon, seed)
}

pub fn save_ensemble(ens: &PathEnsemble, path: impl AsRef<Path>) -> Result<()> {
    ens.save(path)
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<PathEnsemble> {
    PathEnsemble::load(path)
}
