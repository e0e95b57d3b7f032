//! Kohonen self-organizing maps on rectangular grids and 1-D strings.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::squared_distance;

#[derive(Debug, Error, PartialEq)]
pub enum SomError {
    #[error("no data rows")]
    EmptyData,
    #[error("expected dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Unit lattice. Grid units are numbered row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Topology {
    Grid { rows: usize, cols: usize },
    String { length: usize },
}

impl Topology {
    pub fn grid(rows: usize, cols: usize) -> Self {
        Topology::Grid { rows, cols }
    }

    pub fn string(length: usize) -> Self {
        Topology::String { length }
    }

    pub fn unit_count(&self) -> usize {
        match *self {
            Topology::Grid { rows, cols } => rows * cols,
            Topology::String { length } => length,
        }
    }

    /// Chebyshev distance on the grid, absolute difference on a string.
    pub fn distance(&self, u: usize, v: usize) -> usize {
        match *self {
            Topology::Grid { cols, .. } => {
                let (ur, uc) = (u / cols, u % cols);
                let (vr, vc) = (v / cols, v % cols);
                ur.abs_diff(vr).max(uc.abs_diff(vc))
            }
            Topology::String { .. } => u.abs_diff(v),
        }
    }

    /// Largest lattice distance between two units.
    pub fn diameter(&self) -> usize {
        match *self {
            Topology::Grid { rows, cols } => rows.max(cols).saturating_sub(1),
            Topology::String { length } => length.saturating_sub(1),
        }
    }

    /// Edge-adjacent units (4-neighborhood on a grid).
    pub fn edge_neighbors(&self, u: usize) -> Vec<usize> {
        match *self {
            Topology::Grid { rows, cols } => {
                let (r, c) = (u / cols, u % cols);
                let mut out = Vec::with_capacity(4);
                if r > 0 {
                    out.push(u - cols);
                }
                if c > 0 {
                    out.push(u - 1);
                }
                if c + 1 < cols {
                    out.push(u + 1);
                }
                if r + 1 < rows {
                    out.push(u + cols);
                }
                out
            }
            Topology::String { length } => {
                let mut out = Vec::with_capacity(2);
                if u > 0 {
                    out.push(u - 1);
                }
                if u + 1 < length {
                    out.push(u + 1);
                }
                out
            }
        }
    }

    fn validate(&self) -> Result<(), SomError> {
        if self.unit_count() == 0 {
            return Err(SomError::InvalidTopology("no units".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// Every unit within the radius receives the full rate.
    #[default]
    Bubble,
    /// Rate scaled by `exp(-d² / 2r²)` for units within the radius.
    Gaussian,
}

/// Linear learning-rate and radius decay over `iterations` online steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: u64,
    pub rate_start: f64,
    pub rate_end: f64,
    pub radius_start: f64,
    pub radius_end: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

impl Schedule {
    /// Rate 0.5 → 0.01 and radius half the lattice diameter → 0.
    pub fn default_for(topology: &Topology, iterations: u64) -> Self {
        Self {
            iterations,
            rate_start: 0.5,
            rate_end: 0.01,
            radius_start: topology.diameter() as f64 / 2.0,
            radius_end: 0.0,
            kernel: Kernel::Bubble,
        }
    }

    /// `(rate, radius)` at step `t` in `1..=iterations`.
    pub fn at(&self, t: u64) -> (f64, f64) {
        let frac = if self.iterations > 1 {
            (t - 1) as f64 / (self.iterations - 1) as f64
        } else {
            0.0
        };
        (
            self.rate_start + (self.rate_end - self.rate_start) * frac,
            self.radius_start + (self.radius_end - self.radius_start) * frac,
        )
    }

    fn validate(&self) -> Result<(), SomError> {
        let finite = [self.rate_start, self.rate_end, self.radius_start, self.radius_end]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.rate_end > self.rate_start || self.radius_end > self.radius_start {
            return Err(SomError::InvalidSchedule("rates and radii must be finite and non-increasing".into()));
        }
        if self.rate_end < 0.0 || self.rate_start > 1.0 || self.radius_end < 0.0 {
            return Err(SomError::InvalidSchedule("rate must lie in [0, 1], radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// A map: lattice, code vectors and the schedule used (or to be used) for
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct SomModel {
    pub topology: Topology,
    /// `unit_count × dim`.
    pub codes: Array2<f64>,
    pub schedule: Schedule,
    pub seed: u64,
    /// Online steps already applied.
    pub trained_iterations: u64,
}

/// JSON-facing metadata; code vectors travel as a CSV matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomMeta {
    pub topology: Topology,
    pub dim: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub trained_iterations: u64,
}

impl SomModel {
    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn unit_count(&self) -> usize {
        self.codes.nrows()
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn meta(&self) -> SomMeta {
        SomMeta {
            topology: self.topology,
            dim: self.dim(),
            schedule: self.schedule,
            seed: self.seed,
            trained_iterations: self.trained_iterations,
        }
    }

    pub fn from_parts(meta: SomMeta, codes: Array2<f64>) -> Result<Self, SomError> {
        meta.topology.validate()?;
        if codes.nrows() != meta.topology.unit_count() {
            return Err(SomError::InvalidTopology(format!(
                "{} code vectors for {} units",
                codes.nrows(),
                meta.topology.unit_count()
            )));
        }
        if codes.ncols() != meta.dim {
            return Err(SomError::DimensionMismatch {
                expected: meta.dim,
                found: codes.ncols(),
            });
        }
        Ok(Self {
            topology: meta.topology,
            codes,
            schedule: meta.schedule,
            seed: meta.seed,
            trained_iterations: meta.trained_iterations,
        })
    }

    /// Nearest unit without dimension checks; ties go to the lowest index.
    fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (u, code) in self.codes.rows().into_iter().enumerate() {
            let d = squared_distance(code.as_slice().expect("standard layout"), x);
            if d < best_d {
                best_d = d;
                best = u;
            }
        }
        best
    }

    /// Best and second-best units with their squared distances.
    fn two_nearest(&self, x: &[f64]) -> ((usize, f64), Option<(usize, f64)>) {
        let mut first = (0, f64::INFINITY);
        let mut second: Option<(usize, f64)> = None;
        for (u, code) in self.codes.rows().into_iter().enumerate() {
            let d = squared_distance(code.as_slice().expect("standard layout"), x);
            if d < first.1 {
                second = Some(first).filter(|f| f.1.is_finite());
                first = (u, d);
            } else if second.is_none_or(|s| d < s.1) {
                second = Some((u, d));
            }
        }
        (first, second)
    }

    fn check_dim(&self, found: usize) -> Result<(), SomError> {
        if found != self.dim() {
            return Err(SomError::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

fn row_vec(data: &ArrayView2<f64>, r: usize) -> Vec<f64> {
    data.row(r).to_vec()
}

/// Initializes code vectors with a seeded random sample of data rows, without
/// replacement when there are at least as many rows as units. The default
/// schedule runs five steps per data row.
pub fn som_init(topology: Topology, data: ArrayView2<f64>, seed: u64) -> Result<SomModel, SomError> {
    topology.validate()?;
    let (n, d) = data.dim();
    if n == 0 || d == 0 {
        return Err(SomError::EmptyData);
    }
    let units = topology.unit_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = if n >= units {
        index::sample(&mut rng, n, units).into_vec()
    } else {
        (0..units).map(|_| rng.random_range(0..n)).collect()
    };
    let mut codes = Array2::zeros((units, d));
    for (u, &r) in rows.iter().enumerate() {
        codes.row_mut(u).assign(&data.row(r));
    }
    Ok(SomModel {
        topology,
        codes,
        schedule: Schedule::default_for(&topology, 5 * n as u64),
        seed,
        trained_iterations: 0,
    })
}

/// Best-matching unit of `x`: smallest squared Euclidean distance, lowest
/// index on ties.
pub fn bmu(model: &SomModel, x: ArrayView1<f64>) -> Result<usize, SomError> {
    model.check_dim(x.len())?;
    Ok(model.nearest(&x.to_vec()))
}

/// Online Kohonen training with the model's schedule. Rows are drawn with
/// replacement from a stream seeded by the model seed.
pub fn som_train(model: &SomModel, data: ArrayView2<f64>) -> Result<SomModel, SomError> {
    model.check_dim(data.ncols())?;
    model.schedule.validate()?;
    if data.nrows() == 0 {
        return Err(SomError::EmptyData);
    }
    let mut out = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(1);
    let schedule = model.schedule;
    let topology = model.topology;
    let n = data.nrows();
    let mut x = vec![0.0; data.ncols()];
    for t in 1..=schedule.iterations {
        let r = rng.random_range(0..n);
        for (dst, src) in x.iter_mut().zip(data.row(r)) {
            *dst = *src;
        }
        let winner = out.nearest(&x);
        let (rate, radius) = schedule.at(t);
        for (u, mut code) in out.codes.rows_mut().into_iter().enumerate() {
            let dist = topology.distance(u, winner) as f64;
            if dist > radius {
                continue;
            }
            let h = match schedule.kernel {
                Kernel::Bubble => rate,
                Kernel::Gaussian if radius > 0.0 => rate * (-dist * dist / (2.0 * radius * radius)).exp(),
                Kernel::Gaussian => rate,
            };
            for (c, xi) in code.iter_mut().zip(&x) {
                *c += h * (xi - *c);
            }
        }
    }
    out.trained_iterations += schedule.iterations;
    Ok(out)
}

/// BMU of every row.
pub fn assign(model: &SomModel, data: ArrayView2<f64>) -> Result<Vec<usize>, SomError> {
    if data.nrows() == 0 {
        return Ok(Vec::new());
    }
    model.check_dim(data.ncols())?;
    Ok((0..data.nrows())
        .into_par_iter()
        .map(|r| model.nearest(&row_vec(&data, r)))
        .collect())
}

/// Mean Euclidean distance from each row to its BMU code vector.
pub fn quantization_error(model: &SomModel, data: ArrayView2<f64>) -> Result<f64, SomError> {
    if data.nrows() == 0 {
        return Err(SomError::EmptyData);
    }
    model.check_dim(data.ncols())?;
    let total: f64 = (0..data.nrows())
        .into_par_iter()
        .map(|r| {
            let x = row_vec(&data, r);
            let u = model.nearest(&x);
            squared_distance(model.codes.row(u).as_slice().expect("standard layout"), &x).sqrt()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / data.nrows() as f64)
}

/// Fraction of rows whose two nearest units are not lattice neighbors.
/// A single-unit map reports 0.
pub fn topographic_error(model: &SomModel, data: ArrayView2<f64>) -> Result<f64, SomError> {
    if data.nrows() == 0 {
        return Err(SomError::EmptyData);
    }
    model.check_dim(data.ncols())?;
    if model.unit_count() < 2 {
        return Ok(0.0);
    }
    let errors = (0..data.nrows())
        .into_par_iter()
        .filter(|&r| {
            let ((a, _), second) = model.two_nearest(&row_vec(&data, r));
            let (b, _) = second.expect("at least two units");
            model.topology.distance(a, b) > 1
        })
        .count();
    Ok(errors as f64 / data.nrows() as f64)
}
