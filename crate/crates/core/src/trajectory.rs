//! Classification of full-horizon trajectories with one 10-unit SOM string
//! per initial segment.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::Trajectory;
use crate::som::{assign, som_init, som_train, Schedule, SomError, SomMeta, SomModel, Topology};
use crate::stats::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("segment {label} outside 1..={k}", label = .label + 1)]
    LabelOutOfRange { label: usize, k: usize },
    #[error("reorder map is not a permutation of 1..={0}")]
    InvalidReorder(usize),
    #[error("trajectories have different horizons")]
    HorizonMismatch,
    #[error("no trained string")]
    UntrainedModel,
    #[error(transparent)]
    Som(#[from] SomError),
}

/// Maps raw segment indices to positions on a best-to-worst scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderMap {
    /// `positions[raw]` is the 0-based scale position of raw segment `raw`.
    positions: Vec<usize>,
}

impl ReorderMap {
    pub fn identity(k: usize) -> Self {
        Self {
            positions: (0..k).collect(),
        }
    }

    /// `positions[raw]` gives the scale position of each raw segment.
    pub fn new(positions: Vec<usize>) -> Result<Self, TrajectoryError> {
        let k = positions.len();
        let mut seen = vec![false; k];
        for &p in &positions {
            if p >= k || std::mem::replace(&mut seen[p], true) {
                return Err(TrajectoryError::InvalidReorder(k));
            }
        }
        Ok(Self { positions })
    }

    pub fn k(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, raw: usize) -> Option<usize> {
        self.positions.get(raw).copied()
    }

    pub fn raw(&self, position: usize) -> Option<usize> {
        self.positions.iter().position(|&p| p == position)
    }
}

/// Scale positions (1-based) as reals, one per year.
pub fn encode(trajectory: &Trajectory, reorder: &ReorderMap) -> Result<Vec<f64>, TrajectoryError> {
    trajectory
        .states
        .iter()
        .map(|&s| {
            reorder
                .position(s)
                .map(|p| (p + 1) as f64)
                .ok_or(TrajectoryError::LabelOutOfRange { label: s, k: reorder.k() })
        })
        .collect()
}

/// Inverse of [`encode`] by rounding to the nearest scale position.
pub fn decode(encoded: &[f64], reorder: &ReorderMap) -> Result<Vec<usize>, TrajectoryError> {
    encoded
        .iter()
        .map(|&x| {
            let pos = x.round();
            if pos < 1.0 || pos > reorder.k() as f64 {
                return Err(TrajectoryError::LabelOutOfRange {
                    label: pos.max(0.0) as usize,
                    k: reorder.k(),
                });
            }
            Ok(reorder.raw(pos as usize - 1).expect("bijective"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub units: usize,
    /// Online steps per trajectory in a group.
    pub steps_per_trajectory: u64,
    /// Lower bound on online steps for small groups.
    pub min_iterations: u64,
    /// Groups with fewer members are skipped.
    pub min_group: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            units: 10,
            steps_per_trajectory: 5,
            min_iterations: 5_000,
            min_group: 10,
        }
    }
}

/// One trained string for the trajectories starting in `initial_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct StringClasses {
    pub initial_state: usize,
    pub members: usize,
    pub model: SomModel,
    /// Members per unit.
    pub frequencies: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryClassModel {
    pub k: usize,
    pub horizon: usize,
    pub start_year: i32,
    pub total: usize,
    /// Group size per initial state (skipped groups included).
    pub group_sizes: Vec<usize>,
    /// Trained string per initial state, `None` when the group was too small.
    pub strings: Vec<Option<StringClasses>>,
    pub reorder: ReorderMap,
}

/// Groups trajectories by their first-year state and trains one string SOM
/// per group on the encoded paths.
///
/// Each group is sorted before training, so the result only depends on the
/// multiset of trajectories and the seed.
pub fn classify_trajectories(
    trajectories: &[Trajectory],
    reorder: &ReorderMap,
    seed: u64,
    options: &ClassifyOptions,
) -> Result<TrajectoryClassModel, TrajectoryError> {
    let k = reorder.k();
    let horizon = trajectories.first().map_or(0, |t| t.states.len());
    if horizon == 0 || trajectories.iter().any(|t| t.states.len() != horizon) {
        return Err(TrajectoryError::HorizonMismatch);
    }
    let start_year = trajectories[0].start_year;
    let mut groups: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for t in trajectories {
        let encoded = encode(t, reorder)?;
        groups[t.states[0]].push(encoded);
    }
    for g in &mut groups {
        g.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    let group_sizes: Vec<usize> = groups.iter().map(Vec::len).collect();

    let strings = groups
        .into_par_iter()
        .enumerate()
        .map(|(state, rows)| -> Result<Option<StringClasses>, TrajectoryError> {
            if rows.len() < options.min_group.max(1) {
                if !rows.is_empty() {
                    log::warn!(
                        "initial segment {} has {} trajectories, below {}; skipped",
                        state + 1,
                        rows.len(),
                        options.min_group
                    );
                }
                return Ok(None);
            }
            let members = rows.len();
            let data = Array2::from_shape_vec((members, horizon), rows.into_iter().flatten().collect())
                .expect("rectangular");
            let topology = Topology::string(options.units);
            let iterations = (options.steps_per_trajectory * members as u64).max(options.min_iterations);
            let model = som_init(topology, data.view(), derive_seed(seed, state as u64))?
                .with_schedule(Schedule::default_for(&topology, iterations));
            let model = som_train(&model, data.view())?;
            let mut frequencies = vec![0; options.units];
            for u in assign(&model, data.view())? {
                frequencies[u] += 1;
            }
            Ok(Some(StringClasses {
                initial_state: state,
                members,
                model,
                frequencies,
            }))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TrajectoryClassModel {
        k,
        horizon,
        start_year,
        total: trajectories.len(),
        group_sizes,
        strings,
        reorder: reorder.clone(),
    })
}

/// Serializable summary of one initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// 1-based segment label.
    pub initial_segment: usize,
    pub share: f64,
    pub members: usize,
    pub trained: bool,
    /// Code vectors: mean scale position per year, one row per unit.
    pub code_vectors: Vec<Vec<f64>>,
    pub frequencies: Vec<usize>,
    pub som: Option<SomMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub start_year: i32,
    pub horizon: usize,
    pub total: usize,
    pub groups: Vec<GroupReport>,
}

/// Shares of initial states with per-string code vectors and frequencies.
pub fn class_report(model: &TrajectoryClassModel) -> Result<ClassReport, TrajectoryError> {
    if model.total == 0 || model.strings.iter().all(Option::is_none) {
        return Err(TrajectoryError::UntrainedModel);
    }
    let groups = (0..model.k)
        .map(|s| {
            let share = model.group_sizes[s] as f64 / model.total as f64;
            match &model.strings[s] {
                Some(string) => GroupReport {
                    initial_segment: s + 1,
                    share,
                    members: string.members,
                    trained: true,
                    code_vectors: crate::matrix::to_rows(&string.model.codes),
                    frequencies: string.frequencies.clone(),
                    som: Some(string.model.meta()),
                },
                None => GroupReport {
                    initial_segment: s + 1,
                    share,
                    members: model.group_sizes[s],
                    trained: false,
                    code_vectors: Vec::new(),
                    frequencies: Vec::new(),
                    som: None,
                },
            }
        })
        .collect();
    Ok(ClassReport {
        start_year: model.start_year,
        horizon: model.horizon,
        total: model.total,
        groups,
    })
}
