//! Synthetic rotating panels driven by a latent non-homogeneous segment chain.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Panel, PanelRecord, SuppValue, VariableKind, VariableSpec};
use crate::stats::sample_categorical;

/// Number of consecutive annual waves per individual.
pub const WINDOW_YEARS: i32 = 3;

/// Segment-conditional model of a supplementary variable.
#[derive(Debug, Clone, PartialEq)]
pub enum SuppEmission {
    Categorical(Vec<f64>),
    Normal { mean: f64, sd: f64 },
}

/// Ground-truth generating process: `k` latent segments, one transition
/// matrix per consecutive year pair starting at `first_year`, and
/// per-segment answer distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDynamics {
    pub k: usize,
    pub first_year: i32,
    /// Distribution of the latent state in the first year of each window.
    pub initial: Vec<f64>,
    pub transitions: Vec<Array2<f64>>,
    /// `[segment][active variable][modality - 1]`.
    pub active_emissions: Vec<Vec<Vec<f64>>>,
    /// `[segment][supplementary variable]`.
    pub supplementary: Vec<Vec<SuppEmission>>,
}

impl LatentDynamics {
    /// Plants segment profiles on `spec`: for every segment and categorical
    /// variable one modality (never the trailing "no answer" one) receives
    /// probability `separation`, the rest is spread evenly. Dominant
    /// modalities are drawn from `seed`.
    pub fn planted(
        spec: &VariableSpec,
        first_year: i32,
        initial: Vec<f64>,
        transitions: Vec<Array2<f64>>,
        separation: f64,
        seed: u64,
    ) -> Self {
        let k = initial.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = |m: u16, dominant: usize, mass: f64| -> Vec<f64> {
            let m = m as usize;
            if m == 1 {
                return vec![1.0];
            }
            let rest = (1.0 - mass) / (m - 1) as f64;
            (0..m).map(|i| if i == dominant { mass } else { rest }).collect()
        };
        let mut active_emissions = Vec::with_capacity(k);
        let mut supplementary = Vec::with_capacity(k);
        for s in 0..k {
            let act = spec
                .active_modalities()
                .into_iter()
                .map(|m| {
                    let dominant = rng.random_range(0..(m as usize - 1));
                    profile(m, dominant, separation)
                })
                .collect();
            let sup = spec
                .supplementary()
                .enumerate()
                .map(|(v, var)| match var.kind {
                    VariableKind::Categorical { modalities } => {
                        let dominant = rng.random_range(0..modalities as usize);
                        SuppEmission::Categorical(profile(modalities, dominant, 0.6))
                    }
                    VariableKind::Numeric => SuppEmission::Normal {
                        mean: 20.0 + 8.0 * s as f64 + v as f64,
                        sd: 4.0,
                    },
                })
                .collect();
            active_emissions.push(act);
            supplementary.push(sup);
        }
        Self {
            k,
            first_year,
            initial,
            transitions,
            active_emissions,
            supplementary,
        }
    }

    /// Matrix governing the step from `year` to `year + 1`.
    pub fn transition(&self, year: i32) -> Option<&Array2<f64>> {
        usize::try_from(year - self.first_year)
            .ok()
            .and_then(|i| self.transitions.get(i))
    }

    fn validate(&self, spec: &VariableSpec, first_year: i32, last_year: i32) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidSpec(msg));
        if self.k == 0 || self.initial.len() != self.k {
            return bad("latent initial distribution must have k entries".into());
        }
        if !is_distribution(&self.initial) {
            return bad("latent initial distribution is not a probability vector".into());
        }
        for year in first_year..last_year {
            let Some(p) = self.transition(year) else {
                return bad(format!("no latent transition matrix for {year}"));
            };
            let stochastic = p.rows().into_iter().all(|r| is_distribution(&r.to_vec()));
            if p.dim() != (self.k, self.k) || !stochastic {
                return bad(format!("latent transition matrix for {year} is not stochastic"));
            }
        }
        let modalities = spec.active_modalities();
        let supp: Vec<_> = spec.supplementary().collect();
        if self.active_emissions.len() != self.k || self.supplementary.len() != self.k {
            return bad("emission tables must cover every segment".into());
        }
        for (act, sup) in self.active_emissions.iter().zip(&self.supplementary) {
            if act.len() != modalities.len()
                || act.iter().zip(&modalities).any(|(p, &m)| p.len() != m as usize || !is_distribution(p))
            {
                return bad("active emission table does not match the variable layout".into());
            }
            if sup.len() != supp.len() {
                return bad("supplementary emission table does not match the variable layout".into());
            }
            for (e, var) in sup.iter().zip(&supp) {
                let ok = match (e, var.kind) {
                    (SuppEmission::Categorical(p), VariableKind::Categorical { modalities }) => {
                        p.len() == modalities as usize && is_distribution(p)
                    }
                    (SuppEmission::Normal { sd, .. }, VariableKind::Numeric) => *sd >= 0.0,
                    _ => false,
                };
                if !ok {
                    return bad(format!("emission for `{}` does not match its kind", var.id));
                }
            }
        }
        Ok(())
    }
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&x| x.is_finite() && x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

/// A generated panel together with the latent segment of every record.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: Panel,
    /// Latent segment (0-based) of each record, aligned with `panel.records()`.
    pub latent: Vec<usize>,
}

/// Draws `n_individuals` three-year windows placed uniformly inside
/// `[first_year, last_year]`, latent paths from `latent`, and answers from the
/// segment-conditional distributions. Deterministic in `seed`.
pub fn generate_synthetic_panel(
    seed: u64,
    n_individuals: usize,
    first_year: i32,
    last_year: i32,
    spec: &VariableSpec,
    latent: &LatentDynamics,
) -> Result<SyntheticPanel, DataError> {
    if last_year - first_year < WINDOW_YEARS - 1 {
        return Err(DataError::InvalidSpec(format!(
            "year range {first_year}..={last_year} is shorter than a {WINDOW_YEARS}-year window"
        )));
    }
    latent.validate(spec, first_year, last_year)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last_start = last_year - WINDOW_YEARS + 1;
    let width = (n_individuals.max(1) as f64).log10().floor() as usize + 1;
    let mut records = Vec::with_capacity(n_individuals * WINDOW_YEARS as usize);
    let mut states = Vec::with_capacity(records.capacity());
    for i in 0..n_individuals {
        let id = format!("I{:0width$}", i + 1, width = width);
        let start = rng.random_range(first_year..=last_start);
        let mut state = sample_categorical(&latent.initial, rng.random());
        for year in start..start + WINDOW_YEARS {
            if year > start {
                let p = latent.transition(year - 1).expect("validated");
                state = sample_row(p, state, rng.random());
            }
            records.push(draw_record(&mut rng, &id, year, state, latent));
            states.push(state);
        }
    }
    let panel = Panel::new(spec.clone(), records)?;
    Ok(SyntheticPanel {
        panel,
        latent: states,
    })
}

fn sample_row(p: &Array2<f64>, from: usize, u: f64) -> usize {
    let row = p.row(from);
    match row.as_slice() {
        Some(s) => sample_categorical(s, u),
        None => sample_categorical(&row.to_vec(), u),
    }
}

fn draw_record(rng: &mut ChaCha8Rng, id: &str, year: i32, state: usize, latent: &LatentDynamics) -> PanelRecord {
    let answers = latent.active_emissions[state]
        .iter()
        .map(|p| sample_categorical(p, rng.random()) as u16 + 1)
        .collect();
    let supplementary = latent.supplementary[state]
        .iter()
        .map(|e| match e {
            SuppEmission::Categorical(p) => SuppValue::Modality(sample_categorical(p, rng.random()) as u16 + 1),
            SuppEmission::Normal { mean, sd } => {
                let x = Normal::new(*mean, *sd).expect("sd validated").sample(rng);
                // Two decimals keep CSV round trips short and exact.
                SuppValue::Numeric((x * 100.0).round() / 100.0)
            }
        })
        .collect();
    PanelRecord {
        individual_id: id.to_string(),
        year,
        answers,
        supplementary,
    }
}
