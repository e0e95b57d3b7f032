//! Multiple correspondence analysis of the complete disjunctive coding of the
//! active variables.
//!
//! The standardized residual matrix `S` of the indicator table has entries
//! `(x_ij - c_j/n) / sqrt(Q c_j)`, where `c_j` is the count of modality `j`.
//! Its cross product `SᵀS` only depends on the Burt table (modality
//! co-occurrence counts), so the fit builds that `J'×J'` matrix exactly from
//! integer counts and diagonalizes it instead of factoring the `n×J'` matrix.
//! Row principal coordinates are then `sqrt(n) · S v_a`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Panel;

#[derive(Debug, Error, PartialEq)]
pub enum McaError {
    #[error("panel has no records")]
    EmptyPanel,
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("indicator table has zero inertia")]
    DegenerateInput,
    #[error("requested {requested} axes but only {available} are available")]
    AxisOutOfRange { requested: usize, available: usize },
}

/// Complete disjunctive coding stored sparsely: row `r` has a 1 in column
/// `cols[r*Q + v]` for each active variable `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    n: usize,
    q: usize,
    j: usize,
    cols: Vec<u32>,
}

impl IndicatorMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// Column indices holding a 1 in row `r`, one per active variable.
    pub fn row_columns(&self, r: usize) -> &[u32] {
        &self.cols[r * self.q..(r + 1) * self.q]
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.j];
        for &c in &self.cols {
            sums[c as usize] += 1;
        }
        sums
    }

    pub fn to_dense(&self) -> Array2<u8> {
        let mut out = Array2::zeros((self.n, self.j));
        for r in 0..self.n {
            for &c in self.row_columns(r) {
                out[[r, c as usize]] = 1;
            }
        }
        out
    }
}

/// Disjunctive coding of the active variables of `panel`.
pub fn build_indicator(panel: &Panel) -> Result<IndicatorMatrix, McaError> {
    if panel.is_empty() {
        return Err(McaError::EmptyPanel);
    }
    let modalities = panel.spec().active_modalities();
    let mut offsets = Vec::with_capacity(modalities.len());
    let mut acc = 0u32;
    for &m in &modalities {
        offsets.push(acc);
        acc += u32::from(m);
    }
    let q = modalities.len();
    let mut cols = Vec::with_capacity(panel.len() * q);
    for rec in panel.records() {
        for (v, &answer) in rec.answers.iter().enumerate() {
            cols.push(offsets[v] + u32::from(answer) - 1);
        }
    }
    Ok(IndicatorMatrix {
        n: panel.len(),
        q,
        j: acc as usize,
        cols,
    })
}

/// How many factorial axes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AxisRule {
    /// Axes with eigenvalue above `1/Q`.
    #[default]
    Auto,
    Fixed(usize),
}

/// Factor coordinates of every observation on the retained axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores {
    /// `n × K` principal coordinates, columns in eigenvalue order.
    pub coordinates: Array2<f64>,
    /// Retained eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue of the non-trivial solution, retained or not.
    pub spectrum: Vec<f64>,
    pub total_inertia: f64,
    /// Number of non-empty modality columns (`J'`).
    pub active_modalities: usize,
    pub q: usize,
}

impl FactorScores {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Coordinates rescaled to unit variance per axis.
    pub fn standardized(&self) -> Array2<f64> {
        let mut out = self.coordinates.clone();
        for (mut col, &lambda) in out.columns_mut().into_iter().zip(&self.eigenvalues) {
            let scale = lambda.sqrt();
            col.mapv_inplace(|x| x / scale);
        }
        out
    }

    pub fn summary(&self) -> McaSummary {
        McaSummary {
            k: self.k(),
            eigenvalues: self.eigenvalues.clone(),
            spectrum: self.spectrum.clone(),
            total_inertia: self.total_inertia,
            active_modalities: self.active_modalities,
            q: self.q,
            n: self.coordinates.nrows(),
        }
    }
}

/// JSON-facing metadata of a fit; coordinates travel as a CSV matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McaSummary {
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub total_inertia: f64,
    pub active_modalities: usize,
    pub q: usize,
    pub n: usize,
}

/// Eigenvalues below this are numerical zeros of the cross-product matrix.
const RANK_TOL: f64 = 1e-12;

pub fn mca_fit(indicator: &IndicatorMatrix, axes: AxisRule) -> Result<FactorScores, McaError> {
    let n = indicator.n;
    if n < 2 {
        return Err(McaError::TooFewObservations(n));
    }
    let q = indicator.q;
    let sums = indicator.column_sums();
    let kept: Vec<usize> = (0..indicator.j).filter(|&j| sums[j] > 0).collect();
    let jp = kept.len();
    if jp <= q {
        return Err(McaError::DegenerateInput);
    }
    let mut compact = vec![usize::MAX; indicator.j];
    for (i, &j) in kept.iter().enumerate() {
        compact[j] = i;
    }

    let mut burt = vec![0u64; jp * jp];
    for r in 0..n {
        let row = indicator.row_columns(r);
        for &a in row {
            let ia = compact[a as usize] * jp;
            for &b in row {
                burt[ia + compact[b as usize]] += 1;
            }
        }
    }

    let nf = n as f64;
    let qf = q as f64;
    let counts: Vec<f64> = kept.iter().map(|&j| sums[j] as f64).collect();
    let cross = DMatrix::from_fn(jp, jp, |a, b| {
        let expected = counts[a] * counts[b] / nf;
        (burt[a * jp + b] as f64 - expected) / (qf * (counts[a] * counts[b]).sqrt())
    });
    let total_inertia = counts.iter().map(|c| 1.0 - c / nf).sum::<f64>() / qf;
    if total_inertia <= 0.0 {
        return Err(McaError::DegenerateInput);
    }

    let eig = SymmetricEigen::new(cross);
    let mut order: Vec<usize> = (0..jp).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let available = spectrum.iter().take_while(|&&l| l > RANK_TOL).count();
    if available == 0 {
        return Err(McaError::DegenerateInput);
    }
    let k = match axes {
        AxisRule::Auto => spectrum.iter().take_while(|&&l| l > 1.0 / qf).count(),
        AxisRule::Fixed(k) if k <= available => k,
        AxisRule::Fixed(k) => {
            return Err(McaError::AxisOutOfRange {
                requested: k,
                available,
            })
        }
    };

    // f_ra = sqrt(n/Q) * (Σ_{j in row r} v_ja / sqrt(c_j) - Σ_j (c_j/n) v_ja / sqrt(c_j))
    let mut weights = Array2::<f64>::zeros((jp, k));
    let mut centre = vec![0.0; k];
    for (a, &col) in order.iter().take(k).enumerate() {
        for j in 0..jp {
            let w = eig.eigenvectors[(j, col)] / counts[j].sqrt();
            weights[[j, a]] = w;
            centre[a] += counts[j] / nf * w;
        }
    }
    let scale = (nf / qf).sqrt();
    let mut coordinates = Array2::<f64>::zeros((n, k));
    for r in 0..n {
        let row = indicator.row_columns(r);
        let mut out = coordinates.row_mut(r);
        for a in 0..k {
            let s: f64 = row.iter().map(|&c| weights[[compact[c as usize], a]]).sum();
            out[a] = scale * (s - centre[a]);
        }
    }
    orient_axes(&mut coordinates);

    Ok(FactorScores {
        coordinates,
        eigenvalues: spectrum[..k].to_vec(),
        spectrum,
        total_inertia,
        active_modalities: jp,
        q,
    })
}

/// Flips each axis so that its largest-magnitude coordinate is positive
/// (first such observation wins ties).
fn orient_axes(coordinates: &mut Array2<f64>) {
    for mut col in coordinates.columns_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

/// First `m` coordinate columns.
pub fn project(scores: &FactorScores, m: usize) -> Result<Array2<f64>, McaError> {
    if m > scores.k() {
        return Err(McaError::AxisOutOfRange {
            requested: m,
            available: scores.k(),
        });
    }
    Ok(scores.coordinates.slice(s![.., ..m]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PanelRecord, Role, Variable, VariableKind, VariableSpec};

    fn binary_spec(q: usize) -> VariableSpec {
        VariableSpec::new(
            (0..q)
                .map(|i| Variable {
                    id: format!("b{i}"),
                    name: format!("b{i}"),
                    role: Role::Active,
                    kind: VariableKind::Categorical { modalities: 2 },
                })
                .collect(),
        )
        .unwrap()
    }

    fn panel_of(spec: VariableSpec, rows: &[Vec<u16>]) -> Panel {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, a)| PanelRecord {
                individual_id: format!("p{i}"),
                year: 2000,
                answers: a.clone(),
                supplementary: vec![],
            })
            .collect();
        Panel::new(spec, records).unwrap()
    }

    #[test]
    fn disjunctive_row() {
        let panel = panel_of(binary_spec(2), &[vec![1, 2]]);
        let ind = build_indicator(&panel).unwrap();
        assert_eq!(ind.to_dense().row(0).to_vec(), vec![1, 0, 0, 1]);
        assert_eq!(ind.column_sums(), vec![1, 0, 0, 1]);
    }

    #[test]
    fn empty_and_degenerate() {
        let spec = binary_spec(2);
        assert_eq!(build_indicator(&Panel::empty(spec.clone())), Err(McaError::EmptyPanel));
        let same = panel_of(spec.clone(), &[vec![1, 2], vec![1, 2], vec![1, 2]]);
        let ind = build_indicator(&same).unwrap();
        assert_eq!(mca_fit(&ind, AxisRule::Auto), Err(McaError::DegenerateInput));
        let one = panel_of(spec, &[vec![1, 2]]);
        assert_eq!(
            mca_fit(&build_indicator(&one).unwrap(), AxisRule::Auto),
            Err(McaError::TooFewObservations(1))
        );
    }

    #[test]
    fn project_bounds() {
        let rows: Vec<Vec<u16>> = (0..12).map(|i| vec![1 + (i % 2), 1 + (i / 3 % 2), 1 + (i / 2 % 2)]).collect();
        let scores = mca_fit(&build_indicator(&panel_of(binary_spec(3), &rows)).unwrap(), AxisRule::Fixed(2)).unwrap();
        assert_eq!(project(&scores, 2).unwrap(), scores.coordinates);
        assert_eq!(project(&scores, 0).unwrap().dim(), (12, 0));
        assert!(matches!(project(&scores, 3), Err(McaError::AxisOutOfRange { .. })));
        let std = scores.standardized();
        let var0 = std.column(0).iter().map(|x| x * x).sum::<f64>() / 12.0;
        assert!((var0 - 1.0).abs() < 1e-12);
    }
}
