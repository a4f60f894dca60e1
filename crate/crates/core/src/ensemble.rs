use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N` particles in `R^d`, stored row-major, at absolute grid step `time_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    n: usize,
    d: usize,
    states: Vec<f64>,
    pub time_index: i64,
}

impl Ensemble {
    pub fn new(n: usize, d: usize, states: Vec<f64>, time_index: i64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if d == 0 {
            return Err(Error::Dimension("dimension must be at least 1".into()));
        }
        if states.len() != n * d {
            return Err(Error::SizeMismatch { left: states.len(), right: n * d });
        }
        Ok(Self { n, d, states, time_index })
    }

    pub fn from_rows(rows: &[Vec<f64>], time_index: i64) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(n, d, rows.concat(), time_index)
    }

    pub fn filled(n: usize, d: usize, value: f64, time_index: i64) -> Result<Self> {
        Self::new(n, d, vec![value; n * d], time_index)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [f64] {
        &mut self.states
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.d)
    }

    pub fn max_norm(&self) -> f64 {
        self.rows().map(norm).fold(0.0, f64::max)
    }

    /// Mean squared distance between same-index particles.
    pub fn paired_sq_gap(&self, other: &Ensemble) -> Result<f64> {
        self.check_same_shape(other)?;
        let gaps: Vec<f64> = self
            .rows()
            .zip(other.rows())
            .map(|(a, b)| sq_dist(a, b))
            .collect();
        Ok(tree_sum(&gaps) / self.n as f64)
    }

    pub fn check_same_shape(&self, other: &Ensemble) -> Result<()> {
        if self.n != other.n {
            return Err(Error::SizeMismatch { left: self.n, right: other.n });
        }
        if self.d != other.d {
            return Err(Error::Dimension(format!("{} vs {}", self.d, other.d)));
        }
        Ok(())
    }

    /// First particle whose norm exceeds `guard` or that holds a non-finite entry.
    pub fn first_divergent(&self, guard: f64) -> Option<(usize, f64)> {
        self.rows().enumerate().find_map(|(i, r)| {
            let m = norm(r);
            (!m.is_finite() || m > guard).then_some((i, m))
        })
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise (cascade) summation. The association order depends only on the
/// length of the input, never on how work was scheduled.
pub fn tree_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        tree_sum(&values[..mid]) + tree_sum(&values[mid..])
    }
}
