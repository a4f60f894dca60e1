//! Wasserstein distances between equal-weight empirical measures.

use serde::{Deserialize, Serialize};

use crate::ensemble::{sq_dist, tree_sum, Ensemble};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, gaussian_increment_into, uniform_draw, Driver};

/// Largest problem handed to the exact assignment solver.
pub const ASSIGNMENT_CAP: usize = 2048;
/// Resamples averaged when an exact distance is requested above the cap.
pub const SUBSAMPLE_REPEATS: usize = 8;

/// Equal-weight point cloud, `n × d` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    n: usize,
    d: usize,
    samples: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(n: usize, d: usize, samples: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if d == 0 {
            return Err(Error::Dimension("dimension must be at least 1".into()));
        }
        if samples.len() != n * d {
            return Err(Error::SizeMismatch { left: samples.len(), right: n * d });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at flat index {i}")));
        }
        Ok(Self { n, d, samples })
    }

    pub fn from_1d(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn from_ensemble(e: &Ensemble) -> Result<Self> {
        Self::new(e.n(), e.d(), e.states().to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d..(i + 1) * self.d]
    }

    /// Component `c` of every sample.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.samples.iter().skip(c).step_by(self.d).copied().collect()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let samples = idx.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Self { n: idx.len(), d: self.d, samples }
    }
}

fn check_order(order: u32) -> Result<()> {
    match order {
        1 | 2 => Ok(()),
        other => Err(Error::InvalidParameter(format!("order must be 1 or 2, got {other}"))),
    }
}

fn check_pair(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<()> {
    if p.n != q.n {
        return Err(Error::SizeMismatch { left: p.n, right: q.n });
    }
    if p.d != q.d {
        return Err(Error::Dimension(format!("{} vs {}", p.d, q.d)));
    }
    Ok(())
}

#[inline]
fn power(x: f64, order: u32) -> f64 {
    if order == 1 {
        x
    } else {
        x * x
    }
}

#[inline]
fn root(x: f64, order: u32) -> f64 {
    if order == 1 {
        x
    } else {
        x.sqrt()
    }
}

/// `order`-th power of `W_order` between two equal-size samples on the line.
fn sorted_cost(mut x: Vec<f64>, mut y: Vec<f64>, order: u32) -> f64 {
    x.sort_unstable_by(f64::total_cmp);
    y.sort_unstable_by(f64::total_cmp);
    let terms: Vec<f64> = x.iter().zip(&y).map(|(a, b)| power((a - b).abs(), order)).collect();
    tree_sum(&terms) / x.len() as f64
}

/// Exact `W_order` on the real line via the monotone coupling.
pub fn wasserstein_1d(p: &EmpiricalMeasure, q: &EmpiricalMeasure, order: u32) -> Result<f64> {
    check_order(order)?;
    check_pair(p, q)?;
    if p.d != 1 {
        return Err(Error::Dimension(format!("sorted distance needs d = 1, got {}", p.d)));
    }
    Ok(root(sorted_cost(p.samples.clone(), q.samples.clone(), order), order))
}

/// Minimal-cost perfect matching of a square cost matrix by shortest
/// augmenting paths with dual potentials, `O(n³)`. Returns `col → row`.
fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let reduced = row[j - 1] - u[i0] - v[j];
                    if reduced < minv[j] {
                        minv[j] = reduced;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| row_of[j] - 1).collect()
}

fn assignment_cost(p: &EmpiricalMeasure, q: &EmpiricalMeasure, order: u32) -> f64 {
    let n = p.n;
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = power(sq_dist(p.point(i), q.point(j)).sqrt(), order);
        }
    }
    let rows = solve_assignment(n, &cost);
    let matched: Vec<f64> = rows.iter().enumerate().map(|(j, &i)| cost[i * n + j]).collect();
    tree_sum(&matched) / n as f64
}

/// Exact `W_order` by minimal-cost assignment (`n ≤ 2048`).
pub fn wasserstein_assignment(p: &EmpiricalMeasure, q: &EmpiricalMeasure, order: u32) -> Result<f64> {
    check_order(order)?;
    check_pair(p, q)?;
    if p.n > ASSIGNMENT_CAP {
        return Err(Error::CapExceeded { n: p.n, cap: ASSIGNMENT_CAP });
    }
    Ok(root(assignment_cost(p, q, order), order))
}

/// Exact distance, falling back to the mean over [`SUBSAMPLE_REPEATS`]
/// random subsamples of size [`ASSIGNMENT_CAP`] above the cap. The flag
/// reports whether subsampling was used.
pub fn wasserstein_exact_or_subsampled(
    p: &EmpiricalMeasure,
    q: &EmpiricalMeasure,
    order: u32,
    seed: u64,
) -> Result<(f64, bool)> {
    check_order(order)?;
    check_pair(p, q)?;
    if p.d == 1 {
        return Ok((wasserstein_1d(p, q, order)?, false));
    }
    if p.n <= ASSIGNMENT_CAP {
        return Ok((wasserstein_assignment(p, q, order)?, false));
    }
    let mut total = Vec::with_capacity(SUBSAMPLE_REPEATS);
    for rep in 0..SUBSAMPLE_REPEATS as u64 {
        let ip = sample_without_replacement(p.n, ASSIGNMENT_CAP, derive_seed(seed, 2 * rep));
        let iq = sample_without_replacement(q.n, ASSIGNMENT_CAP, derive_seed(seed, 2 * rep + 1));
        total.push(wasserstein_assignment(&p.subset(&ip), &q.subset(&iq), order)?);
    }
    Ok((tree_sum(&total) / SUBSAMPLE_REPEATS as f64, true))
}

fn sample_without_replacement(n: usize, k: usize, seed: u64) -> Vec<usize> {
    // partial Fisher-Yates
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + ((uniform_draw(seed, 0, i as u64) * (n - i) as f64) as usize).min(n - i - 1);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Monte-Carlo sliced distance over `n_projections` random unit directions.
pub fn sliced_wasserstein(
    p: &EmpiricalMeasure,
    q: &EmpiricalMeasure,
    order: u32,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    check_order(order)?;
    check_pair(p, q)?;
    if n_projections == 0 {
        return Err(Error::InvalidParameter("need at least one projection".into()));
    }
    if p.d == 1 {
        // every unit direction is ±1 and the distance is sign-invariant
        return wasserstein_1d(p, q, order);
    }
    let d = p.d;
    let mut dir = vec![0.0; d];
    let mut per_direction = Vec::with_capacity(n_projections);
    for k in 0..n_projections {
        loop {
            gaussian_increment_into(seed, Driver::Init, u64::MAX, k as i64, 1.0, &mut dir);
            let r = sq_dist(&dir, &vec![0.0; d]).sqrt();
            if r > 0.0 {
                dir.iter_mut().for_each(|v| *v /= r);
                break;
            }
        }
        let project = |m: &EmpiricalMeasure| -> Vec<f64> {
            m.samples.chunks_exact(d).map(|x| x.iter().zip(&dir).map(|(a, b)| a * b).sum()).collect()
        };
        per_direction.push(sorted_cost(project(p), project(q), order));
    }
    Ok(root(tree_sum(&per_direction) / n_projections as f64, order))
}

/// Checks `W₂(x̂, ŷ)² ≤ N⁻¹ Σ|xᵢ − yᵢ|²`, the index pairing being one coupling.
pub fn coupling_bound_check(x: &Ensemble, y: &Ensemble) -> Result<bool> {
    x.check_same_shape(y)?;
    let (p, q) = (EmpiricalMeasure::from_ensemble(x)?, EmpiricalMeasure::from_ensemble(y)?);
    let w2 = wasserstein_assignment(&p, &q, 2)?;
    Ok(w2 * w2 <= x.paired_sq_gap(y)? + 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_1d(v).unwrap()
    }

    #[test]
    fn two_diracs() {
        for order in [1, 2] {
            assert_eq!(wasserstein_1d(&m1(&[0.0]), &m1(&[3.0]), order).unwrap(), 3.0);
            assert_eq!(wasserstein_assignment(&m1(&[0.0]), &m1(&[3.0]), order).unwrap(), 3.0);
        }
    }

    #[test]
    fn shifted_pair() {
        assert_eq!(wasserstein_1d(&m1(&[0.0, 1.0]), &m1(&[1.0, 2.0]), 1).unwrap(), 1.0);
    }

    #[test]
    fn planar_example() {
        let p = EmpiricalMeasure::new(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let q = EmpiricalMeasure::new(2, 2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((wasserstein_assignment(&p, &q, 2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(wasserstein_1d(&m1(&[0.0]), &m1(&[0.0, 1.0]), 1), Err(Error::SizeMismatch { .. })));
        let p = EmpiricalMeasure::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(wasserstein_1d(&p, &p, 1), Err(Error::Dimension(_))));
        let big = m1(&vec![0.0; ASSIGNMENT_CAP + 1]);
        assert!(matches!(wasserstein_assignment(&big, &big, 1), Err(Error::CapExceeded { .. })));
        assert!(wasserstein_1d(&m1(&[0.0]), &m1(&[1.0]), 3).is_err());
    }

    #[test]
    fn subsample_indices_are_distinct() {
        let mut idx = sample_without_replacement(100, 40, 3);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 40);
    }
}
