//! Deterministic paths `phi(u, t)` sampled on the particle labels and a time
//! grid, together with their time derivatives.
//!
//! The same type carries candidate paths for the rate function, the target
//! path of the drifted flow, and the drift `h` of a change of measure (read
//! from [`DriftPath::rate_row`]).

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftPath {
    labels: Vec<f64>,
    grid: TimeGrid,
    /// Row-major `(K+1) x n`.
    values: Vec<f64>,
    /// Row-major `(K+1) x n`; row `j` is the rate used on step `j -> j+1`.
    rates: Vec<f64>,
}

impl DriftPath {
    /// Build from explicit arrays. Without `rates`, forward differences of
    /// `values` are used (the last row repeats the previous one).
    pub fn from_arrays(
        labels: Vec<f64>,
        grid: TimeGrid,
        values: Vec<f64>,
        rates: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = labels.len();
        let rows = grid.times().len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "drift path needs at least one label".into(),
            ));
        }
        if values.len() != n * rows {
            return Err(Error::GridMismatch(format!(
                "expected {} values for {rows} times x {n} labels, got {}",
                n * rows,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("drift path values".into()));
        }
        let rates = match rates {
            Some(r) => {
                if r.len() != n * rows {
                    return Err(Error::GridMismatch(format!(
                        "expected {} rates, got {}",
                        n * rows,
                        r.len()
                    )));
                }
                r
            }
            None => forward_differences(&values, &grid, n),
        };
        if rates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("drift path rates".into()));
        }
        Ok(DriftPath {
            labels,
            grid,
            values,
            rates,
        })
    }

    /// Sample `phi(u, t)`; rates from forward differences.
    pub fn from_fn(labels: &[f64], grid: &TimeGrid, phi: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = sample(labels, grid, phi);
        DriftPath::from_arrays(labels.to_vec(), grid.clone(), values, None)
    }

    /// Sample `phi(u, t)` and its exact time derivative.
    pub fn from_fn_with_rate(
        labels: &[f64],
        grid: &TimeGrid,
        phi: impl Fn(f64, f64) -> f64,
        rate: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let values = sample(labels, grid, phi);
        let rates = sample(labels, grid, rate);
        DriftPath::from_arrays(labels.to_vec(), grid.clone(), values, Some(rates))
    }

    /// `phi(u, t) = u`: no drift.
    pub fn frozen(labels: &[f64], grid: &TimeGrid) -> Result<Self> {
        DriftPath::from_fn_with_rate(labels, grid, |u, _| u, |_, _| 0.0)
    }

    /// `phi(u, t) = u + c t`.
    pub fn constant_rate(labels: &[f64], grid: &TimeGrid, c: f64) -> Result<Self> {
        DriftPath::from_fn_with_rate(labels, grid, |u, t| u + c * t, |_, _| c)
    }

    /// Constant-speed path from the labels to `target` (one value per label)
    /// at the grid horizon.
    pub fn straight_line(labels: &[f64], grid: &TimeGrid, target: &[f64]) -> Result<Self> {
        if target.len() != labels.len() {
            return Err(Error::GridMismatch(format!(
                "target has {} values for {} labels",
                target.len(),
                labels.len()
            )));
        }
        let horizon = grid.horizon();
        let n = labels.len();
        let mut values = Vec::with_capacity(n * grid.times().len());
        let mut rates = Vec::with_capacity(values.capacity());
        for &t in grid.times() {
            let s = t / horizon;
            for (u, g) in labels.iter().zip(target) {
                values.push(u + s * (g - u));
                rates.push((g - u) / horizon);
            }
        }
        DriftPath::from_arrays(labels.to_vec(), grid.clone(), values, Some(rates))
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn value_row(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn rate_row(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.rates[j * n..(j + 1) * n]
    }

    /// `phi(., 0)` equals the labels up to `1e-12`.
    pub fn starts_at_labels(&self) -> bool {
        self.value_row(0)
            .iter()
            .zip(&self.labels)
            .all(|(v, u)| (v - u).abs() <= 1e-12)
    }

    pub fn is_nondecreasing_in_u(&self) -> bool {
        self.rows().all(|row| row.windows(2).all(|w| w[0] <= w[1]))
    }

    pub fn is_strictly_increasing_in_u(&self) -> bool {
        self.rows().all(|row| row.windows(2).all(|w| w[0] < w[1]))
    }

    /// Largest finite-difference slope in `u` over all time slices.
    pub fn max_u_slope(&self) -> f64 {
        let mut max = 0.0f64;
        for row in self.rows() {
            for (w, du) in row.windows(2).zip(self.labels.windows(2)) {
                let slope = (w[1] - w[0]).abs() / (du[1] - du[0]);
                max = max.max(slope);
            }
        }
        max
    }

    /// Hypotheses of the drifted-flow convergence result: strictly increasing
    /// in `u`, bounded `u`-slope, finite time derivative.
    pub fn in_class_r(&self) -> bool {
        self.is_strictly_increasing_in_u() && self.max_u_slope().is_finite()
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n())
    }
}

fn sample(labels: &[f64], grid: &TimeGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    grid.times()
        .iter()
        .flat_map(|&t| labels.iter().map(move |&u| (u, t)))
        .map(|(u, t)| f(u, t))
        .collect()
}

fn forward_differences(values: &[f64], grid: &TimeGrid, n: usize) -> Vec<f64> {
    let rows = grid.times().len();
    let mut rates = vec![0.0; values.len()];
    for j in 0..rows - 1 {
        let dt = grid.dt(j);
        for k in 0..n {
            rates[j * n + k] = (values[(j + 1) * n + k] - values[j * n + k]) / dt;
        }
    }
    if rows >= 2 {
        let (head, last) = rates.split_at_mut((rows - 1) * n);
        last.copy_from_slice(&head[(rows - 2) * n..]);
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::uniform(1.0, 0.25).unwrap()
    }

    #[test]
    fn forward_differences_of_linear_path_are_exact() {
        let labels = [0.5, 1.0];
        let p = DriftPath::from_fn(&labels, &grid(), |u, t| u + 0.3 * t).unwrap();
        for j in 0..=4 {
            for r in p.rate_row(j) {
                assert!((r - 0.3).abs() < 1e-12);
            }
        }
        assert!(p.starts_at_labels());
        assert!(p.in_class_r());
    }

    #[test]
    fn straight_line_hits_target() {
        let labels = [0.25, 0.5, 0.75, 1.0];
        let target = [0.5, 0.5, 1.0, 2.0];
        let p = DriftPath::straight_line(&labels, &grid(), &target).unwrap();
        assert_eq!(p.value_row(4), target);
        assert!(p.starts_at_labels());
        assert!(p.is_nondecreasing_in_u());
        assert!(!p.is_strictly_increasing_in_u());
        assert!(!p.in_class_r());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = DriftPath::from_arrays(vec![0.5, 1.0], grid(), vec![0.0; 3], None);
        assert!(matches!(err, Err(Error::GridMismatch(_))));
        let err = DriftPath::from_arrays(vec![0.5], grid(), vec![f64::NAN; 5], None);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
