use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing simulation times starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(
                "time grid contains a non-finite time".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { times })
    }

    /// `K = ceil(T/dt)` steps of size `dt`, the last one truncated to land on `T`.
    pub fn uniform(t_max: f64, dt: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0 && dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs T > 0 and dt > 0, got T={t_max} dt={dt}"
            )));
        }
        let ratio = t_max / dt;
        // T/dt that is integral up to rounding (e.g. 1/1e-3) is not a truncated step.
        let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        }
        .max(1);
        let mut times: Vec<f64> = (0..steps).map(|j| j as f64 * dt).collect();
        times.push(t_max);
        TimeGrid::new(times)
    }

    /// `steps` steps whose sizes grow geometrically by `ratio`, ending at `t_max`.
    ///
    /// Resolves early coalescence with fine steps while keeping the total step
    /// count small.
    pub fn geometric(t_max: f64, first_step: f64, ratio: f64) -> Result<Self> {
        if !(t_max > 0.0 && first_step > 0.0 && first_step <= t_max && ratio >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "geometric grid needs 0 < first_step <= T and ratio >= 1, got T={t_max} first={first_step} ratio={ratio}"
            )));
        }
        let mut times = vec![0.0];
        let mut step = first_step;
        let mut t = 0.0;
        while t + step < t_max * (1.0 - 1e-12) {
            t += step;
            times.push(t);
            step *= ratio;
        }
        times.push(t_max);
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    /// Index of the grid time equal to `t` up to a relative tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon().max(1.0);
        let idx = self.times.partition_point(|&s| s < t - tol);
        (idx < self.times.len() && (self.times[idx] - t).abs() <= tol).then_some(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_integral_ratio_has_exact_step_count() {
        let g = TimeGrid::uniform(1.0, 1e-3).unwrap();
        assert_eq!(g.steps(), 1000);
        assert_eq!(g.horizon(), 1.0);
        let g = TimeGrid::uniform(0.3, 0.1).unwrap();
        assert_eq!(g.steps(), 3);
    }

    #[test]
    fn uniform_truncates_last_step() {
        let g = TimeGrid::uniform(1.0, 0.3).unwrap();
        assert_eq!(g.steps(), 4);
        assert!((g.dt(3) - 0.1).abs() < 1e-12);
        // dt > T collapses to one step of size T
        let g = TimeGrid::uniform(0.5, 2.0).unwrap();
        assert_eq!(g.times(), [0.0, 0.5]);
    }

    #[test]
    fn geometric_grid_ends_at_horizon() {
        let g = TimeGrid::geometric(0.1, 1e-7, 1.05).unwrap();
        assert_eq!(g.horizon(), 0.1);
        assert!(g.dt(0) <= 1e-7 * 1.0000001);
        assert!(g.steps() < 400);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.2]).is_err());
        assert!(TimeGrid::uniform(1.0, 0.0).is_err());
        assert!(TimeGrid::uniform(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::uniform(1.0, 0.1).unwrap();
        assert_eq!(g.index_of(0.3), Some(3));
        assert_eq!(g.index_of(0.35), None);
        assert_eq!(g.index_of(1.0), Some(10));
    }
}
