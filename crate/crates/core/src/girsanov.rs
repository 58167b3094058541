//! Drifted flows and the exponential change of measure.
//!
//! Under the tilted law the flow with noise scale `eps` picks up the
//! projected drift `pr_{z(s)} h(s)`: every block moves by the block average of
//! `h` times `dt` on top of its `sqrt(eps dt / m)` Gaussian kick. Reweighting
//! by `1/M` with
//!
//! ```text
//! ln M = (1/eps) [ sum_j (h_j, dz_j) - 1/2 sum_j ||pr_{z_j} h_j||^2 dt_j ]
//! ```
//!
//! recovers expectations under the driftless law.

use std::io::Write;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::drift::DriftPath;
use crate::error::{Error, Result};
use crate::flow::{check_drift, FlowPath, FlowState, Stepper};
use crate::observables::kappa_cell_weights;
use crate::rng::replica_rng;
use crate::stats::{Summary, WeightedEstimate};
use crate::stoch_calc::projected_norm_sq;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// The drifted flow `dz = pr_z phi'(t) dt + sqrt(eps) pr_z dW` on the config
/// grid, driven by stream `(seed, 0)`.
///
/// `eps = 0` gives the deterministic projected-drift dynamics. With `eps = 1`
/// and zero drift the path is bit-identical to [`crate::simulate_path`].
pub fn simulate_drifted(
    config: &ExperimentConfig,
    drift: &DriftPath,
    eps: f64,
    seed: u64,
) -> Result<FlowPath> {
    simulate_tilted(config, drift, eps, seed, 0).map(|(path, _)| path)
}

/// Drifted replica `replica` of stream family `seed`, with the exact log
/// likelihood ratio `ln M` of its noise against the driftless chain.
///
/// The returned weight is computed from the pre-merge proposal increments,
/// which makes `E[1_A / M]` under the drifted chain equal the driftless
/// probability of `A` for the discrete scheme itself.
pub fn simulate_tilted(
    config: &ExperimentConfig,
    drift: &DriftPath,
    eps: f64,
    seed: u64,
    replica: u64,
) -> Result<(FlowPath, f64)> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise scale must be non-negative, got {eps}"
        )));
    }
    let grid = config.grid()?;
    check_drift(drift, config.n, &grid)?;
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    let mut rng = replica_rng(seed, replica);
    let (path, tally) = Stepper::new().record(initial, &grid, eps, Some(drift), &mut rng)?;
    let log_m = if eps > 0.0 {
        (tally.pairing - 0.5 * tally.energy) / eps
    } else {
        f64::NAN
    };
    Ok((path, log_m))
}

/// `ln M_T^{eps,h}` evaluated on a recorded path with left-point sums.
///
/// Uses the recorded (post-merge) increments. For drifts that are constant
/// on every block that merges during a step (constant `h` in particular) this
/// equals the exact discrete weight of [`simulate_tilted`].
pub fn log_likelihood_ratio(path: &FlowPath, h: &DriftPath, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    check_drift(h, path.n(), path.grid())?;
    let mut pairing = 0.0;
    let mut energy = 0.0;
    let mut before = Vec::new();
    let mut after = Vec::new();
    path.state(0).write_positions(&mut before);
    for j in 0..path.steps() {
        let hj = h.rate_row(j);
        path.state(j + 1).write_positions(&mut after);
        pairing += hj
            .iter()
            .zip(after.iter().zip(&before))
            .map(|(a, (x1, x0))| a * (x1 - x0))
            .sum::<f64>()
            / hj.len() as f64;
        energy += path.grid().dt(j) * projected_norm_sq(path.state(j), hj);
        std::mem::swap(&mut before, &mut after);
    }
    Ok((pairing - 0.5 * energy) / eps)
}

/// Importance-sampled probability of a path event under the driftless law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltedEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub log_estimate: f64,
    pub hits: usize,
    pub replicas: usize,
    /// Every replica carried zero weight; the estimate is uninformative.
    pub degenerate: bool,
}

impl From<WeightedEstimate> for TiltedEstimate {
    fn from(w: WeightedEstimate) -> Self {
        TiltedEstimate {
            estimate: w.estimate,
            std_error: w.std_error,
            log_estimate: w.log_estimate,
            hits: w.hits,
            replicas: w.replicas,
            degenerate: w.hits == 0,
        }
    }
}

/// Simulate `replicas` drifted paths (noise `eps`, drift `h`) from streams
/// `(seed, r)` and average `1_event / M`.
pub fn tilted_probability<E>(
    config: &ExperimentConfig,
    event: E,
    h: &DriftPath,
    eps: f64,
    replicas: usize,
    seed: u64,
) -> Result<TiltedEstimate>
where
    E: Fn(&FlowPath) -> bool + Sync,
{
    check_eps(eps)?;
    if replicas < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicas".into()));
    }
    let log_weights = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let (path, log_m) = simulate_tilted(config, h, eps, seed, r)?;
            Ok(event(&path).then_some(-log_m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedEstimate::from_log_weights(&log_weights).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub mean_sup_distance: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Whether the target path satisfies the hypotheses of the convergence
    /// result (strictly increasing in `u`, bounded slope).
    pub class_r: bool,
    pub warnings: Vec<String>,
}

impl ConvergenceTable {
    /// Mean sup-distance strictly decreases as `eps` decreases.
    pub fn is_monotone(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        rows.windows(2)
            .all(|w| w[1].mean_sup_distance < w[0].mean_sup_distance)
    }

    /// CSV with header `epsilon,mean_sup_distance,std_error`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// For each `eps`, the mean over `config.replicas` replicas of
/// `sup_t ||z^eps(t) - phi(t)||_{L2(mu)}`, where `z^eps` is the flow drifted
/// by `phi'` with noise `eps`. Replica `r` uses stream
/// `(config.master_seed, r)` for every `eps`, so rows are coupled.
pub fn drift_convergence_diagnostic(
    phi: &DriftPath,
    eps_list: &[f64],
    config: &ExperimentConfig,
) -> Result<ConvergenceTable> {
    config.validate()?;
    let grid = config.grid()?;
    check_drift(phi, config.n, &grid)?;
    let mut warnings = Vec::new();
    let class_r = phi.in_class_r();
    if !class_r {
        warnings.push(
            "target path is not strictly increasing in u; convergence hypotheses unmet".into(),
        );
    }
    if !phi.starts_at_labels() {
        warnings.push("target path does not start at the initial particle positions".into());
    }
    let weights = kappa_cell_weights(config.n, config.beta);
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        check_eps(eps)?;
        let sups = (0..config.replicas as u64)
            .into_par_iter()
            .map_init(
                || (Stepper::new(), Vec::new()),
                |(stepper, positions), r| {
                    let mut rng = replica_rng(config.master_seed, r);
                    let mut state = initial.clone();
                    let mut sup = 0.0f64;
                    stepper.run(&mut state, &grid, eps, Some(phi), &mut rng, None, |j, s| {
                        s.write_positions(positions);
                        let d2: f64 = positions
                            .iter()
                            .zip(phi.value_row(j))
                            .zip(&weights)
                            .map(|((z, p), w)| w * (z - p) * (z - p))
                            .sum();
                        sup = sup.max(d2.sqrt());
                        ControlFlow::Continue(())
                    })?;
                    Ok(sup)
                },
            )
            .collect::<Result<Vec<f64>>>()?;
        let s = Summary::of(&sups);
        rows.push(ConvergenceRow {
            epsilon: eps,
            mean_sup_distance: s.mean,
            std_error: s.std_error,
        });
    }
    Ok(ConvergenceTable {
        rows,
        class_r,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::simulate_path;

    #[test]
    fn zero_drift_unit_noise_reproduces_base_flow() {
        let cfg = ExperimentConfig::new(16, 0.2, 0.002);
        let grid = cfg.grid().unwrap();
        let still = DriftPath::frozen(&cfg.labels(), &grid).unwrap();
        for seed in 0..3 {
            let drifted = simulate_drifted(&cfg, &still, 1.0, seed).unwrap();
            assert_eq!(drifted, simulate_path(&cfg, seed).unwrap());
        }
    }

    #[test]
    fn zero_noise_zero_drift_is_frozen() {
        let cfg = ExperimentConfig::new(8, 0.1, 0.01);
        let still = DriftPath::frozen(&cfg.labels(), &cfg.grid().unwrap()).unwrap();
        let path = simulate_drifted(&cfg, &still, 0.0, 4).unwrap();
        for s in path.states() {
            assert_eq!(s.positions(), cfg.labels());
        }
    }

    #[test]
    fn zero_noise_constant_drift_translates() {
        let cfg = ExperimentConfig::new(8, 1.0, 0.1);
        let shift = DriftPath::constant_rate(&cfg.labels(), &cfg.grid().unwrap(), 0.3).unwrap();
        let path = simulate_drifted(&cfg, &shift, 0.0, 0).unwrap();
        for (x, u) in path.last().positions().iter().zip(cfg.labels()) {
            assert!((x - u - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ExperimentConfig::new(8, 0.1, 0.01);
        let grid = cfg.grid().unwrap();
        let still = DriftPath::frozen(&cfg.labels(), &grid).unwrap();
        assert!(simulate_drifted(&cfg, &still, -1.0, 0).is_err());
        let wrong_n = DriftPath::frozen(&[0.5, 1.0], &grid).unwrap();
        assert!(matches!(
            simulate_drifted(&cfg, &wrong_n, 1.0, 0),
            Err(Error::GridMismatch(_))
        ));
        let path = simulate_path(&cfg, 0).unwrap();
        assert!(log_likelihood_ratio(&path, &still, 0.0).is_err());
        assert!(tilted_probability(&cfg, |_| true, &still, 1.0, 1, 0).is_err());
    }

    #[test]
    fn likelihood_ratio_closed_forms() {
        let cfg = ExperimentConfig::new(16, 0.5, 0.01);
        let grid = cfg.grid().unwrap();
        let path = simulate_path(&cfg, 9).unwrap();
        let zero = DriftPath::frozen(&cfg.labels(), &grid).unwrap();
        assert_eq!(log_likelihood_ratio(&path, &zero, 0.3).unwrap(), 0.0);

        let c = 0.7;
        let h = DriftPath::constant_rate(&cfg.labels(), &grid, c).unwrap();
        let eps = 0.2;
        let com = path.last().center_of_mass() - path.initial().center_of_mass();
        let closed = (c * com - 0.5 * c * c * cfg.t_max) / eps;
        let generic = log_likelihood_ratio(&path, &h, eps).unwrap();
        assert!((closed - generic).abs() < 1e-12);
        let doubled = log_likelihood_ratio(&path, &h, 2.0 * eps).unwrap();
        assert!((doubled - generic / 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_weight_matches_path_weight_for_constant_drift() {
        let cfg = ExperimentConfig::new(16, 0.5, 0.01);
        let h = DriftPath::constant_rate(&cfg.labels(), &cfg.grid().unwrap(), 0.5).unwrap();
        let (path, exact) = simulate_tilted(&cfg, &h, 0.1, 3, 7).unwrap();
        let recorded = log_likelihood_ratio(&path, &h, 0.1).unwrap();
        assert!((exact - recorded).abs() < 1e-9 * exact.abs().max(1.0));
    }

    #[test]
    fn zero_drift_tilt_is_plain_frequency() {
        let cfg = ExperimentConfig::new(4, 0.2, 0.01);
        let zero = DriftPath::frozen(&cfg.labels(), &cfg.grid().unwrap()).unwrap();
        let event = |p: &FlowPath| p.last().block_count() < 4;
        let est = tilted_probability(&cfg, event, &zero, 1.0, 200, 5).unwrap();
        let direct = (0..200u64)
            .filter(|&r| {
                let (p, _) = simulate_tilted(&cfg, &zero, 1.0, 5, r).unwrap();
                event(&p)
            })
            .count();
        assert_eq!(est.hits, direct);
        assert!((est.estimate - direct as f64 / 200.0).abs() < 1e-15);
        let always = tilted_probability(&cfg, |_| true, &zero, 1.0, 50, 5).unwrap();
        assert_eq!(always.estimate, 1.0);
        assert_eq!(always.std_error, 0.0);
        let never = tilted_probability(&cfg, |_| false, &zero, 1.0, 50, 5).unwrap();
        assert!(never.degenerate);
    }

    #[test]
    fn drifted_paths_keep_order_and_mass() {
        let cfg = ExperimentConfig::new(32, 0.5, 0.005);
        let labels = cfg.labels();
        let grid = cfg.grid().unwrap();
        let bumpy = DriftPath::from_fn(&labels, &grid, |u, t| u + t * (6.0 * u).sin()).unwrap();
        for seed in 0..4 {
            let p = simulate_drifted(&cfg, &bumpy, 0.05, seed).unwrap();
            for s in p.states() {
                assert!(s.blocks().windows(2).all(|w| w[0].position < w[1].position));
                assert_eq!(s.blocks().iter().map(|b| b.count()).sum::<usize>(), 32);
            }
            assert!(p
                .states()
                .windows(2)
                .all(|w| w[1].block_count() <= w[0].block_count()));
        }
    }

    #[test]
    fn convergence_flags_non_class_r_targets() {
        let cfg = ExperimentConfig::new(8, 0.1, 0.01).with_replicas(4);
        let labels = cfg.labels();
        let grid = cfg.grid().unwrap();
        let flat =
            DriftPath::from_fn(&labels, &grid, |u, t| u + t * (0.5 - u).max(0.0) * 10.0).unwrap();
        let table = drift_convergence_diagnostic(&flat, &[0.1], &cfg).unwrap();
        assert!(!table.class_r);
        assert!(!table.warnings.is_empty());

        let id = DriftPath::frozen(&labels, &grid).unwrap();
        let table = drift_convergence_diagnostic(&id, &[0.1], &cfg).unwrap();
        assert!(table.class_r);
        assert!(table.warnings.is_empty());
    }
}
