//! Statistical test batteries and path export.

use std::fmt;
use std::io::Write;
use std::ops::ControlFlow;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::flow::{FlowPath, FlowState, Stepper};
use crate::grid::TimeGrid;
use crate::rng::replica_rng;
use crate::stats::{linear_fit, normal_cdf, Summary};

/// Outcome of one statistical check: passes iff `statistic` lies in `band`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub band: (f64, f64),
    pub pass: bool,
    pub replicas: usize,
    pub runtime_secs: f64,
}

impl TestReport {
    pub fn new(
        name: impl Into<String>,
        statistic: f64,
        band: (f64, f64),
        replicas: usize,
        started: Instant,
    ) -> Self {
        TestReport {
            name: name.into(),
            statistic,
            band,
            pass: band.0 <= statistic && statistic <= band.1,
            replicas,
            runtime_secs: started.elapsed().as_secs_f64(),
        }
    }

    /// A z-score judged against `[-3, 3]`.
    pub fn z(name: impl Into<String>, z: f64, replicas: usize, started: Instant) -> Self {
        TestReport::new(name, z, (-3.0, 3.0), replicas, started)
    }
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: statistic={:.6} band=[{:.6}, {:.6}] replicas={} runtime={:.2}s",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.band.0,
            self.band.1,
            self.replicas,
            self.runtime_secs
        )
    }
}

pub fn all_pass(reports: &[TestReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

/// CSV with header `name,statistic,band_lo,band_hi,pass,replicas,runtime_secs`.
pub fn write_reports_csv<W: Write>(reports: &[TestReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "statistic",
        "band_lo",
        "band_hi",
        "pass",
        "replicas",
        "runtime_secs",
    ])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.statistic.to_string(),
            r.band.0.to_string(),
            r.band.1.to_string(),
            r.pass.to_string(),
            r.replicas.to_string(),
            r.runtime_secs.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Start every replica of `config` from the initial state on its own stream
/// and let `observe` drive it to one record.
fn ensemble<T, F>(config: &ExperimentConfig, observe: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Stepper, &mut FlowState, &mut crate::rng::StreamRng) -> Result<T> + Sync,
{
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    (0..config.replicas as u64)
        .into_par_iter()
        .map_init(Stepper::new, |stepper, r| {
            let mut rng = replica_rng(config.master_seed, r);
            let mut state = initial.clone();
            observe(stepper, &mut state, &mut rng)
        })
        .collect()
}

/// Variance estimate with a standard error that does not assume normality.
fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let s = Summary::of(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - s.mean) * (x - s.mean)).collect();
    (s.variance, Summary::of(&sq).std_error)
}

/// z-scores of slope and intercept of `dy = a + b y` over replicas; exact
/// zeros when every increment vanishes.
fn regression_z(ys: &[f64], dys: &[f64]) -> (f64, f64) {
    if dys.iter().all(|&d| d == 0.0) {
        return (0.0, 0.0);
    }
    let fit = linear_fit(ys, dys);
    (fit.slope / fit.slope_se, fit.intercept / fit.intercept_se)
}

/// Martingale checks on `config`'s uniform grid:
///
/// * the center of mass has variance `epsilon T` at `T` (band: three
///   standard errors of the variance estimate);
/// * for `u` in `{1/4, 1/2, 3/4}`, regressing `y(u, T) - y(u, T/2)` on
///   `y(u, T/2)` gives slope and intercept z-scores within 3.
pub fn martingale_battery(config: &ExperimentConfig) -> Result<Vec<TestReport>> {
    config.validate()?;
    if config.replicas < 3 {
        return Err(Error::InvalidConfig(
            "martingale battery needs at least 3 replicas".into(),
        ));
    }
    let started = Instant::now();
    let grid = config.grid()?;
    let mid = grid.steps() / 2;
    let us = [0.25, 0.5, 0.75];
    let records = ensemble(config, |stepper, state, rng| {
        let com0 = state.center_of_mass();
        let mut at_mid = [0.0; 3];
        for (m, &u) in at_mid.iter_mut().zip(&us) {
            *m = state.eval_at(u)?;
        }
        stepper.run(state, &grid, config.epsilon, None, rng, None, |j, s| {
            if j == mid {
                for (m, &u) in at_mid.iter_mut().zip(&us) {
                    *m = s.eval_at(u).expect("u lies in [0, 1]");
                }
            }
            ControlFlow::Continue(())
        })?;
        let mut at_end = [0.0; 3];
        for (e, &u) in at_end.iter_mut().zip(&us) {
            *e = state.eval_at(u)?;
        }
        Ok((state.center_of_mass() - com0, at_mid, at_end))
    })?;
    let mut reports = Vec::new();
    let coms: Vec<f64> = records.iter().map(|r| r.0).collect();
    let (var, se) = variance_with_se(&coms);
    let target = config.epsilon * grid.horizon();
    let rel = if var > 0.0 { se / var } else { 0.0 };
    reports.push(TestReport::new(
        "center-of-mass variance",
        var,
        (target * (1.0 - 3.0 * rel), target * (1.0 + 3.0 * rel)),
        config.replicas,
        started,
    ));
    for (i, u) in us.iter().enumerate() {
        let ys: Vec<f64> = records.iter().map(|r| r.1[i]).collect();
        let dys: Vec<f64> = records.iter().map(|r| r.2[i] - r.1[i]).collect();
        let (zs, zi) = regression_z(&ys, &dys);
        reports.push(TestReport::z(
            format!("martingale slope u={u}"),
            zs,
            config.replicas,
            started,
        ));
        reports.push(TestReport::z(
            format!("martingale intercept u={u}"),
            zi,
            config.replicas,
            started,
        ));
    }
    Ok(reports)
}

/// Ratio of consecutive steps of the geometric grid used by
/// [`scaling_battery`].
pub const SCALING_GRID_RATIO: f64 = 1.03;

/// Log-log slopes over `t` in `[T/1000, T]` (seven log-spaced points):
/// `E (y(1/2, t) - y(1/2, 0))^2` against the band `[0.4, 0.6]`, and the mean
/// cluster count `E N(t)` against `[-0.65, -0.35]`.
///
/// Steps grow geometrically from `config.dt` by [`SCALING_GRID_RATIO`] so
/// that early coalescence is resolved.
pub fn scaling_battery(config: &ExperimentConfig) -> Result<Vec<TestReport>> {
    config.validate()?;
    let started = Instant::now();
    let grid = TimeGrid::geometric(config.t_max, config.dt, SCALING_GRID_RATIO)?;
    let probes = probe_indices(&grid, config.t_max * 1e-3, config.t_max, 7);
    let records = ensemble(config, |stepper, state, rng| {
        let y0 = state.eval_at(0.5)?;
        let mut d2 = vec![0.0; probes.len()];
        let mut counts = vec![0.0; probes.len()];
        stepper.run(state, &grid, config.epsilon, None, rng, None, |j, s| {
            for (p, &i) in probes.iter().enumerate() {
                if i == j {
                    let y = s.eval_at(0.5).expect("1/2 lies in [0, 1]");
                    d2[p] = (y - y0) * (y - y0);
                    counts[p] = s.block_count() as f64;
                }
            }
            ControlFlow::Continue(())
        })?;
        Ok((d2, counts))
    })?;
    let ln_t: Vec<f64> = probes.iter().map(|&i| grid.times()[i].ln()).collect();
    let mean_ln = |column: &dyn Fn(usize) -> f64| {
        (0..records.len()).map(column).sum::<f64>().ln() - (records.len() as f64).ln()
    };
    let ln_d2: Vec<f64> = (0..probes.len())
        .map(|k| mean_ln(&|r| records[r].0[k]))
        .collect();
    let ln_n: Vec<f64> = (0..probes.len())
        .map(|k| mean_ln(&|r| records[r].1[k]))
        .collect();
    Ok(vec![
        TestReport::new(
            "displacement slope",
            linear_fit(&ln_t, &ln_d2).slope,
            (0.4, 0.6),
            config.replicas,
            started,
        ),
        TestReport::new(
            "cluster count slope",
            linear_fit(&ln_t, &ln_n).slope,
            (-0.65, -0.35),
            config.replicas,
            started,
        ),
    ])
}

/// Grid indices closest (in `ln t`) to `points` log-spaced times in `[lo, hi]`.
fn probe_indices(grid: &TimeGrid, lo: f64, hi: f64, points: usize) -> Vec<usize> {
    let times = grid.times();
    let mut out: Vec<usize> = (0..points)
        .map(|p| {
            let target = lo * (hi / lo).powf(p as f64 / (points - 1) as f64);
            let k = times
                .partition_point(|&t| t < target)
                .clamp(1, times.len() - 1);
            if k > 1 && (times[k - 1] / target).ln().abs() < (times[k] / target).ln().abs() {
                k - 1
            } else {
                k
            }
        })
        .collect();
    out.dedup();
    out
}

/// `E N(T)` for two particles started `1/2` apart, against the
/// reflection-principle value `2 - 2 Phi(-gap / (2 sqrt(eps T)))`.
///
/// Discrete monitoring misses meetings between grid times, which biases the
/// count upwards by `O(sqrt(dt))`. Each replica runs on steps `config.dt` and
/// `config.dt / 4` with the same stream and contributes
/// `2 N(dt/4) - N(dt)`, removing the leading term.
pub fn cluster_count_test(config: &ExperimentConfig) -> Result<TestReport> {
    config.validate()?;
    if config.n != 2 {
        return Err(Error::InvalidConfig(
            "cluster count test needs n = 2".into(),
        ));
    }
    if config.epsilon <= 0.0 {
        return Err(Error::InvalidConfig(
            "cluster count test needs epsilon > 0".into(),
        ));
    }
    let started = Instant::now();
    let coarse = config.grid()?;
    let fine = TimeGrid::uniform(config.t_max, config.dt / 4.0)?;
    let count_on =
        |grid: &TimeGrid, stepper: &mut Stepper, rng: &mut crate::rng::StreamRng| -> Result<f64> {
            let mut state = FlowState::init_uniform(2, config.initial_convention)?;
            stepper.run(&mut state, grid, config.epsilon, None, rng, None, |_, s| {
                // two blocks can only become one
                if s.block_count() == 1 {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?;
            Ok(state.block_count() as f64)
        };
    let values = (0..config.replicas as u64)
        .into_par_iter()
        .map_init(Stepper::new, |stepper, r| {
            let a = count_on(&coarse, stepper, &mut replica_rng(config.master_seed, r))?;
            let b = count_on(&fine, stepper, &mut replica_rng(config.master_seed, r))?;
            Ok(2.0 * b - a)
        })
        .collect::<Result<Vec<f64>>>()?;
    let s = Summary::of(&values);
    let initial = FlowState::init_uniform(2, config.initial_convention)?;
    let gap = initial.blocks()[1].position - initial.blocks()[0].position;
    // the difference of the two positions has variance rate 4 eps
    let oracle = 2.0 - 2.0 * normal_cdf(-gap / (2.0 * (config.epsilon * config.t_max).sqrt()));
    Ok(TestReport::z(
        "two-particle cluster count",
        s.z_score(oracle),
        config.replicas,
        started,
    ))
}

/// Cross-variation of `y(u, .)` and `y(v, .)` before they meet, and exact
/// agreement afterwards.
///
/// The pre-meeting statistic sums `dy(u) dy(v)` over steps that end with `u`
/// and `v` still apart; its replica mean is judged by z-score. Returns two
/// reports: the z-score, and the number of replicas whose paths differ after
/// the meeting (band `[0, 0]`).
pub fn coalescence_battery(config: &ExperimentConfig, u: f64, v: f64) -> Result<Vec<TestReport>> {
    config.validate()?;
    if u > v {
        return Err(Error::InvalidArgument(format!(
            "need u <= v, got u={u}, v={v}"
        )));
    }
    let started = Instant::now();
    let grid = config.grid()?;
    let records = ensemble(config, |stepper, state, rng| {
        let ku = state.label_of(u)?;
        let kv = state.label_of(v)?;
        let mut before = (state.eval_at(u)?, state.eval_at(v)?);
        let mut met = ku == kv;
        let mut cross = 0.0;
        let mut split_after_meeting = false;
        stepper.run(state, &grid, config.epsilon, None, rng, None, |_, s| {
            let bu = s.block_index_of(ku);
            let bv = s.block_index_of(kv);
            let now = (s.blocks()[bu].position, s.blocks()[bv].position);
            if met {
                split_after_meeting |= now.0.to_bits() != now.1.to_bits();
            } else if bu == bv {
                met = true;
            } else {
                cross += (now.0 - before.0) * (now.1 - before.1);
            }
            before = now;
            ControlFlow::Continue(())
        })?;
        Ok((cross, split_after_meeting))
    })?;
    let crosses: Vec<f64> = records.iter().map(|r| r.0).collect();
    let split = records.iter().filter(|r| r.1).count();
    Ok(vec![
        TestReport::z(
            format!("pre-meeting cross-variation u={u} v={v}"),
            Summary::of(&crosses).z_score(0.0),
            config.replicas,
            started,
        ),
        TestReport::new(
            format!("post-meeting agreement u={u} v={v}"),
            split as f64,
            (0.0, 0.0),
            config.replicas,
            started,
        ),
    ])
}

/// One CSV record per `(time, block)`: `t,first,last,position,count`.
pub fn write_path_csv<W: Write>(path: &FlowPath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "first", "last", "position", "count"])?;
    for s in path.states() {
        let t = s.time().to_string();
        for b in s.blocks() {
            w.write_record([
                t.as_str(),
                &b.first.to_string(),
                &b.last.to_string(),
                &b.position.to_string(),
                &b.count().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// JSON mirror of the path: grid, states with their blocks, merge log.
pub fn path_to_json(path: &FlowPath) -> Result<String> {
    Ok(serde_json::to_string(path)?)
}
