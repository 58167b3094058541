//! Rate function, time rescaling, and Monte Carlo probes of the small-noise
//! asymptotics of the flow.

use std::io::Write;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::drift::DriftPath;
use crate::error::{Error, Result};
use crate::flow::{check_drift, FlowPath, FlowState, Stepper};
use crate::grid::TimeGrid;
use crate::observables::{
    l2_lambda_distance, quantile, wasserstein2, wasserstein2_to_uniform, AtomicMeasure,
    QuantileFunction,
};
use crate::rng::replica_rng;
use crate::stats::{linear_fit, Summary, WeightedEstimate};

/// `I(phi) = 1/2 sum_j dt_j sum_k (1/n) ((phi_{j+1,k} - phi_{j,k}) / dt_j)^2`.
///
/// Paths that do not start at the labels or fail to be nondecreasing in `u`
/// at some time get `f64::INFINITY`.
pub fn rate_function(phi: &DriftPath) -> f64 {
    if !phi.starts_at_labels() || !phi.is_nondecreasing_in_u() {
        return f64::INFINITY;
    }
    let n = phi.n() as f64;
    let grid = phi.grid();
    let mut acc = 0.0;
    for j in 0..grid.steps() {
        let sq: f64 = phi
            .value_row(j + 1)
            .iter()
            .zip(phi.value_row(j))
            .map(|(b, a)| (b - a) * (b - a))
            .sum();
        acc += sq / (n * grid.dt(j));
    }
    0.5 * acc
}

/// `y^eps(t) = y(eps t)` on `[0, T]`, read off a path simulated on `[0, T]`.
///
/// The rescaled path keeps the original states up to time `eps T` and divides
/// their times by `eps`; `eps T` must be a grid time. `eps = 0` gives the
/// initial state held constant on the original grid.
pub fn rescale(path: &FlowPath, eps: f64) -> Result<FlowPath> {
    let grid = path.grid();
    let horizon = grid.horizon();
    if !(eps.is_finite() && (0.0..=1.0).contains(&eps)) {
        return Err(Error::InvalidArgument(format!(
            "rescaling factor must lie in [0, 1], got {eps}"
        )));
    }
    if eps == 0.0 {
        let states = grid
            .times()
            .iter()
            .map(|&t| path.initial().at_time(t))
            .collect();
        return FlowPath::from_parts(grid.clone(), states, Vec::new());
    }
    let end = eps * horizon;
    let times = grid.times();
    let j = times.partition_point(|&t| t < end - 1e-9 * horizon);
    if j == 0 || j >= times.len() || (times[j] - end).abs() > 1e-9 * horizon {
        return Err(Error::GridMismatch(format!(
            "rescaled horizon {end} is not a grid time"
        )));
    }
    let mut new_times: Vec<f64> = times[..=j].iter().map(|t| t / eps).collect();
    new_times[j] = horizon;
    let new_grid = TimeGrid::new(new_times)?;
    let states = path.states()[..=j]
        .iter()
        .zip(new_grid.times())
        .map(|(s, &t)| s.at_time(t))
        .collect();
    let merges = path
        .merges()
        .iter()
        .filter(|m| m.step <= j)
        .copied()
        .collect();
    FlowPath::from_parts(new_grid, states, merges)
}

/// A closed quadratic-Wasserstein ball of probability measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    center: AtomicMeasure,
    center_quantile: QuantileFunction,
    radius: f64,
}

impl TargetSet {
    pub fn wasserstein_ball(center: AtomicMeasure, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be finite and non-negative, got {radius}"
            )));
        }
        let center_quantile = quantile(&center);
        Ok(TargetSet {
            center,
            center_quantile,
            radius,
        })
    }

    pub fn center(&self) -> &AtomicMeasure {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn distance_to(&self, measure: &AtomicMeasure) -> f64 {
        wasserstein2(&self.center, measure)
    }

    /// `d_W(measure, A)`.
    pub fn gap_from(&self, measure: &AtomicMeasure) -> f64 {
        (self.distance_to(measure) - self.radius).max(0.0)
    }

    pub fn contains(&self, measure: &AtomicMeasure) -> bool {
        self.distance_to(measure) <= self.radius
    }

    /// Whether the pushforward of `state` lies in the ball.
    pub fn contains_state(&self, state: &FlowState) -> bool {
        self.state_distance(state) <= self.radius
    }

    fn state_distance(&self, state: &FlowState) -> f64 {
        l2_lambda_distance(&QuantileFunction::from_state(state), &self.center_quantile)
    }

    /// Label-cell averages of the center's quantile function.
    fn center_cells(&self, n: usize) -> Vec<f64> {
        self.center_quantile.cell_averages(n)
    }

    /// Straight line from the labels to the center's quantile, reached at the
    /// grid horizon.
    pub fn center_tilt(&self, labels: &[f64], grid: &TimeGrid) -> Result<DriftPath> {
        DriftPath::straight_line(labels, grid, &self.center_cells(labels.len()))
    }

    /// Straight line from the labels to the nearest point of the ball (in
    /// label space), reached at the grid horizon. Frozen when the labels are
    /// already inside.
    pub fn entry_tilt(&self, labels: &[f64], grid: &TimeGrid) -> Result<DriftPath> {
        let g = self.center_cells(labels.len());
        let n = labels.len() as f64;
        let d = (labels
            .iter()
            .zip(&g)
            .map(|(u, c)| (c - u) * (c - u))
            .sum::<f64>()
            / n)
            .sqrt();
        if d <= self.radius {
            return DriftPath::frozen(labels, grid);
        }
        let s = 1.0 - self.radius / d;
        let target: Vec<f64> = labels
            .iter()
            .zip(&g)
            .map(|(u, c)| u + s * (c - u))
            .collect();
        DriftPath::straight_line(labels, grid, &target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaradhanRow {
    pub epsilon: f64,
    pub hits: usize,
    pub replicas: usize,
    pub probability: f64,
    pub log_probability: f64,
    /// `eps ln P`; `None` when no replica hit the target.
    pub estimate: Option<f64>,
    /// Delta-method standard error of `estimate`.
    pub std_error: Option<f64>,
}

impl VaradhanRow {
    pub fn estimable(&self) -> bool {
        self.estimate.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VaradhanReport {
    pub rows: Vec<VaradhanRow>,
    pub horizon: f64,
    pub tilted: bool,
    /// `-max(0, d_W(lambda_n, center) - radius)^2 / (2T)`.
    pub theoretical_rate: f64,
    /// `d_W(lambda_n, lambda)`.
    pub finite_n_bias: f64,
    /// Intercept of a least-squares line of `eps ln P` against `sqrt(eps)`.
    /// Heuristic: prefactor corrections are not controlled.
    pub extrapolated: Option<f64>,
    pub extrapolated_se: Option<f64>,
}

impl VaradhanReport {
    /// Estimates by decreasing `eps`, all present.
    pub fn estimates_by_decreasing_eps(&self) -> Option<Vec<f64>> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        rows.iter().map(|r| r.estimate).collect()
    }

    /// One line per `eps`, then `#`-prefixed footer lines with the
    /// theoretical rate, finite-n bias and the heuristic extrapolation.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record([
                "epsilon",
                "hits",
                "replicas",
                "probability",
                "eps_log_p",
                "std_error",
            ])?;
            for r in &self.rows {
                let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
                w.write_record([
                    r.epsilon.to_string(),
                    r.hits.to_string(),
                    r.replicas.to_string(),
                    r.probability.to_string(),
                    opt(r.estimate),
                    opt(r.std_error),
                ])?;
            }
            w.flush().map_err(|e| Error::io("<csv>", e))?;
        }
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let footer = format!(
            "# theoretical_rate={}\n# finite_n_bias={}\n# extrapolated_heuristic={}\n# extrapolated_se={}\n",
            self.theoretical_rate,
            self.finite_n_bias,
            opt(self.extrapolated),
            opt(self.extrapolated_se)
        );
        out.write_all(footer.as_bytes())
            .map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Estimate `P(mu_eps in A)` for each `eps`, where `mu_eps` is the
/// pushforward at time `eps T` of the unit-noise flow, realized as the flow
/// with noise `eps` on the config grid `[0, T]`.
///
/// With `tilt`, replicas run under the drift of `tilt` and are reweighted by
/// the exact likelihood ratio. Replica `r` uses stream `(seed, r)` for every
/// `eps`; `config.replicas` and `config.epsilon` are not used.
pub fn varadhan_sweep(
    target: &TargetSet,
    eps_list: &[f64],
    replicas: usize,
    config: &ExperimentConfig,
    tilt: Option<&DriftPath>,
    seed: u64,
) -> Result<VaradhanReport> {
    config.validate()?;
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    if let Some(&bad) = eps_list.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "noise scales must be positive, got {bad}"
        )));
    }
    let grid = config.grid()?;
    if let Some(h) = tilt {
        check_drift(h, config.n, &grid)?;
    }
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let log_weights = (0..replicas as u64)
            .into_par_iter()
            .map_init(Stepper::new, |stepper, r| {
                let mut rng = replica_rng(seed, r);
                let mut state = initial.clone();
                let tally = stepper.run(&mut state, &grid, eps, tilt, &mut rng, None, |_, _| {
                    ControlFlow::Continue(())
                })?;
                let log_m = match tilt {
                    Some(_) => (tally.pairing - 0.5 * tally.energy) / eps,
                    None => 0.0,
                };
                Ok(target.contains_state(&state).then_some(-log_m))
            })
            .collect::<Result<Vec<_>>>()?;
        let w = WeightedEstimate::from_log_weights(&log_weights);
        let estimable = w.hits > 0;
        rows.push(VaradhanRow {
            epsilon: eps,
            hits: w.hits,
            replicas,
            probability: w.estimate,
            log_probability: w.log_estimate,
            estimate: estimable.then_some(eps * w.log_estimate),
            std_error: estimable.then_some(eps * w.relative_error),
        });
    }
    let lambda_n = AtomicMeasure::uniform_grid(config.n, config.initial_convention)?;
    let horizon = grid.horizon();
    let gap = target.gap_from(&lambda_n);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.estimate.map(|e| (r.epsilon.sqrt(), e)))
        .unzip();
    let fit = (xs.len() >= 2).then(|| linear_fit(&xs, &ys));
    Ok(VaradhanReport {
        rows,
        horizon,
        tilted: tilt.is_some(),
        theoretical_rate: -gap * gap / (2.0 * horizon),
        finite_n_bias: wasserstein2_to_uniform(&lambda_n),
        extrapolated: fit.map(|f| f.intercept),
        extrapolated_se: fit.map(|f| f.intercept_se).filter(|s| s.is_finite()),
    })
}

/// A twice-differentiable test function given by `f`, `f'`, `f''`.
pub struct TestFunction {
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d2f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl TestFunction {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TestFunction {
            f: Box::new(f),
            df: Box::new(df),
            d2f: Box::new(d2f),
        }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(move |_| c, |_| 0.0, |_| 0.0)
    }

    /// `a x + b`.
    pub fn linear(a: f64, b: f64) -> Self {
        TestFunction::new(move |x| a * x + b, move |_| a, |_| 0.0)
    }

    /// `x^2`.
    pub fn square() -> Self {
        TestFunction::new(|x| x * x, |x| 2.0 * x, |_| 2.0)
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn first(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    pub fn second(&self, x: f64) -> f64 {
        (self.d2f)(x)
    }

    /// `<f, mu>` for the pushforward of `state`.
    fn integrate(&self, state: &FlowState) -> f64 {
        let n = state.n() as f64;
        state
            .blocks()
            .iter()
            .map(|b| b.count() as f64 * self.value(b.position))
            .sum::<f64>()
            / n
    }
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TestFunction")
    }
}

/// Left-point running sums along one path.
#[derive(Debug, Clone, Copy, Default)]
struct ProbeSums {
    start: f64,
    previous: f64,
    /// `<f, mu_t> - <f, mu_0>`.
    observable: f64,
    /// `int_0^t sum_{x in supp mu_s} f''(x) ds`.
    curvature: f64,
    /// `sum (d<f, mu>)^2`.
    empirical_qv: f64,
    /// `int_0^t <(f')^2, mu_s> ds`.
    predicted_qv: f64,
}

impl ProbeSums {
    fn start(f: &TestFunction, state: &FlowState) -> Self {
        let v = f.integrate(state);
        ProbeSums {
            start: v,
            previous: v,
            ..Default::default()
        }
    }

    fn update(&mut self, f: &TestFunction, before: &FlowState, dt: f64, after: &FlowState) {
        let n = before.n() as f64;
        for b in before.blocks() {
            let x = b.position;
            self.curvature += dt * f.second(x);
            self.predicted_qv += dt * b.count() as f64 / n * f.first(x).powi(2);
        }
        let v = f.integrate(after);
        self.empirical_qv += (v - self.previous).powi(2);
        self.previous = v;
        self.observable = v - self.start;
    }
}

/// Running generator-defect statistics of one unit-noise path, one entry
/// per grid time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorProbe {
    pub times: Vec<f64>,
    pub observable: Vec<f64>,
    pub curvature: Vec<f64>,
    pub empirical_qv: Vec<f64>,
    pub predicted_qv: Vec<f64>,
}

impl GeneratorProbe {
    /// `D_t = <f, mu_t> - <f, mu_0> - c int_0^t sum f''(x) ds`.
    pub fn defect(&self, c: f64) -> Vec<f64> {
        self.observable
            .iter()
            .zip(&self.curvature)
            .map(|(o, k)| o - c * k)
            .collect()
    }
}

pub fn generator_probe(path: &FlowPath, f: &TestFunction) -> GeneratorProbe {
    let mut sums = ProbeSums::start(f, path.initial());
    let mut probe = GeneratorProbe {
        times: path.times().to_vec(),
        observable: vec![0.0],
        curvature: vec![0.0],
        empirical_qv: vec![0.0],
        predicted_qv: vec![0.0],
    };
    for j in 0..path.steps() {
        sums.update(f, path.state(j), path.grid().dt(j), path.state(j + 1));
        probe.observable.push(sums.observable);
        probe.curvature.push(sums.curvature);
        probe.empirical_qv.push(sums.empirical_qv);
        probe.predicted_qv.push(sums.predicted_qv);
    }
    probe
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub constant: f64,
    pub mean_defect: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub replicas: usize,
    pub checks: Vec<ConstantCheck>,
    pub mean_empirical_qv: f64,
    pub mean_predicted_qv: f64,
    /// z-score of the paired difference of empirical and predicted QV.
    pub qv_z: f64,
    pub qv_pass: bool,
}

impl GeneratorReport {
    /// Constants whose terminal defect is statistically mean zero.
    pub fn passing_constants(&self) -> Vec<f64> {
        self.checks
            .iter()
            .filter(|c| c.pass)
            .map(|c| c.constant)
            .collect()
    }
}

/// Terminal defects `D_T` for `c = 1/2` and `c = 1` over `config.replicas`
/// unit-noise replicas (streams `(config.master_seed, r)`), each judged at
/// `|z| <= 3`.
pub fn generator_battery(config: &ExperimentConfig, f: &TestFunction) -> Result<GeneratorReport> {
    config.validate()?;
    if config.epsilon != 1.0 {
        return Err(Error::InvalidConfig(
            "the generator probe assumes unit noise (epsilon = 1)".into(),
        ));
    }
    let grid = config.grid()?;
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    let sums = (0..config.replicas as u64)
        .into_par_iter()
        .map_init(Stepper::new, |stepper, r| {
            let mut rng = replica_rng(config.master_seed, r);
            let mut state = initial.clone();
            let mut before = initial.clone();
            let mut sums = ProbeSums::start(f, &initial);
            stepper.run(&mut state, &grid, 1.0, None, &mut rng, None, |j, s| {
                sums.update(f, &before, grid.dt(j - 1), s);
                before.clone_from(s);
                ControlFlow::Continue(())
            })?;
            Ok(sums)
        })
        .collect::<Result<Vec<ProbeSums>>>()?;
    let checks = [0.5, 1.0]
        .iter()
        .map(|&c| {
            let d: Vec<f64> = sums
                .iter()
                .map(|s| s.observable - c * s.curvature)
                .collect();
            let s = Summary::of(&d);
            let z = s.z_score(0.0);
            ConstantCheck {
                constant: c,
                mean_defect: s.mean,
                std_error: s.std_error,
                z,
                pass: z.abs() <= 3.0,
            }
        })
        .collect();
    let diff: Vec<f64> = sums
        .iter()
        .map(|s| s.empirical_qv - s.predicted_qv)
        .collect();
    let qv_z = Summary::of(&diff).z_score(0.0);
    let mean = |g: fn(&ProbeSums) -> f64| sums.iter().map(g).sum::<f64>() / sums.len() as f64;
    Ok(GeneratorReport {
        replicas: config.replicas,
        checks,
        mean_empirical_qv: mean(|s| s.empirical_qv),
        mean_predicted_qv: mean(|s| s.predicted_qv),
        qv_z,
        qv_pass: qv_z.abs() <= 3.0,
    })
}
