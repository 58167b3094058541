//! Discrete stochastic calculus against the flow.
//!
//! Functions of the label `u` are represented by their values on the `n`
//! label cells (the flow is itself constant on those cells), so every
//! `L2(lambda)` pairing is an exact weighted sum.

use std::io::Write;

use serde::Serialize;

use crate::drift::DriftPath;
use crate::error::{Error, Result};
use crate::flow::{FlowPath, FlowState};

/// A function of the label, constant on each of the `n` cells
/// `((k-1)/n, k/n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "grid function needs n >= 1 values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function values".into()));
        }
        Ok(GridFunction { values })
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        GridFunction::new(vec![c; n])
    }

    /// Sample `f` at each label.
    pub fn from_labels(labels: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        GridFunction::new(labels.iter().map(|&u| f(u)).collect())
    }

    /// `u -> y(u, t)` of a state.
    pub fn from_state(state: &FlowState) -> Self {
        GridFunction {
            values: state.positions(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(f, g)_{L2(lambda)}`.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        inner(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn distance(&self, other: &GridFunction) -> f64 {
        let n = self.n() as f64;
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

fn check_n(f: &GridFunction, n: usize) -> Result<()> {
    if f.n() != n {
        return Err(Error::GridMismatch(format!(
            "function on {} cells, flow on {n}",
            f.n()
        )));
    }
    Ok(())
}

/// `pr_{y(t)} f`: the block-wise mean of `f` over the partition of `state`.
pub fn project(state: &FlowState, f: &GridFunction) -> Result<GridFunction> {
    check_n(f, state.n())?;
    let mut values = Vec::with_capacity(f.n());
    for b in state.blocks() {
        let slice = &f.values[b.first - 1..b.last];
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        values.extend(std::iter::repeat_n(mean, slice.len()));
    }
    Ok(GridFunction { values })
}

/// `||pr_{y(t)} f||^2` without materializing the projection.
pub(crate) fn projected_norm_sq(state: &FlowState, f: &[f64]) -> f64 {
    let n = state.n() as f64;
    state
        .blocks()
        .iter()
        .map(|b| {
            let slice = &f[b.first - 1..b.last];
            let s: f64 = slice.iter().sum();
            s * s / (slice.len() as f64 * n)
        })
        .sum()
}

/// `(pr f, pr g)` over the partition of `state`.
pub(crate) fn projected_inner(state: &FlowState, f: &[f64], g: &[f64]) -> f64 {
    let n = state.n() as f64;
    state
        .blocks()
        .iter()
        .map(|b| {
            let sf: f64 = f[b.first - 1..b.last].iter().sum();
            let sg: f64 = g[b.first - 1..b.last].iter().sum();
            sf * sg / (b.count() as f64 * n)
        })
        .sum()
}

/// `pr_g f` for an arbitrary grid function `g`: conditional expectation of
/// `f` given the level sets of `g`.
pub fn project_onto_levels(g: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    check_n(f, g.n())?;
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.sort_by(|&a, &b| g.values[a].total_cmp(&g.values[b]));
    let mut out = vec![0.0; g.n()];
    let mut start = 0;
    while start < order.len() {
        let level = g.values[order[start]];
        let end = start + order[start..].partition_point(|&i| g.values[i] == level);
        let group = &order[start..end];
        let mean = group.iter().map(|&i| f.values[i]).sum::<f64>() / group.len() as f64;
        for &i in group {
            out[i] = mean;
        }
        start = end;
    }
    Ok(GridFunction { values: out })
}

/// A piecewise-constant-in-time integrand: piece `i` is active on grid steps
/// `switches[i] .. switches[i+1]` (the last piece runs to the end).
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleProcess {
    switches: Vec<usize>,
    pieces: Vec<GridFunction>,
}

impl SimpleProcess {
    pub fn new(switches: Vec<usize>, pieces: Vec<GridFunction>) -> Result<Self> {
        if switches.is_empty() || switches.len() != pieces.len() {
            return Err(Error::InvalidArgument(format!(
                "{} switch times for {} pieces",
                switches.len(),
                pieces.len()
            )));
        }
        if switches[0] != 0 {
            return Err(Error::InvalidArgument(
                "first switch must be at grid index 0".into(),
            ));
        }
        if switches.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "switch indices must increase".into(),
            ));
        }
        let n = pieces[0].n();
        if pieces.iter().any(|p| p.n() != n) {
            return Err(Error::GridMismatch("pieces differ in cell count".into()));
        }
        Ok(SimpleProcess { switches, pieces })
    }

    /// Time-constant integrand.
    pub fn constant(f: GridFunction) -> Self {
        SimpleProcess {
            switches: vec![0],
            pieces: vec![f],
        }
    }

    /// Integrand built from the path's own history: piece `i` is computed
    /// from the state at `switches[i]`, so it is adapted by construction.
    pub fn adapted(
        path: &FlowPath,
        switches: Vec<usize>,
        mut build: impl FnMut(usize, &FlowState) -> GridFunction,
    ) -> Result<Self> {
        if let Some(&last) = switches.last() {
            if last > path.steps() {
                return Err(Error::GridMismatch(format!(
                    "switch index {last} beyond the path's {} steps",
                    path.steps()
                )));
            }
        }
        let pieces = switches.iter().map(|&j| build(j, path.state(j))).collect();
        SimpleProcess::new(switches, pieces)
    }

    pub fn n(&self) -> usize {
        self.pieces[0].n()
    }

    pub fn switches(&self) -> &[usize] {
        &self.switches
    }

    /// Piece in force on step `j -> j+1`.
    pub fn piece_at(&self, j: usize) -> &GridFunction {
        let i = self.switches.partition_point(|&s| s <= j) - 1;
        &self.pieces[i]
    }
}

/// Running stochastic integral and its predicted quadratic variation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub qv: Vec<f64>,
}

impl IntegralPath {
    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("integral path is never empty")
    }

    pub fn final_qv(&self) -> f64 {
        *self.qv.last().expect("integral path is never empty")
    }

    /// CSV with header `t,I,QV`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "I", "QV"])?;
        for ((t, i), q) in self.times.iter().zip(&self.values).zip(&self.qv) {
            w.write_record([t.to_string(), i.to_string(), q.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_process(path: &FlowPath, f: &SimpleProcess) -> Result<()> {
    check_n(&f.pieces[0], path.n())?;
    if let Some(&last) = f.switches.last() {
        if last > path.steps() {
            return Err(Error::GridMismatch(format!(
                "switch index {last} beyond the path's {} steps",
                path.steps()
            )));
        }
    }
    Ok(())
}

/// `I_t(f) = int_0^t (f(s), dy(s))` with left-point sums, plus
/// `int_0^t ||pr_{y(s)} f(s)||^2 ds` accumulated on the same grid.
pub fn integrate_simple(path: &FlowPath, f: &SimpleProcess) -> Result<IntegralPath> {
    check_process(path, f)?;
    let steps = path.steps();
    let mut values = Vec::with_capacity(steps + 1);
    let mut qv = Vec::with_capacity(steps + 1);
    values.push(0.0);
    qv.push(0.0);
    let (mut integral, mut variation) = (0.0, 0.0);
    let mut before = Vec::new();
    let mut after = Vec::new();
    path.state(0).write_positions(&mut before);
    for j in 0..steps {
        let phi = f.piece_at(j).values();
        path.state(j + 1).write_positions(&mut after);
        let increment: f64 = phi
            .iter()
            .zip(after.iter().zip(&before))
            .map(|(p, (a, b))| p * (a - b))
            .sum::<f64>()
            / phi.len() as f64;
        integral += increment;
        variation += path.grid().dt(j) * projected_norm_sq(path.state(j), phi);
        values.push(integral);
        qv.push(variation);
        std::mem::swap(&mut before, &mut after);
    }
    Ok(IntegralPath {
        times: path.times().to_vec(),
        values,
        qv,
    })
}

/// `int_0^T (pr f(s), pr g(s)) ds`: the predicted mutual variation of
/// `I(f)` and `I(g)`.
pub fn predicted_covariation(path: &FlowPath, f: &SimpleProcess, g: &SimpleProcess) -> Result<f64> {
    check_process(path, f)?;
    check_process(path, g)?;
    Ok((0..path.steps())
        .map(|j| {
            path.grid().dt(j)
                * projected_inner(
                    path.state(j),
                    f.piece_at(j).values(),
                    g.piece_at(j).values(),
                )
        })
        .sum())
}

/// Largest `|y(u, 0) + I_t(k_u) - y(u, t)|` over the grid, where
/// `k_u(s) = 1_{pi(u, s-)} / m(u, s-)` is built from the path's partitions.
///
/// In the continuum `y(u, 0) = u`; on the discrete grid the particle's own
/// starting point is used.
pub fn self_representation_check(path: &FlowPath, u: f64) -> Result<f64> {
    let k = path.initial().label_of(u)?;
    let n = path.n();
    let switches: Vec<usize> = (0..path.steps().max(1)).collect();
    let kernel = SimpleProcess::adapted(path, switches, |_, state| {
        let b = state.blocks()[state.block_index_of(k)];
        let mass = b.count() as f64 / n as f64;
        let mut values = vec![0.0; n];
        values[b.first - 1..b.last].fill(1.0 / mass);
        GridFunction { values }
    })?;
    let integral = integrate_simple(path, &kernel)?;
    let start = path.initial().eval_at(u)?;
    let mut defect = 0.0f64;
    for (state, i) in path.states().iter().zip(&integral.values) {
        defect = defect.max((start + i - state.eval_at(u)?).abs());
    }
    Ok(defect)
}

/// `| int (f, dy) - [(f(T), y(T)) - (f(0), y(0)) - int (f', y) ds] |`
/// with left-point sums on the path grid; `f` and `f'` are the values and
/// rates of a [`DriftPath`] on the same grid.
pub fn integration_by_parts_check(path: &FlowPath, f: &DriftPath) -> Result<f64> {
    if f.n() != path.n() {
        return Err(Error::GridMismatch(format!(
            "f has {} labels, path has {}",
            f.n(),
            path.n()
        )));
    }
    if f.grid() != path.grid() {
        return Err(Error::GridMismatch(
            "f and path use different time grids".into(),
        ));
    }
    let steps = path.steps();
    let mut lhs = 0.0;
    let mut drift_term = 0.0;
    let mut before = Vec::new();
    let mut after = Vec::new();
    path.state(0).write_positions(&mut before);
    let y0 = before.clone();
    for j in 0..steps {
        path.state(j + 1).write_positions(&mut after);
        let fj = f.value_row(j);
        lhs += fj
            .iter()
            .zip(after.iter().zip(&before))
            .map(|(p, (a, b))| p * (a - b))
            .sum::<f64>()
            / fj.len() as f64;
        drift_term += path.grid().dt(j) * inner(f.rate_row(j), &before);
        std::mem::swap(&mut before, &mut after);
    }
    let rhs = inner(f.value_row(steps), &before) - inner(f.value_row(0), &y0) - drift_term;
    Ok((lhs - rhs).abs())
}

/// `||pr_{g_k} f - f||_{L2(lambda)}` for each perturbation `g_k`.
pub fn projection_continuity_probe(
    g: &GridFunction,
    perturbations: &[GridFunction],
    f: &GridFunction,
) -> Result<Vec<f64>> {
    check_n(f, g.n())?;
    perturbations
        .iter()
        .map(|gk| {
            check_n(gk, g.n())?;
            Ok(project_onto_levels(gk, f)?.distance(f))
        })
        .collect()
}
