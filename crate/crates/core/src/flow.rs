//! The finite system of coalescing heavy diffusion particles.
//!
//! `n` particles of mass `1/n` start on a grid in `[0, 1]`. A cluster of
//! `count` particles (mass `count/n`) diffuses with variance rate
//! `n/count`; clusters that touch merge for good. One step of the chain is an
//! Euler move of every block followed by a weighted pool-adjacent-violators
//! pass, which merges every adjacent pair whose proposals are out of order (or
//! tied) at their mass-weighted mean.

use std::ops::ControlFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InitialConvention};
use crate::drift::DriftPath;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{fill_standard_normal, replica_rng};

/// A maximal run of coalesced particles `first..=last` (1-based labels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub first: usize,
    pub last: usize,
    pub position: f64,
}

impl Block {
    pub fn count(&self) -> usize {
        self.last - self.first + 1
    }
}

/// The step function `u -> y(u, t)` of a finite flow at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    n: usize,
    time: f64,
    blocks: Vec<Block>,
}

/// One standard normal draw per current block.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(pub Vec<f64>);

impl NoiseVector {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        let mut buf = Vec::with_capacity(len);
        fill_standard_normal(rng, &mut buf, len);
        NoiseVector(buf)
    }
}

/// The block starting at label `absorbed` joined the block starting at
/// `survivor`; first visible in state `step` of the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub step: usize,
    pub survivor: usize,
    pub absorbed: usize,
}

impl FlowState {
    /// `n` singleton blocks at time zero.
    pub fn init_uniform(n: usize, convention: InitialConvention) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let blocks = (1..=n)
            .map(|k| Block {
                first: k,
                last: k,
                position: convention.position(k, n),
            })
            .collect();
        Ok(FlowState {
            n,
            time: 0.0,
            blocks,
        })
    }

    /// Assemble a state from explicit blocks, checking every invariant.
    pub fn from_blocks(n: usize, blocks: Vec<Block>, time: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if n == 0 || blocks.is_empty() {
            return bad("a state needs n >= 1 and at least one block".into());
        }
        let mut next = 1;
        for (i, b) in blocks.iter().enumerate() {
            if b.first != next || b.last < b.first {
                return bad(format!("block {i} does not continue the label partition"));
            }
            if !b.position.is_finite() {
                return Err(Error::NonFinite(format!("position of block {i}")));
            }
            if i > 0 && blocks[i - 1].position >= b.position {
                return bad(format!("block positions not strictly increasing at {i}"));
            }
            next = b.last + 1;
        }
        if next != n + 1 {
            return bad(format!("blocks cover {} labels, expected {n}", next - 1));
        }
        Ok(FlowState { n, time, blocks })
    }

    /// The same configuration stamped with another time.
    pub fn at_time(&self, time: f64) -> FlowState {
        FlowState {
            time,
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn mass(&self, block: &Block) -> f64 {
        block.count() as f64 / self.n as f64
    }

    /// Index of the block holding the 1-based label `k`.
    pub fn block_index_of(&self, k: usize) -> usize {
        debug_assert!((1..=self.n).contains(&k));
        self.blocks.partition_point(|b| b.last < k)
    }

    /// Label `floor(u n) + 1` for `u < 1`, `n` for `u = 1`.
    pub fn label_of(&self, u: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("u = {u} outside [0, 1]")));
        }
        Ok(((u * self.n as f64).floor() as usize + 1).min(self.n))
    }

    /// `y(u, t)`: position of the block containing label `u`.
    pub fn eval_at(&self, u: f64) -> Result<f64> {
        let k = self.label_of(u)?;
        Ok(self.blocks[self.block_index_of(k)].position)
    }

    /// `m(u, t)`: mass of the block containing label `u`.
    pub fn mass_at(&self, u: f64) -> Result<f64> {
        let k = self.label_of(u)?;
        Ok(self.mass(&self.blocks[self.block_index_of(k)]))
    }

    /// Position of every particle, indexed by label `1..=n` (at `k - 1`).
    pub fn positions(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        self.write_positions(&mut out);
        out
    }

    pub(crate) fn write_positions(&self, out: &mut Vec<f64>) {
        out.clear();
        for b in &self.blocks {
            out.extend(std::iter::repeat_n(b.position, b.count()));
        }
    }

    /// `int_0^1 y(u, t) du`.
    pub fn center_of_mass(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.count() as f64 * b.position)
            .sum::<f64>()
            / self.n as f64
    }

    /// One step driven by explicit noise: each block proposes
    /// `x + sqrt(dt n / count) xi`, then adjacent violators are pooled.
    pub fn step(&self, dt: f64, noise: &NoiseVector) -> Result<FlowState> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if noise.0.len() != self.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "noise has {} entries for {} blocks",
                noise.0.len(),
                self.blocks.len()
            )));
        }
        if noise.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("noise vector".into()));
        }
        let mut next = self.clone();
        next.advance(dt, 1.0, None, &noise.0, &mut Vec::new(), None, 0);
        Ok(next)
    }

    /// Pool explicit proposed block positions and advance time by `dt`.
    pub fn apply_proposals(&self, proposals: &[f64], dt: f64) -> Result<FlowState> {
        if proposals.len() != self.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} proposals for {} blocks",
                proposals.len(),
                self.blocks.len()
            )));
        }
        if proposals.iter().any(|p| !p.is_finite()) || !dt.is_finite() {
            return Err(Error::NonFinite("proposals".into()));
        }
        let mut next = self.clone();
        for (b, &p) in next.blocks.iter_mut().zip(proposals) {
            b.position = p;
        }
        next.pool(&mut Vec::new(), None, 0);
        next.time += dt;
        Ok(next)
    }

    /// In-place step. `drift` holds one (already block-averaged) drift per
    /// block. Returns the pairing `sum m_b a_b (p_b - x_b)` and energy
    /// `sum m_b a_b^2 dt` of the drift against the proposal increments.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance(
        &mut self,
        dt: f64,
        epsilon: f64,
        drift: Option<&[f64]>,
        noise: &[f64],
        sums: &mut Vec<f64>,
        merges: Option<&mut Vec<Merge>>,
        step: usize,
    ) -> (f64, f64) {
        let n = self.n as f64;
        let base = epsilon * dt * n;
        let mut pairing = 0.0;
        let mut energy = 0.0;
        match drift {
            None => {
                for (b, xi) in self.blocks.iter_mut().zip(noise) {
                    let scale = (base / b.count() as f64).sqrt();
                    b.position += scale * xi;
                }
            }
            Some(drift) => {
                for ((b, xi), a) in self.blocks.iter_mut().zip(noise).zip(drift) {
                    let c = b.count() as f64;
                    let scale = (base / c).sqrt();
                    let increment = a * dt + scale * xi;
                    b.position += increment;
                    let m = c / n;
                    pairing += m * a * increment;
                    energy += m * a * a * dt;
                }
            }
        }
        self.pool(sums, merges, step);
        self.time += dt;
        (pairing, energy)
    }

    /// Weighted PAVA over current block positions, in place.
    fn pool(&mut self, sums: &mut Vec<f64>, mut merges: Option<&mut Vec<Merge>>, step: usize) {
        sums.clear();
        let len = self.blocks.len();
        let mut w = 0;
        for i in 0..len {
            let mut cur = self.blocks[i];
            let mut cur_count = cur.count();
            let mut cur_sum = cur_count as f64 * cur.position;
            while w > 0 && self.blocks[w - 1].position >= cur.position {
                let prev = self.blocks[w - 1];
                if let Some(m) = merges.as_deref_mut() {
                    m.push(Merge {
                        step,
                        survivor: prev.first,
                        absorbed: cur.first,
                    });
                }
                cur_sum += sums[w - 1];
                cur_count += prev.count();
                cur.first = prev.first;
                cur.position = cur_sum / cur_count as f64;
                w -= 1;
                sums.pop();
            }
            self.blocks[w] = cur;
            sums.push(cur_sum);
            w += 1;
        }
        self.blocks.truncate(w);
    }
}

/// A flow sampled on a time grid, with its coalescence record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPath {
    grid: TimeGrid,
    states: Vec<FlowState>,
    merges: Vec<Merge>,
}

impl FlowPath {
    pub fn from_parts(grid: TimeGrid, states: Vec<FlowState>, merges: Vec<Merge>) -> Result<Self> {
        if states.len() != grid.times().len() {
            return Err(Error::GridMismatch(format!(
                "{} states for {} grid times",
                states.len(),
                grid.times().len()
            )));
        }
        if states.windows(2).any(|w| w[0].n != w[1].n) {
            return Err(Error::InvalidArgument("states disagree on n".into()));
        }
        Ok(FlowPath {
            grid,
            states,
            merges,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn states(&self) -> &[FlowState] {
        &self.states
    }

    pub fn state(&self, j: usize) -> &FlowState {
        &self.states[j]
    }

    pub fn initial(&self) -> &FlowState {
        &self.states[0]
    }

    pub fn last(&self) -> &FlowState {
        self.states.last().expect("a path has at least one state")
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n(&self) -> usize {
        self.states[0].n
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// First state index at which labels `u` and `v` share a block (the
    /// grid-resolved meeting time), or `None` if they never meet.
    pub fn meeting_index(&self, u: f64, v: f64) -> Result<Option<usize>> {
        let ku = self.states[0].label_of(u)?;
        let kv = self.states[0].label_of(v)?;
        let together = |s: &FlowState| s.block_index_of(ku) == s.block_index_of(kv);
        // coalescence is permanent, so "together" is monotone along the path
        let j = self.states.partition_point(|s| !together(s));
        Ok((j < self.states.len()).then_some(j))
    }

    /// `t -> m(u, t)` on the grid.
    pub fn mass_history(&self, u: f64) -> Result<Vec<f64>> {
        self.states.iter().map(|s| s.mass_at(u)).collect()
    }
}

/// Running drift/proposal tallies of a driven run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TiltTally {
    /// `sum_j (h_j, proposal increment_j)`.
    pub pairing: f64,
    /// `sum_j ||pr h_j||^2 dt_j`.
    pub energy: f64,
}

/// Reusable buffers for driving many replicas.
#[derive(Debug, Default)]
pub struct Stepper {
    noise: Vec<f64>,
    sums: Vec<f64>,
    drift: Vec<f64>,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drive `state` across `grid` with noise scale `epsilon` and optional
    /// projected drift. `visit` sees each new state with its grid index and
    /// may stop the run early.
    #[allow(clippy::too_many_arguments)]
    pub fn run<R, F>(
        &mut self,
        state: &mut FlowState,
        grid: &TimeGrid,
        epsilon: f64,
        drift: Option<&DriftPath>,
        rng: &mut R,
        mut merges: Option<&mut Vec<Merge>>,
        mut visit: F,
    ) -> Result<TiltTally>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &FlowState) -> ControlFlow<()>,
    {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise scale must be non-negative, got {epsilon}"
            )));
        }
        if let Some(d) = drift {
            check_drift(d, state.n, grid)?;
        }
        let mut tally = TiltTally::default();
        for j in 0..grid.steps() {
            let dt = grid.dt(j);
            fill_standard_normal(rng, &mut self.noise, state.blocks.len());
            let block_drift = match drift {
                Some(d) => {
                    block_averages(state, d.rate_row(j), &mut self.drift);
                    Some(self.drift.as_slice())
                }
                None => None,
            };
            let (p, e) = state.advance(
                dt,
                epsilon,
                block_drift,
                &self.noise,
                &mut self.sums,
                merges.as_deref_mut(),
                j + 1,
            );
            // keep grid times exact rather than accumulated
            state.time = grid.times()[j + 1];
            tally.pairing += p;
            tally.energy += e;
            if visit(j + 1, state).is_break() {
                break;
            }
        }
        Ok(tally)
    }

    /// Drive and record every state.
    pub fn record<R: Rng + ?Sized>(
        &mut self,
        initial: FlowState,
        grid: &TimeGrid,
        epsilon: f64,
        drift: Option<&DriftPath>,
        rng: &mut R,
    ) -> Result<(FlowPath, TiltTally)> {
        let mut states = Vec::with_capacity(grid.times().len());
        states.push(initial.clone());
        let mut merges = Vec::new();
        let mut state = initial;
        let tally = self.run(
            &mut state,
            grid,
            epsilon,
            drift,
            rng,
            Some(&mut merges),
            |_, s| {
                states.push(s.clone());
                ControlFlow::Continue(())
            },
        )?;
        Ok((
            FlowPath {
                grid: grid.clone(),
                states,
                merges,
            },
            tally,
        ))
    }
}

pub(crate) fn check_drift(drift: &DriftPath, n: usize, grid: &TimeGrid) -> Result<()> {
    if drift.n() != n {
        return Err(Error::GridMismatch(format!(
            "drift has {} labels, flow has {n} particles",
            drift.n()
        )));
    }
    if drift.grid() != grid {
        return Err(Error::GridMismatch(
            "drift time grid differs from the simulation grid".into(),
        ));
    }
    Ok(())
}

/// Mass-weighted mean of a per-label row over each block.
pub(crate) fn block_averages(state: &FlowState, row: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(state.blocks.iter().map(|b| {
        let slice = &row[b.first - 1..b.last];
        slice.iter().sum::<f64>() / slice.len() as f64
    }));
}

/// Simulate one path of the flow on the config's uniform grid.
///
/// The random stream is `(seed, 0)`; identical inputs give bit-identical paths.
pub fn simulate_path(config: &ExperimentConfig, seed: u64) -> Result<FlowPath> {
    let grid = config.grid()?;
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    let mut rng = replica_rng(seed, 0);
    let (path, _) = Stepper::new().record(initial, &grid, 1.0, None, &mut rng)?;
    Ok(path)
}

/// Replica `r` of an ensemble: stream `(config.master_seed, r)`, noise scale
/// `config.epsilon`.
pub fn simulate_replica(config: &ExperimentConfig, replica: u64) -> Result<FlowPath> {
    let grid = config.grid()?;
    let initial = FlowState::init_uniform(config.n, config.initial_convention)?;
    let mut rng = replica_rng(config.master_seed, replica);
    let (path, _) = Stepper::new().record(initial, &grid, config.epsilon, None, &mut rng)?;
    Ok(path)
}
