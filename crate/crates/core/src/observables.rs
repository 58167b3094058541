//! Measure-valued view of the flow.
//!
//! A monotone step function `u -> y(u)` on `[0, 1]` and the atomic measure
//! `y_# lambda` determine each other through the quantile function, and the
//! quadratic Wasserstein distance between two such measures is the
//! `L2([0, 1])` distance between their quantile functions. Every distance here
//! is computed exactly by merging breakpoints; there is no quadrature.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::InitialConvention;
use crate::error::{Error, Result};
use crate::flow::FlowState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub weight: f64,
}

/// A finitely supported probability measure on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Atom>", into = "Vec<Atom>")]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl AtomicMeasure {
    /// Sorts atoms, merges atoms at identical positions and checks that the
    /// weights are positive and sum to one.
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument(
                "a measure needs at least one atom".into(),
            ));
        }
        for a in &atoms {
            if !a.position.is_finite() || !a.weight.is_finite() {
                return Err(Error::NonFinite("atom position or weight".into()));
            }
            if a.weight <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "atom at {} has non-positive weight {}",
                    a.position, a.weight
                )));
            }
        }
        atoms.sort_by(|a, b| a.position.total_cmp(&b.position));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.position == a.position => last.weight += a.weight,
                _ => merged.push(a),
            }
        }
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(AtomicMeasure { atoms: merged })
    }

    /// Like [`AtomicMeasure::new`] but rescales the weights to sum to one.
    pub fn normalized(mut atoms: Vec<Atom>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize total weight {total}"
            )));
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        AtomicMeasure::new(atoms)
    }

    pub fn dirac(position: f64) -> Result<Self> {
        AtomicMeasure::new(vec![Atom {
            position,
            weight: 1.0,
        }])
    }

    /// The discretized uniform law `lambda_n`: `n` atoms of weight `1/n` at
    /// the initial particle positions.
    pub fn uniform_grid(n: usize, convention: InitialConvention) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let w = 1.0 / n as f64;
        AtomicMeasure::new(
            convention
                .labels(n)
                .into_iter()
                .map(|position| Atom {
                    position,
                    weight: w,
                })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.position * a.weight).sum()
    }

    /// `<f, mu> = sum_x f(x) mu({x})`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.position)).sum()
    }

    /// Every atom moved by `shift`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        AtomicMeasure::new(
            self.atoms
                .iter()
                .map(|a| Atom {
                    position: a.position + shift,
                    weight: a.weight,
                })
                .collect(),
        )
    }

    /// CSV with header `position,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for a in &self.atoms {
            w.serialize(a)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let atoms = r
            .deserialize()
            .collect::<std::result::Result<Vec<Atom>, _>>()?;
        AtomicMeasure::new(atoms)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        AtomicMeasure::read_csv(file)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl TryFrom<Vec<Atom>> for AtomicMeasure {
    type Error = Error;

    fn try_from(atoms: Vec<Atom>) -> Result<Self> {
        AtomicMeasure::new(atoms)
    }
}

impl From<AtomicMeasure> for Vec<Atom> {
    fn from(m: AtomicMeasure) -> Self {
        m.atoms
    }
}

/// A nondecreasing right-continuous step function on `[0, 1]`.
///
/// Breakpoint `(theta_i, v_i)` means the function equals `v_i` on
/// `[theta_{i-1}, theta_i)` (with `theta_{-1} = 0`); the last threshold is 1
/// and the last value also holds at `u = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFunction {
    breakpoints: Vec<(f64, f64)>,
}

impl QuantileFunction {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        let Some(&(last, _)) = breakpoints.last() else {
            return bad("a step function needs at least one piece");
        };
        if last != 1.0 {
            return bad("last threshold must be 1");
        }
        if breakpoints[0].0 <= 0.0 {
            return bad("thresholds must be positive");
        }
        if breakpoints
            .iter()
            .any(|(t, v)| !t.is_finite() || !v.is_finite())
        {
            return Err(Error::NonFinite("step function breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("thresholds must be strictly increasing");
        }
        if breakpoints.windows(2).any(|w| w[1].1 < w[0].1) {
            return bad("values must be nondecreasing");
        }
        Ok(QuantileFunction { breakpoints })
    }

    pub fn constant(value: f64) -> Result<Self> {
        QuantileFunction::new(vec![(1.0, value)])
    }

    /// `u -> y(u, t)` of a flow state, with thresholds at `last/n`.
    pub fn from_state(state: &FlowState) -> Self {
        let n = state.n() as f64;
        let mut breakpoints: Vec<(f64, f64)> = state
            .blocks()
            .iter()
            .map(|b| (b.last as f64 / n, b.position))
            .collect();
        breakpoints.last_mut().expect("state has a block").0 = 1.0;
        QuantileFunction { breakpoints }
    }

    /// Step function taking `values[k]` on the `k`-th of `n` equal cells.
    /// Equal neighbours are kept as separate pieces.
    pub fn from_cells(values: &[f64]) -> Result<Self> {
        let n = values.len() as f64;
        let mut bps: Vec<(f64, f64)> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| ((k + 1) as f64 / n, v))
            .collect();
        if let Some(last) = bps.last_mut() {
            last.0 = 1.0;
        }
        QuantileFunction::new(bps)
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// `(lo, hi, value)` for each piece.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let mut lo = 0.0;
        self.breakpoints.iter().map(move |&(hi, v)| {
            let piece = (lo, hi, v);
            lo = hi;
            piece
        })
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("u = {u} outside [0, 1]")));
        }
        let i = self.breakpoints.partition_point(|&(t, _)| t <= u);
        Ok(self.breakpoints[i.min(self.breakpoints.len() - 1)].1)
    }

    /// Mean value over each of `n` equal cells, i.e. the `L2` projection onto
    /// functions constant on the particle grid.
    pub fn cell_averages(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut pieces = self.pieces().peekable();
        for k in 0..n {
            let lo = k as f64 / n as f64;
            let hi = if k + 1 == n {
                1.0
            } else {
                (k + 1) as f64 / n as f64
            };
            let mut acc = 0.0;
            while let Some(&(plo, phi, v)) = pieces.peek() {
                let a = plo.max(lo);
                let b = phi.min(hi);
                if b > a {
                    acc += (b - a) * v;
                }
                if phi <= hi {
                    pieces.next();
                } else {
                    break;
                }
            }
            out.push(acc / (hi - lo));
        }
        out
    }
}

/// Walk the common refinement of two step functions.
fn merged_pieces(
    f: &QuantileFunction,
    g: &QuantileFunction,
    mut visit: impl FnMut(f64, f64, f64, f64),
) {
    let (a, b) = (&f.breakpoints, &g.breakpoints);
    let (mut i, mut j) = (0, 0);
    let mut lo = 0.0;
    while i < a.len() && j < b.len() {
        let hi = a[i].0.min(b[j].0);
        if hi > lo {
            visit(lo, hi, a[i].1, b[j].1);
        }
        lo = hi;
        if a[i].0 == hi {
            i += 1;
        }
        if b[j].0 == hi {
            j += 1;
        }
    }
}

/// `mu_t = y(., t)_# lambda`: one atom per block with weight `count/n`.
pub fn pushforward(state: &FlowState) -> AtomicMeasure {
    let n = state.n() as f64;
    // block positions are strictly increasing, so no consolidation is needed
    AtomicMeasure {
        atoms: state
            .blocks()
            .iter()
            .map(|b| Atom {
                position: b.position,
                weight: b.count() as f64 / n,
            })
            .collect(),
    }
}

/// Right-continuous inverse CDF.
pub fn quantile(measure: &AtomicMeasure) -> QuantileFunction {
    let mut cumulative = 0.0;
    let mut breakpoints: Vec<(f64, f64)> = measure
        .atoms
        .iter()
        .map(|a| {
            cumulative += a.weight;
            (cumulative, a.position)
        })
        .collect();
    breakpoints.last_mut().expect("measure has an atom").0 = 1.0;
    // rounding in the running sum can only tie thresholds for tiny weights
    breakpoints.dedup_by(|next, prev| next.0 <= prev.0);
    QuantileFunction { breakpoints }
}

pub fn l2_lambda_distance(f: &QuantileFunction, g: &QuantileFunction) -> f64 {
    let mut acc = 0.0;
    merged_pieces(f, g, |lo, hi, a, b| acc += (hi - lo) * (a - b) * (a - b));
    acc.sqrt()
}

/// Weight `kappa(u) = u^beta` on `[0, 1/2]`, `(1-u)^beta` on `(1/2, 1]`.
pub fn kappa(u: f64, beta: f64) -> f64 {
    if u <= 0.5 {
        u.powf(beta)
    } else {
        (1.0 - u).powf(beta)
    }
}

/// Antiderivative of `kappa` vanishing at 0.
fn kappa_antiderivative(u: f64, beta: f64) -> f64 {
    let b1 = beta + 1.0;
    if u <= 0.5 {
        u.powf(b1) / b1
    } else {
        (2.0 * 0.5f64.powf(b1) - (1.0 - u).powf(b1)) / b1
    }
}

/// `int_lo^hi kappa(u) du`.
pub fn kappa_integral(lo: f64, hi: f64, beta: f64) -> f64 {
    kappa_antiderivative(hi, beta) - kappa_antiderivative(lo, beta)
}

/// `L2(mu)` distance with `mu(du) = kappa(u) du`.
pub fn l2_mu_distance(f: &QuantileFunction, g: &QuantileFunction, beta: f64) -> f64 {
    let mut acc = 0.0;
    merged_pieces(f, g, |lo, hi, a, b| {
        acc += kappa_integral(lo, hi, beta) * (a - b) * (a - b)
    });
    acc.sqrt()
}

/// `mu` mass of each of the `n` equal label cells.
pub fn kappa_cell_weights(n: usize, beta: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let hi = if k + 1 == n {
                1.0
            } else {
                (k + 1) as f64 / n as f64
            };
            kappa_integral(k as f64 / n as f64, hi, beta)
        })
        .collect()
}

pub fn wasserstein2(a: &AtomicMeasure, b: &AtomicMeasure) -> f64 {
    l2_lambda_distance(&quantile(a), &quantile(b))
}

/// `d_W(measure, lambda)` against the continuous uniform law on `[0, 1]`.
pub fn wasserstein2_to_uniform(measure: &AtomicMeasure) -> f64 {
    let q = quantile(measure);
    let acc: f64 = q
        .pieces()
        .map(|(lo, hi, v)| ((hi - v).powi(3) - (lo - v).powi(3)) / 3.0)
        .sum();
    acc.max(0.0).sqrt()
}

/// Number of distinct particle positions, `N(t) = int du / m(u, t)`.
pub fn cluster_count(state: &FlowState) -> usize {
    state.block_count()
}
