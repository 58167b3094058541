//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! The expensive statistical checks run with fixed seeds, so reruns are
//! bit-identical.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use massflow::flow::{FlowState, NoiseVector};
use massflow::girsanov::{drift_convergence_diagnostic, log_likelihood_ratio, tilted_probability};
use massflow::harness::{cluster_count_test, martingale_battery, scaling_battery, TestReport};
use massflow::ldp::{rate_function, varadhan_sweep, TargetSet};
use massflow::observables::{
    l2_lambda_distance, pushforward, wasserstein2, Atom, AtomicMeasure, QuantileFunction,
};
use massflow::stats::{normal_sf, Summary};
use massflow::stoch_calc::{
    integrate_simple, self_representation_check, GridFunction, SimpleProcess,
};
use massflow::{
    simulate_replica, Block, DriftPath, ExperimentConfig, FlowPath, InitialConvention, TimeGrid,
};

fn verdict(criterion: &str, pass: bool, detail: String, started: Instant) {
    println!(
        "{} [{criterion}] {detail} ({:.2}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "{criterion}: {detail}");
}

fn verdict_reports(criterion: &str, reports: &[TestReport], started: Instant) {
    let detail = reports
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    verdict(criterion, reports.iter().all(|r| r.pass), detail, started);
}

/// Random state with `n` labels split into random contiguous blocks at
/// increasing positions.
fn random_state(rng: &mut ChaCha8Rng, n: usize) -> FlowState {
    let mut blocks = Vec::new();
    let mut first = 1;
    let mut position = rng.random_range(-1.0..1.0);
    while first <= n {
        let last = rng.random_range(first..=n.min(first + 3));
        blocks.push(Block {
            first,
            last,
            position,
        });
        position += rng.random_range(0.01..0.5);
        first = last + 1;
    }
    FlowState::from_blocks(n, blocks, 0.0).unwrap()
}

fn label_values(state: &FlowState) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.n());
    for b in state.blocks() {
        out.extend(std::iter::repeat_n(b.position, b.count()));
    }
    out
}

#[test]
fn exact_invariants_on_random_paths() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_com = 0.0f64;
    let mut ok = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=256);
        let dt = 10f64.powf(rng.random_range(-5.0..-2.0));
        let mut state = FlowState::init_uniform(n, InitialConvention::Paper).unwrap();
        for _ in 0..200 {
            let noise = NoiseVector::sample(&mut rng, state.block_count());
            let scale = |b: &Block| (dt * n as f64 / b.count() as f64).sqrt();
            let proposal_com: f64 = state
                .blocks()
                .iter()
                .zip(&noise.0)
                .map(|(b, xi)| b.count() as f64 * (b.position + scale(b) * xi))
                .sum::<f64>()
                / n as f64;
            let next = state.step(dt, &noise).unwrap();
            worst_com = worst_com.max((next.center_of_mass() - proposal_com).abs());
            let blocks = next.blocks();
            ok &= blocks.windows(2).all(|w| w[0].position < w[1].position);
            ok &= blocks.first().unwrap().first == 1 && blocks.last().unwrap().last == n;
            ok &= blocks.windows(2).all(|w| w[1].first == w[0].last + 1);
            ok &= blocks.iter().map(|b| b.count()).sum::<usize>() == n;
            ok &= next.block_count() <= state.block_count();
            state = next;
        }
    }
    verdict(
        "exact invariants",
        ok && worst_com <= 1e-12,
        format!("100 paths x 200 steps, worst center-of-mass drift {worst_com:.3e}"),
        started,
    );
}

/// Weighted least-squares nondecreasing fit by enumerating every split of
/// `0..m` into contiguous runs.
fn brute_force_isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (m - 1)) {
        let mut fit = vec![0.0; m];
        let mut start = 0;
        let mut means = Vec::new();
        for i in 0..m {
            if i == m - 1 || mask & (1 << i) != 0 {
                let w: f64 = weights[start..=i].iter().sum();
                let s: f64 = (start..=i).map(|k| weights[k] * values[k]).sum();
                let mean = s / w;
                fit[start..=i].iter_mut().for_each(|f| *f = mean);
                means.push(mean);
                start = i + 1;
            }
        }
        if means.windows(2).any(|w| w[1] < w[0]) {
            continue;
        }
        let cost: f64 = (0..m)
            .map(|k| weights[k] * (values[k] - fit[k]).powi(2))
            .sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, fit));
        }
    }
    best.unwrap().1
}

#[test]
fn pava_matches_brute_force_isotonic_regression() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8);
        let state = random_state(&mut rng, n);
        let proposals: Vec<f64> = (0..state.block_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let weights: Vec<f64> = state.blocks().iter().map(|b| b.count() as f64).collect();
        let out = state.apply_proposals(&proposals, 0.01).unwrap();
        let fit = brute_force_isotonic(&proposals, &weights);
        let expected: Vec<f64> = state
            .blocks()
            .iter()
            .zip(&fit)
            .flat_map(|(b, f)| std::iter::repeat_n(*f, b.count()))
            .collect();
        for (a, b) in label_values(&out).iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        "PAVA oracle",
        worst <= 1e-10,
        format!("10^4 proposal vectors, n <= 8, worst deviation {worst:.3e}"),
        started,
    );
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Every row order and column order of the northwest-corner rule; the
/// cheapest such coupling.
fn brute_force_transport(a: &[Atom], b: &[Atom]) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, k - 1);
                out.push(q);
            }
        }
        out
    }
    let rows = permutations(a.len());
    let cols = permutations(b.len());
    let mut best = f64::INFINITY;
    for r in &rows {
        for c in &cols {
            let mut supply: Vec<f64> = r.iter().map(|&i| a[i].weight).collect();
            let mut demand: Vec<f64> = c.iter().map(|&j| b[j].weight).collect();
            let (mut i, mut j, mut cost) = (0, 0, 0.0);
            while i < supply.len() && j < demand.len() {
                let q = supply[i].min(demand[j]);
                cost += q * (a[r[i]].position - b[c[j]].position).powi(2);
                supply[i] -= q;
                demand[j] -= q;
                if supply[i] <= demand[j] {
                    i += 1;
                } else {
                    j += 1;
                }
            }
            best = best.min(cost);
        }
    }
    best.sqrt()
}

fn random_measure(rng: &mut ChaCha8Rng, atoms: usize) -> AtomicMeasure {
    let raw: Vec<Atom> = (0..atoms)
        .map(|_| Atom {
            position: rng.random_range(-2.0..2.0),
            weight: rng.random_range(0.1..1.0),
        })
        .collect();
    AtomicMeasure::normalized(raw).unwrap()
}

#[test]
fn wasserstein_isometry_and_coupling_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_iso = 0.0f64;
    for _ in 0..1000 {
        let na = rng.random_range(1..=16);
        let nb = rng.random_range(1..=16);
        let a = random_state(&mut rng, na);
        let b = random_state(&mut rng, nb);
        // L2 distance of the label step functions on the common refinement
        let cells = na * nb / gcd(na, nb);
        let (va, vb) = (label_values(&a), label_values(&b));
        let l2 = ((0..cells)
            .map(|c| (va[c * na / cells] - vb[c * nb / cells]).powi(2))
            .sum::<f64>()
            / cells as f64)
            .sqrt();
        let dw = wasserstein2(&pushforward(&a), &pushforward(&b));
        worst_iso = worst_iso.max((dw - l2).abs());
        let direct = l2_lambda_distance(
            &QuantileFunction::from_state(&a),
            &QuantileFunction::from_state(&b),
        );
        worst_iso = worst_iso.max((direct - l2).abs());
    }
    let mut worst_lp = 0.0f64;
    for _ in 0..60 {
        let ka = rng.random_range(1..=6);
        let kb = rng.random_range(1..=6);
        let a = random_measure(&mut rng, ka);
        let b = random_measure(&mut rng, kb);
        let exact = brute_force_transport(a.atoms(), b.atoms());
        worst_lp = worst_lp.max((wasserstein2(&a, &b) - exact).abs());
    }
    verdict(
        "isometry",
        worst_iso <= 1e-12 && worst_lp <= 1e-9,
        format!("10^3 state pairs worst {worst_iso:.3e}; 60 measure pairs vs coupling enumeration worst {worst_lp:.3e}"),
        started,
    );
}

#[test]
fn self_representation_identity() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(64, 1.0, 1e-3).with_seed(404);
    let mut worst = 0.0f64;
    for r in 0..100 {
        let path = simulate_replica(&cfg, r).unwrap();
        for u in [0.0, 0.1, 0.37, 0.5, 0.81, 1.0] {
            worst = worst.max(self_representation_check(&path, u).unwrap());
        }
    }
    verdict(
        "self-representation",
        worst <= 1e-10,
        format!("100 paths, n=64, K=1000, worst defect {worst:.3e}"),
        started,
    );
}

#[test]
fn center_of_mass_is_a_wiener_process() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(64, 1.0, 1e-3)
        .with_replicas(10_000)
        .with_seed(505);
    let reports = martingale_battery(&cfg).unwrap();
    verdict_reports("center-of-mass variance", &reports[..1], started);
}

#[test]
fn two_particle_cluster_count() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(2, 1.0, 4e-4)
        .with_replicas(100_000)
        .with_seed(606);
    let report = cluster_count_test(&cfg).unwrap();
    verdict_reports("two-particle cluster count", &[report], started);
}

#[test]
fn stochastic_integral_quadratic_variation() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(32, 1.0, 1e-3).with_seed(707);
    let labels = cfg.labels();
    let one = SimpleProcess::constant(GridFunction::constant(32, 1.0).unwrap());
    let mut coef = ChaCha8Rng::seed_from_u64(708);
    let (a, b, c) = (
        coef.random_range(0.5..2.0),
        coef.random_range(1.0..6.0),
        coef.random_range(-1.0..1.0),
    );
    let switches = vec![0, 100, 400, 700];
    let replicas = 10_000u64;
    let mut diffs_one = Vec::with_capacity(replicas as usize);
    let mut diffs_random = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        let path = simulate_replica(&cfg, r).unwrap();
        let i = integrate_simple(&path, &one).unwrap();
        diffs_one.push(i.final_value().powi(2) - i.final_qv());
        let adapted = SimpleProcess::adapted(&path, switches.clone(), |_, s| {
            let y = label_values(s);
            let v = y
                .iter()
                .zip(&labels)
                .map(|(x, u)| a * (b * x).sin() + c * u)
                .collect();
            GridFunction::new(v).unwrap()
        })
        .unwrap();
        let i = integrate_simple(&path, &adapted).unwrap();
        diffs_random.push(i.final_value().powi(2) - i.final_qv());
    }
    let z_one = Summary::of(&diffs_one).z_score(0.0);
    let z_random = Summary::of(&diffs_random).z_score(0.0);
    verdict(
        "stochastic-integral QV",
        z_one.abs() <= 3.0 && z_random.abs() <= 3.0,
        format!("n=32, 10^4 replicas: z(f=1) = {z_one:.3}, z(random adapted) = {z_random:.3}"),
        started,
    );
}

#[test]
fn likelihood_ratio_has_unit_mean_and_tilts_tails() {
    let started = Instant::now();
    let eps = 0.1;
    let cfg = ExperimentConfig::new(16, 1.0, 1e-2)
        .with_epsilon(eps)
        .with_seed(808);
    let h = DriftPath::constant_rate(&cfg.labels(), &cfg.grid().unwrap(), 0.5).unwrap();
    let weights: Vec<f64> = (0..10_000)
        .map(|r| {
            let path = simulate_replica(&cfg, r).unwrap();
            log_likelihood_ratio(&path, &h, eps).unwrap().exp()
        })
        .collect();
    let z_mean = Summary::of(&weights).z_score(1.0);

    let single = ExperimentConfig::new(1, 1.0, 1e-2)
        .with_epsilon(eps)
        .with_seed(809);
    let a = 3.0 * (eps * single.t_max).sqrt();
    let start = single.labels()[0];
    let tilt =
        DriftPath::constant_rate(&single.labels(), &single.grid().unwrap(), a / single.t_max)
            .unwrap();
    let est = tilted_probability(
        &single,
        |p: &FlowPath| p.last().blocks()[0].position - start > a,
        &tilt,
        eps,
        10_000,
        809,
    )
    .unwrap();
    let oracle = normal_sf(3.0);
    let z_tail = (est.estimate - oracle) / est.std_error;
    verdict(
        "Girsanov",
        z_mean.abs() <= 3.0 && z_tail.abs() <= 3.0,
        format!(
            "unit mean z = {z_mean:.3}; tail {:.6e} vs {oracle:.6e} (z = {z_tail:.3})",
            est.estimate
        ),
        started,
    );
}

#[test]
fn drifted_flow_approaches_target_path() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(64, 1.0, 1e-3)
        .with_replicas(200)
        .with_seed(909);
    let phi = DriftPath::from_fn_with_rate(
        &cfg.labels(),
        &cfg.grid().unwrap(),
        |u, t| u + 0.3 * t,
        |_, _| 0.3,
    )
    .unwrap();
    let table = drift_convergence_diagnostic(&phi, &[0.1, 0.05, 0.025, 0.0125], &cfg).unwrap();
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("eps={} d={:.5}", r.epsilon, r.mean_sup_distance))
        .collect();
    verdict(
        "drifted-flow convergence",
        table.is_monotone(),
        format!("n=64, matched seeds: {}", rows.join(", ")),
        started,
    );
}

#[test]
fn small_time_scaling_laws() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(256, 0.1, 1e-8)
        .with_replicas(1000)
        .with_seed(1010);
    let reports = scaling_battery(&cfg).unwrap();
    verdict_reports("scaling laws", &reports, started);
}

#[test]
fn varadhan_trend_toward_wasserstein_rate() {
    let started = Instant::now();
    let cfg = ExperimentConfig::new(128, 1.0, 1e-3);
    let lambda_n = AtomicMeasure::uniform_grid(128, InitialConvention::Paper).unwrap();
    let target = TargetSet::wasserstein_ball(lambda_n.shifted(0.3).unwrap(), 0.15).unwrap();
    let tilt = target
        .entry_tilt(&cfg.labels(), &cfg.grid().unwrap())
        .unwrap();
    let report = varadhan_sweep(
        &target,
        &[0.004, 0.002, 0.001],
        100_000,
        &cfg,
        Some(&tilt),
        1111,
    )
    .unwrap();
    let theory = report.theoretical_rate;
    let estimates = report.estimates_by_decreasing_eps();
    let trend = estimates
        .as_ref()
        .is_some_and(|e| e.iter().all(|&x| x < 0.0) && e.windows(2).all(|w| w[1] > w[0]));
    let close = report
        .extrapolated
        .is_some_and(|x| (x - theory).abs() <= 0.35 * theory.abs());
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| match (r.estimate, r.std_error) {
            (Some(e), Some(s)) => format!("eps={} {e:.5}+-{s:.5} ({} hits)", r.epsilon, r.hits),
            _ => format!("eps={} unestimable", r.epsilon),
        })
        .collect();
    verdict(
        "Varadhan trend",
        trend && close,
        format!(
            "{}; trend {}; sqrt(eps) extrapolation {:?} vs {theory:.5} (35% band); d_W(lambda_n, lambda) = {:.5}",
            rows.join(", "),
            if trend { "ok" } else { "broken" },
            report.extrapolated,
            report.finite_n_bias
        ),
        started,
    );
}

#[test]
fn straight_line_minimizes_rate() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let n = 24;
    let t_max = rng.random_range(0.5..2.0);
    let grid = TimeGrid::uniform(t_max, t_max / 50.0).unwrap();
    let labels = InitialConvention::Paper.labels(n);
    let mut g: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
    g.sort_by(f64::total_cmp);
    let line = DriftPath::straight_line(&labels, &grid, &g).unwrap();
    let value = rate_function(&line);
    let exact = labels
        .iter()
        .zip(&g)
        .map(|(u, x)| (x - u).powi(2))
        .sum::<f64>()
        / n as f64
        / (2.0 * t_max);
    let err = (value - exact).abs();
    let mut all_larger = true;
    let mut smallest_gap = f64::INFINITY;
    for k in 0..100 {
        let delta = rng.random_range(0.01..0.2);
        let w: Vec<f64> = {
            let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            w.sort_by(f64::total_cmp);
            w
        };
        let power = rng.random_range(0.5..2.0);
        let perturbed = DriftPath::from_fn(&labels, &grid, |u, t| {
            let k_u = labels.iter().position(|&l| l == u).unwrap();
            let s = t / t_max;
            if k % 2 == 0 {
                // same straight line plus a bump vanishing at both ends
                u + s * (g[k_u] - u) + delta * (std::f64::consts::PI * s).sin() * w[k_u]
            } else {
                // same endpoints at non-constant speed
                u + s.powf(power) * (g[k_u] - u)
            }
        })
        .unwrap();
        let v = rate_function(&perturbed);
        all_larger &= v > value;
        smallest_gap = smallest_gap.min(v - value);
    }
    verdict(
        "rate function",
        err <= 1e-12 && all_larger,
        format!(
            "straight line error {err:.3e}; 100 perturbations, smallest excess {smallest_gap:.3e}"
        ),
        started,
    );
}
