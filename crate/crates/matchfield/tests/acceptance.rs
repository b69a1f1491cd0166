//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured quantity (visible with `--nocapture`).
//!
//! Criteria:
//!  1. the one-period map preserves distribution validity on randomized
//!     scenarios (tol 1e-10, < 10 s for 1000 scenarios)
//!  2. transition matrices are row-stochastic to 1e-12 on the same scenarios
//!  3. pushing a distribution through z equals the one-period map to 1e-10,
//!     both on randomized scenarios and on every period of compare runs
//!  4. the staged composition equals the direct two-term evaluation to 1e-12
//!  5. finite-N law of large numbers: K=3, N=100000, horizon 20, 5
//!     replications, max TV over periods and stages <= 0.02, < 60 s each
//!  6. TV at the final period scales like N^(-1/2): fitted log-log slope in
//!     [-0.6, -0.4] over N in {1e3, 1e4, 1e5}, 20 replications each
//!  7. sampled agent paths follow z: pooled transition counts within 4 sigma
//!     multinomial bounds over >= 1e5 agent-periods
//!  8. identity inputs are an exact fixed point and freeze the simulation
//!  9. compare runs with fixed seeds emit byte-identical outputs
//! 10. the hand-worked single-type fixture reproduces
//!     (0.4,0.6) -> (0.7,0.3) -> (0.85,0.15) exactly

mod common;

use std::time::Instant;

use common::*;

use matchfield::agentsim::{run_simulation, Stage};
use matchfield::compare::{compare_replication, run_compare};
use matchfield::config::ScenarioConfig;
use matchfield::export::parse_distribution_csv;
use matchfield::harness::{cmd_compare, cmd_meanfield, OutputFormat};
use matchfield::markov::{evolve, sample_path, transition_matrices, TransitionMatrix};
use matchfield::meanfield::{gamma, gamma_direct, iterate_meanfield};
use matchfield::rng::{cumulative, sample_from_cumulative};
use matchfield::types::ExtendedType;

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Criteria 1 and 2 run over the same randomized scenario stream.
const SCENARIO_STREAM_SEED: u64 = 9001;
const SCENARIO_COUNT: usize = 1000;

#[test]
fn acceptance_01_delta_preservation() {
    let start = Instant::now();
    let mut rng = rng_for(SCENARIO_STREAM_SEED);
    let mut worst: f64 = 0.0;
    for trial in 0..SCENARIO_COUNT {
        let k = 1 + (trial % 5);
        let (p, m) = random_valid_pair(k, &mut rng);
        let stages = gamma(&p, &m).unwrap();
        let report = stages.p_hat.validate(1e-10);
        assert!(report.is_valid(), "trial {trial} (K={k}): {report}");
        worst = worst.max((stages.p_hat.total() - 1.0).abs());
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "runtime {elapsed:?} exceeds 10 s"
    );
    println!(
        "acceptance criterion 1 PASS: {SCENARIO_COUNT} randomized scenarios keep gamma output \
         valid at tol 1e-10 (worst mass defect {worst:.2e}, {elapsed:?})"
    );
}

#[test]
fn acceptance_02_row_stochasticity() {
    let start = Instant::now();
    let mut rng = rng_for(SCENARIO_STREAM_SEED);
    let mut worst: f64 = 0.0;
    for trial in 0..SCENARIO_COUNT {
        let k = 1 + (trial % 5);
        let (_, m) = random_valid_pair(k, &mut rng);
        let z = TransitionMatrix::from_inputs(&m, 1, 0);
        let err = z.max_row_sum_error();
        assert!(err <= 1e-12, "trial {trial} (K={k}): row sum error {err}");
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "runtime {elapsed:?} exceeds 10 s"
    );
    println!(
        "acceptance criterion 2 PASS: {SCENARIO_COUNT} transition matrices row-stochastic \
         (worst |row sum - 1| = {worst:.2e}, {elapsed:?})"
    );
}

#[test]
fn acceptance_03_gamma_z_equivalence() {
    let mut rng = rng_for(SCENARIO_STREAM_SEED);
    let mut worst: f64 = 0.0;
    for trial in 0..SCENARIO_COUNT {
        let k = 1 + (trial % 5);
        let (p, m) = random_valid_pair(k, &mut rng);
        let z = TransitionMatrix::from_inputs(&m, 1, 0);
        let via_z = evolve(&p, &z).unwrap();
        let via_gamma = gamma(&p, &m).unwrap().p_hat;
        let err = linf(via_z.mass(), via_gamma.mass());
        assert!(err <= 1e-10, "trial {trial} (K={k}): divergence {err}");
        worst = worst.max(err);
    }

    // Every period of every compare run must satisfy the same bound.
    let mut compare_worst: f64 = 0.0;
    for scenario in [
        ScenarioConfig::from_file(fixture("identity.toml")).unwrap(),
        ScenarioConfig::from_file(fixture("k1_handworked.toml")).unwrap(),
        ScenarioConfig::from_file(fixture("k3_lln.toml"))
            .unwrap()
            .with_population(2000)
            .unwrap()
            .with_horizon(6)
            .unwrap()
            .with_replications(3)
            .unwrap(),
    ] {
        let report = run_compare(&scenario).unwrap();
        for rep in &report.replications {
            for &residual in &rep.gamma_z_residuals {
                assert!(residual <= 1e-10, "compare residual {residual}");
                compare_worst = compare_worst.max(residual);
            }
        }
    }
    println!(
        "acceptance criterion 3 PASS: evolve(p,z) matches gamma(p) within 1e-10 \
         (randomized worst {worst:.2e}, compare-run worst {compare_worst:.2e})"
    );
}

#[test]
fn acceptance_04_staged_equals_closed_form() {
    let mut rng = rng_for(SCENARIO_STREAM_SEED);
    let mut worst: f64 = 0.0;
    for trial in 0..SCENARIO_COUNT {
        let k = 1 + (trial % 5);
        let (p, m) = random_valid_pair(k, &mut rng);
        let staged = gamma(&p, &m).unwrap().p_hat;
        let direct = gamma_direct(&p, &m);
        let err = linf(staged.mass(), direct.mass());
        assert!(err <= 1e-12, "trial {trial} (K={k}): divergence {err}");
        worst = worst.max(err);
    }
    println!(
        "acceptance criterion 4 PASS: staged composition equals direct two-term evaluation \
         within 1e-12 (worst {worst:.2e})"
    );
}

#[test]
fn acceptance_05_lln_at_full_population() {
    let scenario = ScenarioConfig::from_file(fixture("k3_lln.toml")).unwrap();
    assert_eq!(scenario.population(), 100_000);
    assert_eq!(scenario.horizon(), 20);
    assert_eq!(scenario.replications(), 5);

    let mut overall_max: f64 = 0.0;
    let mut slowest = 0.0f64;
    for replication in 0..scenario.replications() {
        let start = Instant::now();
        let comparison = compare_replication(&scenario, replication).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        slowest = slowest.max(elapsed);
        assert!(elapsed < 60.0, "replication {replication} took {elapsed:.1} s");

        let max_tv = comparison
            .rows
            .iter()
            .filter(|row| row.period >= 1)
            .map(|row| row.tv_distance)
            .fold(0.0, f64::max);
        assert!(
            max_tv <= 0.02,
            "replication {replication}: max TV {max_tv} exceeds 0.02"
        );
        overall_max = overall_max.max(max_tv);
    }
    println!(
        "acceptance criterion 5 PASS: N=100000, horizon 20, 5 replications, \
         max TV over periods and stages = {overall_max:.4} <= 0.02 \
         (slowest replication {slowest:.1} s < 60 s)"
    );
}

#[test]
fn acceptance_06_lln_rate() {
    let base = ScenarioConfig::from_file(fixture("k3_lln.toml")).unwrap();
    let populations = [1_000usize, 10_000, 100_000];
    let replications = 20;

    let mut medians = Vec::new();
    for &population in &populations {
        let scenario = base
            .clone()
            .with_population(population)
            .unwrap()
            .with_replications(replications)
            .unwrap();
        let report = run_compare(&scenario).unwrap();
        let mut final_tvs: Vec<f64> = report
            .replications
            .iter()
            .map(|rep| {
                rep.rows
                    .iter()
                    .find(|row| row.period == scenario.horizon() && row.stage == Stage::Hat)
                    .expect("final-period hat row exists")
                    .tv_distance
            })
            .collect();
        final_tvs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (final_tvs[replications / 2 - 1] + final_tvs[replications / 2]) / 2.0;
        medians.push(median);
    }

    // Least-squares slope of log10(median TV) against log10(N).
    let xs: Vec<f64> = populations.iter().map(|&n| (n as f64).log10()).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.log10()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum::<f64>()
        / xs.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>();

    assert!(
        (-0.6..=-0.4).contains(&slope),
        "fitted slope {slope:.3} outside [-0.6, -0.4]; medians {medians:?}"
    );
    println!(
        "acceptance criterion 6 PASS: median final-period TV {medians:?} over N={populations:?} \
         gives log-log slope {slope:.3} in [-0.6, -0.4]"
    );
}

#[test]
fn acceptance_07_agent_chain_law() {
    let scenario = ScenarioConfig::from_file(fixture("k3_lln.toml"))
        .unwrap()
        .with_horizon(5)
        .unwrap();
    let env_path = scenario
        .environment()
        .realize_path(scenario.horizon(), scenario.master_seed(), 0);
    let trajectory = iterate_meanfield(&scenario, &env_path).unwrap();
    let matrices = transition_matrices(&scenario, &trajectory).unwrap();
    let space = scenario.space();
    let dim = space.extended_len();

    let agents = 40_000;
    let horizon = scenario.horizon();
    assert!(agents * horizon >= 100_000, "need at least 1e5 agent-periods");

    let p0_cumulative = cumulative(scenario.p0().mass());
    let mut rng = rng_for(20_240_817);
    let mut visits = vec![vec![0u64; dim]; horizon];
    let mut transitions = vec![vec![vec![0u64; dim]; dim]; horizon];
    use rand::Rng;
    for _ in 0..agents {
        let u: f64 = rng.gen();
        let beta0 = space.extended_type(sample_from_cumulative(&p0_cumulative, u));
        let path = sample_path(&matrices, beta0, &mut rng);
        for n in 0..horizon {
            let src = space.index(path[n]);
            let dst = space.index(path[n + 1]);
            visits[n][src] += 1;
            transitions[n][src][dst] += 1;
        }
    }

    let mut checked_cells = 0usize;
    let mut worst_sigma: f64 = 0.0;
    for n in 0..horizon {
        for src in 0..dim {
            let row_visits = visits[n][src];
            if row_visits < 50 {
                continue; // not enough statistical power for a 4-sigma bound
            }
            let v = row_visits as f64;
            for dst in 0..dim {
                let probability = matrices[n].get(src, dst);
                let expected = v * probability;
                let sd = (v * probability * (1.0 - probability)).sqrt();
                let observed = transitions[n][src][dst] as f64;
                let deviation = (observed - expected).abs();
                assert!(
                    deviation <= 4.0 * sd,
                    "period {} row {src} col {dst}: observed {observed}, expected {expected:.2}, \
                     sd {sd:.2} ({} visits)",
                    n + 1,
                    row_visits
                );
                if sd > 0.0 {
                    worst_sigma = worst_sigma.max(deviation / sd);
                }
                checked_cells += 1;
            }
        }
    }
    assert!(checked_cells > 0);
    println!(
        "acceptance criterion 7 PASS: {} agent-periods pooled, {checked_cells} transition cells \
         within 4 sigma of z entries (worst deviation {worst_sigma:.2} sigma)",
        agents * horizon
    );
}

#[test]
fn acceptance_08_degenerate_fixed_point() {
    let scenario = ScenarioConfig::from_file(fixture("identity.toml")).unwrap();
    let env_path = scenario
        .environment()
        .realize_path(scenario.horizon(), scenario.master_seed(), 0);

    // Mean-field: bit-exact fixed point.
    let trajectory = iterate_meanfield(&scenario, &env_path).unwrap();
    for period in &trajectory.periods {
        assert_eq!(period.p_check.mass(), scenario.p0().mass());
        assert_eq!(period.p_ccheck.mass(), scenario.p0().mass());
        assert_eq!(period.p_hat.mass(), scenario.p0().mass());
    }

    // Simulation: constant trajectory, equal to the rounded initial state.
    let (sim, _) = run_simulation(&scenario, &env_path, 0).unwrap();
    for period in &sim.periods {
        assert_eq!(period.check, sim.initial);
        assert_eq!(period.ccheck, sim.initial);
        assert_eq!(period.hat, sim.initial);
    }

    // p0 is exactly representable at this population, so the compare report
    // is all zeros including the initialization row.
    let report = run_compare(&scenario).unwrap();
    for rep in &report.replications {
        for row in &rep.rows {
            assert_eq!(row.tv_distance, 0.0, "period {} {:?}", row.period, row.stage);
        }
    }
    println!(
        "acceptance criterion 8 PASS: identity inputs give a bit-exact fixed point, a frozen \
         simulation, and an all-zero compare report"
    );
}

#[test]
fn acceptance_09_compare_determinism() {
    let scenario_path = fixture("k3_lln.toml");
    let scenario = ScenarioConfig::from_file(&scenario_path)
        .unwrap()
        .with_population(3000)
        .unwrap()
        .with_horizon(6)
        .unwrap()
        .with_replications(3)
        .unwrap();

    for format in [OutputFormat::Csv, OutputFormat::Json] {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let files_a = cmd_compare(&scenario, dir_a.path(), format).unwrap();
        let files_b = cmd_compare(&scenario, dir_b.path(), format).unwrap();
        assert_eq!(files_a.len(), files_b.len());
        for (a, b) in files_a.iter().zip(&files_b) {
            assert_eq!(a.file_name(), b.file_name());
            let bytes_a = std::fs::read(a).unwrap();
            let bytes_b = std::fs::read(b).unwrap();
            assert_eq!(bytes_a, bytes_b, "{:?} differs between runs", a.file_name());
        }
    }
    println!(
        "acceptance criterion 9 PASS: repeated compare runs with fixed seeds emit byte-identical \
         CSV and JSON outputs"
    );
}

#[test]
fn acceptance_10_hand_worked_fixture() {
    let scenario = ScenarioConfig::from_file(fixture("k1_handworked.toml")).unwrap();
    let env_path = scenario
        .environment()
        .realize_path(scenario.horizon(), scenario.master_seed(), 0);
    let trajectory = iterate_meanfield(&scenario, &env_path).unwrap();
    assert_eq!(trajectory.p0.mass(), &[0.4, 0.6]);
    assert_eq!(trajectory.periods[0].p_hat.mass(), &[0.7, 0.3]);
    assert_eq!(trajectory.periods[1].p_hat.mass(), &[0.85, 0.15]);

    // The emitted CSV carries the same exact values.
    let dir = tempfile::tempdir().unwrap();
    cmd_meanfield(&scenario, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("meanfield.csv")).unwrap();
    let rows = parse_distribution_csv(&text, false).unwrap();
    let matched = ExtendedType::matched(0, 0);
    let unmatched = ExtendedType::unmatched(0);
    let lookup = |period: usize, stage: Stage, ext: ExtendedType| -> f64 {
        rows.iter()
            .find(|r| {
                r.period == period
                    && r.stage == stage
                    && r.own == ext.own
                    && r.partner == ext.partner
            })
            .expect("row present")
            .mass
    };
    assert_eq!(lookup(1, Stage::Hat, matched), 0.7);
    assert_eq!(lookup(1, Stage::Hat, unmatched), 0.3);
    assert_eq!(lookup(2, Stage::Hat, matched), 0.85);
    assert_eq!(lookup(2, Stage::Hat, unmatched), 0.15);
    println!(
        "acceptance criterion 10 PASS: hand-worked fixture reproduces (0.4,0.6) -> (0.7,0.3) -> \
         (0.85,0.15) exactly, in memory and in the emitted CSV"
    );
}
