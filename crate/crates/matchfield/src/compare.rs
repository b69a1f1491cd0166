//! Distance metrics and mean-field vs Monte Carlo comparison runs.
//!
//! A comparison run executes, per replication, the mean-field recursion and
//! the agent simulation over one shared environment path (all conditional
//! claims are relative to a fixed environment realization), records total
//! variation and sup distances per period and stage, and checks the
//! transition-matrix route against the mean-field map via the per-period
//! residual ‖p·z − Γ(p)‖∞.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::agentsim::{run_simulation, Stage};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result, ValidationReport, ViolationKind};
use crate::markov::{evolve, transition_matrices};
use crate::meanfield::iterate_meanfield;
use crate::types::{ExtendedTypeDistribution, DRIFT_TOL};

/// Total variation distance (1/2)·Σ |p − q| over the extended type space.
pub fn total_variation(p: &ExtendedTypeDistribution, q: &ExtendedTypeDistribution) -> Result<f64> {
    check_comparable(p, q)?;
    Ok(tv_raw(p.mass(), q.mass()))
}

/// Sup-norm distance max |p − q|.
pub fn linf_distance(p: &ExtendedTypeDistribution, q: &ExtendedTypeDistribution) -> Result<f64> {
    check_comparable(p, q)?;
    Ok(linf_raw(p.mass(), q.mass()))
}

fn check_comparable(p: &ExtendedTypeDistribution, q: &ExtendedTypeDistribution) -> Result<()> {
    if p.space() != q.space() {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Shape,
            "distributions use different type spaces",
        )));
    }
    let mut report = p.validate(DRIFT_TOL);
    report.merge(q.validate(DRIFT_TOL));
    if !report.is_valid() {
        return Err(Error::InvalidInputs(report));
    }
    Ok(())
}

pub(crate) fn tv_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

pub(crate) fn linf_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Distances between the simulated and mean-field distributions at one
/// (period, stage). Period 0 carries the initialization rounding error at
/// stage `hat`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub period: usize,
    pub stage: Stage,
    pub tv_distance: f64,
    pub linf_distance: f64,
}

/// Comparison results for one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationComparison {
    pub replication: usize,
    pub env_path: Vec<usize>,
    pub rows: Vec<StageRow>,
    /// Per period n: ‖evolve(p_hat[n−1], z_n) − p_hat[n]‖∞.
    pub gamma_z_residuals: Vec<f64>,
}

/// Quantiles of the per-replication TV distances at one (period, stage).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub period: usize,
    pub stage: Stage,
    pub tv_min: f64,
    pub tv_median: f64,
    pub tv_max: f64,
}

/// Full comparison report across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub replications: Vec<ReplicationComparison>,
    pub summary: Vec<SummaryRow>,
}

/// Worker cap for replication-level parallelism: `MATCHFIELD_THREADS` when
/// set to a positive integer, otherwise the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("MATCHFIELD_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Run `f` over 0..count on up to [`thread_cap`] workers, collecting results
/// in index order. Output is independent of the worker count.
pub(crate) fn parallel_map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_cap().min(count.max(1));
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= count {
                    break;
                }
                let value = f(idx);
                slots.lock().expect("slot lock")[idx] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|s| s.expect("every index computed"))
        .collect()
}

/// Compare mean-field and simulation for one replication over the shared
/// environment path.
pub fn compare_replication(
    scenario: &ScenarioConfig,
    replication: usize,
) -> Result<ReplicationComparison> {
    let env_path = scenario.environment().realize_path(
        scenario.horizon(),
        scenario.master_seed(),
        replication as u64,
    );
    let mf = iterate_meanfield(scenario, &env_path)?;
    let matrices = transition_matrices(scenario, &mf)?;
    let mut gamma_z_residuals = Vec::with_capacity(scenario.horizon());
    for n in 1..=scenario.horizon() {
        let evolved = evolve(mf.p_hat(n - 1), &matrices[n - 1])?;
        gamma_z_residuals.push(linf_raw(evolved.mass(), mf.p_hat(n).mass()));
    }

    let (sim, _population) = run_simulation(scenario, &env_path, replication as u64)?;
    let mut rows = Vec::with_capacity(1 + 3 * scenario.horizon());
    rows.push(StageRow {
        period: 0,
        stage: Stage::Hat,
        tv_distance: tv_raw(sim.initial.mass(), mf.p0.mass()),
        linf_distance: linf_raw(sim.initial.mass(), mf.p0.mass()),
    });
    for n in 1..=scenario.horizon() {
        let sim_period = &sim.periods[n - 1];
        let mf_period = &mf.periods[n - 1];
        for stage in Stage::all() {
            let sim_d = sim_period.stage(stage);
            let mf_d = match stage {
                Stage::Check => &mf_period.p_check,
                Stage::Ccheck => &mf_period.p_ccheck,
                Stage::Hat => &mf_period.p_hat,
            };
            rows.push(StageRow {
                period: n,
                stage,
                tv_distance: tv_raw(sim_d.mass(), mf_d.mass()),
                linf_distance: linf_raw(sim_d.mass(), mf_d.mass()),
            });
        }
    }
    Ok(ReplicationComparison {
        replication,
        env_path,
        rows,
        gamma_z_residuals,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn summarize(replications: &[ReplicationComparison]) -> Vec<SummaryRow> {
    let mut summary = Vec::new();
    if replications.is_empty() {
        return summary;
    }
    let template = &replications[0].rows;
    for (i, row) in template.iter().enumerate() {
        let mut values: Vec<f64> = replications.iter().map(|r| r.rows[i].tv_distance).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("tv distances are finite"));
        summary.push(SummaryRow {
            period: row.period,
            stage: row.stage,
            tv_min: values[0],
            tv_median: median(&values),
            tv_max: *values.last().expect("nonempty"),
        });
    }
    summary
}

/// Run the full comparison across all replications (parallel, deterministic
/// output order).
pub fn run_compare(scenario: &ScenarioConfig) -> Result<ComparisonReport> {
    let results = parallel_map_indexed(scenario.replications(), |r| {
        compare_replication(scenario, r)
    });
    let mut replications = Vec::with_capacity(results.len());
    for result in results {
        replications.push(result?);
    }
    let summary = summarize(&replications);
    Ok(ComparisonReport {
        replications,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TypeSpace;

    fn dist(mass: Vec<f64>) -> ExtendedTypeDistribution {
        ExtendedTypeDistribution::from_mass(TypeSpace::new(1).unwrap(), mass).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_distance() {
        let p = dist(vec![0.4, 0.6]);
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        assert_eq!(linf_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_support_has_distance_one() {
        let p = dist(vec![1.0, 0.0]);
        let q = dist(vec![0.0, 1.0]);
        assert_eq!(total_variation(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_tv() {
        let p = dist(vec![0.7, 0.3]);
        let q = dist(vec![0.6, 0.4]);
        let tv = total_variation(&p, &q).unwrap();
        assert!((tv - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_distribution_is_rejected() {
        let p = dist(vec![0.7, 0.3]);
        let q = ExtendedTypeDistribution::from_mass_unchecked(
            TypeSpace::new(1).unwrap(),
            vec![0.9, 0.3],
        );
        assert!(matches!(
            total_variation(&p, &q),
            Err(Error::InvalidInputs(_))
        ));
    }

    #[test]
    fn parallel_map_preserves_order() {
        let out = parallel_map_indexed(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn median_of_even_and_odd_lengths() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }
}
