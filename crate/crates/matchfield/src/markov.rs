//! Per-agent extended-type Markov chain.
//!
//! Given the staged intensity tables of one period, a single agent's extended
//! type moves by a row-stochastic matrix z over the canonical extended type
//! ordering. An unmatched agent first mutates, then matches (or not), then
//! its pair survives break-up or dissolves; a matched agent mutates alongside
//! its partner and the pair faces break-up directly. Summing these routes
//! gives the four blocks of z:
//!
//! ```text
//! z[(k',J),(k,l)]  = Σ (1−xi[k1,l1]) sigma[k1,l1][k,l] theta[k1,l1] eta[k',k1]
//! z[(k',l'),(k,l)] = Σ (1−xi[k1,l1]) sigma[k1,l1][k,l] eta[k',k1] eta[l',l1]
//! z[(k',l'),(k,J)] = Σ xi[k1,l1] varsigma[k1,l1][k] eta[k',k1] eta[l',l1]
//! z[(k',J),(k,J)]  = b[k] eta[k',k] + Σ xi[k1,l1] varsigma[k1,l1][k] theta[k1,l1] eta[k',k1]
//! ```
//!
//! with all sums over (k1, l1). Row-stochasticity and agreement with the
//! mean-field period map are the two structural checks on these formulas; the
//! test suites assert both on randomized inputs.

use rand::Rng;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result, ValidationReport, ViolationKind};
use crate::meanfield::{stage_inputs, MeanfieldTrajectory};
use crate::rng::{cumulative, sample_from_cumulative, substream, StreamKind};
use crate::types::{
    ExtendedType, ExtendedTypeDistribution, InputMatrices, TypeSpace, ALGEBRAIC_TOL,
};

/// Row-stochastic transition matrix on the extended type space for one
/// period, together with the period and environment state it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    space: TypeSpace,
    period: usize,
    env_state: usize,
    z: Vec<f64>,
}

impl TransitionMatrix {
    /// Build z from staged intensity tables. The tables must already follow
    /// the staging rule (eta at the previous end-of-period distribution,
    /// theta/b at post-mutation, xi/sigma/varsigma at post-matching); use
    /// [`TransitionMatrix::staged`] to have that done internally.
    pub fn from_inputs(m: &InputMatrices, period: usize, env_state: usize) -> Self {
        let space = m.space();
        let k_count = space.types();
        let dim = space.extended_len();
        let eta = m.eta();
        let theta = m.theta();
        let b = m.b();
        let xi = m.xi();
        let sigma = m.sigma();
        let varsigma = m.varsigma();

        let mut z = vec![0.0; dim * dim];
        // Persist / dissolve weights per pre-break-up pair (k1, l1).
        for src in 0..dim {
            let source = space.extended_type(src);
            let row = &mut z[src * dim..(src + 1) * dim];
            match source.partner {
                crate::types::Partner::Unmatched => {
                    let k_prime = source.own;
                    for k1 in 0..k_count {
                        let reach = eta.get(k_prime, k1);
                        if reach == 0.0 {
                            continue;
                        }
                        for l1 in 0..k_count {
                            let matched_weight = reach * theta.get(k1, l1);
                            if matched_weight == 0.0 {
                                continue;
                            }
                            let persist = matched_weight * (1.0 - xi.get(k1, l1));
                            let dissolve = matched_weight * xi.get(k1, l1);
                            for k in 0..k_count {
                                for l in 0..k_count {
                                    row[space.matched_index(k, l)] +=
                                        persist * sigma.at(k1, l1, k, l);
                                }
                                row[space.unmatched_index(k)] +=
                                    dissolve * varsigma.at(k1, l1, k);
                            }
                        }
                    }
                    for k in 0..k_count {
                        row[space.unmatched_index(k)] += b[k] * eta.get(k_prime, k);
                    }
                }
                crate::types::Partner::Matched(l_prime) => {
                    let k_prime = source.own;
                    for k1 in 0..k_count {
                        let own_reach = eta.get(k_prime, k1);
                        if own_reach == 0.0 {
                            continue;
                        }
                        for l1 in 0..k_count {
                            let pair_weight = own_reach * eta.get(l_prime, l1);
                            if pair_weight == 0.0 {
                                continue;
                            }
                            let persist = pair_weight * (1.0 - xi.get(k1, l1));
                            let dissolve = pair_weight * xi.get(k1, l1);
                            for k in 0..k_count {
                                for l in 0..k_count {
                                    row[space.matched_index(k, l)] +=
                                        persist * sigma.at(k1, l1, k, l);
                                }
                                row[space.unmatched_index(k)] +=
                                    dissolve * varsigma.at(k1, l1, k);
                            }
                        }
                    }
                }
            }
        }
        TransitionMatrix {
            space,
            period,
            env_state,
            z,
        }
    }

    /// Build z for one period of a scenario, staging the intensity
    /// evaluation at the given previous end-of-period distribution.
    pub fn staged(
        spec: &crate::config::IntensitySpec,
        env_state: usize,
        period: usize,
        p_prev: &ExtendedTypeDistribution,
    ) -> Result<Self> {
        let staged = stage_inputs(spec, env_state, period, p_prev)?;
        Ok(Self::from_inputs(&staged.inputs, period, env_state))
    }

    pub fn space(&self) -> TypeSpace {
        self.space
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn env_state(&self) -> usize {
        self.env_state
    }

    pub fn dim(&self) -> usize {
        self.space.extended_len()
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.z[src * self.dim() + dst]
    }

    pub fn row(&self, src: usize) -> &[f64] {
        let dim = self.dim();
        &self.z[src * dim..(src + 1) * dim]
    }

    /// Row-stochasticity check: entries in [0,1], rows summing to 1 within
    /// `tol`.
    pub fn validate(&self, tol: f64) -> ValidationReport {
        let mut report = ValidationReport::new();
        for src in 0..self.dim() {
            let row = self.row(src);
            for (dst, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < -tol || v > 1.0 + tol {
                    report.push(
                        ViolationKind::OutOfRange,
                        format!("z[{src},{dst}] = {v}"),
                    );
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                report.push(
                    ViolationKind::SumNotOne,
                    format!("z row {src} sums to {sum}"),
                );
            }
        }
        report
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.dim())
            .map(|src| (self.row(src).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Push a distribution one period forward through z: out = p·z under the
/// canonical ordering.
pub fn evolve(
    p: &ExtendedTypeDistribution,
    z: &TransitionMatrix,
) -> Result<ExtendedTypeDistribution> {
    if p.space() != z.space() {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Shape,
            "distribution and transition matrix use different type spaces",
        )));
    }
    let report = z.validate(ALGEBRAIC_TOL);
    if !report.is_valid() {
        return Err(Error::InvalidInputs(report));
    }
    let dim = z.dim();
    let mut out = vec![0.0; dim];
    for src in 0..dim {
        let weight = p.mass()[src];
        if weight == 0.0 {
            continue;
        }
        let row = z.row(src);
        for (dst, out_slot) in out.iter_mut().enumerate() {
            *out_slot += weight * row[dst];
        }
    }
    Ok(ExtendedTypeDistribution::from_mass_unchecked(p.space(), out))
}

/// Transition matrices for every period of a mean-field trajectory, with
/// z for period n built from the trajectory's end-of-period distribution at
/// n−1.
pub fn transition_matrices(
    scenario: &ScenarioConfig,
    trajectory: &MeanfieldTrajectory,
) -> Result<Vec<TransitionMatrix>> {
    let mut matrices = Vec::with_capacity(trajectory.horizon());
    for n in 1..=trajectory.horizon() {
        let env_state = trajectory.periods[n - 1].env_state;
        let z = TransitionMatrix::staged(
            scenario.intensities(),
            env_state,
            n,
            trajectory.p_hat(n - 1),
        )?;
        matrices.push(z);
    }
    Ok(matrices)
}

/// Sample one agent path through a sequence of per-period transition
/// matrices, starting from `beta0`.
pub fn sample_path(
    matrices: &[TransitionMatrix],
    beta0: ExtendedType,
    rng: &mut impl Rng,
) -> Vec<ExtendedType> {
    let mut path = Vec::with_capacity(matrices.len() + 1);
    path.push(beta0);
    let mut current = beta0;
    for z in matrices {
        let space = z.space();
        let row = z.row(space.index(current));
        let cum = cumulative(row);
        let u: f64 = rng.gen();
        current = space.extended_type(sample_from_cumulative(&cum, u));
        path.push(current);
    }
    path
}

/// Sample the extended-type path of a single agent over a scenario horizon.
/// The per-period matrices are built from the mean-field trajectory;
/// the draw is deterministic given the seed.
pub fn simulate_agent_path(
    beta0: ExtendedType,
    trajectory: &MeanfieldTrajectory,
    scenario: &ScenarioConfig,
    seed: u64,
) -> Result<Vec<ExtendedType>> {
    let matrices = transition_matrices(scenario, trajectory)?;
    let mut rng = substream(seed, 0, 0, StreamKind::AgentPath);
    Ok(sample_path(&matrices, beta0, &mut rng))
}
