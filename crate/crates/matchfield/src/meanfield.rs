//! Deterministic evolution of the expected extended-type distribution.
//!
//! One period maps the end-of-period distribution p through three stages:
//!
//! ```text
//! p ──mutation──▶ p_check ──matching──▶ p_ccheck ──break-up──▶ p_hat
//! ```
//!
//! with the matching intensities evaluated at the post-mutation distribution
//! and the break-up intensities at the post-matching distribution. The
//! composition is the one-period map of the mean-field dynamics; iterating it
//! yields the expected trajectory that the finite-N simulator converges to.
//!
//! Distributions are never renormalized in state; drift checks run on raw
//! values so bugs surface instead of being averaged away.

use crate::config::{evaluate_intensities, IntensitySpec, ScenarioConfig};
use crate::error::{Error, Result, ValidationReport, ViolationKind};
use crate::types::{
    ExtendedTypeDistribution, InputMatrices, PairKernel, SideKernel, SquareMatrix, TypeSpace,
    ALGEBRAIC_TOL,
};

/// The three stage distributions produced by one application of the period
/// map: post-mutation, post-matching, end-of-period.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaStages {
    pub p_check: ExtendedTypeDistribution,
    pub p_ccheck: ExtendedTypeDistribution,
    pub p_hat: ExtendedTypeDistribution,
}

/// Staged evaluation of a (possibly distribution-dependent) intensity
/// specification: the assembled tables use eta evaluated at the previous
/// end-of-period distribution, theta/b at the post-mutation distribution,
/// and xi/sigma/varsigma at the post-matching distribution.
#[derive(Debug, Clone)]
pub struct StagedInputs {
    pub inputs: InputMatrices,
    pub stages: GammaStages,
}

/// One period of a mean-field trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanfieldPeriod {
    pub env_state: usize,
    pub p_check: ExtendedTypeDistribution,
    pub p_ccheck: ExtendedTypeDistribution,
    pub p_hat: ExtendedTypeDistribution,
}

/// Mean-field trajectory over a realized environment path, including the
/// deterministic initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanfieldTrajectory {
    pub p0: ExtendedTypeDistribution,
    pub periods: Vec<MeanfieldPeriod>,
}

impl MeanfieldTrajectory {
    /// End-of-period distribution after `n` periods; `n = 0` is the initial
    /// condition.
    pub fn p_hat(&self, n: usize) -> &ExtendedTypeDistribution {
        if n == 0 {
            &self.p0
        } else {
            &self.periods[n - 1].p_hat
        }
    }

    pub fn horizon(&self) -> usize {
        self.periods.len()
    }
}

fn check_eta(eta: &SquareMatrix, space: TypeSpace) -> Result<()> {
    if eta.dim() != space.types() {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Shape,
            format!("eta must be {0}x{0}", space.types()),
        )));
    }
    for k in 0..eta.dim() {
        let sum: f64 = eta.row(k).iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(Error::InvalidInputs(ValidationReport::single(
                ViolationKind::SumNotOne,
                format!("eta row {} sums to {sum}", k + 1),
            )));
        }
    }
    Ok(())
}

/// Post-mutation distribution: every agent redraws its type through `eta`
/// while the matching structure stays fixed, so
///
/// ```text
/// out(k,l) = Σ_{k1,l1} eta[k1][k] · eta[l1][l] · p(k1,l1)
/// out(k,J) = Σ_{k1}    eta[k1][k] · p(k1,J)
/// ```
pub fn mutation_step(
    p: &ExtendedTypeDistribution,
    eta: &SquareMatrix,
) -> Result<ExtendedTypeDistribution> {
    let space = p.space();
    check_eta(eta, space)?;
    let k_count = space.types();
    let mut out = vec![0.0; space.extended_len()];
    for k in 0..k_count {
        for l in 0..k_count {
            let mut acc = 0.0;
            for k1 in 0..k_count {
                let ek = eta.get(k1, k);
                for l1 in 0..k_count {
                    acc += ek * eta.get(l1, l) * p.matched(k1, l1);
                }
            }
            out[space.matched_index(k, l)] = acc;
        }
        let mut acc = 0.0;
        for k1 in 0..k_count {
            acc += eta.get(k1, k) * p.unmatched(k1);
        }
        out[space.unmatched_index(k)] = acc;
    }
    Ok(ExtendedTypeDistribution::from_mass_unchecked(space, out))
}

/// Post-matching distribution: unmatched type-k mass pairs with unmatched
/// type-l mass at rate theta[k][l], existing matches persist:
///
/// ```text
/// out(k,l) = p(k,l) + theta[k][l] · p(k,J)
/// out(k,J) = b[k] · p(k,J)
/// ```
///
/// Fails with `MatchingInfeasible` if the newly created matched mass would be
/// asymmetric, i.e. theta[k][l]·p(k,J) and theta[l][k]·p(l,J) differ beyond
/// `tol`: such a theta has no consistent pairing interpretation.
pub fn matching_step_with_tol(
    p_check: &ExtendedTypeDistribution,
    theta: &SquareMatrix,
    b: &[f64],
    tol: f64,
) -> Result<ExtendedTypeDistribution> {
    let space = p_check.space();
    let k_count = space.types();
    if theta.dim() != k_count || b.len() != k_count {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Shape,
            format!("theta must be {0}x{0} and b length {0}", k_count),
        )));
    }
    for k in 0..k_count {
        for l in (k + 1)..k_count {
            let created_kl = theta.get(k, l) * p_check.unmatched(k);
            let created_lk = theta.get(l, k) * p_check.unmatched(l);
            if (created_kl - created_lk).abs() > tol {
                return Err(Error::MatchingInfeasible(format!(
                    "theta[{},{}]·p({},J) = {created_kl} but theta[{},{}]·p({},J) = {created_lk}; \
                     matched mass creation must be symmetric",
                    k + 1,
                    l + 1,
                    k + 1,
                    l + 1,
                    k + 1,
                    l + 1,
                )));
            }
        }
    }
    let mut out = vec![0.0; space.extended_len()];
    for k in 0..k_count {
        for l in 0..k_count {
            out[space.matched_index(k, l)] =
                p_check.matched(k, l) + theta.get(k, l) * p_check.unmatched(k);
        }
        out[space.unmatched_index(k)] = b[k] * p_check.unmatched(k);
    }
    Ok(ExtendedTypeDistribution::from_mass_unchecked(space, out))
}

/// [`matching_step_with_tol`] at the default algebraic tolerance.
pub fn matching_step(
    p_check: &ExtendedTypeDistribution,
    theta: &SquareMatrix,
    b: &[f64],
) -> Result<ExtendedTypeDistribution> {
    matching_step_with_tol(p_check, theta, b, ALGEBRAIC_TOL)
}

/// End-of-period distribution: each matched (k1,l1) unit of mass persists
/// with probability 1−xi and redraws its pair types through sigma, or
/// dissolves with probability xi, sending each side through varsigma into the
/// unmatched column. Unmatched mass passes through unchanged:
///
/// ```text
/// out(k,l) = Σ_{k1,l1} (1 − xi[k1][l1]) · sigma[k1][l1][k][l] · p(k1,l1)
/// out(k,J) = p(k,J) + Σ_{k1,l1} xi[k1][l1] · varsigma[k1][l1][k] · p(k1,l1)
/// ```
pub fn breakup_step(
    p_ccheck: &ExtendedTypeDistribution,
    xi: &SquareMatrix,
    sigma: &PairKernel,
    varsigma: &SideKernel,
) -> Result<ExtendedTypeDistribution> {
    let space = p_ccheck.space();
    let k_count = space.types();
    if xi.dim() != k_count || sigma.types() != k_count || varsigma.types() != k_count {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Shape,
            format!("xi/sigma/varsigma must match K={k_count}"),
        )));
    }
    for k1 in 0..k_count {
        for l1 in 0..k_count {
            let sum_sigma: f64 = sigma.table(k1, l1).iter().sum();
            let sum_varsigma: f64 = varsigma.row(k1, l1).iter().sum();
            if (sum_sigma - 1.0).abs() > ALGEBRAIC_TOL || (sum_varsigma - 1.0).abs() > ALGEBRAIC_TOL
            {
                return Err(Error::InvalidInputs(ValidationReport::single(
                    ViolationKind::SumNotOne,
                    format!(
                        "sigma[{},{}] sums to {sum_sigma}, varsigma[{},{}] sums to {sum_varsigma}",
                        k1 + 1,
                        l1 + 1,
                        k1 + 1,
                        l1 + 1
                    ),
                )));
            }
        }
    }
    let mut out = vec![0.0; space.extended_len()];
    for k in 0..k_count {
        for l in 0..k_count {
            let mut acc = 0.0;
            for k1 in 0..k_count {
                for l1 in 0..k_count {
                    acc += (1.0 - xi.get(k1, l1))
                        * sigma.at(k1, l1, k, l)
                        * p_ccheck.matched(k1, l1);
                }
            }
            out[space.matched_index(k, l)] = acc;
        }
        let mut acc = p_ccheck.unmatched(k);
        for k1 in 0..k_count {
            for l1 in 0..k_count {
                acc += xi.get(k1, l1) * varsigma.at(k1, l1, k) * p_ccheck.matched(k1, l1);
            }
        }
        out[space.unmatched_index(k)] = acc;
    }
    Ok(ExtendedTypeDistribution::from_mass_unchecked(space, out))
}

/// One period of the mean-field map with fixed tables: mutation, matching,
/// break-up in sequence, returning all three stages.
pub fn gamma(p: &ExtendedTypeDistribution, m: &InputMatrices) -> Result<GammaStages> {
    let p_check = mutation_step(p, m.eta())?;
    let p_ccheck = matching_step(&p_check, m.theta(), m.b())?;
    let p_hat = breakup_step(&p_ccheck, m.xi(), m.sigma(), m.varsigma())?;
    Ok(GammaStages {
        p_check,
        p_ccheck,
        p_hat,
    })
}

/// Evaluate a (possibly distribution-dependent) intensity specification with
/// the staging rule enforced: eta at the previous end-of-period distribution,
/// theta/b at the post-mutation distribution, xi/sigma/varsigma at the
/// post-matching distribution. Returns the assembled tables together with the
/// stages they generate.
pub fn stage_inputs(
    spec: &IntensitySpec,
    env_state: usize,
    period: usize,
    p_prev: &ExtendedTypeDistribution,
) -> Result<StagedInputs> {
    let at_prev = evaluate_intensities(spec, env_state, period, p_prev)?;
    let p_check = mutation_step(p_prev, at_prev.eta())?;

    let at_check = evaluate_intensities(spec, env_state, period, &p_check)?;
    let p_ccheck = matching_step(&p_check, at_check.theta(), at_check.b())?;

    let at_ccheck = evaluate_intensities(spec, env_state, period, &p_ccheck)?;
    let p_hat = breakup_step(
        &p_ccheck,
        at_ccheck.xi(),
        at_ccheck.sigma(),
        at_ccheck.varsigma(),
    )?;

    let inputs = InputMatrices::new_unchecked(
        p_prev.space(),
        at_prev.eta().clone(),
        at_check.theta().clone(),
        at_ccheck.xi().clone(),
        at_ccheck.sigma().clone(),
        at_ccheck.varsigma().clone(),
    )?;
    Ok(StagedInputs {
        inputs,
        stages: GammaStages {
            p_check,
            p_ccheck,
            p_hat,
        },
    })
}

/// One period of the mean-field map under an intensity specification,
/// with staging handled internally.
pub fn gamma_staged(
    spec: &IntensitySpec,
    env_state: usize,
    period: usize,
    p: &ExtendedTypeDistribution,
) -> Result<GammaStages> {
    Ok(stage_inputs(spec, env_state, period, p)?.stages)
}

/// Direct evaluation of the period map as two-term sums over the
/// post-mutation distribution, without ever forming the post-matching
/// distribution:
///
/// ```text
/// out(k,l) = Σ (1−xi)·sigma[k][l]·q(k1,l1) + Σ (1−xi)·sigma[k][l]·theta·q(k1,J)
/// out(k,J) = b[k]·q(k,J) + Σ xi·varsigma[k]·q(k1,l1) + Σ xi·varsigma[k]·theta·q(k1,J)
/// ```
///
/// where q is the post-mutation distribution, itself expanded inline. This is
/// an independent code path used to cross-check the staged composition.
pub fn gamma_direct(p: &ExtendedTypeDistribution, m: &InputMatrices) -> ExtendedTypeDistribution {
    let space = p.space();
    let k_count = space.types();
    let eta = m.eta();
    let theta = m.theta();
    let b = m.b();
    let xi = m.xi();
    let sigma = m.sigma();
    let varsigma = m.varsigma();

    // Post-mutation distribution from its defining sums.
    let mut q_matched = vec![0.0; k_count * k_count];
    for k in 0..k_count {
        for l in 0..k_count {
            let mut acc = 0.0;
            for k1 in 0..k_count {
                for l1 in 0..k_count {
                    acc += eta.get(k1, k) * eta.get(l1, l) * p.matched(k1, l1);
                }
            }
            q_matched[k * k_count + l] = acc;
        }
    }
    let mut q_unmatched = vec![0.0; k_count];
    for k in 0..k_count {
        let mut acc = 0.0;
        for l in 0..k_count {
            acc += p.unmatched(l) * eta.get(l, k);
        }
        q_unmatched[k] = acc;
    }

    let mut out = vec![0.0; space.extended_len()];
    for k in 0..k_count {
        for l in 0..k_count {
            let mut acc = 0.0;
            for k1 in 0..k_count {
                for l1 in 0..k_count {
                    let keep = (1.0 - xi.get(k1, l1)) * sigma.at(k1, l1, k, l);
                    acc += keep * q_matched[k1 * k_count + l1];
                }
            }
            for k1 in 0..k_count {
                for l1 in 0..k_count {
                    let keep = (1.0 - xi.get(k1, l1)) * sigma.at(k1, l1, k, l);
                    acc += keep * theta.get(k1, l1) * q_unmatched[k1];
                }
            }
            out[space.matched_index(k, l)] = acc;
        }
        let mut acc = b[k] * q_unmatched[k];
        for k1 in 0..k_count {
            for l1 in 0..k_count {
                acc += xi.get(k1, l1) * varsigma.at(k1, l1, k) * q_matched[k1 * k_count + l1];
            }
        }
        for k1 in 0..k_count {
            for l1 in 0..k_count {
                acc += xi.get(k1, l1)
                    * varsigma.at(k1, l1, k)
                    * theta.get(k1, l1)
                    * q_unmatched[k1];
            }
        }
        out[space.unmatched_index(k)] = acc;
    }
    ExtendedTypeDistribution::from_mass_unchecked(space, out)
}

/// Iterate the period map over a realized environment path.
pub fn iterate_meanfield(
    scenario: &ScenarioConfig,
    env_path: &[usize],
) -> Result<MeanfieldTrajectory> {
    if env_path.len() != scenario.horizon() {
        return Err(Error::InvalidInputs(ValidationReport::single(
            ViolationKind::Config,
            format!(
                "environment path covers {} periods, horizon is {}",
                env_path.len(),
                scenario.horizon()
            ),
        )));
    }
    let mut periods = Vec::with_capacity(scenario.horizon());
    let mut current = scenario.p0().clone();
    for (n, &env_state) in env_path.iter().enumerate() {
        let staged = stage_inputs(scenario.intensities(), env_state, n + 1, &current)?;
        current = staged.stages.p_hat.clone();
        periods.push(MeanfieldPeriod {
            env_state,
            p_check: staged.stages.p_check,
            p_ccheck: staged.stages.p_ccheck,
            p_hat: staged.stages.p_hat,
        });
    }
    Ok(MeanfieldTrajectory {
        p0: scenario.p0().clone(),
        periods,
    })
}
