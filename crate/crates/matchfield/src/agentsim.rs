//! Finite-N realization of the random-matching dynamics.
//!
//! A [`Population`] holds per-agent types and an involutive partner array
//! (`partner[i] == i` means unmatched). Each period runs the three sub-steps
//! in order — mutation, matching, break-up — with the intensities evaluated
//! at the live empirical distributions, mirroring how the mean-field map
//! conditions each stage on the previous one.
//!
//! Matching at finite N works on symmetrized pair-count targets
//!
//! ```text
//! pairs(k,l) = (theta[k][l]·U_k + theta[l][k]·U_l) / 2     (k ≠ l)
//! pairs(k,k) = theta[k][k]·U_k / 2
//! ```
//!
//! stochastically rounded (floor plus a Bernoulli draw on the fractional
//! part) and clamped to the unmatched pool sizes, so expected match counts
//! agree with theta and empirical symmetry is exact. Concrete agents are
//! drawn uniformly without replacement within each pool and paired uniformly.
//!
//! Randomness is derived from the scenario's master seed with an independent
//! stream per (replication, period, sub-step); agent visitation is in index
//! order, so runs are reproducible regardless of thread scheduling.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::config::{evaluate_intensities, ScenarioConfig};
use crate::error::{Error, Result, ValidationReport, ViolationKind};
use crate::rng::{cumulative, sample_from_cumulative, substream, StreamKind};
use crate::types::{
    ExtendedType, ExtendedTypeDistribution, PairKernel, Partner, SideKernel, SquareMatrix, TypeId,
    TypeSpace,
};

/// Stage of a period a snapshot was taken at: post-mutation (`check`),
/// post-matching (`ccheck`), end-of-period (`hat`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Check,
    Ccheck,
    Hat,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Check => "check",
            Stage::Ccheck => "ccheck",
            Stage::Hat => "hat",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        match name {
            "check" => Some(Stage::Check),
            "ccheck" => Some(Stage::Ccheck),
            "hat" => Some(Stage::Hat),
            _ => None,
        }
    }

    pub fn all() -> [Stage; 3] {
        [Stage::Check, Stage::Ccheck, Stage::Hat]
    }
}

/// Cross-sectional distribution taken at one stage; entries are integer
/// multiples of 1/N and exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSnapshot {
    pub stage: Stage,
    pub distribution: ExtendedTypeDistribution,
}

/// A finite population: agent types, involutive partial matching, period
/// counter, and the seed coordinates its random streams derive from.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    space: TypeSpace,
    alpha: Vec<TypeId>,
    partner: Vec<usize>,
    period: usize,
    master_seed: u64,
    replication: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn space(&self) -> TypeSpace {
        self.space
    }

    /// Completed periods; 0 right after initialization.
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn alpha(&self) -> &[TypeId] {
        &self.alpha
    }

    pub fn partner(&self) -> &[usize] {
        &self.partner
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replication(&self) -> u64 {
        self.replication
    }

    /// Partner-type function g: the partner's current type, or unmatched.
    /// Always recomputed from the live arrays, never cached.
    pub fn partner_type(&self, i: usize) -> Partner {
        if self.partner[i] == i {
            Partner::Unmatched
        } else {
            Partner::Matched(self.alpha[self.partner[i]])
        }
    }

    pub fn extended_type(&self, i: usize) -> ExtendedType {
        ExtendedType {
            own: self.alpha[i],
            partner: self.partner_type(i),
        }
    }

    /// True iff the partner array is an involution without half-pairs.
    pub fn involution_ok(&self) -> bool {
        self.partner
            .iter()
            .enumerate()
            .all(|(i, &j)| j < self.len() && self.partner[j] == i)
    }

    /// Matched pairs as (i, j) with i < j, in index order.
    pub fn matched_pairs(&self) -> Vec<(usize, usize)> {
        self.partner
            .iter()
            .enumerate()
            .filter(|&(i, &j)| i < j)
            .map(|(i, &j)| (i, j))
            .collect()
    }
}

/// Cross-sectional empirical distribution of extended types.
pub fn empirical_distribution(pop: &Population) -> ExtendedTypeDistribution {
    let space = pop.space();
    let n = pop.len();
    let mut counts = vec![0u64; space.extended_len()];
    for i in 0..n {
        counts[space.index(pop.extended_type(i))] += 1;
    }
    let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
    ExtendedTypeDistribution::from_mass_unchecked(space, mass)
}

/// Floor plus a Bernoulli draw on the fractional part: the unique
/// integer rounding that preserves the target in expectation.
fn stochastic_round(target: f64, u: f64) -> (usize, bool) {
    let floor = target.floor();
    let frac = target - floor;
    let bump = u < frac;
    (floor as usize + usize::from(bump), bump)
}

// Rounding groups for initialization: matched cells come in pair units so
// symmetry and diagonal parity hold by construction.
#[derive(Debug, Clone, Copy)]
enum InitGroup {
    /// pairs within (k,k); each pair is 2 agents in the same cell
    Diagonal(TypeId),
    /// pairs across (k,l), k < l; each pair is 1 agent in each mirror cell
    Cross(TypeId, TypeId),
    /// unmatched agents of type k
    Single(TypeId),
}

/// Build a population whose empirical distribution is the closest integer
/// realization of `p0`: largest-remainder rounding over pair groups (so
/// count(k,l) = count(l,k) and count(k,k) is even by construction) and
/// unmatched cells, then deterministic block assignment of agents.
pub fn init_population(
    p0: &ExtendedTypeDistribution,
    n_agents: usize,
    master_seed: u64,
    replication: u64,
) -> Result<Population> {
    let space = p0.space();
    let k_count = space.types();
    if n_agents < 2 {
        return Err(Error::InfeasibleRounding(format!(
            "population of {n_agents} cannot be initialized; at least 2 agents required"
        )));
    }

    let mut kinds = Vec::new();
    let mut targets = Vec::new();
    for k in 0..k_count {
        kinds.push(InitGroup::Diagonal(k));
        targets.push(n_agents as f64 * p0.matched(k, k) / 2.0);
        for l in (k + 1)..k_count {
            kinds.push(InitGroup::Cross(k, l));
            targets.push(n_agents as f64 * p0.matched(k, l));
        }
    }
    for k in 0..k_count {
        kinds.push(InitGroup::Single(k));
        targets.push(n_agents as f64 * p0.unmatched(k));
    }
    let unit = |kind: &InitGroup| match kind {
        InitGroup::Single(_) => 1usize,
        _ => 2usize,
    };

    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let used: usize = counts
        .iter()
        .zip(&kinds)
        .map(|(&c, kind)| c * unit(kind))
        .sum();
    if used > n_agents {
        return Err(Error::InfeasibleRounding(format!(
            "p0 rounds to {used} agents, population is {n_agents}"
        )));
    }
    let mut remaining = n_agents - used;

    // Largest-remainder grants, at most one per group; remainders compared
    // in agent units. An odd leftover lands in the unmatched cell with the
    // largest remainder.
    let mut granted = vec![false; kinds.len()];
    while remaining > 0 {
        let mut best: Option<(f64, usize)> = None;
        for (g, kind) in kinds.iter().enumerate() {
            if granted[g] || unit(kind) > remaining {
                continue;
            }
            let rem_agents = (targets[g] - counts[g] as f64) * unit(kind) as f64;
            if best.map_or(true, |(r, _)| rem_agents > r) {
                best = Some((rem_agents, g));
            }
        }
        let g = match best {
            Some((_, g)) => g,
            None => {
                // Only pair groups left but a single agent to place.
                let mut fallback: Option<(f64, usize)> = None;
                for (g, kind) in kinds.iter().enumerate() {
                    if let InitGroup::Single(_) = kind {
                        let rem = targets[g] - counts[g] as f64;
                        if fallback.map_or(true, |(r, _)| rem > r) {
                            fallback = Some((rem, g));
                        }
                    }
                }
                fallback.expect("unmatched cells always exist").1
            }
        };
        counts[g] += 1;
        granted[g] = true;
        remaining -= unit(&kinds[g]);
    }

    // Guard: every cell must sit within one pair of its real target.
    for (g, kind) in kinds.iter().enumerate() {
        let deviation = match kind {
            InitGroup::Diagonal(_) => (2.0 * counts[g] as f64 - 2.0 * targets[g]).abs(),
            InitGroup::Cross(_, _) | InitGroup::Single(_) => (counts[g] as f64 - targets[g]).abs(),
        };
        if deviation > 2.0 + 1e-6 {
            return Err(Error::InfeasibleRounding(format!(
                "cell counts cannot approximate p0 within pair granularity at N={n_agents} \
                 (group {kind:?} off by {deviation:.3} agents)"
            )));
        }
    }

    let mut alpha = Vec::with_capacity(n_agents);
    let mut partner = Vec::with_capacity(n_agents);
    for (g, kind) in kinds.iter().enumerate() {
        match *kind {
            InitGroup::Diagonal(k) => {
                for _ in 0..counts[g] {
                    let a = alpha.len();
                    alpha.push(k);
                    alpha.push(k);
                    partner.push(a + 1);
                    partner.push(a);
                }
            }
            InitGroup::Cross(k, l) => {
                for _ in 0..counts[g] {
                    let a = alpha.len();
                    alpha.push(k);
                    alpha.push(l);
                    partner.push(a + 1);
                    partner.push(a);
                }
            }
            InitGroup::Single(k) => {
                for _ in 0..counts[g] {
                    let a = alpha.len();
                    alpha.push(k);
                    partner.push(a);
                }
            }
        }
    }
    debug_assert_eq!(alpha.len(), n_agents);

    Ok(Population {
        space,
        alpha,
        partner,
        period: 0,
        master_seed,
        replication,
    })
}

/// Mutation sub-step: every agent independently redraws its type from the
/// eta row of its current type; the matching structure is untouched.
pub fn step_mutation(pop: &mut Population, eta: &SquareMatrix) -> EmpiricalSnapshot {
    let mut rng = substream(
        pop.master_seed,
        pop.replication,
        pop.period as u64 + 1,
        StreamKind::Mutation,
    );
    let cumulative_rows: Vec<Vec<f64>> = (0..eta.dim()).map(|k| cumulative(eta.row(k))).collect();
    for i in 0..pop.len() {
        let u: f64 = rng.gen();
        pop.alpha[i] = sample_from_cumulative(&cumulative_rows[pop.alpha[i]], u);
    }
    EmpiricalSnapshot {
        stage: Stage::Check,
        distribution: empirical_distribution(pop),
    }
}

/// Matching sub-step: new pairs are formed between unmatched agents
/// according to symmetrized, stochastically rounded pair targets; existing
/// matches persist untouched. `theta` must be evaluated at the post-mutation
/// snapshot.
pub fn step_matching(
    pop: &mut Population,
    theta: &SquareMatrix,
    _b: &[f64],
) -> Result<EmpiricalSnapshot> {
    let k_count = pop.space().types();
    let mut rng = substream(
        pop.master_seed,
        pop.replication,
        pop.period as u64 + 1,
        StreamKind::Matching,
    );

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k_count];
    for i in 0..pop.len() {
        if pop.partner[i] == i {
            pools[pop.alpha[i]].push(i);
        }
    }
    let pool_sizes: Vec<usize> = pools.iter().map(Vec::len).collect();

    struct MatchGroup {
        k: TypeId,
        l: TypeId,
        floor: usize,
        count: usize,
        frac: f64,
        bumped: bool,
    }

    let mut groups = Vec::new();
    for k in 0..k_count {
        for l in k..k_count {
            let u_k = pool_sizes[k] as f64;
            let u_l = pool_sizes[l] as f64;
            let target = if k == l {
                theta.get(k, k) * u_k / 2.0
            } else {
                (theta.get(k, l) * u_k + theta.get(l, k) * u_l) / 2.0
            };
            let u: f64 = rng.gen();
            let (count, bumped) = stochastic_round(target, u);
            groups.push(MatchGroup {
                k,
                l,
                floor: target.floor() as usize,
                count,
                frac: target - target.floor(),
                bumped,
            });
        }
    }

    // Agents a group draws from pool k per counted pair.
    let draw_from = |g: &MatchGroup, k: TypeId| -> usize {
        if g.k == k && g.l == k {
            2
        } else if g.k == k || g.l == k {
            1
        } else {
            0
        }
    };

    // Floor demand must fit the pools; otherwise no rounding can.
    for k in 0..k_count {
        let floor_demand: usize = groups.iter().map(|g| g.floor * draw_from(g, k)).sum();
        if floor_demand > pool_sizes[k] {
            let detail: Vec<String> = groups
                .iter()
                .filter(|g| draw_from(g, k) > 0)
                .map(|g| format!("pairs({},{}) target floor {}", g.k + 1, g.l + 1, g.floor))
                .collect();
            return Err(Error::MatchingInfeasible(format!(
                "type {} has {} unmatched agents but targets demand {floor_demand} ({})",
                k + 1,
                pool_sizes[k],
                detail.join(", ")
            )));
        }
    }

    // Clamp rounded-up groups until every pool fits. Bumps with the smallest
    // fractional entitlement go first.
    loop {
        let mut over_type = None;
        for k in 0..k_count {
            let demand: usize = groups.iter().map(|g| g.count * draw_from(g, k)).sum();
            if demand > pool_sizes[k] {
                over_type = Some(k);
                break;
            }
        }
        let Some(k) = over_type else { break };
        let candidate = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.bumped && draw_from(g, k) > 0)
            .min_by(|(ia, a), (ib, b)| {
                a.frac.partial_cmp(&b.frac).unwrap().then(ia.cmp(ib))
            })
            .map(|(i, _)| i)
            .expect("over-demand implies a bumped group on this pool");
        groups[candidate].count -= 1;
        groups[candidate].bumped = false;
    }

    // Uniform selection: one shuffle per pool, then disjoint slices per
    // group in canonical order.
    for pool in pools.iter_mut() {
        pool.shuffle(&mut rng);
    }
    let mut cursor = vec![0usize; k_count];
    for g in &groups {
        for _ in 0..g.count {
            let a = pools[g.k][cursor[g.k]];
            cursor[g.k] += 1;
            let b = pools[g.l][cursor[g.l]];
            cursor[g.l] += 1;
            pop.partner[a] = b;
            pop.partner[b] = a;
        }
    }
    debug_assert!(pop.involution_ok());

    Ok(EmpiricalSnapshot {
        stage: Stage::Ccheck,
        distribution: empirical_distribution(pop),
    })
}

/// Break-up sub-step: each matched pair draws once — dissolve with
/// probability xi (both sides go unmatched and redraw types through
/// varsigma independently), otherwise redraw the pair types jointly through
/// sigma. Unmatched agents pass through unchanged. Closes the period.
pub fn step_breakup(
    pop: &mut Population,
    xi: &SquareMatrix,
    sigma: &PairKernel,
    varsigma: &SideKernel,
) -> EmpiricalSnapshot {
    let k_count = pop.space().types();
    let mut rng = substream(
        pop.master_seed,
        pop.replication,
        pop.period as u64 + 1,
        StreamKind::Breakup,
    );

    let sigma_cumulative: Vec<Vec<f64>> = (0..k_count * k_count)
        .map(|idx| cumulative(sigma.table(idx / k_count, idx % k_count)))
        .collect();
    let varsigma_cumulative: Vec<Vec<f64>> = (0..k_count * k_count)
        .map(|idx| cumulative(varsigma.row(idx / k_count, idx % k_count)))
        .collect();

    for i in 0..pop.len() {
        let j = pop.partner[i];
        if j <= i {
            continue; // unmatched, or pair already visited from its lower index
        }
        let k = pop.alpha[i];
        let l = pop.alpha[j];
        let u: f64 = rng.gen();
        if u < xi.get(k, l) {
            pop.partner[i] = i;
            pop.partner[j] = j;
            let uk: f64 = rng.gen();
            pop.alpha[i] = sample_from_cumulative(&varsigma_cumulative[k * k_count + l], uk);
            let ul: f64 = rng.gen();
            pop.alpha[j] = sample_from_cumulative(&varsigma_cumulative[l * k_count + k], ul);
        } else {
            let uj: f64 = rng.gen();
            let joint = sample_from_cumulative(&sigma_cumulative[k * k_count + l], uj);
            pop.alpha[i] = joint / k_count;
            pop.alpha[j] = joint % k_count;
        }
    }
    pop.period += 1;
    debug_assert!(pop.involution_ok());

    EmpiricalSnapshot {
        stage: Stage::Hat,
        distribution: empirical_distribution(pop),
    }
}

/// One period of a simulation trajectory: the realized environment state and
/// the three stage snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPeriod {
    pub env_state: usize,
    pub check: ExtendedTypeDistribution,
    pub ccheck: ExtendedTypeDistribution,
    pub hat: ExtendedTypeDistribution,
}

impl SimPeriod {
    pub fn stage(&self, stage: Stage) -> &ExtendedTypeDistribution {
        match stage {
            Stage::Check => &self.check,
            Stage::Ccheck => &self.ccheck,
            Stage::Hat => &self.hat,
        }
    }
}

/// Full simulation output: the initial empirical distribution (the rounded
/// realization of p0) and per-period stage snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrajectory {
    pub initial: ExtendedTypeDistribution,
    pub periods: Vec<SimPeriod>,
}

/// Run the full simulation for one replication over a realized environment
/// path. Intensities are evaluated at the live empirical distributions of
/// the stage each kernel conditions on. Deterministic given
/// (master seed, replication, environment path).
pub fn run_simulation(
    scenario: &ScenarioConfig,
    env_path: &[usize],
    replication: u64,
) -> Result<(SimulationTrajectory, Population)> {
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
    let mut pop = init_population(
        scenario.p0(),
        scenario.population(),
        scenario.master_seed(),
        replication,
    )?;
    let initial = empirical_distribution(&pop);
    let spec = scenario.intensities();

    let mut periods = Vec::with_capacity(scenario.horizon());
    let mut current = initial.clone();
    for (idx, &env_state) in env_path.iter().enumerate() {
        let n = idx + 1;
        let at_prev = evaluate_intensities(spec, env_state, n, &current)?;
        let check = step_mutation(&mut pop, at_prev.eta());

        let at_check = evaluate_intensities(spec, env_state, n, &check.distribution)?;
        let ccheck = step_matching(&mut pop, at_check.theta(), at_check.b())?;

        let at_ccheck = evaluate_intensities(spec, env_state, n, &ccheck.distribution)?;
        let hat = step_breakup(
            &mut pop,
            at_ccheck.xi(),
            at_ccheck.sigma(),
            at_ccheck.varsigma(),
        );

        current = hat.distribution.clone();
        periods.push(SimPeriod {
            env_state,
            check: check.distribution,
            ccheck: ccheck.distribution,
            hat: hat.distribution,
        });
    }
    Ok((SimulationTrajectory { initial, periods }, pop))
}

const DUMP_VERSION: u8 = 1;

/// Serialize a population for later resumption: version byte, type count,
/// period, seed coordinates, agent count, then the alpha and partner arrays.
pub fn dump_population<W: Write>(pop: &Population, mut w: W) -> io::Result<()> {
    w.write_all(&[DUMP_VERSION])?;
    w.write_all(&(pop.space().types() as u16).to_le_bytes())?;
    w.write_all(&(pop.period as u64).to_le_bytes())?;
    w.write_all(&pop.master_seed.to_le_bytes())?;
    w.write_all(&pop.replication.to_le_bytes())?;
    w.write_all(&(pop.len() as u64).to_le_bytes())?;
    for &a in &pop.alpha {
        w.write_all(&(a as u16).to_le_bytes())?;
    }
    for &p in &pop.partner {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`dump_population`], re-validating the involution.
pub fn load_population<R: Read>(mut r: R) -> Result<Population> {
    fn read_exact<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)?;
        Ok(buf)
    }
    let version = read_exact::<1>(&mut r)?[0];
    if version != DUMP_VERSION {
        return Err(Error::Parse(format!(
            "unsupported population dump version {version}"
        )));
    }
    let types = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
    let period = u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize;
    let master_seed = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let replication = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let n = u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize;
    let space = TypeSpace::new(types)?;
    let mut alpha = Vec::with_capacity(n);
    for _ in 0..n {
        let a = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
        if a >= types {
            return Err(Error::Parse(format!("agent type {a} out of range")));
        }
        alpha.push(a);
    }
    let mut partner = Vec::with_capacity(n);
    for _ in 0..n {
        partner.push(u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize);
    }
    let pop = Population {
        space,
        alpha,
        partner,
        period,
        master_seed,
        replication,
    };
    if !pop.involution_ok() {
        return Err(Error::Parse(
            "population dump partner array is not an involution".to_string(),
        ));
    }
    Ok(pop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::InputMatrices;

    fn k1_p0(matched: f64, unmatched: f64) -> ExtendedTypeDistribution {
        let space = TypeSpace::new(1).unwrap();
        ExtendedTypeDistribution::from_mass(space, vec![matched, unmatched]).unwrap()
    }

    #[test]
    fn init_rounds_k1_example_exactly() {
        let pop = init_population(&k1_p0(0.4, 0.6), 10, 1, 0).unwrap();
        let matched = (0..10).filter(|&i| pop.partner()[i] != i).count();
        assert_eq!(matched, 4);
        assert!(pop.involution_ok());
        let emp = empirical_distribution(&pop);
        assert_eq!(emp.matched(0, 0), 0.4);
        assert_eq!(emp.unmatched(0), 0.6);
    }

    #[test]
    fn init_all_unmatched_has_no_pairs() {
        let pop = init_population(&k1_p0(0.0, 1.0), 7, 1, 0).unwrap();
        assert!(pop.partner().iter().enumerate().all(|(i, &j)| i == j));
    }

    #[test]
    fn init_cross_pairs_exactly() {
        let space = TypeSpace::new(2).unwrap();
        let mut mass = vec![0.0; space.extended_len()];
        mass[space.matched_index(0, 1)] = 0.5;
        mass[space.matched_index(1, 0)] = 0.5;
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let pop = init_population(&p0, 4, 1, 0).unwrap();
        assert_eq!(pop.len(), 4);
        for i in 0..4 {
            let j = pop.partner()[i];
            assert_ne!(i, j);
            assert_ne!(pop.alpha()[i], pop.alpha()[j]);
        }
        let emp = empirical_distribution(&pop);
        assert_eq!(emp.matched(0, 1), 0.5);
        assert_eq!(emp.matched(1, 0), 0.5);
    }

    #[test]
    fn init_total_variation_bound_holds() {
        let space = TypeSpace::new(3).unwrap();
        let mass = vec![
            0.07, 0.05, 0.03, 0.05, 0.11, 0.02, 0.03, 0.02, 0.09, 0.21, 0.17, 0.15,
        ];
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        for n in [10, 37, 100, 1001] {
            let pop = init_population(&p0, n, 1, 0).unwrap();
            let emp = empirical_distribution(&pop);
            let tv: f64 = emp
                .mass()
                .iter()
                .zip(p0.mass())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / 2.0;
            let bound = (space.extended_len()) as f64 / n as f64;
            assert!(tv <= bound + 1e-12, "N={n}: tv {tv} > bound {bound}");
            assert!(pop.involution_ok());
        }
    }

    #[test]
    fn stochastic_round_enumerates_both_branches() {
        // Target 1.5 pairs: u below the fractional part rounds up.
        assert_eq!(stochastic_round(1.5, 0.3), (2, true));
        assert_eq!(stochastic_round(1.5, 0.7), (1, false));
        assert_eq!(stochastic_round(2.0, 0.999), (2, false));
        assert_eq!(stochastic_round(0.0, 0.0), (0, false));
    }

    #[test]
    fn identity_mutation_preserves_types_and_snapshot() {
        let mut pop = init_population(&k1_p0(0.4, 0.6), 10, 3, 0).unwrap();
        let before = empirical_distribution(&pop);
        let snap = step_mutation(&mut pop, &SquareMatrix::identity(1));
        assert_eq!(snap.stage, Stage::Check);
        assert_eq!(snap.distribution, before);
    }

    #[test]
    fn swap_mutation_flips_all_types() {
        let space = TypeSpace::new(2).unwrap();
        let mut mass = vec![0.0; space.extended_len()];
        mass[space.unmatched_index(0)] = 0.75;
        mass[space.unmatched_index(1)] = 0.25;
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let mut pop = init_population(&p0, 8, 3, 0).unwrap();
        let eta = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let snap = step_mutation(&mut pop, &eta);
        assert_eq!(snap.distribution.unmatched(0), 0.25);
        assert_eq!(snap.distribution.unmatched(1), 0.75);
    }

    #[test]
    fn zero_theta_matching_creates_no_pairs() {
        let mut pop = init_population(&k1_p0(0.4, 0.6), 10, 5, 0).unwrap();
        let before = pop.matched_pairs();
        let snap = step_matching(&mut pop, &SquareMatrix::zeros(1), &[1.0]).unwrap();
        assert_eq!(pop.matched_pairs(), before);
        assert_eq!(snap.stage, Stage::Ccheck);
    }

    #[test]
    fn odd_target_rounds_to_one_or_two_pairs() {
        // U = 6 unmatched, theta = 0.5: target 1.5 pairs. Over seeds, both
        // branches occur and existing pairs never break.
        let theta = SquareMatrix::new(1, vec![0.5]).unwrap();
        let mut saw = [false, false];
        for seed in 0..40u64 {
            let mut pop = init_population(&k1_p0(0.4, 0.6), 10, seed, 0).unwrap();
            let before = pop.matched_pairs();
            step_matching(&mut pop, &theta, &[0.5]).unwrap();
            let after = pop.matched_pairs();
            assert!(after.len() >= before.len());
            let new_pairs = after.len() - before.len();
            assert!(new_pairs == 1 || new_pairs == 2, "got {new_pairs}");
            saw[new_pairs - 1] = true;
            assert!(pop.involution_ok());
        }
        assert!(saw[0] && saw[1], "both rounding branches should occur");
    }

    #[test]
    fn matching_clamps_to_pool_size() {
        // One unmatched agent, diagonal target 0.5 pairs: the bump cannot
        // fit and is dropped rather than forcing a cross-type pair.
        let space = TypeSpace::new(1).unwrap();
        let p0 = ExtendedTypeDistribution::from_mass(space, vec![0.8, 0.2]).unwrap();
        let theta = SquareMatrix::new(1, vec![1.0]).unwrap();
        for seed in 0..20u64 {
            let mut pop = init_population(&p0, 5, seed, 0).unwrap();
            // 4 matched, 1 unmatched: target 0.5 pairs, pool of 1.
            step_matching(&mut pop, &theta, &[0.0]).unwrap();
            assert!(pop.involution_ok());
        }
    }

    #[test]
    fn infeasible_floor_targets_error_with_diagnostics() {
        let space = TypeSpace::new(2).unwrap();
        let mut mass = vec![0.0; space.extended_len()];
        mass[space.unmatched_index(0)] = 0.1;
        mass[space.unmatched_index(1)] = 0.9;
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let mut pop = init_population(&p0, 100, 1, 0).unwrap();
        // Directed flows far beyond type 1's pool.
        let theta = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        match step_matching(&mut pop, &theta, &[0.0, 0.0]) {
            Err(Error::MatchingInfeasible(msg)) => {
                assert!(msg.contains("unmatched agents"), "message: {msg}");
            }
            other => panic!("expected MatchingInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn breakup_keep_types_zero_xi_changes_nothing() {
        let mut pop = init_population(&k1_p0(0.4, 0.6), 10, 7, 0).unwrap();
        let before = empirical_distribution(&pop);
        let pairs_before = pop.matched_pairs();
        let snap = step_breakup(
            &mut pop,
            &SquareMatrix::zeros(1),
            &PairKernel::keep_types(1),
            &SideKernel::keep_types(1),
        );
        assert_eq!(snap.distribution, before);
        assert_eq!(pop.matched_pairs(), pairs_before);
        assert_eq!(pop.period(), 1);
    }

    #[test]
    fn total_dissolution_empties_matched_cells() {
        let mut pop = init_population(&k1_p0(0.4, 0.6), 10, 7, 0).unwrap();
        let xi = SquareMatrix::new(1, vec![1.0]).unwrap();
        let snap = step_breakup(
            &mut pop,
            &xi,
            &PairKernel::keep_types(1),
            &SideKernel::keep_types(1),
        );
        assert_eq!(snap.distribution.matched(0, 0), 0.0);
        assert_eq!(snap.distribution.unmatched(0), 1.0);
        assert!(pop.partner().iter().enumerate().all(|(i, &j)| i == j));
    }

    #[test]
    fn empirical_distribution_counts_pairs_symmetrically() {
        let space = TypeSpace::new(2).unwrap();
        let mut mass = vec![0.0; space.extended_len()];
        mass[space.matched_index(0, 1)] = 0.5;
        mass[space.matched_index(1, 0)] = 0.5;
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let pop = init_population(&p0, 2, 1, 0).unwrap();
        let emp = empirical_distribution(&pop);
        assert_eq!(emp.matched(0, 1), 0.5);
        assert_eq!(emp.matched(1, 0), 0.5);
    }

    #[test]
    fn matching_persistence_mutation_keeps_pairs_matching_extends_them() {
        let space = TypeSpace::new(2).unwrap();
        let mass = vec![0.1, 0.15, 0.15, 0.1, 0.3, 0.2];
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let mut pop = init_population(&p0, 40, 13, 0).unwrap();
        let eta = SquareMatrix::from_rows(&[vec![0.6, 0.4], vec![0.3, 0.7]]).unwrap();
        let pairs_initial = pop.matched_pairs();
        step_mutation(&mut pop, &eta);
        assert_eq!(pop.matched_pairs(), pairs_initial);
        let theta = SquareMatrix::from_rows(&[vec![0.3, 0.0], vec![0.0, 0.3]]).unwrap();
        step_matching(&mut pop, &theta, &[0.7, 0.7]).unwrap();
        let pairs_after = pop.matched_pairs();
        for pair in &pairs_initial {
            assert!(pairs_after.contains(pair));
        }
    }

    #[test]
    fn same_seed_reproduces_identical_runs() {
        let text = r#"
types = 1
horizon = 4
population = 50
master_seed = 21
replications = 1
p0 = [[1, 1, 0.4], [1, "J", 0.6]]

[environment]
states = ["base"]
transition = [[1.0]]
initial = "base"
path_mode = "sampled"

[intensities]
mode = "constant"

[[intensities.tables]]
state = "base"
eta = [[1.0]]
theta = [[0.5]]
xi = [[0.2]]
sigma = [[[[1.0]]]]
varsigma = [[[1.0]]]
"#;
        let scenario = ScenarioConfig::from_toml_str(text).unwrap();
        let env_path = scenario.environment().realize_path(4, 21, 0);
        let (a, _) = run_simulation(&scenario, &env_path, 0).unwrap();
        let (b, _) = run_simulation(&scenario, &env_path, 0).unwrap();
        assert_eq!(a, b);
        let (c, _) = run_simulation(&scenario, &env_path, 1).unwrap();
        assert_ne!(a, c, "replications must differ");
    }

    #[test]
    fn identity_inputs_freeze_the_simulation() {
        let space = TypeSpace::new(2).unwrap();
        let mass = vec![0.1, 0.15, 0.15, 0.1, 0.3, 0.2];
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let mut pop = init_population(&p0, 20, 9, 0).unwrap();
        let initial = empirical_distribution(&pop);
        let m = InputMatrices::identity(space);
        for _ in 0..5 {
            let check = step_mutation(&mut pop, m.eta());
            assert_eq!(check.distribution, initial);
            let ccheck = step_matching(&mut pop, m.theta(), m.b()).unwrap();
            assert_eq!(ccheck.distribution, initial);
            let hat = step_breakup(&mut pop, m.xi(), m.sigma(), m.varsigma());
            assert_eq!(hat.distribution, initial);
        }
    }

    #[test]
    fn population_dump_round_trips() {
        let space = TypeSpace::new(2).unwrap();
        let mass = vec![0.1, 0.15, 0.15, 0.1, 0.3, 0.2];
        let p0 = ExtendedTypeDistribution::from_mass(space, mass).unwrap();
        let pop = init_population(&p0, 33, 17, 2).unwrap();
        let mut buf = Vec::new();
        dump_population(&pop, &mut buf).unwrap();
        let loaded = load_population(&buf[..]).unwrap();
        assert_eq!(pop, loaded);
    }
}
