//! Shared generators for randomized tests: valid distributions and intensity
//! tables, including matching probabilities that are flow-consistent at the
//! distribution they will be evaluated at.

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use matchfield::meanfield::mutation_step;
use matchfield::{
    ExtendedTypeDistribution, InputMatrices, PairKernel, SideKernel, SquareMatrix, TypeSpace,
};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn rng_for(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random valid extended-type distribution: symmetric matched block,
/// occasional zero cells, total mass 1.
pub fn random_distribution(space: TypeSpace, rng: &mut impl Rng) -> ExtendedTypeDistribution {
    let k = space.types();
    let mut mass = vec![0.0; space.extended_len()];
    for a in 0..k {
        for b in a..k {
            let v = if rng.gen::<f64>() < 0.15 {
                0.0
            } else {
                rng.gen::<f64>()
            };
            mass[space.matched_index(a, b)] = v;
            mass[space.matched_index(b, a)] = v;
        }
    }
    for a in 0..k {
        mass[space.unmatched_index(a)] = 0.2 + rng.gen::<f64>();
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    ExtendedTypeDistribution::from_mass(space, mass).expect("generated distribution is valid")
}

/// Random row-stochastic mutation kernel.
pub fn random_eta(k: usize, rng: &mut impl Rng) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(k);
    for row in 0..k {
        let mut weights: Vec<f64> = (0..k).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        for (col, w) in weights.into_iter().enumerate() {
            m.set(row, col, w);
        }
    }
    m
}

/// Random symmetric break-up probabilities in [0, 1].
pub fn random_xi(k: usize, rng: &mut impl Rng) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(k);
    for a in 0..k {
        for b in a..k {
            let v = rng.gen::<f64>();
            m.set(a, b, v);
            m.set(b, a, v);
        }
    }
    m
}

/// Random pair kernel with the mirror symmetry
/// sigma[k][l][a][b] = sigma[l][k][b][a].
pub fn random_sigma(k: usize, rng: &mut impl Rng) -> PairKernel {
    let mut sigma = PairKernel::new(k, vec![0.0; k * k * k * k]).unwrap();
    for pair_k in 0..k {
        for pair_l in pair_k..k {
            // Draw a normalized table; diagonal pairs need a symmetric one.
            let mut table = vec![0.0; k * k];
            if pair_k == pair_l {
                for a in 0..k {
                    for b in a..k {
                        let v = 0.05 + rng.gen::<f64>();
                        table[a * k + b] = v;
                        table[b * k + a] = v;
                    }
                }
            } else {
                for cell in table.iter_mut() {
                    *cell = 0.05 + rng.gen::<f64>();
                }
            }
            let sum: f64 = table.iter().sum();
            for cell in table.iter_mut() {
                *cell /= sum;
            }
            for a in 0..k {
                for b in 0..k {
                    sigma.set(pair_k, pair_l, a, b, table[a * k + b]);
                    sigma.set(pair_l, pair_k, b, a, table[a * k + b]);
                }
            }
        }
    }
    sigma
}

/// Random side kernel (no symmetry constraint, rows normalized).
pub fn random_varsigma(k: usize, rng: &mut impl Rng) -> SideKernel {
    let mut varsigma = SideKernel::new(k, vec![0.0; k * k * k]).unwrap();
    for a in 0..k {
        for b in 0..k {
            let mut row: Vec<f64> = (0..k).map(|_| 0.05 + rng.gen::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            for w in &mut row {
                *w /= sum;
            }
            for (c, w) in row.into_iter().enumerate() {
                varsigma.set(a, b, c, w);
            }
        }
    }
    varsigma
}

/// Random matching probabilities that are flow-consistent at `p`: the
/// created matched mass theta[k][l]·p(k,J) is symmetric by construction and
/// row sums stay below 1.
pub fn feasible_theta(p: &ExtendedTypeDistribution, rng: &mut impl Rng) -> SquareMatrix {
    let space = p.space();
    let k = space.types();
    let unmatched: Vec<f64> = (0..k).map(|a| p.unmatched(a)).collect();
    let mut flows = SquareMatrix::zeros(k);
    for a in 0..k {
        for b in a..k {
            if unmatched[a] > 0.0 && unmatched[b] > 0.0 {
                let v = rng.gen::<f64>();
                flows.set(a, b, v);
                flows.set(b, a, v);
            }
        }
    }
    // Scale so every row's total flow fits within its unmatched mass.
    let margin = 0.9;
    let mut scale = f64::INFINITY;
    for a in 0..k {
        let row_flow: f64 = flows.row(a).iter().sum();
        if row_flow > 0.0 {
            scale = scale.min(margin * unmatched[a] / row_flow);
        }
    }
    if !scale.is_finite() {
        scale = 0.0;
    }
    let mut theta = SquareMatrix::zeros(k);
    for a in 0..k {
        if unmatched[a] == 0.0 {
            continue;
        }
        for b in 0..k {
            theta.set(a, b, scale * flows.get(a, b) / unmatched[a]);
        }
    }
    theta
}

/// A random valid (distribution, intensity tables) pair where the matching
/// probabilities are consistent at the post-mutation distribution, so the
/// one-period map is feasible.
pub fn random_valid_pair(
    k: usize,
    rng: &mut impl Rng,
) -> (ExtendedTypeDistribution, InputMatrices) {
    let space = TypeSpace::new(k).unwrap();
    let p = random_distribution(space, rng);
    let eta = random_eta(k, rng);
    let p_tilde = mutation_step(&p, &eta).expect("eta is row-stochastic");
    let theta = feasible_theta(&p_tilde, rng);
    let m = InputMatrices::new(
        space,
        eta,
        theta,
        random_xi(k, rng),
        random_sigma(k, rng),
        random_varsigma(k, rng),
    )
    .expect("generated tables satisfy the input invariants");
    (p, m)
}
