//! Seeded random generators for Hamiltonians, multi-indices, frequencies,
//! and torus points.  Shared by the randomized verifiers and the driver;
//! every consumer passes its own seeded generator, keeping runs
//! reproducible.

use num_complex::Complex64;
use rand::Rng;

use crate::ham::{FrequencyVector, Hamiltonian};
use crate::indices::{ModeSet, MultiIndex};
use crate::poisson::StateVector;
use crate::torus::TorusData;

/// Random multi-index with mass at most `mass_max` supported in the window.
pub fn random_multi_index(rng: &mut impl Rng, j_max: i32, mass_max: u32) -> MultiIndex {
    let mass = rng.gen_range(0..=mass_max);
    let mut pairs = Vec::new();
    for _ in 0..mass {
        pairs.push((rng.gen_range(-j_max..=j_max), 1));
    }
    MultiIndex::from_pairs(&pairs)
}

/// Random real Hamiltonian with `terms` generator pairs of mass at most
/// `mass_max` each.
pub fn random_hamiltonian(
    rng: &mut impl Rng,
    modes: &ModeSet,
    degree_cutoff: u32,
    mass_max: u32,
    terms: usize,
) -> Hamiltonian {
    let mut h = Hamiltonian::zero(modes.clone(), degree_cutoff).expect("valid cutoff");
    for _ in 0..terms {
        let mass = rng.gen_range(1..=mass_max.min(degree_cutoff / 2));
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..mass {
            a.push((rng.gen_range(-modes.j_max()..=modes.j_max()), 1));
            b.push((rng.gen_range(-modes.j_max()..=modes.j_max()), 1));
        }
        let alpha = MultiIndex::from_pairs(&a);
        let beta = MultiIndex::from_pairs(&b);
        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        h.add_real_pair(alpha, beta, c).expect("mass-matched pair");
    }
    h
}

/// Random frequency in the cube, away from its faces.
pub fn random_frequency(rng: &mut impl Rng, j_max: i32) -> FrequencyVector {
    let xi: Vec<f64> = (0..(2 * j_max + 1))
        .map(|_| rng.gen_range(-0.49..0.49))
        .collect();
    FrequencyVector::from_xi(j_max, |j| xi[(j + j_max) as usize]).expect("inside the cube")
}

/// Random point on the torus: `u_j = sqrt(I_j) e^{i theta_j}` with
/// independent uniform angles.
pub fn random_torus_point(rng: &mut impl Rng, torus: &TorusData, j_max: i32) -> StateVector {
    let mut u = StateVector::zero(j_max);
    for j in -j_max..=j_max {
        let i = torus.action(j);
        if i > 0.0 {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            u.set(j, Complex64::from_polar(i.sqrt(), theta));
        }
    }
    u
}
