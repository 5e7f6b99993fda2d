//! Report types for the brute-force lemma verifiers and randomized
//! algebra checks, plus the randomized structural verifiers shared by the
//! command-line driver and the acceptance suite.

use rand::Rng;

use crate::divisors;
use crate::error::Result;
use crate::ham::{Hamiltonian, WeightParams};
use crate::indices::ModeSet;
use crate::poisson::poisson_bracket;
use crate::sampling;
use crate::torus::{self, TorusData};

/// One failed check: the witness configuration and the two compared sides.
#[derive(Debug, Clone)]
pub struct Violation {
    pub witness: String,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of a verifier sweep.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub name: String,
    pub checked: u64,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn new(name: &str) -> Self {
        VerifyReport {
            name: name.to_string(),
            checked: 0,
            violations: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// JSON rendering `{checked, violations: [{witness, lhs, rhs}]}`.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{{\"name\":\"{}\",\"checked\":{},\"violations\":[",
            self.name, self.checked
        ));
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!(
                "{{\"witness\":\"{}\",\"lhs\":{},\"rhs\":{}}}",
                v.witness.replace('"', "'"),
                v.lhs,
                v.rhs
            ));
        }
        out.push_str("]}");
        out
    }
}

fn sup_coeff(h: &Hamiltonian) -> f64 {
    h.terms().map(|(_, c)| c.norm()).fold(0.0_f64, f64::max)
}

/// Randomized check of the degree laws of the bracket:
/// `Pi^{-2}{F, G} = 0` when `Pi^{<=0} G = 0`; additionally
/// `Pi^0 {F, G} = 0` when also `Pi^{-2} F = 0`; and
/// `Pi^d {D_omega, F} = {D_omega, Pi^d F}`.
pub fn verify_degree_laws(
    rng: &mut impl Rng,
    torus: &TorusData,
    modes: &ModeSet,
    instances: usize,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::new("degree_laws");
    let cutoff = 8;
    let omega = sampling::random_frequency(rng, modes.j_max());
    let d_omega = omega.d_omega(modes, cutoff);
    for inst in 0..instances {
        // masses kept small so no bracket term exceeds the cutoff: the laws
        // are exact only for the untruncated bracket
        let f = sampling::random_hamiltonian(rng, modes, cutoff, 2, 4);
        let h = sampling::random_hamiltonian(rng, modes, cutoff, 2, 4);
        let g = torus::project_degree_geq(&h, torus, 2)?;
        let scale = sup_coeff(&f) * sup_coeff(&g) + 1e-300;

        let fg = poisson_bracket(&f, &g);
        debug_assert!(fg.dropped.is_empty());
        let m2 = torus::project_degree(&fg.ham, torus, -2)?;
        report.checked += 1;
        if sup_coeff(&m2) > 1e-12 * scale {
            report.violations.push(Violation {
                witness: format!("instance {inst}: Pi^-2 {{F,G}}"),
                lhs: sup_coeff(&m2),
                rhs: 1e-12 * scale,
            });
        }

        // F with vanishing Pi^{-2}
        let f0 = f.sub(&torus::project_degree(&f, torus, -2)?);
        let f0g = poisson_bracket(&f0, &g).ham;
        let p0 = torus::project_degree(&f0g, torus, 0)?;
        report.checked += 1;
        if sup_coeff(&p0) > 1e-12 * scale {
            report.violations.push(Violation {
                witness: format!("instance {inst}: Pi^0 {{F,G}} with Pi^-2 F = 0"),
                lhs: sup_coeff(&p0),
                rhs: 1e-12 * scale,
            });
        }

        // homogeneity of the frequency bracket
        for d in [-2, 0, 2] {
            let lhs = torus::project_degree(&poisson_bracket(&d_omega, &f).ham, torus, d)?;
            let rhs = poisson_bracket(&d_omega, &torus::project_degree(&f, torus, d)?).ham;
            let err = sup_coeff(&lhs.sub(&rhs));
            let omega_scale = ((modes.j_max() * modes.j_max()) as f64 + 0.5) * 4.0;
            report.checked += 1;
            if err > 1e-12 * (sup_coeff(&f) + 1e-300) * omega_scale {
                report.violations.push(Violation {
                    witness: format!("instance {inst}: Pi^{d} {{D,F}} vs {{D, Pi^{d} F}}"),
                    lhs: err,
                    rhs: 0.0,
                });
            }
        }
    }
    Ok(report)
}

/// Randomized projection algebra: idempotence, mutual annihilation,
/// completeness, and the R/K split.
pub fn verify_projection_algebra(
    rng: &mut impl Rng,
    torus: &TorusData,
    modes: &ModeSet,
    instances: usize,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::new("projection_algebra");
    let cutoff = 8;
    for inst in 0..instances {
        let h = sampling::random_hamiltonian(rng, modes, cutoff, 4, 6);
        let scale = sup_coeff(&h) + 1e-300;
        let mut sum = Hamiltonian::zero(modes.clone(), cutoff)?;
        let mut d = -2;
        while d <= torus::max_degree(&h) {
            let pd = torus::project_degree(&h, torus, d)?;
            let pdd = torus::project_degree(&pd, torus, d)?;
            report.checked += 1;
            if sup_coeff(&pdd.sub(&pd)) > 1e-12 * scale {
                report.violations.push(Violation {
                    witness: format!("instance {inst}: idempotence d={d}"),
                    lhs: sup_coeff(&pdd.sub(&pd)),
                    rhs: 1e-12 * scale,
                });
            }
            let other = if d == -2 { 0 } else { d - 2 };
            let cross = torus::project_degree(&pd, torus, other)?;
            report.checked += 1;
            if sup_coeff(&cross) > 1e-12 * scale {
                report.violations.push(Violation {
                    witness: format!("instance {inst}: orthogonality {d}/{other}"),
                    lhs: sup_coeff(&cross),
                    rhs: 1e-12 * scale,
                });
            }
            sum = sum.add(&pd);
            d += 2;
        }
        report.checked += 1;
        if sup_coeff(&sum.sub(&h)) > 1e-12 * scale {
            report.violations.push(Violation {
                witness: format!("instance {inst}: completeness"),
                lhs: sup_coeff(&sum.sub(&h)),
                rhs: 1e-12 * scale,
            });
        }
        // R/K split
        let split = h.project_r().add(&h.project_k());
        report.checked += 1;
        if sup_coeff(&split.sub(&h)) > 0.0 {
            report.violations.push(Violation {
                witness: format!("instance {inst}: R+K split"),
                lhs: sup_coeff(&split.sub(&h)),
                rhs: 0.0,
            });
        }
    }
    Ok(report)
}

/// Randomized round-trip `L_omega L_omega^{-1} = Id` on the range of
/// `Pi^R`.
pub fn verify_homological_roundtrip(
    rng: &mut impl Rng,
    modes: &ModeSet,
    instances: usize,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::new("homological_roundtrip");
    for inst in 0..instances {
        let omega = sampling::random_frequency(rng, modes.j_max());
        let f = sampling::random_hamiltonian(rng, modes, 8, 3, 5).project_r();
        if f.is_zero() {
            continue;
        }
        let g = match divisors::solve_homological(&f, &omega) {
            Ok(g) => g,
            Err(_) => continue, // random near-resonance: skip, not a failure
        };
        let back = divisors::apply_l_omega(&g, &omega);
        let mut worst = 0.0_f64;
        for (k, c) in f.terms() {
            let err = (back.coefficient(k) - c).norm() / c.norm().max(1e-300);
            worst = worst.max(err);
        }
        report.checked += 1;
        if worst > 1e-13 {
            report.violations.push(Violation {
                witness: format!("instance {inst}"),
                lhs: worst,
                rhs: 1e-13,
            });
        }
    }
    Ok(report)
}

/// Randomized counter-term norm identity: a pure counter-term Hamiltonian
/// has majorant norm exactly `sup_j |lambda_j|`, and extraction recovers
/// the coefficients.
pub fn verify_counterterm_identity(
    rng: &mut impl Rng,
    torus: &TorusData,
    modes: &ModeSet,
    env: &WeightParams,
    instances: usize,
) -> VerifyReport {
    let mut report = VerifyReport::new("counterterm_identity");
    for inst in 0..instances {
        let lam = torus::CounterTerm::from_pairs(
            modes
                .modes()
                .map(|j| (j, rng.gen_range(-2.0..2.0)))
                .collect::<Vec<_>>(),
        );
        let h = lam.as_hamiltonian(modes, 4);
        let n = h.norm(env);
        let extracted = torus::counterterm_extract(&h, torus);
        report.checked += 1;
        let norm_err = (n - lam.sup_norm()).abs() / lam.sup_norm().max(1e-300);
        let ext_err = extracted.sub(&lam).sup_norm() / lam.sup_norm().max(1e-300);
        if norm_err > 1e-12 || ext_err > 1e-12 {
            report.violations.push(Violation {
                witness: format!("instance {inst}"),
                lhs: norm_err.max(ext_err),
                rhs: 1e-12,
            });
        }
    }
    report
}

/// Randomized split/merge bijection check on full exponent pairs.
pub fn verify_split_merge(rng: &mut impl Rng, instances: usize) -> VerifyReport {
    let mut report = VerifyReport::new("split_merge");
    for inst in 0..instances {
        let a = sampling::random_multi_index(rng, 4, 5);
        let b = sampling::random_multi_index(rng, 4, 5);
        let (m, alpha, beta) = crate::indices::split_min(&a, &b);
        let ok = alpha.is_disjoint(&beta)
            && crate::indices::merge(&m, &alpha, &beta)
                .map(|(ra, rb)| ra == a && rb == b)
                .unwrap_or(false);
        report.checked += 1;
        if !ok {
            report.violations.push(Violation {
                witness: format!("instance {inst}: a={a} b={b}"),
                lhs: 1.0,
                rhs: 0.0,
            });
        }
    }
    report
}
