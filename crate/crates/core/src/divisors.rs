//! Diophantine frequencies, the homological equation, and brute-force
//! verifiers for the combinatorial small-divisor estimates.
//!
//! A frequency `omega` is gamma-Diophantine when
//! `|omega . ell| > gamma prod_n 1/(1 + ell_n^2 <n>^2)` for every finitely
//! supported integer vector `ell != 0`.  At truncation the condition is
//! checked over an enumerated family of divisor vectors; typicality is
//! estimated by seeded Monte Carlo over the frequency cube.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ham::{jap, FrequencyVector, Hamiltonian, TermKey};
use crate::indices::MultiIndex;
use crate::verify::{VerifyReport, Violation};

/// Floating-point guard on `|omega . ell|`, distinct from the Diophantine
/// threshold: divisions below it are refused outright.
pub const NEAR_RESONANCE_GUARD: f64 = 1e-14;

/// Signed divisor vector `ell`, finitely supported.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DivisorVector {
    entries: Vec<(i32, i32)>,
}

impl DivisorVector {
    pub fn from_pairs(pairs: &[(i32, i32)]) -> Self {
        let mut map: BTreeMap<i32, i32> = BTreeMap::new();
        for &(j, v) in pairs {
            if v != 0 {
                *map.entry(j).or_insert(0) += v;
            }
        }
        map.retain(|_, v| *v != 0);
        DivisorVector {
            entries: map.into_iter().collect(),
        }
    }

    /// `alpha - beta` of a term key.
    pub fn from_term(key: &TermKey) -> Self {
        let mut map: BTreeMap<i32, i32> = BTreeMap::new();
        for (j, e) in key.alpha.iter() {
            *map.entry(j).or_insert(0) += e as i32;
        }
        for (j, e) in key.beta.iter() {
            *map.entry(j).or_insert(0) -= e as i32;
        }
        map.retain(|_, v| *v != 0);
        DivisorVector {
            entries: map.into_iter().collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.entries.iter().copied()
    }

    /// `|ell| = sum |ell_j|`.
    pub fn mass(&self) -> u32 {
        self.entries.iter().map(|&(_, v)| v.unsigned_abs()).sum()
    }

    pub fn momentum(&self) -> i64 {
        self.entries
            .iter()
            .map(|&(j, v)| j as i64 * v as i64)
            .sum()
    }

    pub fn dot_omega(&self, omega: &FrequencyVector) -> f64 {
        self.entries
            .iter()
            .map(|&(j, v)| omega.omega(j) * v as f64)
            .sum()
    }

    /// Normal-mode mass `sum_{j not in S} |ell_j|` given a tangential test.
    pub fn normal_mass(&self, is_tangential: impl Fn(i32) -> bool) -> u32 {
        self.entries
            .iter()
            .filter(|&&(j, _)| !is_tangential(j))
            .map(|&(_, v)| v.unsigned_abs())
            .sum()
    }
}

/// `gamma prod_n 1/(1 + ell_n^2 <n>^2)`, evaluated in log space.
pub fn diophantine_threshold(ell: &DivisorVector, gamma: f64) -> Result<f64> {
    if ell.is_zero() {
        return Err(Error::InvalidParameter(
            "divisor vector must be nonzero".into(),
        ));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let mut ln = gamma.ln();
    for (j, v) in ell.iter() {
        let f = 1.0 + (v as f64) * (v as f64) * jap(j) * jap(j);
        ln -= f.ln();
    }
    Ok(ln.exp())
}

/// Every nonzero `ell` with support in `|j| <= j_max` and `|ell| <= l_max`,
/// in deterministic order.
pub fn enumerate_divisors(j_max: i32, l_max: u32) -> Vec<DivisorVector> {
    let modes: Vec<i32> = (-j_max..=j_max).collect();
    let mut out = Vec::new();
    let mut cur: Vec<(i32, i32)> = Vec::new();
    fn rec(
        modes: &[i32],
        pos: usize,
        budget: u32,
        cur: &mut Vec<(i32, i32)>,
        out: &mut Vec<DivisorVector>,
    ) {
        if pos == modes.len() {
            if !cur.is_empty() {
                out.push(DivisorVector {
                    entries: cur.clone(),
                });
            }
            return;
        }
        for v in -(budget as i32)..=(budget as i32) {
            if v != 0 {
                cur.push((modes[pos], v));
            }
            rec(modes, pos + 1, budget - v.unsigned_abs(), cur, out);
            if v != 0 {
                cur.pop();
            }
        }
    }
    rec(&modes, 0, l_max, &mut cur, &mut out);
    out.sort();
    out
}

/// Outcome of a Diophantine test: the flag plus the worst margin
/// `|omega . ell| / threshold(ell)` and its witness.
#[derive(Debug, Clone)]
pub struct DiophantineCheck {
    pub ok: bool,
    pub worst_margin: f64,
    pub worst_ell: Option<DivisorVector>,
}

/// Checks `|omega . ell| > threshold` for every listed divisor.
pub fn is_diophantine(
    omega: &FrequencyVector,
    gamma: f64,
    ell_list: &[DivisorVector],
) -> DiophantineCheck {
    let mut worst_margin = f64::INFINITY;
    let mut worst_ell = None;
    let mut ok = true;
    for ell in ell_list {
        let thr = diophantine_threshold(ell, gamma).expect("nonzero ell");
        let val = ell.dot_omega(omega).abs();
        if thr == 0.0 {
            // gamma = 0: only exact resonances fail
            if val == 0.0 {
                ok = false;
                worst_margin = 0.0;
                worst_ell = Some(ell.clone());
            }
            continue;
        }
        let margin = val / thr;
        if margin < worst_margin {
            worst_margin = margin;
            worst_ell = Some(ell.clone());
        }
        if val <= thr {
            ok = false;
        }
    }
    DiophantineCheck {
        ok,
        worst_margin,
        worst_ell,
    }
}

/// Monte Carlo estimate of the non-Diophantine fraction of the frequency
/// cube.  Deterministic for a fixed seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureReport {
    pub gamma: f64,
    pub samples: u64,
    pub failures: u64,
    pub fraction: f64,
}

pub fn sample_measure(
    gamma: f64,
    l_max: u32,
    j_max: i32,
    n_samples: u64,
    seed: u64,
) -> Result<MeasureReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let ells = enumerate_divisors(j_max, l_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0u64;
    for _ in 0..n_samples {
        // draw the shifts in mode order for determinism
        let mut w = FrequencyVector::integer(j_max);
        for j in -j_max..=j_max {
            let x: f64 = rng.gen_range(-0.5..=0.5);
            w = w.with_xi(j, x).expect("in range");
        }
        if !is_diophantine(&w, gamma, &ells).ok {
            failures += 1;
        }
    }
    Ok(MeasureReport {
        gamma,
        samples: n_samples,
        failures,
        fraction: failures as f64 / n_samples as f64,
    })
}

/// Solves `L_omega G = F` on the range of `Pi^R`:
/// `G_{a,b} = F_{a,b} / (i omega . (a-b))`.
///
/// Terms with `a = b` lie in the kernel and are rejected, as are divisors
/// below [`NEAR_RESONANCE_GUARD`].
pub fn solve_homological(f: &Hamiltonian, omega: &FrequencyVector) -> Result<Hamiltonian> {
    let mut coeffs: BTreeMap<TermKey, Complex64> = BTreeMap::new();
    for (key, c) in f.terms() {
        if key.is_diagonal() {
            return Err(Error::KernelTerm {
                alpha: key.alpha.to_string(),
                beta: key.beta.to_string(),
            });
        }
        let d = omega.divisor(key);
        if d.abs() < NEAR_RESONANCE_GUARD {
            return Err(Error::NearResonance {
                alpha: key.alpha.to_string(),
                beta: key.beta.to_string(),
                divisor: d,
            });
        }
        coeffs.insert(key.clone(), c / Complex64::new(0.0, d));
    }
    Ok(Hamiltonian::from_raw(
        f.modes().clone(),
        f.degree_cutoff(),
        coeffs,
    ))
}

/// Applies `L_omega`: multiply each coefficient by `i omega . (a-b)`.
pub fn apply_l_omega(g: &Hamiltonian, omega: &FrequencyVector) -> Hamiltonian {
    let coeffs: BTreeMap<TermKey, Complex64> = g
        .terms()
        .map(|(key, c)| {
            let d = omega.divisor(key);
            (key.clone(), c * Complex64::new(0.0, d))
        })
        .collect();
    Hamiltonian::from_raw(g.modes().clone(), g.degree_cutoff(), coeffs)
}

/// `i_sharp(sigma) = (312/(sigma theta(1-theta)) ln(156/(sigma theta(1-theta))))^{2/theta}`.
pub fn i_sharp(sigma: f64, theta: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma = {sigma} must lie in (0,1]"
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta = {theta} must lie in (0,1)"
        )));
    }
    let t = sigma * theta * (1.0 - theta);
    Ok(((312.0 / t) * (156.0 / t).ln()).powf(2.0 / theta))
}

/// `f_i(x, sigma) = -sigma(1-theta) x <i>^{theta/2} / 13 + ln(1 + x^2 <i>^2)`.
pub fn smoothing_term(i: i32, x: u32, sigma: f64, theta: f64) -> f64 {
    let x = x as f64;
    -sigma * (1.0 - theta) * x * jap(i).powf(theta / 2.0) / 13.0
        + (1.0 + x * x * jap(i) * jap(i)).ln()
}

/// `sum_i f_i(|ell_i|, sigma)` together with the bound
/// `21 i_sharp(sigma) ln i_sharp(sigma)` it must not exceed.
pub fn smoothing_budget(ell: &DivisorVector, sigma: f64, theta: f64) -> Result<(f64, f64)> {
    let is = i_sharp(sigma, theta)?;
    let budget: f64 = ell
        .iter()
        .map(|(i, v)| smoothing_term(i, v.unsigned_abs(), sigma, theta))
        .sum();
    Ok((budget, 21.0 * is * is.ln()))
}

/// Natural log of the homological-equation constant
/// `gamma^{-1} e^{C sigma^{-3/theta}}`, with `C` assembled from the proof
/// chain: the plain part needs `21 i_sharp(sigma) ln i_sharp(sigma)`, the
/// Lipschitz part `63 i_sharp(sigma/3) ln i_sharp(sigma/3) + 2 ln(1/gamma)`.
/// Far too large to exponentiate; all comparisons stay in log space.
pub fn homological_log_bound(sigma: f64, theta: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must lie in (0,1)"
        )));
    }
    let is1 = i_sharp(sigma, theta)?;
    let is3 = i_sharp(sigma / 3.0, theta)?;
    let plain = 21.0 * is1 * is1.ln();
    let lip = 63.0 * is3 * is3.ln() + 2.0 * (1.0 / gamma).ln();
    Ok((1.0 / gamma).ln() + plain.max(lip))
}

/// All multi-indices with mass in `1..=mass_max` supported in the window,
/// in deterministic order.
pub fn enumerate_multi_indices(mass_max: u32, j_max: i32) -> Vec<MultiIndex> {
    let modes: Vec<i32> = (-j_max..=j_max).collect();
    let mut out = Vec::new();
    fn rec(
        modes: &[i32],
        pos: usize,
        budget: u32,
        cur: &mut Vec<(i32, u32)>,
        out: &mut Vec<MultiIndex>,
    ) {
        if pos == modes.len() {
            if !cur.is_empty() {
                out.push(MultiIndex::from_pairs(cur));
            }
            return;
        }
        for e in 0..=budget {
            if e > 0 {
                cur.push((modes[pos], e));
            }
            rec(modes, pos + 1, budget - e, cur, out);
            if e > 0 {
                cur.pop();
            }
        }
    }
    let mut cur = Vec::new();
    rec(&modes, 0, mass_max, &mut cur, &mut out);
    out.sort();
    out
}

/// Enumerates all pairs `|alpha| = |beta| <= mass_max`, `alpha != beta`,
/// supported in `|j| <= j_max`, in deterministic order.
pub fn enumerate_resonant_pairs(mass_max: u32, j_max: i32) -> Vec<(MultiIndex, MultiIndex)> {
    let singles = enumerate_multi_indices(mass_max, j_max);
    let mut pairs = Vec::new();
    for a in &singles {
        for b in &singles {
            if a.mass() == b.mass() && a != b {
                pairs.push((a.clone(), b.clone()));
            }
        }
    }
    pairs
}

/// Brute-force check of the small-divisor inequality: for pairs satisfying
/// `|sum (alpha_i - beta_i) i^2| <= 10 sum |alpha_i - beta_i|` and every
/// `j` with `alpha_j + beta_j != 0`,
///
/// ```text
/// sum |alpha_i - beta_i| <i>^{theta/2}
///   <= 13/(1-theta) (sum (alpha_i + beta_i) <i>^theta - 2 <j>^theta + |pi|).
/// ```
pub fn verify_small_divisor_lemma(theta: f64, mass_max: u32, j_max: i32) -> VerifyReport {
    verify_small_divisor_lemma_inner(theta, mass_max, j_max, false)
}

pub fn verify_small_divisor_lemma_inner(
    theta: f64,
    mass_max: u32,
    j_max: i32,
    inject_fault: bool,
) -> VerifyReport {
    let mut report = VerifyReport::new("small_divisor_lemma");
    let flip = if inject_fault { -1.0 } else { 1.0 };
    for (alpha, beta) in enumerate_resonant_pairs(mass_max, j_max) {
        let ell = DivisorVector::from_term(&TermKey::new(alpha.clone(), beta.clone()));
        let quad: i64 = ell
            .iter()
            .map(|(i, v)| i as i64 * i as i64 * v as i64)
            .sum();
        if quad.abs() > 10 * ell.mass() as i64 {
            continue; // outside the lemma's precondition
        }
        let lhs: f64 = ell
            .iter()
            .map(|(i, v)| v.unsigned_abs() as f64 * jap(i).powf(theta / 2.0))
            .sum();
        let pi = ell.momentum().abs() as f64;
        let theta_sum: f64 = {
            let mut s = 0.0;
            for (i, e) in alpha.iter() {
                s += e as f64 * jap(i).powf(theta);
            }
            for (i, e) in beta.iter() {
                s += e as f64 * jap(i).powf(theta);
            }
            s
        };
        for j in -j_max..=j_max {
            if alpha.get(j) + beta.get(j) == 0 {
                continue;
            }
            let rhs = flip * 13.0 / (1.0 - theta) * (theta_sum - 2.0 * jap(j).powf(theta) + pi);
            report.checked += 1;
            if lhs > rhs * (1.0 + 1e-12) + 1e-12 {
                report.violations.push(Violation {
                    witness: format!("alpha={alpha} beta={beta} j={j}"),
                    lhs,
                    rhs,
                });
            }
        }
    }
    report
}

/// Brute-force check of the binomial-sum estimate
/// `kappa^{2|m|} sum_{|delta| = q, delta <= m} binom(m, delta) <= c_kappa^q`
/// for `|m| >= q`.  Only the partition of `m` matters, so `m` runs over
/// partitions of each admissible mass.
pub fn verify_fornaio(kappa: f64, q_max: u32, m_mass_max: u32) -> VerifyReport {
    verify_fornaio_inner(kappa, q_max, m_mass_max, false)
}

pub fn verify_fornaio_inner(
    kappa: f64,
    q_max: u32,
    m_mass_max: u32,
    inject_fault: bool,
) -> VerifyReport {
    let mut report = VerifyReport::new("binomial_sum");
    let ck = match crate::torus::c_kappa(kappa) {
        Ok(v) => v,
        Err(e) => {
            report.violations.push(Violation {
                witness: format!("invalid kappa: {e}"),
                lhs: f64::NAN,
                rhs: f64::NAN,
            });
            return report;
        }
    };
    let flip = if inject_fault { 0.0 } else { 1.0 };
    for mass in 0..=m_mass_max {
        for partition in partitions(mass) {
            // realize the partition on distinct modes 0, 1, 2, ...
            let m = MultiIndex::from_pairs(
                &partition
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| (i as i32, e))
                    .collect::<Vec<_>>(),
            );
            for q in 0..=q_max.min(mass) {
                let sum: u128 = m
                    .sub_indices_of_mass(q)
                    .iter()
                    .map(|d| m.binomial(d))
                    .sum();
                let lhs = kappa.powi(2 * mass as i32) * sum as f64;
                let rhs = flip * ck.powi(q as i32);
                report.checked += 1;
                if lhs > rhs * (1.0 + 1e-12) {
                    report.violations.push(Violation {
                        witness: format!("m={m} q={q} kappa={kappa}"),
                        lhs,
                        rhs,
                    });
                }
            }
        }
    }
    report
}

/// Brute-force positivity of the smoothing exponent:
/// `sum <i>^theta (alpha_i + beta_i) - 2 <j>^theta + |pi(alpha - beta)| >= 0`
/// for all `|alpha| = |beta|`, every `j` in the joint support.
pub fn verify_smoothing_positivity(mass_max: u32, j_max: i32, theta: f64) -> VerifyReport {
    verify_smoothing_positivity_inner(mass_max, j_max, theta, false)
}

pub fn verify_smoothing_positivity_inner(
    mass_max: u32,
    j_max: i32,
    theta: f64,
    inject_fault: bool,
) -> VerifyReport {
    let mut report = VerifyReport::new("smoothing_positivity");
    let shift = if inject_fault { 1e-6 } else { 0.0 };
    // include the diagonal pairs: alpha = beta is the equality case
    let singles = enumerate_multi_indices(mass_max, j_max);
    for a in &singles {
        for b in &singles {
            if a.mass() != b.mass() {
                continue;
            }
            let pi = (a.momentum() - b.momentum()).abs() as f64;
            let theta_sum: f64 = a
                .iter()
                .chain(b.iter())
                .map(|(i, e)| e as f64 * jap(i).powf(theta))
                .sum();
            for j in -j_max..=j_max {
                if a.get(j) + b.get(j) == 0 {
                    continue;
                }
                let value = theta_sum - 2.0 * jap(j).powf(theta) + pi - shift;
                report.checked += 1;
                if value < -1e-12 {
                    report.violations.push(Violation {
                        witness: format!("alpha={a} beta={b} j={j}"),
                        lhs: value,
                        rhs: 0.0,
                    });
                }
            }
        }
    }
    report
}

/// Exhaustive sweep of the smoothing-budget estimate over enumerated
/// divisor vectors.
pub fn verify_smoothing_budget(
    l_max: u32,
    j_max: i32,
    sigma: f64,
    theta: f64,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::new("smoothing_budget");
    for ell in enumerate_divisors(j_max, l_max) {
        let (budget, bound) = smoothing_budget(&ell, sigma, theta)?;
        report.checked += 1;
        if budget > bound {
            report.violations.push(Violation {
                witness: format!("ell mass {}", ell.mass()),
                lhs: budget,
                rhs: bound,
            });
        }
    }
    Ok(report)
}

/// Integer partitions of `n` (descending parts), deterministic order.
fn partitions(n: u32) -> Vec<Vec<u32>> {
    fn rec(n: u32, max: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=max.min(n)).rev() {
            cur.push(part);
            rec(n - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    let mut cur = Vec::new();
    if n == 0 {
        return vec![vec![]];
    }
    rec(n, n, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ham::WeightParams;
    use crate::indices::ModeSet;
    use approx::assert_relative_eq;

    fn mi(pairs: &[(i32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs)
    }

    #[test]
    fn threshold_values() {
        let ell = DivisorVector::from_pairs(&[(1, 1), (-1, -1)]);
        assert_relative_eq!(
            diophantine_threshold(&ell, 1.0).unwrap(),
            0.25,
            max_relative = 1e-14
        );
        let ell2 = DivisorVector::from_pairs(&[(2, 1)]);
        assert_relative_eq!(
            diophantine_threshold(&ell2, 1.0).unwrap(),
            0.2,
            max_relative = 1e-14
        );
        assert_eq!(diophantine_threshold(&ell2, 0.0).unwrap(), 0.0);
        assert!(diophantine_threshold(&DivisorVector::from_pairs(&[]), 1.0).is_err());
    }

    #[test]
    fn threshold_multiplicative_over_disjoint_support() {
        let ell = DivisorVector::from_pairs(&[(1, 2), (-3, 1)]);
        let left = DivisorVector::from_pairs(&[(1, 2)]);
        let right = DivisorVector::from_pairs(&[(-3, 1)]);
        let g = 0.7;
        assert_relative_eq!(
            diophantine_threshold(&ell, g).unwrap(),
            diophantine_threshold(&left, g).unwrap() * diophantine_threshold(&right, g).unwrap()
                / g,
            max_relative = 1e-13
        );
    }

    #[test]
    fn diophantine_checks() {
        // resonant integer frequencies fail on ell = e_1 - e_{-1}
        let omega = FrequencyVector::integer(1);
        let ells = vec![DivisorVector::from_pairs(&[(1, 1), (-1, -1)])];
        let c = is_diophantine(&omega, 0.5, &ells);
        assert!(!c.ok);
        assert_eq!(c.worst_margin, 0.0);

        // single ell = e_1, omega_1 = 1.3: margin 1.3 / 0.5 passes at gamma = 1
        let w = FrequencyVector::from_xi(1, |j| if j == 1 { 0.3 } else { 0.0 }).unwrap();
        let c2 = is_diophantine(&w, 1.0, &[DivisorVector::from_pairs(&[(1, 1)])]);
        assert!(c2.ok);
        assert_relative_eq!(c2.worst_margin, 1.3 / 0.5, max_relative = 1e-13);
    }

    #[test]
    fn enumeration_counts() {
        // j_max = 1 (3 modes), mass <= 1: 6 signed unit vectors
        assert_eq!(enumerate_divisors(1, 1).len(), 6);
        let all = enumerate_divisors(1, 2);
        assert!(all.iter().all(|e| e.mass() <= 2 && !e.is_zero()));
        // mass exactly 2 on 3 modes: 3 doubles * 2 signs + 3 pairs * 4 signs = 18
        assert_eq!(all.len(), 6 + 18);
    }

    #[test]
    fn measure_deterministic_and_monotone() {
        let a = sample_measure(0.1, 2, 2, 400, 7).unwrap();
        let b = sample_measure(0.1, 2, 2, 400, 7).unwrap();
        assert_eq!(a, b);
        let zero = sample_measure(0.0, 2, 2, 200, 3).unwrap();
        assert_eq!(zero.failures, 0);
        let lo = sample_measure(0.05, 2, 2, 2000, 11).unwrap();
        let hi = sample_measure(0.2, 2, 2, 2000, 11).unwrap();
        assert!(hi.failures >= lo.failures);
    }

    #[test]
    fn homological_round_trip() {
        let modes = ModeSet::new(2).unwrap();
        let omega = FrequencyVector::from_xi(2, |j| 0.17 * (j as f64 * 1.3).sin()).unwrap();
        let mut f = Hamiltonian::zero(modes.clone(), 6).unwrap();
        f.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(0.3, -0.4))
            .unwrap();
        f.add_real_pair(
            mi(&[(0, 1), (1, 1)]),
            mi(&[(2, 1), (-1, 1)]),
            Complex64::new(0.1, 0.2),
        )
        .unwrap();
        let g = solve_homological(&f, &omega).unwrap();
        let back = apply_l_omega(&g, &omega);
        for (k, c) in f.terms() {
            let d = back.coefficient(k);
            assert_relative_eq!(d.re, c.re, max_relative = 1e-13);
            assert_relative_eq!(d.im, c.im, max_relative = 1e-13);
        }
        // reality preserved
        for (k, c) in g.terms() {
            let partner = g.coefficient(&k.conjugate());
            assert_relative_eq!(c.re, partner.re, max_relative = 1e-12);
            assert_relative_eq!(c.im, -partner.im, max_relative = 1e-12);
        }
        // explicit coefficient: G = c / (i delta)
        let key = TermKey::new(mi(&[(1, 1)]), mi(&[(2, 1)]));
        let delta = omega.divisor(&key);
        let expect = Complex64::new(0.3, -0.4) / Complex64::new(0.0, delta);
        let got = g.coefficient(&key);
        assert_relative_eq!(got.re, expect.re, max_relative = 1e-13);
        assert_relative_eq!(got.im, expect.im, max_relative = 1e-13);

        // diagonal terms are kernel
        let mut bad = Hamiltonian::zero(modes, 6).unwrap();
        bad.add_real_pair(mi(&[(1, 1)]), mi(&[(1, 1)]), Complex64::new(1.0, 0.0))
            .unwrap();
        assert!(matches!(
            solve_homological(&bad, &omega),
            Err(Error::KernelTerm { .. })
        ));
    }

    #[test]
    fn near_resonance_rejected() {
        let modes = ModeSet::new(2).unwrap();
        // ell = e_1 - e_{-1} with equal shifts gives an exact zero divisor
        let omega = FrequencyVector::from_xi(2, |_| 0.25).unwrap();
        let mut f = Hamiltonian::zero(modes, 6).unwrap();
        f.add_real_pair(mi(&[(1, 1)]), mi(&[(-1, 1)]), Complex64::new(1.0, 0.0))
            .unwrap();
        assert!(matches!(
            solve_homological(&f, &omega),
            Err(Error::NearResonance { .. })
        ));
    }

    #[test]
    fn i_sharp_and_budget_values() {
        // f_1(1, 1) with theta = 1/2: -1/26 + ln 2
        let v = smoothing_term(1, 1, 1.0, 0.5);
        assert_relative_eq!(v, -1.0 / 26.0 + 2.0_f64.ln(), max_relative = 1e-13);
        let ell = DivisorVector::from_pairs(&[(1, 1)]);
        let (budget, bound) = smoothing_budget(&ell, 1.0, 0.5).unwrap();
        assert_relative_eq!(budget, v, max_relative = 1e-13);
        assert!(budget <= bound);
        // empty ell has zero budget
        let (b0, _) = smoothing_budget(&DivisorVector::from_pairs(&[]), 1.0, 0.5).unwrap();
        assert_eq!(b0, 0.0);
        assert!(i_sharp(0.0, 0.5).is_err());
        assert!(i_sharp(2.0, 0.5).is_err());
    }

    #[test]
    fn budget_sweep_holds() {
        let report = verify_smoothing_budget(4, 3, 0.5, 0.5).unwrap();
        assert!(report.checked > 0);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn small_divisor_lemma_hand_case_and_sweep() {
        // alpha = e_1, beta = e_{-1}, j = 1, theta = 1/2: lhs 2, rhs 52
        let report = verify_small_divisor_lemma(0.5, 1, 1);
        assert!(report.violations.is_empty());
        let sweep = verify_small_divisor_lemma(0.5, 3, 4);
        assert!(sweep.checked > 100);
        assert!(sweep.violations.is_empty(), "{:?}", sweep.violations);
        // fault injection flips the inequality and must report
        let faulty = verify_small_divisor_lemma_inner(0.5, 1, 1, true);
        assert!(!faulty.violations.is_empty());
    }

    #[test]
    fn fornaio_hand_case_and_sweep() {
        // kappa^2 = 1/4, q = 1, m = 2 e_1: (1/4)^2 * 2 = 1/8 <= c_kappa = 1/2
        let single = verify_fornaio(0.5, 1, 2);
        assert!(single.violations.is_empty());
        for kappa2 in [0.25_f64, 0.5, 0.7] {
            let r = verify_fornaio(kappa2.sqrt(), 4, 8);
            assert!(r.violations.is_empty(), "kappa^2 = {kappa2}: {:?}", r.violations);
            assert!(r.checked > 0);
        }
        let faulty = verify_fornaio_inner(0.5, 2, 4, true);
        assert!(!faulty.violations.is_empty());
    }

    #[test]
    fn smoothing_positivity_sweep() {
        for theta in [0.3, 0.5, 0.8] {
            let r = verify_smoothing_positivity(3, 4, theta);
            assert!(r.violations.is_empty(), "theta = {theta}: {:?}", r.violations);
            assert!(r.checked > 0);
        }
        // equality case alpha = beta = e_j contributes value exactly 0
        let r1 = verify_smoothing_positivity(1, 1, 0.5);
        assert!(r1.violations.is_empty());
        let faulty = verify_smoothing_positivity_inner(1, 1, 0.5, true);
        assert!(!faulty.violations.is_empty());
    }

    #[test]
    fn homological_norm_bound_in_log_space() {
        let modes = ModeSet::new(2).unwrap();
        let omega = FrequencyVector::from_xi(2, |j| 0.11 + 0.07 * j as f64).unwrap();
        let mut f = Hamiltonian::zero(modes, 6).unwrap();
        f.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(0.9, 0.0))
            .unwrap();
        let g = solve_homological(&f, &omega).unwrap();
        let gamma = 0.1;
        let (sigma, theta) = (0.5, 0.5);
        let env_f = WeightParams::new(2.0, 1.0, 0.0, 1.0, theta, 1.0).unwrap();
        let env_g = WeightParams::new(2.0, 1.0 + sigma, 0.0, 1.0 - sigma, theta, 1.0).unwrap();
        let lhs_ln = g.norm(&env_g).ln();
        let rhs_ln = f.norm(&env_f).ln() + homological_log_bound(sigma, theta, gamma).unwrap();
        assert!(lhs_ln <= rhs_ln);
    }
}
