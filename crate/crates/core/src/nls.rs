//! Construction of the truncated NLS Hamiltonian from an analytic
//! nonlinearity, its regularity bound, and the end-to-end driver that turns
//! a converged counter-term into a Fourier-multiplier potential.
//!
//! The equation `i u_t + u_xx - V*u + f(x, |u|^2) u = 0` has Hamiltonian
//! `sum_j (j^2 + V_j)|u_j|^2 + P` with
//! `P = int F(x, |u(x)|^2) dx / (2 pi)`, `F(x,y) = int_0^y f(x,s) ds`.
//! The circle measure is normalized so the quadratic part matches
//! `sum j^2 |u_j|^2` exactly.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ham::{FrequencyVector, Hamiltonian, WeightParams};
use crate::indices::{ModeSet, MultiIndex};
use crate::kam::{self, KamConfig, KamRunResult};
use crate::torus::{CounterTerm, TorusData};

/// Analytic nonlinearity `f(x, y) = sum_{d >= 1} f^(d)(x) y^d` with
/// `f^(d)(x) = sum_k f^(d)_k e^{ikx}`, real in both arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearitySpec {
    coeffs: BTreeMap<(u32, i32), Complex64>,
    /// Strip width of analyticity in `x`.
    pub a_strip: f64,
    /// Radius of analyticity in `y`.
    pub big_r: f64,
}

impl NonlinearitySpec {
    pub fn new(
        coeffs: impl IntoIterator<Item = (u32, i32, Complex64)>,
        a_strip: f64,
        big_r: f64,
    ) -> Result<Self> {
        if !(a_strip > 0.0 && big_r > 0.0) {
            return Err(Error::InvalidParameter(
                "analyticity parameters must be positive".into(),
            ));
        }
        let mut map: BTreeMap<(u32, i32), Complex64> = BTreeMap::new();
        for (d, k, c) in coeffs {
            if d == 0 {
                return Err(Error::InvalidParameter(
                    "nonlinearity degrees start at 1 (f(x,0) = 0)".into(),
                ));
            }
            if c.norm() > 0.0 {
                *map.entry((d, k)).or_default() += c;
            }
        }
        // reality: f^(d)_{-k} = conj(f^(d)_k)
        for (&(d, k), &c) in &map {
            let partner = map.get(&(d, -k)).copied().unwrap_or_default();
            if (partner - c.conj()).norm() > 1e-12 * (1.0 + c.norm()) {
                return Err(Error::RealityViolation {
                    alpha: format!("f^({d})_{k}"),
                    beta: format!("f^({d})_{}", -k),
                    got: format!("{c}"),
                    partner: format!("{partner}"),
                });
            }
        }
        Ok(NonlinearitySpec {
            coeffs: map,
            a_strip,
            big_r,
        })
    }

    /// The translation-invariant monomial `f(y) = c y^d`.
    pub fn monomial(d: u32, c: f64, a_strip: f64, big_r: f64) -> Result<Self> {
        NonlinearitySpec::new([(d, 0, Complex64::new(c, 0.0))], a_strip, big_r)
    }

    pub fn coefficient(&self, d: u32, k: i32) -> Complex64 {
        self.coeffs.get(&(d, k)).copied().unwrap_or_default()
    }

    pub fn coeffs(&self) -> impl Iterator<Item = ((u32, i32), Complex64)> + '_ {
        self.coeffs.iter().map(|(&dk, &c)| (dk, c))
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.coeffs.keys().all(|&(_, k)| k == 0)
    }

    /// `|f|_{a,R} = sum_d sup_k |f^(d)_k| e^{a|k|} R^d`.
    pub fn analytic_norm(&self) -> f64 {
        let mut per_degree: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(d, k), &c) in &self.coeffs {
            let w = c.norm() * (self.a_strip * k.abs() as f64).exp();
            let e = per_degree.entry(d).or_default();
            *e = e.max(w);
        }
        per_degree
            .iter()
            .map(|(&d, &sup)| sup * self.big_r.powi(d as i32))
            .sum()
    }

    /// Serialization: header with the analyticity parameters, then
    /// `d k re im` lines.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# nonlinearity v1 a={} R={}", self.a_strip, self.big_r);
        for (&(d, k), &c) in &self.coeffs {
            let _ = writeln!(out, "{d} {k} {} {}", c.re, c.im);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty nonlinearity text".into()))?;
        let mut a = None;
        let mut r = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("a=") {
                a = v.parse::<f64>().ok();
            }
            if let Some(v) = tok.strip_prefix("R=") {
                r = v.parse::<f64>().ok();
            }
        }
        let (a, r) = match (a, r) {
            (Some(a), Some(r)) => (a, r),
            _ => return Err(Error::Parse(format!("bad nonlinearity header {header:?}"))),
        };
        let mut coeffs = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("bad coefficient line {line:?}")));
            }
            coeffs.push((
                fields[0]
                    .parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad degree {:?}", fields[0])))?,
                fields[1]
                    .parse::<i32>()
                    .map_err(|_| Error::Parse(format!("bad harmonic {:?}", fields[1])))?,
                Complex64::new(
                    fields[2]
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad float {:?}", fields[2])))?,
                    fields[3]
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad float {:?}", fields[3])))?,
                ),
            ));
        }
        NonlinearitySpec::new(coeffs, a, r)
    }
}

/// `P = int F(x, |u|^2) dx/(2 pi)` truncated to the mode window and degree
/// cutoff: the monomial `u^alpha ubar^beta` with `|alpha| = |beta| = d+1`
/// receives
///
/// ```text
/// (1/(d+1)) ((d+1)!/alpha!) ((d+1)!/beta!) f^(d)_{-pi(alpha-beta)}.
/// ```
pub fn build_nls_perturbation(
    f: &NonlinearitySpec,
    modes: &ModeSet,
    degree_cutoff: u32,
) -> Result<Hamiltonian> {
    if degree_cutoff < 4 {
        return Err(Error::InvalidParameter(format!(
            "degree cutoff {degree_cutoff} < 4 holds no nonlinear term"
        )));
    }
    let degrees: Vec<u32> = {
        let mut ds: Vec<u32> = f.coeffs.keys().map(|&(d, _)| d).collect();
        ds.dedup();
        ds
    };
    if !degrees.is_empty() && degrees.iter().all(|&d| 2 * (d + 1) > degree_cutoff) {
        return Err(Error::InvalidParameter(format!(
            "degree cutoff {degree_cutoff} too small for the stored nonlinearity"
        )));
    }
    let mut coeffs: Vec<(MultiIndex, MultiIndex, Complex64)> = Vec::new();
    for &d in &degrees {
        let mass = d + 1;
        if 2 * mass > degree_cutoff {
            continue;
        }
        let all = crate::divisors::enumerate_multi_indices(mass, modes.j_max());
        let indices: Vec<&MultiIndex> = all.iter().filter(|m| m.mass() == mass).collect();
        // group by momentum for the harmonic matching
        let mut by_momentum: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, m) in indices.iter().enumerate() {
            by_momentum.entry(m.momentum()).or_default().push(i);
        }
        let inv_d1 = 1.0 / (mass as f64);
        for alpha in &indices {
            let ma = multinomial(alpha, mass) * inv_d1;
            for (&(dd, k), &c) in f.coeffs.range((d, i32::MIN)..=(d, i32::MAX)) {
                debug_assert_eq!(dd, d);
                // pi(alpha - beta) = -k
                let target = alpha.momentum() + k as i64;
                if let Some(betas) = by_momentum.get(&target) {
                    for &bi in betas {
                        let beta = indices[bi];
                        let w = ma * multinomial(beta, mass);
                        coeffs.push(((*alpha).clone(), beta.clone(), c * w));
                    }
                }
            }
        }
    }
    Hamiltonian::from_coefficients(modes.clone(), degree_cutoff, coeffs)
}

/// `(mass)! / prod alpha_j!` as a float (masses are tiny).
fn multinomial(alpha: &MultiIndex, mass: u32) -> f64 {
    let mut num: u128 = 1;
    for i in 1..=mass as u128 {
        num *= i;
    }
    let mut den: u128 = 1;
    for (_, e) in alpha.iter() {
        for i in 1..=e as u128 {
            den *= i;
        }
    }
    (num / den) as f64
}

/// `C_alg(p) = 2^{p+1} (1 + 2 sum_{n >= 1} n^{-p})`.
pub fn c_alg(p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be > 1")));
    }
    let mut zeta = 0.0;
    let mut n = 1u64;
    loop {
        let term = (n as f64).powf(-p);
        zeta += term;
        n += 1;
        if term < 1e-14 || n > 10_000_000 {
            // integral tail estimate
            zeta += (n as f64).powf(1.0 - p) / (p - 1.0);
            break;
        }
    }
    Ok(2.0_f64.powf(p + 1.0) * (1.0 + 2.0 * zeta))
}

/// `C(p, s, t) = sup_j e^{-t|j| + s<j>^theta} <j>^p`; requires `t > 0`.
pub fn c_weight(p: f64, s: f64, t: f64, theta: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "exponential margin t = {t} must be positive"
        )));
    }
    let g = |j: f64| -> f64 {
        let jap = j.max(1.0);
        (-t * j + s * jap.powf(theta) + p * jap.ln()).exp()
    };
    let mut sup = g(0.0);
    let mut decreasing = 0;
    let mut j = 1u64;
    while j < 10_000_000 {
        let v = g(j as f64);
        if v > sup {
            sup = v;
            decreasing = 0;
        } else {
            decreasing += 1;
            if decreasing > 64 && (v < sup * 1e-30 || j > 1000) {
                break;
            }
        }
        j += 1;
    }
    Ok(sup)
}

/// Comparison of the measured perturbation norm against the analytic
/// regularity bound.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
    pub slack: f64,
}

/// Asserts `|P|_{r,s,eta} <= C(p, s, a_strip - a - eta) (C_alg r)^2 |f| / R`
/// on the truncated build; requires `(C_alg r)^2 <= R`.
pub fn verify_regularity_bound(
    p_ham: &Hamiltonian,
    f: &NonlinearitySpec,
    env: &WeightParams,
) -> Result<RegularityReport> {
    let calg = c_alg(env.p)?;
    if (calg * env.r).powi(2) > f.big_r {
        return Err(Error::InvalidParameter(format!(
            "(C_alg r)^2 = {:e} exceeds R = {:e}",
            (calg * env.r).powi(2),
            f.big_r
        )));
    }
    let margin = f.a_strip - env.a - env.eta;
    let cw = c_weight(env.p, env.s, margin, env.theta)?;
    let lhs = p_ham.norm(env);
    let rhs = cw * (calg * env.r).powi(2) / f.big_r * f.analytic_norm();
    Ok(RegularityReport {
        lhs,
        rhs,
        ok: lhs <= rhs * (1.0 + 1e-12),
        slack: rhs / lhs.max(1e-300),
    })
}

/// `V_j = Lambda_j + omega_j - j^2`: the potential that realizes the
/// counter-term as a Fourier multiplier.
pub fn potential_from_counterterm(
    lambda: &CounterTerm,
    omega: &FrequencyVector,
) -> BTreeMap<i32, f64> {
    let j_max = omega.j_max();
    (-j_max..=j_max)
        .map(|j| {
            (
                j,
                lambda.get(j) + omega.omega(j) - (j as f64) * (j as f64),
            )
        })
        .collect()
}

/// Output of the end-to-end driver.
#[derive(Debug, Clone)]
pub struct TorelloResult {
    pub v: BTreeMap<i32, f64>,
    pub run: KamRunResult,
    pub config: KamConfig,
    /// `ln eps_*` from the theoretical chain (astronomically small at desk
    /// scale, kept as a log).
    pub log_eps_star: f64,
    /// The measured smallness ratio `|f|_{a,R} r^2 / (gamma R)`.
    pub smallness_measured: f64,
    /// Whether the theoretical threshold admits the measured ratio.
    pub smallness_ok: bool,
    pub perturbation_norm: f64,
}

/// Runs the counter-term construction for the NLS Hamiltonian: builds the
/// perturbation, iterates with `N_0 = D_omega`, and maps the counter-term
/// to a potential.  The analyticity budget follows the torus: `r0 = 2
/// sqrt(2) r`, `eta0 = (a_strip - a)/2`, `sigma = min(s, eta0, 2)/2`,
/// `s0 = s - sigma`.
#[allow(clippy::too_many_arguments)]
pub fn run_theorem_torello(
    f: &NonlinearitySpec,
    omega: &FrequencyVector,
    torus: &TorusData,
    modes: &ModeSet,
    degree_cutoff: u32,
    gamma: f64,
    eps_target: f64,
    max_steps: usize,
) -> Result<TorelloResult> {
    let w = *torus.weights();
    let r = torus.r();
    let r0 = 2.0 * 2.0_f64.sqrt() * r;
    let rho = r0 - 2.0 * r;
    let eta0 = (f.a_strip - w.a) / 2.0;
    if eta0 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "strip width {} must exceed the space weight a = {}",
            f.a_strip, w.a
        )));
    }
    let sigma = 0.5 * w.s.min(eta0).min(2.0);
    let s0 = w.s - sigma;
    if s0 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "derived s0 = {s0} must be positive"
        )));
    }
    let mut cfg = KamConfig::new(r0, s0, eta0, rho, sigma, gamma)?;
    cfg.eps_target = eps_target;
    cfg.max_steps = max_steps;

    let p_ham = build_nls_perturbation(f, modes, degree_cutoff)?;
    let env0 = w.with_rse(cfg.r0, cfg.s0, cfg.eta0);
    let perturbation_norm = p_ham.norm(&env0);

    let run = kam::run_counterterm_theorem(&p_ham, omega, torus, &cfg)?;

    // theoretical threshold eps_* = eps_bar / (8 C_alg^2 C(p, s0, eta0))
    let calg = c_alg(w.p)?;
    let cw = c_weight(w.p, s0, eta0, w.theta)?;
    let log_eps_star = run.constants.log_eps_bar - (8.0 * calg * calg * cw).ln();
    let smallness_measured = f.analytic_norm() * r * r / (gamma * f.big_r);
    let smallness_ok = smallness_measured > 0.0 && smallness_measured.ln() <= log_eps_star;

    let v = potential_from_counterterm(&run.lambda, omega);
    Ok(TorelloResult {
        v,
        run,
        config: cfg,
        log_eps_star,
        smallness_measured,
        smallness_ok,
        perturbation_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ham::TermKey;
    use approx::assert_relative_eq;

    fn mi(pairs: &[(i32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs)
    }

    #[test]
    fn quadratic_f_single_mode() {
        // f = y on the single mode 0: P = |u_0|^4 / 2
        let f = NonlinearitySpec::monomial(1, 1.0, 1.0, 1.0).unwrap();
        let modes = ModeSet::new(0).unwrap();
        let p = build_nls_perturbation(&f, &modes, 4).unwrap();
        assert_eq!(p.len(), 1);
        let c = p.coefficient(&TermKey::new(mi(&[(0, 2)]), mi(&[(0, 2)])));
        assert_relative_eq!(c.re, 0.5, max_relative = 1e-14);
        assert_eq!(c.im, 0.0);
    }

    #[test]
    fn quintic_model_preserves_momentum() {
        // f = y^2: sextic terms with j1+j2+j3 = j4+j5+j6
        let f = NonlinearitySpec::monomial(2, 1.0, 1.0, 1.0).unwrap();
        let modes = ModeSet::new(1).unwrap();
        let p = build_nls_perturbation(&f, &modes, 6).unwrap();
        assert!(!p.is_zero());
        assert!(p.preserves_momentum());
        for (k, _) in p.terms() {
            assert_eq!(k.alpha.mass(), 3);
            assert_eq!(k.beta.mass(), 3);
        }
        // spot check: the coefficient of |u_0|^6 is (1/3) (3!/3!)^2 = 1/3
        let c = p.coefficient(&TermKey::new(mi(&[(0, 3)]), mi(&[(0, 3)])));
        assert_relative_eq!(c.re, 1.0 / 3.0, max_relative = 1e-14);
        // and |u_{-1}|^2 |u_0|^2 |u_1|^2 carries (1/3) * 6 * 6 = 12
        let k = TermKey::new(mi(&[(-1, 1), (0, 1), (1, 1)]), mi(&[(-1, 1), (0, 1), (1, 1)]));
        assert_relative_eq!(p.coefficient(&k).re, 12.0, max_relative = 1e-14);
    }

    #[test]
    fn x_dependent_harmonic_shifts_momentum() {
        // a single harmonic f^(1)_{+-1} produces quartic terms with
        // |pi(alpha - beta)| = 1
        let eps = 1e-3;
        let f = NonlinearitySpec::new(
            [
                (1u32, 1i32, Complex64::new(eps, 0.0)),
                (1u32, -1i32, Complex64::new(eps, 0.0)),
            ],
            1.0,
            1.0,
        )
        .unwrap();
        let modes = ModeSet::new(1).unwrap();
        let p = build_nls_perturbation(&f, &modes, 4).unwrap();
        assert!(!p.is_zero());
        assert!(!p.preserves_momentum());
        for (k, _) in p.terms() {
            assert_eq!(k.momentum_defect().abs(), 1);
        }
    }

    #[test]
    fn gauge_covariance_of_builder() {
        // multiplying f^(d)_k by e^{ikc} maps coefficients by
        // e^{-i pi(alpha-beta) c}; norms are invariant
        let eps = 0.01;
        let c_phase = 0.7;
        let base = NonlinearitySpec::new(
            [
                (1u32, 1i32, Complex64::new(eps, 0.0)),
                (1u32, -1i32, Complex64::new(eps, 0.0)),
            ],
            1.0,
            1.0,
        )
        .unwrap();
        let shifted = NonlinearitySpec::new(
            [
                (
                    1u32,
                    1i32,
                    Complex64::new(eps, 0.0) * Complex64::from_polar(1.0, c_phase),
                ),
                (
                    1u32,
                    -1i32,
                    Complex64::new(eps, 0.0) * Complex64::from_polar(1.0, -c_phase),
                ),
            ],
            1.0,
            1.0,
        )
        .unwrap();
        let modes = ModeSet::new(1).unwrap();
        let p0 = build_nls_perturbation(&base, &modes, 4).unwrap();
        let p1 = build_nls_perturbation(&shifted, &modes, 4).unwrap();
        for (k, c0) in p0.terms() {
            let expect = c0 * Complex64::from_polar(1.0, -(k.momentum_defect() as f64) * c_phase);
            let got = p1.coefficient(k);
            assert_relative_eq!(got.re, expect.re, max_relative = 1e-12);
            assert_relative_eq!(got.im, expect.im, max_relative = 1e-12);
        }
        let env = WeightParams::new(2.0, 1.0, 0.0, 0.3, 0.5, 0.1).unwrap();
        assert_relative_eq!(p0.norm(&env), p1.norm(&env), max_relative = 1e-12);
    }

    #[test]
    fn constants_and_regularity_bound() {
        // C_alg(2) = 8 (1 + pi^2 / 3)
        let c = c_alg(2.0).unwrap();
        let expect = 8.0 * (1.0 + std::f64::consts::PI.powi(2) / 3.0);
        assert_relative_eq!(c, expect, max_relative = 1e-6);

        // quintic model at small r
        let f = NonlinearitySpec::monomial(2, 1.0, 2.0, 1.0).unwrap();
        let modes = ModeSet::new(3).unwrap();
        let p = build_nls_perturbation(&f, &modes, 8).unwrap();
        let env = WeightParams::new(2.0, 1.0, 0.0, 1.0, 0.5, 0.01).unwrap();
        let report = verify_regularity_bound(&p, &f, &env).unwrap();
        assert!(report.ok, "lhs = {:e}, rhs = {:e}", report.lhs, report.rhs);

        // f = 0: both sides vanish
        let zero = NonlinearitySpec::new([], 2.0, 1.0).unwrap();
        let p0 = build_nls_perturbation(&zero, &modes, 8).unwrap();
        assert!(p0.is_zero());
        let r0 = verify_regularity_bound(&p0, &zero, &env).unwrap();
        assert_eq!(r0.lhs, 0.0);
        assert_eq!(r0.rhs, 0.0);

        // quadratic-in-r scaling: halving r at least quarters the norm
        let n1 = p.norm(&env);
        let n2 = p.norm(&env.with_r(0.005));
        assert!(n2 <= n1 / 4.0 * (1.0 + 1e-12));

        // precondition violation
        let env_big = env.with_r(10.0);
        assert!(verify_regularity_bound(&p, &f, &env_big).is_err());
    }

    #[test]
    fn potential_round_trip() {
        let omega = FrequencyVector::from_xi(2, |j| 0.05 * j as f64).unwrap();
        // Lambda = 0: V_j = xi_j
        let v0 = potential_from_counterterm(&CounterTerm::zero(), &omega);
        for j in -2..=2 {
            assert_relative_eq!(v0[&j], omega.xi(j), max_relative = 1e-14);
        }
        // integer frequencies: V = Lambda
        let lam = CounterTerm::from_pairs([(1, 0.3), (-2, -0.1)]);
        let vi = potential_from_counterterm(&lam, &FrequencyVector::integer(2));
        assert_relative_eq!(vi[&1], 0.3, max_relative = 1e-14);
        assert_relative_eq!(vi[&-2], -0.1, max_relative = 1e-14);
        // round trip: lambda_j = j^2 - omega_j + V_j
        let v = potential_from_counterterm(&lam, &omega);
        for j in -2..=2 {
            let back = (j as f64) * (j as f64) - omega.omega(j) + v[&j];
            assert_relative_eq!(back, lam.get(j), epsilon = 1e-14);
        }
    }

    #[test]
    fn spec_text_round_trip() {
        let f = NonlinearitySpec::new(
            [
                (2u32, 0i32, Complex64::new(1.0, 0.0)),
                (1u32, 1i32, Complex64::new(0.25, -0.125)),
                (1u32, -1i32, Complex64::new(0.25, 0.125)),
            ],
            2.0,
            1.5,
        )
        .unwrap();
        let text = f.to_text();
        let back = NonlinearitySpec::from_text(&text).unwrap();
        assert_eq!(back, f);
        assert!(f.analytic_norm() > 0.0);
    }
}
