//! Degree decomposition at an invariant torus.
//!
//! Fixing actions `I` with `sqrt(I)` in a ball of radius `kappa r`, every
//! series splits into components `H^(d)` with increasing order of vanishing
//! at the torus `T_I = { |u_j|^2 = I_j }`.  The projections are computed by
//! direct finite summation over stored terms: rewrite each monomial in
//! disjoint-support form `|u|^{2m} u^alpha ubar^beta`, Taylor-expand the
//! action factor at `I`, and collect
//!
//! ```text
//! H^(2q-2):  sum_{delta <= m, |delta| = q} binom(m,delta) I^{m-delta}
//!            (|u|^2 - I)^delta u^alpha ubar^beta.
//! ```
//!
//! With a tangential subset `S` the same expansion runs over the modes of
//! `S` only and the normal modes contribute their plain polynomial degree,
//! so the mixed degree is `2|delta| + |a| + |b| - 2` and odd degrees occur.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ham::{FrequencyVector, Hamiltonian, TermKey, WeightParams};
use crate::indices::{split_min, ModeSet, MultiIndex};

/// Actions of the reference torus together with the geometry that admits
/// them: `I_j <= kappa^2 u_{0,j}(r)^2` componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusData {
    actions: BTreeMap<i32, f64>,
    kappa: f64,
    weights: WeightParams,
}

impl TorusData {
    /// `weights.r` is the reference radius of the ball containing the torus.
    pub fn new(
        actions: impl IntoIterator<Item = (i32, f64)>,
        kappa: f64,
        weights: WeightParams,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa = {kappa} must lie in (0,1)"
            )));
        }
        weights.validate()?;
        let mut map = BTreeMap::new();
        for (j, i) in actions {
            if i < 0.0 {
                return Err(Error::InvalidParameter(format!("I_{j} = {i} < 0")));
            }
            if i > 0.0 {
                map.insert(j, i);
            }
        }
        let t = TorusData {
            actions: map,
            kappa,
            weights,
        };
        for (&j, &i) in &t.actions {
            let cap = t.kappa * t.kappa * t.weights.u0(j) * t.weights.u0(j);
            if i > cap * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "I_{j} = {i:e} exceeds kappa^2 u0_{j}^2 = {cap:e}"
                )));
            }
        }
        Ok(t)
    }

    /// Profile torus `I_j = kappa^2 u_{0,j}(r)^2` on the listed modes.
    pub fn profile(modes: &[i32], kappa: f64, weights: WeightParams) -> Result<Self> {
        let actions: Vec<(i32, f64)> = modes
            .iter()
            .map(|&j| (j, kappa * kappa * weights.u0(j) * weights.u0(j)))
            .collect();
        TorusData::new(actions, kappa, weights)
    }

    pub fn action(&self, j: i32) -> f64 {
        self.actions.get(&j).copied().unwrap_or(0.0)
    }

    pub fn actions(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.actions.iter().map(|(&j, &i)| (j, i))
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn r(&self) -> f64 {
        self.weights.r
    }

    pub fn weights(&self) -> &WeightParams {
        &self.weights
    }

    /// `I^m`, with the convention `0^0 = 1`.
    pub fn action_power(&self, m: &MultiIndex) -> f64 {
        let mut p = 1.0;
        for (j, e) in m.iter() {
            let i = self.action(j);
            if i == 0.0 {
                return 0.0;
            }
            p *= i.powi(e as i32);
        }
        p
    }

    /// `|sqrt(I)|_{p,s,a}`, which the admissibility condition bounds by
    /// `kappa r`.
    pub fn sqrt_action_norm(&self) -> f64 {
        self.actions
            .iter()
            .map(|(&j, &i)| i.sqrt() * (self.weights.r / self.weights.u0(j)))
            .fold(0.0_f64, f64::max)
    }

    /// Serialization: header with kappa and r, then `j:I_j` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# torus v1 kappa={} r={}", self.kappa, self.weights.r);
        for (&j, &i) in &self.actions {
            let _ = writeln!(out, "{j}:{i}");
        }
        out
    }

    pub fn from_text(text: &str, weights: WeightParams) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty torus text".into()))?;
        let mut kappa = None;
        let mut r = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("kappa=") {
                kappa = v.parse::<f64>().ok();
            }
            if let Some(v) = tok.strip_prefix("r=") {
                r = v.parse::<f64>().ok();
            }
        }
        let (kappa, r) = match (kappa, r) {
            (Some(k), Some(r)) => (k, r),
            _ => return Err(Error::Parse(format!("bad torus header {header:?}"))),
        };
        let mut actions = Vec::new();
        for line in lines {
            let (j, i) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("bad torus line {line:?}")))?;
            actions.push((
                j.trim()
                    .parse::<i32>()
                    .map_err(|_| Error::Parse(format!("bad mode {j:?}")))?,
                i.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad action {i:?}")))?,
            ));
        }
        TorusData::new(actions, kappa, weights.with_r(r))
    }
}

/// A frequency counter-term `sum_j lambda_j (|u_j|^2 - I_j)`, identified
/// with its coefficient sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CounterTerm {
    lambda: BTreeMap<i32, f64>,
}

impl CounterTerm {
    pub fn zero() -> Self {
        CounterTerm::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (i32, f64)>) -> Self {
        let mut lambda = BTreeMap::new();
        for (j, v) in pairs {
            if v != 0.0 {
                *lambda.entry(j).or_insert(0.0) += v;
            }
        }
        lambda.retain(|_, v| *v != 0.0);
        CounterTerm { lambda }
    }

    pub fn unit(j: i32) -> Self {
        CounterTerm::from_pairs([(j, 1.0)])
    }

    pub fn get(&self, j: i32) -> f64 {
        self.lambda.get(&j).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.lambda.iter().map(|(&j, &v)| (j, v))
    }

    pub fn is_zero(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.lambda.values().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn add(&self, other: &CounterTerm) -> CounterTerm {
        CounterTerm::from_pairs(self.iter().chain(other.iter()))
    }

    pub fn sub(&self, other: &CounterTerm) -> CounterTerm {
        CounterTerm::from_pairs(self.iter().chain(other.iter().map(|(j, v)| (j, -v))))
    }

    pub fn scale(&self, c: f64) -> CounterTerm {
        CounterTerm::from_pairs(self.iter().map(|(j, v)| (j, v * c)))
    }

    /// The quadratic series `sum_j lambda_j |u_j|^2` (the additive constant
    /// `-sum_j lambda_j I_j` is dropped like every constant).
    pub fn as_hamiltonian(&self, modes: &ModeSet, degree_cutoff: u32) -> Hamiltonian {
        let mut h = Hamiltonian::zero(modes.clone(), degree_cutoff).expect("valid cutoff");
        for (j, v) in self.iter() {
            let e = MultiIndex::unit(j);
            h.add_real_pair(e.clone(), e, Complex64::new(v / 2.0, 0.0))
                .expect("diagonal quadratic term");
        }
        h
    }
}

/// The combinatorial constant controlling the projection norms:
/// `1 / ln(kappa^{-2})` for `1/2 < kappa^2 < 1`, else `2 kappa^2`.
pub fn c_kappa(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "kappa = {kappa} must lie in (0,1)"
        )));
    }
    let k2 = kappa * kappa;
    Ok(if k2 > 0.5 {
        1.0 / (1.0 / k2).ln()
    } else {
        2.0 * k2
    })
}

/// Splits a term into its tangential action part and pass-through parts:
/// `(m, alpha, beta)` on `S`, `(a, b)` on the normal modes.
fn split_term(
    key: &TermKey,
    modes: &ModeSet,
) -> (MultiIndex, MultiIndex, MultiIndex, MultiIndex, MultiIndex) {
    let va = key.alpha.filter(|j| modes.is_tangential(j));
    let vb = key.beta.filter(|j| modes.is_tangential(j));
    let a = key.alpha.filter(|j| !modes.is_tangential(j));
    let b = key.beta.filter(|j| !modes.is_tangential(j));
    let (m, alpha, beta) = split_min(&va, &vb);
    (m, alpha, beta, a, b)
}

/// Degree-`d` projection.  The tangential set of `h.modes()` decides the
/// variant: without one, `d` must be even and this is the full-torus
/// projection; with one, mixed degrees (odd included) occur.
pub fn project_degree(h: &Hamiltonian, torus: &TorusData, d: i32) -> Result<Hamiltonian> {
    if d < -2 {
        return Err(Error::InvalidParameter(format!("degree {d} < -2")));
    }
    if h.modes().tangential_set().is_none() && d % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "degree {d} is odd; the full-torus decomposition has even degrees only"
        )));
    }
    let mut acc: BTreeMap<TermKey, Complex64> = BTreeMap::new();
    for (key, c) in h.terms() {
        let (m, alpha, beta, a, b) = split_term(key, h.modes());
        let z_mass = (a.mass() + b.mass()) as i32;
        let rem = d + 2 - z_mass;
        if rem < 0 || rem % 2 != 0 {
            continue;
        }
        let q = (rem / 2) as u32;
        for delta in m.sub_indices_of_mass(q) {
            let m_minus_delta = m.checked_sub(&delta).expect("delta <= m");
            let w_md = torus.action_power(&m_minus_delta);
            if w_md == 0.0 && !m_minus_delta.is_empty() {
                continue;
            }
            let b_md = m.binomial(&delta) as f64;
            for gamma in delta.sub_indices() {
                let d_minus_g = delta.checked_sub(&gamma).expect("gamma <= delta");
                let w_dg = torus.action_power(&d_minus_g);
                if w_dg == 0.0 && !d_minus_g.is_empty() {
                    continue;
                }
                let sign = if d_minus_g.mass() % 2 == 0 { 1.0 } else { -1.0 };
                let w = sign * b_md * delta.binomial(&gamma) as f64 * w_md * w_dg;
                let out_alpha = gamma.add(&alpha).add(&a);
                let out_beta = gamma.add(&beta).add(&b);
                let out = TermKey::new(out_alpha, out_beta);
                if out.total_degree() == 0 {
                    continue;
                }
                *acc.entry(out).or_default() += c * w;
            }
        }
    }
    Ok(Hamiltonian::from_raw(
        h.modes().clone(),
        h.degree_cutoff(),
        acc,
    ))
}

/// Largest degree the truncated series can carry.
pub fn max_degree(h: &Hamiltonian) -> i32 {
    h.degree_cutoff() as i32 - 2
}

fn degree_step(h: &Hamiltonian) -> i32 {
    if h.modes().tangential_set().is_none() {
        2
    } else {
        1
    }
}

/// `Pi^{<= d} H`.
pub fn project_leq(h: &Hamiltonian, torus: &TorusData, d: i32) -> Result<Hamiltonian> {
    let mut out = Hamiltonian::zero(h.modes().clone(), h.degree_cutoff())?;
    let step = degree_step(h);
    let mut dd = -2;
    while dd <= d {
        out = out.add(&project_degree(h, torus, dd)?);
        dd += step;
    }
    Ok(out)
}

/// `Pi^{>= d} H = H - Pi^{<= d - step} H`, cross-checked against the direct
/// integral-remainder representation on the full-torus variant.
pub fn project_degree_geq(h: &Hamiltonian, torus: &TorusData, d: i32) -> Result<Hamiltonian> {
    if d <= -2 {
        return Ok(h.clone());
    }
    let step = degree_step(h);
    let out = h.sub(&project_leq(h, torus, d - step)?);
    if h.modes().tangential_set().is_none() && d % 2 == 0 {
        let direct = geq_direct(h, torus, ((d + 2) / 2) as u32)?;
        let diff = out.sub(&direct);
        let scale = out
            .terms()
            .map(|(_, c)| c.norm())
            .fold(1e-300_f64, f64::max);
        let err = diff
            .terms()
            .map(|(_, c)| c.norm())
            .fold(0.0_f64, f64::max)
            / scale;
        if err > 1e-10 {
            return Err(Error::ProjectionMismatch(err));
        }
    }
    Ok(out)
}

/// Direct representation of `Pi^{>= 2q-2}` via the Taylor integral
/// remainder of the auxiliary Hamiltonian: coefficients
///
/// ```text
/// q binom(m,delta) binom(m-delta,k) I^{m-delta-k} |k|!(|m|-|k|-1)!/|m|!
/// ```
///
/// expanded back into monomials.  Second algebraic route, kept independent
/// of the subtract route for the cross-check; `q >= 1`.
fn geq_direct(h: &Hamiltonian, torus: &TorusData, q: u32) -> Result<Hamiltonian> {
    assert!(q >= 1);
    let mut acc: BTreeMap<TermKey, Complex64> = BTreeMap::new();
    for (key, c) in h.terms() {
        let (m, alpha, beta) = split_min(&key.alpha, &key.beta);
        let m_mass = m.mass();
        if m_mass < q {
            continue; // |m| >= |delta| + |k| >= q is required
        }
        for delta in m.sub_indices_of_mass(q) {
            let m_minus_delta = m.checked_sub(&delta).expect("delta <= m");
            let b_md = m.binomial(&delta) as f64;
            for k in m_minus_delta.sub_indices() {
                let rest = m_minus_delta.checked_sub(&k).expect("k <= m - delta");
                let w_rest = torus.action_power(&rest);
                if w_rest == 0.0 && !rest.is_empty() {
                    continue;
                }
                let b_k = m_minus_delta.binomial(&k) as f64;
                let beta_factor = beta_integral(k.mass(), m_mass);
                let w1 = q as f64 * b_md * b_k * w_rest * beta_factor;
                for gamma in delta.sub_indices() {
                    let d_minus_g = delta.checked_sub(&gamma).expect("gamma <= delta");
                    let w_dg = torus.action_power(&d_minus_g);
                    if w_dg == 0.0 && !d_minus_g.is_empty() {
                        continue;
                    }
                    let sign = if d_minus_g.mass() % 2 == 0 { 1.0 } else { -1.0 };
                    let w = w1 * sign * delta.binomial(&gamma) as f64 * w_dg;
                    let out_alpha = gamma.add(&k).add(&alpha);
                    let out_beta = gamma.add(&k).add(&beta);
                    let out = TermKey::new(out_alpha, out_beta);
                    if out.total_degree() == 0 {
                        continue;
                    }
                    *acc.entry(out).or_default() += c * w;
                }
            }
        }
    }
    Ok(Hamiltonian::from_raw(
        h.modes().clone(),
        h.degree_cutoff(),
        acc,
    ))
}

/// `int_0^1 (1-t)^{|m|-|k|-1} t^{|k|} dt = |k|! (|m|-|k|-1)! / |m|!`.
fn beta_integral(k: u32, m: u32) -> f64 {
    debug_assert!(m > k);
    let mut num: u128 = 1;
    for i in 1..=k as u128 {
        num *= i;
    }
    for i in 1..=(m - k - 1) as u128 {
        num *= i;
    }
    let mut den: u128 = 1;
    for i in 1..=m as u128 {
        den *= i;
    }
    num as f64 / den as f64
}

/// Coefficients `lambda_i` of the counter-term component `Pi^{0,K} H`.
///
/// With a tangential set, tangential modes receive the action-derivative
/// coefficients and normal modes the `|z_j|^2` coefficients evaluated at
/// the torus.
pub fn counterterm_extract(h: &Hamiltonian, torus: &TorusData) -> CounterTerm {
    let mut lambda: BTreeMap<i32, f64> = BTreeMap::new();
    for (key, c) in h.terms() {
        if !key.is_diagonal() {
            continue;
        }
        let (m, _alpha, _beta, a, b) = split_term(key, h.modes());
        debug_assert_eq!(a, b);
        if a.is_empty() {
            if m.is_empty() {
                continue;
            }
            for (i, mi) in m.iter() {
                let rest = m.minus_unit(i).expect("m_i > 0");
                let w = torus.action_power(&rest);
                if w == 0.0 && !rest.is_empty() {
                    continue;
                }
                *lambda.entry(i).or_default() += c.re * mi as f64 * w;
            }
        } else if a.mass() == 1 {
            let j = a.support().next().expect("mass 1");
            let w = torus.action_power(&m);
            if w == 0.0 && !m.is_empty() {
                continue;
            }
            *lambda.entry(j).or_default() += c.re * w;
        }
    }
    CounterTerm::from_pairs(lambda)
}

/// Projection components of the affine part `D_omega`:
/// scalar `omega . I` and counter-term `sum_j omega_j (|u_j|^2 - I_j)`;
/// every other component vanishes.
pub fn extend_projection_affine(
    omega: &FrequencyVector,
    torus: &TorusData,
    modes: &ModeSet,
) -> (f64, CounterTerm) {
    let scalar: f64 = torus.actions().map(|(j, i)| omega.omega(j) * i).sum();
    let ct = CounterTerm::from_pairs(modes.modes().map(|j| (j, omega.omega(j))));
    (scalar, ct)
}
