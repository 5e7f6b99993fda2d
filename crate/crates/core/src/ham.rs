//! Sparse Hamiltonian series on weighted sequence spaces.
//!
//! A [`Hamiltonian`] is a finite sum `H = sum H_{a,b} u^a ubar^b` over pairs
//! of multi-indices with the structural invariants of the problem class:
//! reality (`H_{a,b} = conj(H_{b,a})`), mass conservation (`|a| = |b|`),
//! support inside a truncated mode set, and total degree `|a|+|b|` at most
//! an even cutoff.  Constant terms are never stored: all series are
//! normalized to `H(0) = 0` and every operation drops constants, which do
//! not contribute to the majorant seminorm.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::indices::{ModeSet, MultiIndex};

/// Coefficients below this magnitude are pruned from storage.  This is a
/// storage threshold only, never a mathematical tolerance.
pub const PRUNE_EPS: f64 = 1e-300;

/// `<j> = max(|j|, 1)`.
pub fn jap(j: i32) -> f64 {
    (j.abs().max(1)) as f64
}

/// The weight tuple `(p, s, a, eta, theta, r)` fixing the sequence space
/// and the majorant seminorm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams {
    pub p: f64,
    pub s: f64,
    pub a: f64,
    pub eta: f64,
    pub theta: f64,
    pub r: f64,
}

impl WeightParams {
    pub fn new(p: f64, s: f64, a: f64, eta: f64, theta: f64, r: f64) -> Result<Self> {
        let w = WeightParams {
            p,
            s,
            a,
            eta,
            theta,
            r,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::InvalidParameter(format!("p = {} must be > 1", self.p)));
        }
        if !(self.s > 0.0) {
            return Err(Error::InvalidParameter(format!("s = {} must be > 0", self.s)));
        }
        if !(self.a >= 0.0) {
            return Err(Error::InvalidParameter(format!("a = {} must be >= 0", self.a)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta = {} must be >= 0",
                self.eta
            )));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "theta = {} must lie in (0,1)",
                self.theta
            )));
        }
        if !(self.r > 0.0) {
            return Err(Error::InvalidParameter(format!("r = {} must be > 0", self.r)));
        }
        Ok(())
    }

    /// Copy with radius `r` replaced.
    pub fn with_r(&self, r: f64) -> Self {
        WeightParams { r, ..*self }
    }

    /// Copy with the schedule-varying triple replaced.
    pub fn with_rse(&self, r: f64, s: f64, eta: f64) -> Self {
        WeightParams {
            r,
            s,
            eta,
            ..*self
        }
    }

    /// `ln u_{0,j}(r) = ln r - p ln<j> - a|j| - s <j>^theta`.
    pub fn ln_u0(&self, j: i32) -> f64 {
        self.r.ln() - self.p * jap(j).ln() - self.a * j.abs() as f64 - self.s * jap(j).powf(self.theta)
    }

    /// The comparison sequence `u_{0,j}(r) = r <j>^{-p} e^{-a|j| - s<j>^theta}`.
    pub fn u0(&self, j: i32) -> f64 {
        self.ln_u0(j).exp()
    }

    /// Weighted sup-norm of a complex sequence, `sup_j |v_j| <j>^p e^{a|j| + s<j>^theta}`.
    pub fn seq_norm<'a>(&self, vals: impl Iterator<Item = (i32, Complex64)>) -> f64 {
        let mut sup: f64 = 0.0;
        for (j, v) in vals {
            let n = v.norm();
            if n == 0.0 {
                continue;
            }
            // |v_j| / (u0_j / r) in log space
            let ln = n.ln() - self.ln_u0(j) + self.r.ln();
            sup = sup.max(ln.exp());
        }
        sup
    }
}

/// `u_{0,j}(r)` with an explicit radius, mirroring the standalone notation.
pub fn u0_weight(j: i32, r: f64, params: &WeightParams) -> f64 {
    params.with_r(r).u0(j)
}

/// A term key: the ordered pair of exponent multi-indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermKey {
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
}

impl TermKey {
    pub fn new(alpha: MultiIndex, beta: MultiIndex) -> Self {
        TermKey { alpha, beta }
    }

    pub fn conjugate(&self) -> TermKey {
        TermKey {
            alpha: self.beta.clone(),
            beta: self.alpha.clone(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.alpha == self.beta
    }

    /// `pi(alpha - beta)`.
    pub fn momentum_defect(&self) -> i64 {
        self.alpha.momentum() - self.beta.momentum()
    }

    pub fn total_degree(&self) -> u32 {
        self.alpha.mass() + self.beta.mass()
    }
}

/// Sparse real Hamiltonian series, truncated in modes and total degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    terms: BTreeMap<TermKey, Complex64>,
    modes: ModeSet,
    degree_cutoff: u32,
}

impl Hamiltonian {
    pub fn zero(modes: ModeSet, degree_cutoff: u32) -> Result<Self> {
        if degree_cutoff == 0 || degree_cutoff % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "degree cutoff {degree_cutoff} must be a positive even integer"
            )));
        }
        Ok(Hamiltonian {
            terms: BTreeMap::new(),
            modes,
            degree_cutoff,
        })
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn degree_cutoff(&self) -> u32 {
        self.degree_cutoff
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, Complex64)> + '_ {
        self.terms.iter().map(|(k, &c)| (k, c))
    }

    pub fn coefficient(&self, key: &TermKey) -> Complex64 {
        self.terms.get(key).copied().unwrap_or_default()
    }

    /// Checks a single candidate term against the structural constraints.
    fn admit(&self, key: &TermKey) -> Result<()> {
        if key.alpha.mass() != key.beta.mass() {
            return Err(Error::MassViolation {
                alpha: key.alpha.to_string(),
                beta: key.beta.to_string(),
                ma: key.alpha.mass(),
                mb: key.beta.mass(),
            });
        }
        for j in key.alpha.support().chain(key.beta.support()) {
            if !self.modes.contains(j) {
                return Err(Error::ModeOutOfRange {
                    mode: j,
                    j_max: self.modes.j_max(),
                });
            }
        }
        Ok(())
    }

    fn within_cutoff(&self, key: &TermKey) -> bool {
        key.total_degree() <= self.degree_cutoff
    }

    /// Accumulate a raw coefficient (internal: invariants restored by the
    /// caller or already guaranteed).  Constants and over-degree terms are
    /// ignored; over-degree terms go to `dropped` when provided.
    fn accumulate(
        &mut self,
        key: TermKey,
        c: Complex64,
        dropped: Option<&mut Vec<(TermKey, Complex64)>>,
    ) {
        if c.norm() == 0.0 || key.total_degree() == 0 {
            return;
        }
        if !self.within_cutoff(&key) {
            if let Some(d) = dropped {
                d.push((key, c));
            }
            return;
        }
        let entry = self.terms.entry(key.clone()).or_insert(Complex64::default());
        *entry += c;
        if entry.norm() < PRUNE_EPS {
            self.terms.remove(&key);
        }
    }

    /// Add `c u^a ubar^b + conj(c) u^b ubar^a`, the smallest real building
    /// block.  Diagonal terms take the real part of `c` twice, i.e. adding
    /// `2 Re(c) |u|^{2a}`.
    pub fn add_real_pair(&mut self, alpha: MultiIndex, beta: MultiIndex, c: Complex64) -> Result<()> {
        let key = TermKey::new(alpha, beta);
        self.admit(&key)?;
        if !self.within_cutoff(&key) {
            return Err(Error::InvalidParameter(format!(
                "term ({}|{}) exceeds degree cutoff {}",
                key.alpha, key.beta, self.degree_cutoff
            )));
        }
        let conj = key.conjugate();
        self.accumulate(key, c, None);
        self.accumulate(conj, c.conj(), None);
        Ok(())
    }

    /// Build from explicit coefficients, validating every invariant.
    pub fn from_coefficients(
        modes: ModeSet,
        degree_cutoff: u32,
        coeffs: impl IntoIterator<Item = (MultiIndex, MultiIndex, Complex64)>,
    ) -> Result<Self> {
        let mut h = Hamiltonian::zero(modes, degree_cutoff)?;
        let mut staged: BTreeMap<TermKey, Complex64> = BTreeMap::new();
        for (alpha, beta, c) in coeffs {
            let key = TermKey::new(alpha, beta);
            h.admit(&key)?;
            if !h.within_cutoff(&key) {
                return Err(Error::InvalidParameter(format!(
                    "term ({}|{}) exceeds degree cutoff {}",
                    key.alpha, key.beta, degree_cutoff
                )));
            }
            if key.total_degree() == 0 {
                continue;
            }
            *staged.entry(key).or_default() += c;
        }
        // reality check
        for (key, &c) in &staged {
            let partner = staged
                .get(&key.conjugate())
                .copied()
                .unwrap_or_default();
            if (c - partner.conj()).norm() > 1e-12 * (1.0 + c.norm()) {
                return Err(Error::RealityViolation {
                    alpha: key.alpha.to_string(),
                    beta: key.beta.to_string(),
                    got: format!("{c}"),
                    partner: format!("{partner}"),
                });
            }
        }
        for (key, c) in staged {
            h.accumulate(key, c, None);
        }
        Ok(h)
    }

    /// Internal constructor from already-valid accumulated terms.
    pub(crate) fn from_raw(
        modes: ModeSet,
        degree_cutoff: u32,
        terms: BTreeMap<TermKey, Complex64>,
    ) -> Self {
        let mut h = Hamiltonian {
            terms: BTreeMap::new(),
            modes,
            degree_cutoff,
        };
        for (k, c) in terms {
            h.accumulate(k, c, None);
        }
        h
    }

    pub fn scale(&self, c: f64) -> Hamiltonian {
        let terms = self
            .terms
            .iter()
            .map(|(k, &v)| (k.clone(), v * c))
            .collect();
        Hamiltonian::from_raw(self.modes.clone(), self.degree_cutoff, terms)
    }

    pub fn add(&self, other: &Hamiltonian) -> Hamiltonian {
        let mut out = self.clone();
        for (k, c) in other.terms() {
            out.accumulate(k.clone(), c, None);
        }
        out
    }

    pub fn sub(&self, other: &Hamiltonian) -> Hamiltonian {
        let mut out = self.clone();
        for (k, c) in other.terms() {
            out.accumulate(k.clone(), -c, None);
        }
        out
    }

    /// Keep exactly the terms satisfying `pred`; the majorant seminorm is
    /// non-increasing under any such projection.
    pub fn project(&self, pred: impl Fn(&TermKey) -> bool) -> Hamiltonian {
        let terms = self
            .terms
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(k, &c)| (k.clone(), c))
            .collect();
        Hamiltonian::from_raw(self.modes.clone(), self.degree_cutoff, terms)
    }

    /// Non-action part: terms with `alpha != beta`.
    pub fn project_r(&self) -> Hamiltonian {
        self.project(|k| !k.is_diagonal())
    }

    /// Action part: terms with `alpha = beta`.
    pub fn project_k(&self) -> Hamiltonian {
        self.project(|k| k.is_diagonal())
    }

    /// Coefficientwise `|H_{a,b}| e^{eta |pi(a-b)|}`; real, nonnegative,
    /// reality-preserving since the momentum defect is antisymmetric.
    pub fn eta_majorant(&self, eta: f64) -> Result<Hamiltonian> {
        if eta < 0.0 {
            return Err(Error::InvalidParameter(format!("eta = {eta} must be >= 0")));
        }
        let terms = self
            .terms
            .iter()
            .map(|(k, c)| {
                let w = (eta * k.momentum_defect().abs() as f64).exp();
                (k.clone(), Complex64::new(c.norm() * w, 0.0))
            })
            .collect();
        Ok(Hamiltonian::from_raw(
            self.modes.clone(),
            self.degree_cutoff,
            terms,
        ))
    }

    /// The majorant seminorm
    /// `sup_j sum_{a,b} |H_{a,b}| b_j u0^{a+b-2e_j} e^{eta |pi(a-b)|}`
    /// evaluated at `(env.r, env.s, env.eta)`.  Per-term weights are
    /// assembled in log space to survive the super-exponential decay of
    /// the `u0` weights.
    pub fn norm(&self, env: &WeightParams) -> f64 {
        let mut per_mode: BTreeMap<i32, f64> = BTreeMap::new();
        for (key, c) in self.terms() {
            let ln_base = term_ln_weight(key, env);
            for (j, bj) in key.beta.iter() {
                let ln = ln_base - 2.0 * env.ln_u0(j);
                let contrib = c.norm() * bj as f64 * ln.exp();
                *per_mode.entry(j).or_default() += contrib;
            }
        }
        per_mode.values().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// `true` when every stored term has zero momentum defect.
    pub fn preserves_momentum(&self) -> bool {
        self.terms().all(|(k, _)| k.momentum_defect() == 0)
    }

    /// Serialize: header carrying the shape, then one term per line in the
    /// form `ALPHA|BETA|RE|IM`.  Floats print in shortest round-trip form,
    /// so parsing back is bit-exact for finite doubles.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# hamiltonian v1 j_max={} degree_cutoff={}",
            self.modes.j_max(),
            self.degree_cutoff
        );
        for (k, c) in self.terms() {
            let _ = writeln!(out, "{}|{}|{}|{}", k.alpha, k.beta, c.re, c.im);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Hamiltonian> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty hamiltonian text".into()))?;
        let mut j_max = None;
        let mut cutoff = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("j_max=") {
                j_max = v.parse::<i32>().ok();
            }
            if let Some(v) = tok.strip_prefix("degree_cutoff=") {
                cutoff = v.parse::<u32>().ok();
            }
        }
        let (j_max, cutoff) = match (j_max, cutoff) {
            (Some(j), Some(c)) => (j, c),
            _ => return Err(Error::Parse(format!("bad hamiltonian header {header:?}"))),
        };
        let mut coeffs = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split('|').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("bad term line {line:?}")));
            }
            let alpha: MultiIndex = fields[0].parse()?;
            let beta: MultiIndex = fields[1].parse()?;
            let re: f64 = fields[2]
                .parse()
                .map_err(|_| Error::Parse(format!("bad float {:?}", fields[2])))?;
            let im: f64 = fields[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad float {:?}", fields[3])))?;
            coeffs.push((alpha, beta, Complex64::new(re, im)));
        }
        Hamiltonian::from_coefficients(ModeSet::new(j_max)?, cutoff, coeffs)
    }
}

/// `ln( u0^{alpha+beta} e^{eta |pi(alpha-beta)|} )` for one term.
pub(crate) fn term_ln_weight(key: &TermKey, env: &WeightParams) -> f64 {
    let mut ln = env.eta * key.momentum_defect().abs() as f64;
    for (j, e) in key.alpha.iter() {
        ln += e as f64 * env.ln_u0(j);
    }
    for (j, e) in key.beta.iter() {
        ln += e as f64 * env.ln_u0(j);
    }
    ln
}

/// Frequencies `omega_j = j^2 + xi_j` with `|xi_j| <= 1/2`, truncated to the
/// mode set.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    j_max: i32,
    xi: Vec<f64>,
}

impl FrequencyVector {
    /// Build from the shift sequence `xi`.
    pub fn from_xi(j_max: i32, xi: impl Fn(i32) -> f64) -> Result<Self> {
        let mut v = Vec::with_capacity((2 * j_max + 1) as usize);
        for j in -j_max..=j_max {
            let x = xi(j);
            if !(x.abs() <= 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "|xi_{j}| = {x} exceeds 1/2"
                )));
            }
            v.push(x);
        }
        Ok(FrequencyVector { j_max, xi: v })
    }

    /// The unperturbed integer frequencies `omega_j = j^2`.
    pub fn integer(j_max: i32) -> Self {
        FrequencyVector::from_xi(j_max, |_| 0.0).expect("zero shift is admissible")
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn xi(&self, j: i32) -> f64 {
        self.xi[(j + self.j_max) as usize]
    }

    pub fn omega(&self, j: i32) -> f64 {
        (j as f64) * (j as f64) + self.xi(j)
    }

    /// Replace a single shift component (stays within the cube).
    pub fn with_xi(&self, j: i32, x: f64) -> Result<Self> {
        if !(x.abs() <= 0.5) {
            return Err(Error::InvalidParameter(format!("|xi_{j}| = {x} exceeds 1/2")));
        }
        let mut out = self.clone();
        out.xi[(j + self.j_max) as usize] = x;
        Ok(out)
    }

    /// `omega . (alpha - beta)` for a term key.
    pub fn divisor(&self, key: &TermKey) -> f64 {
        let mut d = 0.0;
        for (j, e) in key.alpha.iter() {
            d += self.omega(j) * e as f64;
        }
        for (j, e) in key.beta.iter() {
            d -= self.omega(j) * e as f64;
        }
        d
    }

    /// Sup distance `|omega - omega'|_infty` on the shared mode set.
    pub fn sup_distance(&self, other: &FrequencyVector) -> f64 {
        assert_eq!(self.j_max, other.j_max);
        self.xi
            .iter()
            .zip(&other.xi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
    }

    /// `D_omega = sum_j omega_j |u_j|^2` as a stored series.
    pub fn d_omega(&self, modes: &ModeSet, degree_cutoff: u32) -> Hamiltonian {
        let mut h = Hamiltonian::zero(modes.clone(), degree_cutoff).expect("valid cutoff");
        for j in modes.modes() {
            let e = MultiIndex::unit(j);
            h.add_real_pair(e.clone(), e, Complex64::new(self.omega(j) / 2.0, 0.0))
                .expect("diagonal quadratic term is admissible");
        }
        h
    }
}

/// A Lipschitz family of Hamiltonians over sampled frequencies.
pub struct LipschitzFamily<'a> {
    pub eval: Box<dyn Fn(&FrequencyVector) -> Hamiltonian + 'a>,
    pub samples: Vec<FrequencyVector>,
}

impl<'a> LipschitzFamily<'a> {
    pub fn new(
        eval: impl Fn(&FrequencyVector) -> Hamiltonian + 'a,
        samples: Vec<FrequencyVector>,
    ) -> Self {
        LipschitzFamily {
            eval: Box::new(eval),
            samples,
        }
    }
}

/// Finite-sample estimator of the weighted Lipschitz seminorm
/// `sup_omega |H(omega)| + mu sup_{omega != omega'} |Delta H| / |omega - omega'|_infty`.
///
/// This is a lower bound of the sup over the full Diophantine set; it is
/// exact for families affine in omega.
pub fn lipschitz_weighted_norm(
    family: &LipschitzFamily,
    mu: f64,
    env: &WeightParams,
) -> Result<f64> {
    if family.samples.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    if mu > 0.0 && family.samples.len() < 2 {
        return Err(Error::TooFewSamples(family.samples.len()));
    }
    let hams: Vec<Hamiltonian> = family.samples.iter().map(|w| (family.eval)(w)).collect();
    let mut sup = 0.0_f64;
    for h in &hams {
        sup = sup.max(h.norm(env));
    }
    let mut lip = 0.0_f64;
    if mu > 0.0 {
        for i in 0..hams.len() {
            for k in (i + 1)..hams.len() {
                let dist = family.samples[i].sup_distance(&family.samples[k]);
                if dist == 0.0 {
                    continue;
                }
                lip = lip.max(hams[i].sub(&hams[k]).norm(env) / dist);
            }
        }
    }
    Ok(sup + mu * lip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(r: f64) -> WeightParams {
        WeightParams::new(2.0, 1.0, 0.0, 0.0, 0.5, r).unwrap()
    }

    fn mi(pairs: &[(i32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs)
    }

    #[test]
    fn u0_weight_examples() {
        let w = params(1.0);
        assert_relative_eq!(u0_weight(0, 1.0, &w), (-1.0_f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(
            u0_weight(1, 2.0, &w),
            2.0 * (-1.0_f64).exp(),
            max_relative = 1e-14
        );
        // scaling by r: u0(r=0) is a limit, checked via tiny r
        assert!(u0_weight(3, 1e-280, &w) < 1e-280);
    }

    #[test]
    fn counterterm_norm_is_sup_of_lambda() {
        // H = 2(|u_1|^2 - I_1) - 3(|u_2|^2 - I_2); constants are dropped,
        // the norm must equal sup |lambda_j| = 3.
        let modes = ModeSet::new(2).unwrap();
        let mut h = Hamiltonian::zero(modes, 4).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(1, 1)]), Complex64::new(1.0, 0.0))
            .unwrap();
        h.add_real_pair(mi(&[(2, 1)]), mi(&[(2, 1)]), Complex64::new(-1.5, 0.0))
            .unwrap();
        assert_relative_eq!(h.norm(&params(1.0)), 3.0, max_relative = 1e-13);
    }

    #[test]
    fn zero_hamiltonian_norm() {
        let h = Hamiltonian::zero(ModeSet::new(2).unwrap(), 4).unwrap();
        assert_eq!(h.norm(&params(1.0)), 0.0);
    }

    #[test]
    fn off_diagonal_norm_closed_form() {
        // H = c(u_1 ubar_2 + u_2 ubar_1) at (p=2, s=1, a=0, theta=1/2, r=1):
        // norm = |c| u0_1 / u0_2 = 4 |c| e^{sqrt(2) - 1}.
        let modes = ModeSet::new(2).unwrap();
        let c = Complex64::new(0.7, -0.3);
        let mut h = Hamiltonian::zero(modes, 4).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), c).unwrap();
        let expect = 4.0 * (2.0_f64.sqrt() - 1.0).exp() * c.norm();
        assert_relative_eq!(h.norm(&params(1.0)), expect, max_relative = 1e-13);
    }

    #[test]
    fn projections_split_and_contract() {
        let modes = ModeSet::new(2).unwrap();
        let mut h = Hamiltonian::zero(modes, 4).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(1, 1)]), Complex64::new(0.5, 0.0))
            .unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(1.0, 0.0))
            .unwrap();
        let r = h.project_r();
        let k = h.project_k();
        assert_eq!(r.add(&k), h);
        assert!(r.project_k().is_zero());
        assert_eq!(k.project_k(), k);
        let env = params(1.0);
        assert!(r.norm(&env) <= h.norm(&env) + 1e-15);
        assert!(k.norm(&env) <= h.norm(&env) + 1e-15);
        // purely diagonal H has no R part
        assert!(k.project_r().is_zero());
    }

    #[test]
    fn index_set_projection_identity_and_momentum() {
        let modes = ModeSet::new(2).unwrap();
        let mut h = Hamiltonian::zero(modes, 4).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(1.0, 2.0))
            .unwrap();
        h.add_real_pair(mi(&[(1, 1), (-1, 1)]), mi(&[(0, 2)]), Complex64::new(0.3, 0.0))
            .unwrap();
        assert_eq!(h.project(|_| true), h);
        let momentum_preserving = h.project(|k| k.momentum_defect() == 0);
        // the (1,-1|0,0) pair preserves momentum, the (1|2) pair does not
        assert_eq!(momentum_preserving.len(), 2);
        assert!(!h.preserves_momentum());
        assert!(momentum_preserving.preserves_momentum());
    }

    #[test]
    fn tail_projection_radius_bound() {
        // ||Pi^{|a|=|b|>N} H||_{r1} <= (r1/r)^{2N} ||H||_r
        let modes = ModeSet::new(2).unwrap();
        let mut h = Hamiltonian::zero(modes, 6).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(1.0, 0.0))
            .unwrap();
        h.add_real_pair(mi(&[(1, 2)]), mi(&[(2, 1), (0, 1)]), Complex64::new(0.4, 0.1))
            .unwrap();
        h.add_real_pair(mi(&[(1, 3)]), mi(&[(2, 3)]), Complex64::new(0.2, 0.0))
            .unwrap();
        let n = 1u32;
        let tail = h.project(|k| k.alpha.mass() > n);
        let (r, r1) = (1.0, 0.6);
        let lhs = tail.norm(&params(r1));
        let rhs = (r1 / r).powi(2 * n as i32) * h.norm(&params(r));
        assert!(lhs <= rhs * (1.0 + 1e-12), "lhs = {lhs}, rhs = {rhs}");
    }

    #[test]
    fn eta_majorant_weights() {
        let modes = ModeSet::new(2).unwrap();
        let mut h = Hamiltonian::zero(modes, 4).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(-0.5, 0.2))
            .unwrap();
        let m0 = h.eta_majorant(0.0).unwrap();
        for (_, c) in m0.terms() {
            assert_relative_eq!(c.re, Complex64::new(-0.5, 0.2).norm(), max_relative = 1e-14);
            assert_eq!(c.im, 0.0);
        }
        let m1 = h.eta_majorant(1.0).unwrap();
        for (_, c) in m1.terms() {
            assert_relative_eq!(
                c.re,
                Complex64::new(-0.5, 0.2).norm() * 1.0_f64.exp(),
                max_relative = 1e-14
            );
        }
        // momentum-preserving H: eta plays no role
        let mut p = Hamiltonian::zero(ModeSet::new(2).unwrap(), 4).unwrap();
        p.add_real_pair(mi(&[(1, 1), (-1, 1)]), mi(&[(0, 2)]), Complex64::new(0.3, 0.0))
            .unwrap();
        assert_eq!(p.eta_majorant(2.0).unwrap(), p.eta_majorant(0.0).unwrap());
    }

    #[test]
    fn norm_monotone_in_r_and_eta() {
        let modes = ModeSet::new(2).unwrap();
        let mut h = Hamiltonian::zero(modes, 6).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(1.0, 0.5))
            .unwrap();
        h.add_real_pair(mi(&[(1, 2)]), mi(&[(0, 1), (2, 1)]), Complex64::new(0.3, 0.0))
            .unwrap();
        let base = params(1.0);
        assert!(h.norm(&base.with_r(1.2)) >= h.norm(&base));
        assert!(h.norm(&base.with_rse(1.0, 1.0, 0.5)) >= h.norm(&base));
    }

    #[test]
    fn smoothing_inequality() {
        // ||H||_{r, s+sigma, eta-sigma} <= ||H||_{r, s, eta}
        let modes = ModeSet::new(3).unwrap();
        let mut h = Hamiltonian::zero(modes, 6).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(3, 1)]), Complex64::new(1.0, 0.0))
            .unwrap();
        h.add_real_pair(mi(&[(2, 1), (-1, 1)]), mi(&[(0, 1), (1, 1)]), Complex64::new(0.4, 0.2))
            .unwrap();
        let eta = 0.8;
        let sigma = 0.5;
        let before = h.norm(&WeightParams::new(2.0, 1.0, 0.0, eta, 0.5, 1.0).unwrap());
        let after = h.norm(&WeightParams::new(2.0, 1.0 + sigma, 0.0, eta - sigma, 0.5, 1.0).unwrap());
        assert!(after <= before * (1.0 + 1e-12), "after = {after}, before = {before}");
    }

    #[test]
    fn serialization_round_trip_bit_exact() {
        let modes = ModeSet::new(3).unwrap();
        let mut h = Hamiltonian::zero(modes, 6).unwrap();
        h.add_real_pair(
            mi(&[(1, 2), (-3, 1)]),
            mi(&[(0, 3)]),
            Complex64::new(0.1234567890123456789, -3.5e-17),
        )
        .unwrap();
        h.add_real_pair(mi(&[(2, 1)]), mi(&[(2, 1)]), Complex64::new(1.0 / 3.0, 0.0))
            .unwrap();
        let text = h.to_text();
        let back = Hamiltonian::from_text(&text).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn reality_is_enforced() {
        let modes = ModeSet::new(2).unwrap();
        let bad = Hamiltonian::from_coefficients(
            modes.clone(),
            4,
            vec![(mi(&[(1, 1)]), mi(&[(2, 1)]), Complex64::new(1.0, 0.0))],
        );
        assert!(matches!(bad, Err(Error::RealityViolation { .. })));
        let bad_mass = Hamiltonian::from_coefficients(
            modes,
            4,
            vec![(mi(&[(1, 2)]), mi(&[(2, 1)]), Complex64::new(1.0, 0.0))],
        );
        assert!(matches!(bad_mass, Err(Error::MassViolation { .. })));
    }

    #[test]
    fn lipschitz_norm_constant_and_affine_families() {
        let modes = ModeSet::new(1).unwrap();
        let mut h = Hamiltonian::zero(modes.clone(), 4).unwrap();
        h.add_real_pair(mi(&[(1, 1)]), mi(&[(-1, 1)]), Complex64::new(2.0, 0.0))
            .unwrap();
        let env = params(1.0);
        let base = FrequencyVector::integer(1);
        let shifted = base.with_xi(1, 0.25).unwrap();

        // constant family: Lipschitz part vanishes
        let hc = h.clone();
        let fam = LipschitzFamily::new(move |_| hc.clone(), vec![base.clone(), shifted.clone()]);
        let n = lipschitz_weighted_norm(&fam, 0.5, &env).unwrap();
        assert_relative_eq!(n, h.norm(&env), max_relative = 1e-13);

        // F(omega) = omega_1 |u_1|^2: difference quotient is exactly |u_1|^2
        let modes2 = ModeSet::new(1).unwrap();
        let fam2 = LipschitzFamily::new(
            move |w: &FrequencyVector| {
                let mut f = Hamiltonian::zero(modes2.clone(), 4).unwrap();
                f.add_real_pair(
                    mi(&[(1, 1)]),
                    mi(&[(1, 1)]),
                    Complex64::new(w.omega(1) / 2.0, 0.0),
                )
                .unwrap();
                f
            },
            vec![base.clone(), shifted.clone()],
        );
        let mu = 0.3;
        let n2 = lipschitz_weighted_norm(&fam2, mu, &env).unwrap();
        let sup = shifted.omega(1).abs().max(base.omega(1).abs());
        assert_relative_eq!(n2, sup + mu * 1.0, max_relative = 1e-12);

        // mu = 0: plain sup over samples
        let hc2 = h.clone();
        let fam3 = LipschitzFamily::new(move |_| hc2.clone(), vec![base.clone()]);
        assert_relative_eq!(
            lipschitz_weighted_norm(&fam3, 0.0, &env).unwrap(),
            h.norm(&env),
            max_relative = 1e-13
        );
        // fewer than 2 samples with mu > 0 is an error
        let hc3 = h.clone();
        let fam4 = LipschitzFamily::new(move |_| hc3.clone(), vec![base]);
        assert!(lipschitz_weighted_norm(&fam4, 1.0, &env).is_err());
    }
}
