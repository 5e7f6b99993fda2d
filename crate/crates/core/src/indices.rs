//! Multi-index arithmetic over a truncated set of Fourier modes.
//!
//! A [`MultiIndex`] is a finitely supported map from integer modes to
//! positive exponents; it plays every combinatorial role in the engine
//! (monomial exponents, action multi-powers, divisor vectors are the
//! signed cousin in [`crate::divisors`]).

use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// The truncated mode lattice `{ j : |j| <= j_max }`, optionally with a
/// distinguished tangential subset for lower-dimensional tori.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSet {
    j_max: i32,
    tangential: Option<Vec<i32>>,
}

impl ModeSet {
    pub fn new(j_max: i32) -> Result<Self> {
        if j_max < 0 {
            return Err(Error::InvalidParameter(format!("j_max = {j_max} < 0")));
        }
        Ok(ModeSet {
            j_max,
            tangential: None,
        })
    }

    /// Mode set with a tangential subset `S`; modes outside `S` are the
    /// normal directions of the lower-dimensional variant.
    pub fn with_tangential(j_max: i32, tangential: &[i32]) -> Result<Self> {
        let mut t: Vec<i32> = tangential.to_vec();
        t.sort_unstable();
        t.dedup();
        for &j in &t {
            if j.abs() > j_max {
                return Err(Error::ModeOutOfRange { mode: j, j_max });
            }
        }
        Ok(ModeSet {
            j_max,
            tangential: Some(t),
        })
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn contains(&self, j: i32) -> bool {
        j.abs() <= self.j_max
    }

    /// All modes in ascending order.
    pub fn modes(&self) -> impl Iterator<Item = i32> + '_ {
        -self.j_max..=self.j_max
    }

    pub fn len(&self) -> usize {
        (2 * self.j_max + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Is `j` tangential?  With no tangential set every mode is.
    pub fn is_tangential(&self, j: i32) -> bool {
        match &self.tangential {
            None => true,
            Some(t) => t.binary_search(&j).is_ok(),
        }
    }

    pub fn tangential_set(&self) -> Option<&[i32]> {
        self.tangential.as_deref()
    }
}

/// Finitely supported map `mode -> positive exponent`, stored sorted by mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MultiIndex {
    entries: SmallVec<[(i32, u32); 4]>,
}

impl MultiIndex {
    pub fn empty() -> Self {
        MultiIndex::default()
    }

    /// Build from `(mode, exponent)` pairs; zero exponents are dropped,
    /// repeated modes accumulate.
    pub fn from_pairs(pairs: &[(i32, u32)]) -> Self {
        let mut m = MultiIndex::empty();
        for &(j, e) in pairs {
            m.bump(j, e as i64);
        }
        m
    }

    /// The unit index `e_j`.
    pub fn unit(j: i32) -> Self {
        MultiIndex {
            entries: smallvec::smallvec![(j, 1)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, j: i32) -> u32 {
        match self.entries.binary_search_by_key(&j, |&(m, _)| m) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    /// Add `delta` to the exponent of mode `j` (panics if the result would
    /// be negative: subtraction is always guarded by the caller).
    fn bump(&mut self, j: i32, delta: i64) {
        match self.entries.binary_search_by_key(&j, |&(m, _)| m) {
            Ok(i) => {
                let v = self.entries[i].1 as i64 + delta;
                assert!(v >= 0, "negative exponent at mode {j}");
                if v == 0 {
                    self.entries.remove(i);
                } else {
                    self.entries[i].1 = v as u32;
                }
            }
            Err(i) => {
                assert!(delta >= 0, "negative exponent at mode {j}");
                if delta > 0 {
                    self.entries.insert(i, (j, delta as u32));
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, u32)> + '_ {
        self.entries.iter().copied()
    }

    pub fn support(&self) -> impl Iterator<Item = i32> + '_ {
        self.entries.iter().map(|&(j, _)| j)
    }

    /// `|alpha| = sum_j alpha_j`.
    pub fn mass(&self) -> u32 {
        self.entries.iter().map(|&(_, e)| e).sum()
    }

    /// `pi(alpha) = sum_j j alpha_j`.
    pub fn momentum(&self) -> i64 {
        self.entries
            .iter()
            .map(|&(j, e)| j as i64 * e as i64)
            .sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        let mut out = self.clone();
        for (j, e) in other.iter() {
            out.bump(j, e as i64);
        }
        out
    }

    /// Componentwise difference; `None` unless `other <= self` holds.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        let mut out = self.clone();
        for (j, e) in other.iter() {
            if out.get(j) < e {
                return None;
            }
            out.bump(j, -(e as i64));
        }
        Some(out)
    }

    /// Remove one unit of mode `j`; `None` if absent.
    pub fn minus_unit(&self, j: i32) -> Option<MultiIndex> {
        if self.get(j) == 0 {
            return None;
        }
        let mut out = self.clone();
        out.bump(j, -1);
        Some(out)
    }

    pub fn min_with(&self, other: &MultiIndex) -> MultiIndex {
        let mut out = MultiIndex::empty();
        for (j, e) in self.iter() {
            let m = e.min(other.get(j));
            if m > 0 {
                out.bump(j, m as i64);
            }
        }
        out
    }

    /// `self <= other` componentwise.
    pub fn leq(&self, other: &MultiIndex) -> bool {
        self.iter().all(|(j, e)| e <= other.get(j))
    }

    pub fn is_disjoint(&self, other: &MultiIndex) -> bool {
        self.iter().all(|(j, _)| other.get(j) == 0)
    }

    pub fn max_support(&self) -> i32 {
        self.entries
            .iter()
            .map(|&(j, _)| j.abs())
            .max()
            .unwrap_or(0)
    }

    /// Restriction to the modes for which `keep` is true.
    pub fn filter(&self, keep: impl Fn(i32) -> bool) -> MultiIndex {
        MultiIndex {
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|&(j, _)| keep(j))
                .collect(),
        }
    }

    /// `prod_j binom(self_j, sub_j)` as exact integer arithmetic; caller
    /// guarantees `sub <= self`.
    pub fn binomial(&self, sub: &MultiIndex) -> u128 {
        let mut b: u128 = 1;
        for (j, k) in sub.iter() {
            b *= binom(self.get(j) as u64, k as u64);
        }
        b
    }

    /// All `delta <= self` with `|delta| = q`, in deterministic order.
    pub fn sub_indices_of_mass(&self, q: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur: Vec<(i32, u32)> = Vec::new();
        fn rec(
            entries: &[(i32, u32)],
            pos: usize,
            remaining: u32,
            cur: &mut Vec<(i32, u32)>,
            out: &mut Vec<MultiIndex>,
        ) {
            if remaining == 0 {
                out.push(MultiIndex {
                    entries: cur.iter().copied().collect(),
                });
                return;
            }
            if pos == entries.len() {
                return;
            }
            let (j, cap) = entries[pos];
            // exponents left in the tail must be able to cover `remaining`
            let tail: u32 = entries[pos + 1..].iter().map(|&(_, e)| e).sum();
            let lo = remaining.saturating_sub(tail);
            for e in lo..=cap.min(remaining) {
                if e > 0 {
                    cur.push((j, e));
                }
                rec(entries, pos + 1, remaining - e, cur, out);
                if e > 0 {
                    cur.pop();
                }
            }
        }
        rec(&self.entries, 0, q, &mut cur, &mut out);
        out
    }

    /// All `delta <= self` (every mass), in deterministic order.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for q in 0..=self.mass() {
            out.extend(self.sub_indices_of_mass(q));
        }
        out
    }
}

/// Exact binomial coefficient; the exponents involved are bounded by the
/// degree cutoff, far inside u128 range.
pub fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut b: u128 = 1;
    for i in 0..k {
        b = b * (n - i) as u128 / (i + 1) as u128;
    }
    b
}

/// `|alpha|`, exposed as a free function mirroring the notation.
pub fn mass(alpha: &MultiIndex) -> u32 {
    alpha.mass()
}

/// `pi(alpha)`, exposed as a free function mirroring the notation.
pub fn momentum(alpha: &MultiIndex) -> i64 {
    alpha.momentum()
}

/// Split full exponents into disjoint-support form:
/// `m_j = min(a_j, b_j)`, `alpha = a - m`, `beta = b - m`.
pub fn split_min(a: &MultiIndex, b: &MultiIndex) -> (MultiIndex, MultiIndex, MultiIndex) {
    let m = a.min_with(b);
    let alpha = a.checked_sub(&m).expect("min is componentwise <= a");
    let beta = b.checked_sub(&m).expect("min is componentwise <= b");
    (m, alpha, beta)
}

/// Inverse of [`split_min`]: requires `alpha`, `beta` disjoint.
pub fn merge(
    m: &MultiIndex,
    alpha: &MultiIndex,
    beta: &MultiIndex,
) -> Result<(MultiIndex, MultiIndex)> {
    if let Some(j) = alpha.support().find(|&j| beta.get(j) > 0) {
        return Err(Error::OverlappingSupport { mode: j });
    }
    Ok((m.add(alpha), m.add(beta)))
}

/// Canonical text form: comma-separated `j:count` sorted by `j`;
/// the empty index prints as the empty string.
impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (j, e) in self.iter() {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{j}:{e}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(MultiIndex::empty());
        }
        let mut pairs = Vec::new();
        for part in s.split(',') {
            let (j, e) = part
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("bad multi-index entry {part:?}")))?;
            let j: i32 = j
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad mode {j:?}")))?;
            let e: u32 = e
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad exponent {e:?}")))?;
            if e == 0 {
                return Err(Error::Parse(format!("zero exponent at mode {j}")));
            }
            pairs.push((j, e));
        }
        let m = MultiIndex::from_pairs(&pairs);
        if m.entries.len() != pairs.len() {
            return Err(Error::Parse(format!("repeated mode in {s:?}")));
        }
        Ok(m)
    }
}
