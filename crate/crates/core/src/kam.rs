//! The quadratic counter-term iteration.
//!
//! Each step solves the homological system
//!
//! ```text
//! Pi^{<=0} [ (Id + L_n) Lam_n + G_n + {S_n, D_omega + G_n^{high}} ] = const
//! ```
//!
//! for a generating function `S_n` (components of degree -2, optionally -1,
//! and 0) and a counter-term `Lam_n`, then pushes the Hamiltonian through
//! the time-1 flow: `G_{n+1} = e^{{S_n,.}}(D_omega + G_n + (Id + L_n)Lam_n)
//! - D_omega`, updating the counter-term operator columns alongside.
//!
//! At exact arithmetic the system is triangular; the degree cutoff couples
//! the stages weakly (dropped bracket terms re-enter low degrees through
//! their action coefficients), so after the triangular pass a few Jacobi
//! refinement sweeps drive the substituted residual to rounding level.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::divisors::{apply_l_omega, solve_homological};
use crate::error::{Error, Result};
use crate::ham::{FrequencyVector, Hamiltonian, WeightParams};
use crate::indices::ModeSet;
use crate::poisson::poisson_bracket;
use crate::torus::{self, CounterTerm, TorusData};

/// Fixed Newton exponent of the scheme.
pub const CHI: f64 = 1.5;

/// The constant prefactor chosen for the smallness threshold; the theory
/// only requires it "large enough".
pub const FRAK_C_LOG2: f64 = 10.0;

/// Parameters of a run.
#[derive(Debug, Clone)]
pub struct KamConfig {
    pub r0: f64,
    pub s0: f64,
    pub eta0: f64,
    pub rho: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub max_steps: usize,
    pub eps_target: f64,
    /// Absolute norm floor below which Lie orders are cut.
    pub lie_tol: f64,
    /// Sup-norm tolerance of the Neumann inversion.
    pub neumann_tol: f64,
    /// Refinement sweeps after the triangular pass.
    pub max_refine_sweeps: usize,
}

impl KamConfig {
    pub fn new(r0: f64, s0: f64, eta0: f64, rho: f64, sigma: f64, gamma: f64) -> Result<Self> {
        let cfg = KamConfig {
            r0,
            s0,
            eta0,
            rho,
            sigma,
            gamma,
            max_steps: 8,
            eps_target: 1e-10,
            lie_tol: 1e-18,
            neumann_tol: 1e-15,
            max_refine_sweeps: 4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.s0 > 0.0 && self.eta0 > 0.0) {
            return Err(Error::InvalidParameter(
                "r0, s0, eta0 must be positive".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho < self.r0 / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "rho = {} must lie in (0, r0/2 = {})",
                self.rho,
                self.r0 / 2.0
            )));
        }
        // sigma = eta0/2 is admitted: the limit eta0 - sigma stays positive
        if !(self.sigma > 0.0 && self.sigma <= (self.eta0 / 2.0).min(1.0)) {
            return Err(Error::InvalidParameter(format!(
                "sigma = {} must lie in (0, min(eta0/2, 1) = {}]",
                self.sigma,
                (self.eta0 / 2.0).min(1.0)
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma = {} must lie in (0,1)",
                self.gamma
            )));
        }
        if !(self.eps_target > 0.0) {
            return Err(Error::InvalidParameter("eps_target must be > 0".into()));
        }
        Ok(())
    }

    /// Largest admissible torus radius, `r0 / (2 sqrt 2)`.
    pub fn torus_radius_cap(&self) -> f64 {
        self.r0 / (2.0 * 2.0_f64.sqrt())
    }
}

/// Analyticity parameters at step `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub n: usize,
    pub r: f64,
    pub s: f64,
    pub eta: f64,
    pub rho_n: f64,
    pub sigma_n: f64,
}

/// `rho_n = (rho/4) 2^{-n}`, `sigma_0 = sigma/8`,
/// `sigma_n = 9 sigma / (4 pi^2 n^2)`, consumed twice per step:
/// `r_{n+1} = r_n - 2 rho_n`, `s_{n+1} = s_n + 2 sigma_n`,
/// `eta_{n+1} = eta_n - 2 sigma_n`.
pub fn schedule(n: usize, cfg: &KamConfig) -> ScheduleStep {
    let mut r = cfg.r0;
    let mut s = cfg.s0;
    let mut eta = cfg.eta0;
    for i in 0..n {
        r -= 2.0 * rho_step(i, cfg.rho);
        s += 2.0 * sigma_step(i, cfg.sigma);
        eta -= 2.0 * sigma_step(i, cfg.sigma);
    }
    ScheduleStep {
        n,
        r,
        s,
        eta,
        rho_n: rho_step(n, cfg.rho),
        sigma_n: sigma_step(n, cfg.sigma),
    }
}

fn rho_step(n: usize, rho: f64) -> f64 {
    rho / 4.0 * 0.5_f64.powi(n as i32)
}

fn sigma_step(n: usize, sigma: f64) -> f64 {
    if n == 0 {
        sigma / 8.0
    } else {
        9.0 * sigma / (4.0 * std::f64::consts::PI.powi(2) * (n as f64) * (n as f64))
    }
}

/// The linear operator `L_n` on counter-terms, stored by columns: the image
/// of the basis element `|u_j|^2 - I_j` as a series.
#[derive(Debug, Clone, Default)]
pub struct CounterOperator {
    columns: BTreeMap<i32, Hamiltonian>,
}

impl CounterOperator {
    pub fn zero() -> Self {
        CounterOperator::default()
    }

    pub fn is_zero(&self) -> bool {
        self.columns.is_empty() || self.columns.values().all(|h| h.is_zero())
    }

    pub fn column(&self, j: i32) -> Option<&Hamiltonian> {
        self.columns.get(&j)
    }

    pub fn set_column(&mut self, j: i32, h: Hamiltonian) {
        self.columns.insert(j, h);
    }

    /// `L h = sum_j h_j L(e_j)`.
    pub fn apply(
        &self,
        h: &CounterTerm,
        modes: &ModeSet,
        degree_cutoff: u32,
    ) -> Hamiltonian {
        let mut out = Hamiltonian::zero(modes.clone(), degree_cutoff).expect("valid cutoff");
        for (j, v) in h.iter() {
            if let Some(col) = self.columns.get(&j) {
                out = out.add(&col.scale(v));
            }
        }
        out
    }

    /// Sup of column norms, an upper proxy for `||L||` on the unit ball.
    pub fn column_norm_sup(&self, env: &WeightParams) -> f64 {
        self.columns
            .values()
            .map(|h| h.norm(env))
            .fold(0.0, f64::max)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone)]
pub struct StepDiag {
    pub n: usize,
    pub eps: f64,
    pub theta: f64,
    pub lambda_bar_sup: f64,
    pub trunc_residual: f64,
    pub homological_residual: f64,
    pub homological_residual_rel: f64,
    pub neumann_residual: f64,
    pub m_op_norm: f64,
    pub s_norm: f64,
    pub smallness_ok: bool,
    pub refine_sweeps: usize,
    pub wall_ms: f64,
}

/// Mutable state of the iteration.
#[derive(Debug, Clone)]
pub struct KamState {
    pub n: usize,
    pub g: Hamiltonian,
    /// Accumulated counter-term `sum_{i<n} bar-Lambda_i`.
    pub lambda_acc: CounterTerm,
    pub l_op: CounterOperator,
    pub eps: f64,
    pub theta: f64,
    pub trunc_residual: f64,
    pub s_list: Vec<Hamiltonian>,
}

/// The degree components entering the smallness indicator.
struct LowParts {
    m2_r: Hamiltonian,
    m1: Option<Hamiltonian>,
    zero_k: CounterTerm,
    zero_r: Hamiltonian,
    high: Hamiltonian,
}

fn split_parts(g: &Hamiltonian, torus: &TorusData) -> Result<LowParts> {
    let lowdim = g.modes().tangential_set().is_some();
    let m2 = torus::project_degree(g, torus, -2)?.project_r();
    let m1 = if lowdim {
        Some(torus::project_degree(g, torus, -1)?)
    } else {
        None
    };
    let zero = torus::project_degree(g, torus, 0)?;
    let zero_k = torus::counterterm_extract(g, torus);
    // structurally non-diagonal; discard the rounding residue the
    // subtraction leaves on diagonal keys
    let zero_r = zero
        .sub(&zero_k.as_hamiltonian(g.modes(), g.degree_cutoff()))
        .project_r();
    let mut low = m2.add(&zero);
    if let Some(ref h1) = m1 {
        low = low.add(h1);
    }
    let high = g.sub(&low);
    Ok(LowParts {
        m2_r: m2,
        m1,
        zero_k,
        zero_r,
        high,
    })
}

/// `(eps, theta)` of a Hamiltonian at the given parameters.
pub fn measure_eps_theta(
    g: &Hamiltonian,
    torus: &TorusData,
    env: &WeightParams,
    gamma: f64,
) -> Result<(f64, f64)> {
    let parts = split_parts(g, torus)?;
    let mut eps = parts.zero_k.sup_norm() + parts.zero_r.norm(env) + parts.m2_r.norm(env);
    if let Some(ref m1) = parts.m1 {
        eps += m1.norm(env);
    }
    eps /= gamma;
    let theta = parts.high.norm(env) / gamma + eps;
    Ok((eps, theta))
}

/// Neumann inversion of `(Id + M) x = rhs`: `x = sum_k (-M)^k rhs`,
/// stopped when the increment sup-norm falls below `tol`.
pub fn neumann_invert(
    apply_m: impl Fn(&CounterTerm) -> CounterTerm,
    rhs: &CounterTerm,
    tol: f64,
) -> Result<(CounterTerm, f64)> {
    let mut x = rhs.clone();
    let mut term = rhs.clone();
    let mut growth_streak = 0usize;
    let mut last = term.sup_norm();
    for _ in 0..200 {
        term = apply_m(&term).scale(-1.0);
        let norm = term.sup_norm();
        if norm > last {
            growth_streak += 1;
            if growth_streak >= 3 {
                return Err(Error::NeumannDivergence(growth_streak));
            }
        } else {
            growth_streak = 0;
        }
        last = norm;
        x = x.add(&term);
        if norm < tol {
            break;
        }
    }
    let residual = x.add(&apply_m(&x)).sub(rhs).sup_norm();
    Ok((x, residual))
}

/// Operator sup-norm on the finite mode window, `max_i sum_j |M_ij|`.
fn operator_norm(apply_m: &impl Fn(&CounterTerm) -> CounterTerm, modes: &ModeSet) -> f64 {
    let mut rows: BTreeMap<i32, f64> = BTreeMap::new();
    for j in modes.modes() {
        let col = apply_m(&CounterTerm::unit(j));
        for (i, v) in col.iter() {
            *rows.entry(i).or_default() += v.abs();
        }
    }
    rows.values().fold(0.0_f64, |m, &v| m.max(v))
}

/// Output of one homological solve.
struct HomologicalSolution {
    s: Hamiltonian,
    lambda_bar: CounterTerm,
    neumann_residual: f64,
    m_op_norm: f64,
    residual_norm: f64,
    residual_rel: f64,
    refine_sweeps: usize,
    bracket_dropped: f64,
}

/// Solves the step-`n` homological system for `(S_n, bar-Lambda_n)`.
#[allow(clippy::too_many_arguments)]
fn solve_step_system(
    g: &Hamiltonian,
    parts: &LowParts,
    omega: &FrequencyVector,
    torus: &TorusData,
    l_op: &CounterOperator,
    env: &WeightParams,
    cfg: &KamConfig,
) -> Result<HomologicalSolution> {
    let modes = g.modes().clone();
    let cutoff = g.degree_cutoff();
    let lowdim = modes.tangential_set().is_some();
    let zero_ham = || Hamiltonian::zero(modes.clone(), cutoff).expect("valid cutoff");
    let mut bracket_dropped = 0.0;

    // projection helpers
    let proj_m2r = |h: &Hamiltonian| -> Result<Hamiltonian> {
        Ok(torus::project_degree(h, torus, -2)?.project_r())
    };
    let proj_m1 = |h: &Hamiltonian| -> Result<Hamiltonian> {
        if lowdim {
            torus::project_degree(h, torus, -1)
        } else {
            Ok(zero_ham())
        }
    };
    let proj_0k = |h: &Hamiltonian| -> CounterTerm { torus::counterterm_extract(h, torus) };
    let proj_0r = |h: &Hamiltonian| -> Result<Hamiltonian> {
        // the difference is structurally non-diagonal; projecting discards
        // the rounding residue the subtraction leaves on diagonal keys
        let zero = torus::project_degree(h, torus, 0)?;
        Ok(zero
            .sub(&proj_0k(h).as_hamiltonian(&modes, cutoff))
            .project_r())
    };
    let apply_l = |ct: &CounterTerm| l_op.apply(ct, &modes, cutoff);

    // bracket with the high part, with dropped-term accounting
    let high = &parts.high;
    let mut bracket_high = |s: &Hamiltonian| -> Hamiltonian {
        if s.is_zero() || high.is_zero() {
            return zero_ham();
        }
        let br = poisson_bracket(s, high);
        bracket_dropped += br.dropped_norm(env);
        br.ham
    };

    // --- triangular pass ---
    // stage -2 without the counter-term coupling
    let a2 = if parts.m2_r.is_zero() {
        zero_ham()
    } else {
        solve_homological(&parts.m2_r, omega)?
    };
    // stage -1 without the coupling (lower-dimensional only)
    let a1 = if lowdim {
        let rhs = parts
            .m1
            .clone()
            .unwrap_or_else(zero_ham)
            .add(&proj_m1(&bracket_high(&a2))?);
        if rhs.is_zero() {
            zero_ham()
        } else {
            solve_homological(&rhs, omega)?
        }
    } else {
        zero_ham()
    };

    // counter-term stage: (Id + M) lam = -(Pi^{0K}[g + {A, high}])
    let rhs_vec = parts
        .zero_k
        .add(&proj_0k(&bracket_high(&a2.add(&a1))));
    let m_apply = |h: &CounterTerm| -> CounterTerm {
        let lh = apply_l(h);
        if lh.is_zero() {
            return CounterTerm::zero();
        }
        let mut out = proj_0k(&lh);
        // the coupling through the solved stages
        let b2 = match proj_m2r(&lh) {
            Ok(p) if !p.is_zero() => solve_homological(&p, omega).unwrap_or_else(|_| zero_ham()),
            _ => zero_ham(),
        };
        let mut coupled = b2.clone();
        if lowdim {
            let br = if b2.is_zero() || high.is_zero() {
                zero_ham()
            } else {
                poisson_bracket(&b2, high).ham
            };
            let rhs1 = proj_m1(&lh)
                .and_then(|p1| proj_m1(&br).map(|pb| p1.add(&pb)))
                .unwrap_or_else(|_| zero_ham());
            if !rhs1.is_zero() {
                if let Ok(b1) = solve_homological(&rhs1, omega) {
                    coupled = coupled.add(&b1);
                }
            }
        }
        if !coupled.is_zero() && !high.is_zero() {
            out = out.add(&proj_0k(&poisson_bracket(&coupled, high).ham));
        }
        out
    };
    let m_op_norm = operator_norm(&m_apply, &modes);
    if m_op_norm >= 1.0 {
        return Err(Error::NonConvergence {
            reason: format!("counter-term operator norm {m_op_norm:.3} >= 1, Neumann series diverges"),
        });
    }
    let (mut lambda_bar, mut neumann_residual) =
        neumann_invert(&m_apply, &rhs_vec.scale(-1.0), cfg.neumann_tol)?;

    // back-substitution with the counter-term in place
    let mut s2 = {
        let rhs = parts.m2_r.add(&proj_m2r(&apply_l(&lambda_bar))?);
        if rhs.is_zero() {
            zero_ham()
        } else {
            solve_homological(&rhs, omega)?
        }
    };
    let mut s1 = if lowdim {
        let rhs = parts
            .m1
            .clone()
            .unwrap_or_else(zero_ham)
            .add(&proj_m1(&apply_l(&lambda_bar))?)
            .add(&proj_m1(&bracket_high(&s2))?);
        if rhs.is_zero() {
            zero_ham()
        } else {
            solve_homological(&rhs, omega)?
        }
    } else {
        zero_ham()
    };
    let mut s0 = {
        let rhs = parts
            .zero_r
            .add(&proj_0r(&apply_l(&lambda_bar))?)
            .add(&proj_0r(&bracket_high(&s2.add(&s1)))?);
        if rhs.is_zero() {
            zero_ham()
        } else {
            solve_homological(&rhs, omega)?
        }
    };

    // --- refinement sweeps: absorb the truncation coupling ---
    // residual of the full system, recomputed per sweep
    let g_scale = g.norm(env).max(1e-300);
    let residual_of =
        |s: &Hamiltonian, lam: &CounterTerm, bh: &Hamiltonian| -> Result<(f64, Hamiltonian)> {
            // E = (Id + L) lam + G^{<=0 parts} + {S, D} + B(S)
            let e = lam
                .as_hamiltonian(&modes, cutoff)
                .add(&apply_l(lam))
                .add(g)
                .sub(&apply_l_omega(s, omega))
                .add(bh);
            let mut low = proj_m2r(&e)?.add(&proj_0r(&e)?).add(
                &proj_0k(&e).as_hamiltonian(&modes, cutoff),
            );
            if lowdim {
                low = low.add(&proj_m1(&e)?);
            }
            Ok((low.norm(env), e))
        };

    let mut s = s2.add(&s1).add(&s0);
    let mut bh = bracket_high(&s);
    let (mut res, _) = residual_of(&s, &lambda_bar, &bh)?;
    let mut sweeps = 0usize;
    while res > 1e-13 * g_scale && sweeps < cfg.max_refine_sweeps {
        // Jacobi sweep with the full coupled bracket
        let lg = apply_l(&lambda_bar);
        let rhs2 = proj_m2r(&g.add(&lg).add(&bh))?;
        s2 = if rhs2.is_zero() {
            zero_ham()
        } else {
            solve_homological(&rhs2, omega)?
        };
        if lowdim {
            let rhs1 = proj_m1(&g.add(&lg).add(&bh))?;
            s1 = if rhs1.is_zero() {
                zero_ham()
            } else {
                solve_homological(&rhs1, omega)?
            };
        }
        let m_plain = |h: &CounterTerm| proj_0k(&apply_l(h));
        let rhs_k = proj_0k(&g.add(&bh)).scale(-1.0);
        let (lam_new, nres) = neumann_invert(&m_plain, &rhs_k, cfg.neumann_tol)?;
        lambda_bar = lam_new;
        neumann_residual = nres;
        let lg = apply_l(&lambda_bar);
        let rhs0 = proj_0r(&g.add(&lg).add(&bh))?;
        s0 = if rhs0.is_zero() {
            zero_ham()
        } else {
            solve_homological(&rhs0, omega)?
        };
        s = s2.add(&s1).add(&s0);
        bh = bracket_high(&s);
        let (r2, _) = residual_of(&s, &lambda_bar, &bh)?;
        res = r2;
        sweeps += 1;
    }

    Ok(HomologicalSolution {
        s,
        lambda_bar,
        neumann_residual,
        m_op_norm,
        residual_norm: res,
        residual_rel: res / g_scale,
        refine_sweeps: sweeps,
        bracket_dropped,
    })
}

/// Truncated Lie series `sum_k ad_S^k H / k!` with an absolute norm floor;
/// returns the transform and the dropped-term norm accumulated at `env`.
fn lie_series_abs(
    h: &Hamiltonian,
    s: &Hamiltonian,
    env: &WeightParams,
    tol_abs: f64,
) -> (Hamiltonian, f64) {
    let mut sum = h.clone();
    let mut term = h.clone();
    let mut dropped = 0.0;
    for k in 1..=crate::poisson::LIE_ORDER_CAP {
        if term.is_zero() {
            break;
        }
        let br = poisson_bracket(s, &term);
        dropped += br.dropped_norm(env) / k as f64;
        term = br.ham.scale(1.0 / k as f64);
        if term.is_zero() {
            break;
        }
        sum = sum.add(&term);
        if term.norm(env) < tol_abs {
            break;
        }
    }
    (sum, dropped)
}

/// One step of the iteration.  Returns the new state, the generating
/// function, the counter-term, and diagnostics.
pub fn kam_step(
    state: &KamState,
    omega: &FrequencyVector,
    torus: &TorusData,
    cfg: &KamConfig,
) -> Result<(KamState, Hamiltonian, CounterTerm, StepDiag)> {
    let t0 = Instant::now();
    let n = state.n;
    let sched = schedule(n, cfg);
    let sched_next = schedule(n + 1, cfg);
    let env = torus.weights().with_rse(sched.r, sched.s, sched.eta);
    let env_next = torus
        .weights()
        .with_rse(sched_next.r, sched_next.s, sched_next.eta);
    let modes = state.g.modes().clone();
    let cutoff = state.g.degree_cutoff();

    let parts = split_parts(&state.g, torus)?;
    let sol = solve_step_system(&state.g, &parts, omega, torus, &state.l_op, &env, cfg)?;

    // smallness of the generating function against the flow margins
    let env_s = torus.weights().with_rse(
        sched.r - sched.rho_n,
        sched.s + 2.0 * sched.sigma_n,
        sched.eta - 2.0 * sched.sigma_n,
    );
    let s_norm = sol.s.norm(&env_s);
    let smallness_ok =
        s_norm <= sched.rho_n / (16.0 * std::f64::consts::E * (sched.r - sched.rho_n));

    // Lie tolerance scaled to the convergence target
    let tol_abs = (cfg.eps_target * cfg.gamma * 1e-4).min(cfg.lie_tol.max(1e-300));

    // transform the counter-term operator columns: L'(e_j) + |u_j|^2 =
    // e^{{S,.}} (L(e_j) + |u_j|^2)
    let mut dropped_total = sol.bracket_dropped;
    let mut new_op = CounterOperator::zero();
    for j in modes.modes() {
        let unit = CounterTerm::unit(j).as_hamiltonian(&modes, cutoff);
        let mut base = unit.clone();
        if let Some(col) = state.l_op.column(j) {
            base = base.add(col);
        }
        let (transformed, dropped) = lie_series_abs(&base, &sol.s, &env_next, tol_abs);
        dropped_total += dropped;
        let col = transformed.sub(&unit);
        if !col.is_zero() {
            new_op.set_column(j, col);
        }
    }

    // new Hamiltonian: G' = e^{{S,.}}(D + G) - D + (Id + L') lam
    let d_omega = omega.d_omega(&modes, cutoff);
    let base = d_omega.add(&state.g);
    let (transformed, dropped) = lie_series_abs(&base, &sol.s, &env_next, tol_abs);
    dropped_total += dropped;
    let lam_ham = sol
        .lambda_bar
        .as_hamiltonian(&modes, cutoff)
        .add(&new_op.apply(&sol.lambda_bar, &modes, cutoff));
    let g_next = transformed.sub(&d_omega).add(&lam_ham);

    let (eps, theta) = measure_eps_theta(&g_next, torus, &env_next, cfg.gamma)?;
    let trunc_residual = state.trunc_residual + dropped_total;

    let mut s_list = state.s_list.clone();
    s_list.push(sol.s.clone());
    let next = KamState {
        n: n + 1,
        g: g_next,
        lambda_acc: state.lambda_acc.add(&sol.lambda_bar),
        l_op: new_op,
        eps,
        theta,
        trunc_residual,
        s_list,
    };
    let diag = StepDiag {
        n,
        eps: state.eps,
        theta: state.theta,
        lambda_bar_sup: sol.lambda_bar.sup_norm(),
        trunc_residual,
        homological_residual: sol.residual_norm,
        homological_residual_rel: sol.residual_rel,
        neumann_residual: sol.neumann_residual,
        m_op_norm: sol.m_op_norm,
        s_norm,
        smallness_ok,
        refine_sweeps: sol.refine_sweeps,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok((next, sol.s, sol.lambda_bar, diag))
}

/// Theoretical constants of the smallness threshold, kept in logs: the
/// nominal values overflow any float format at desk scale.
#[derive(Debug, Clone)]
pub struct TheoreticalConstants {
    /// `ln K` with `K = frakC (r0/rho)^4 sup_n 2^{4n} e^{2 C' n^{6/theta}}
    /// e^{-chi^n (2 - chi)}`.
    pub log_k: f64,
    /// `ln eps_bar = -15 ln 2 - 2 ln K`.
    pub log_eps_bar: f64,
    /// `ln C_bar = 7 ln 2 + ln K`.
    pub log_c_bar: f64,
    /// Whether the theoretical smallness `eps_0 <= (1+Theta_0)^{-3} K^{-2}`
    /// holds for the measured initial data.
    pub smallness_holds: bool,
}

/// The homological constant `C` with `sup_sigma` taken over a grid, so the
/// exponent `C sigma^{-3/theta}` dominates both proof branches.
fn homological_c(theta: f64, gamma: f64) -> f64 {
    let mut c: f64 = 1.0;
    for k in 0..200 {
        let sigma = 10f64.powf(-3.0 + 3.0 * k as f64 / 199.0);
        if sigma > 1.0 {
            break;
        }
        if let (Ok(i1), Ok(i3)) = (
            crate::divisors::i_sharp(sigma, theta),
            crate::divisors::i_sharp(sigma / 3.0, theta),
        ) {
            let plain = 21.0 * i1 * i1.ln();
            let lip = 63.0 * i3 * i3.ln() + 2.0 * (1.0 / gamma).ln();
            c = c.max(sigma.powf(3.0 / theta) * plain.max(lip));
        }
    }
    c
}

/// Evaluates the smallness threshold for a run.
pub fn theoretical_constants(
    cfg: &KamConfig,
    theta_exp: f64,
    eps0: f64,
    theta0: f64,
) -> TheoreticalConstants {
    let c = homological_c(theta_exp, cfg.gamma);
    let c_prime = 2.0
        * (4.0 * std::f64::consts::PI.powi(2) / (9.0 * cfg.sigma)).powf(3.0 / theta_exp)
        * c;
    let mut sup = f64::NEG_INFINITY;
    let mut chi_pow = 1.0_f64;
    for n in 0..10_000 {
        let term = 4.0 * (n as f64) * 2.0_f64.ln() + 2.0 * c_prime * (n as f64).powf(6.0 / theta_exp)
            - chi_pow * (2.0 - CHI);
        sup = sup.max(term);
        chi_pow *= CHI;
        if chi_pow > 1e300 {
            break;
        }
    }
    let log_k = FRAK_C_LOG2 * 2.0_f64.ln() + 4.0 * (cfg.r0 / cfg.rho).ln() + sup;
    let log_eps_bar = -15.0 * 2.0_f64.ln() - 2.0 * log_k;
    let log_c_bar = 7.0 * 2.0_f64.ln() + log_k;
    let smallness_holds = eps0 > 0.0 && eps0.ln() + 3.0 * (1.0 + theta0).ln() + 2.0 * log_k <= 0.0;
    TheoreticalConstants {
        log_k,
        log_eps_bar,
        log_c_bar,
        smallness_holds,
    }
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct KamRunResult {
    pub converged: bool,
    /// Total counter-term `Lambda = sum_n bar-Lambda_n`.
    pub lambda: CounterTerm,
    /// `N - D_omega`: the final transformed Hamiltonian minus its linear
    /// part; its `Pi^{<=0}` norm is `gamma eps_final`.
    pub remainder: Hamiltonian,
    pub s_list: Vec<Hamiltonian>,
    pub steps: Vec<StepDiag>,
    pub eps_final: f64,
    pub theta_final: f64,
    pub trunc_residual: f64,
    pub k_fit: f64,
    pub constants: TheoreticalConstants,
}

/// Runs the iteration on `G_0 = H_0 - D_omega` until `eps < eps_target` or
/// `max_steps`.  Applies to both variants: the tangential set of the mode
/// set selects the lower-dimensional system.
pub fn run_counterterm_theorem(
    g0: &Hamiltonian,
    omega: &FrequencyVector,
    torus: &TorusData,
    cfg: &KamConfig,
) -> Result<KamRunResult> {
    cfg.validate()?;
    if torus.r() > cfg.torus_radius_cap() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "torus radius {} exceeds r0/(2 sqrt 2) = {}",
            torus.r(),
            cfg.torus_radius_cap()
        )));
    }
    let env0 = torus.weights().with_rse(cfg.r0, cfg.s0, cfg.eta0);
    let (eps0, theta0) = measure_eps_theta(g0, torus, &env0, cfg.gamma)?;
    let constants = theoretical_constants(cfg, torus.weights().theta, eps0, theta0);
    let mut state = KamState {
        n: 0,
        g: g0.clone(),
        lambda_acc: CounterTerm::zero(),
        l_op: CounterOperator::zero(),
        eps: eps0,
        theta: theta0,
        trunc_residual: 0.0,
        s_list: Vec::new(),
    };
    let mut steps: Vec<StepDiag> = Vec::new();
    let mut k_fit = 0.0_f64;
    let mut stall = 0usize;
    let mut converged = state.eps < cfg.eps_target;
    while !converged && state.n < cfg.max_steps {
        let eps_before = state.eps;
        let (next, _s, _lam, diag) = kam_step(&state, omega, torus, cfg)?;
        steps.push(diag);
        if state.n == 0 && eps_before > 0.0 {
            k_fit = next.eps / (eps_before * eps_before);
        }
        if next.eps >= eps_before && next.eps >= cfg.eps_target {
            stall += 1;
            if stall >= 3 {
                return Err(Error::NonConvergence {
                    reason: format!(
                        "eps failed to decrease for 3 steps (last {:.3e} -> {:.3e} at n = {})",
                        eps_before, next.eps, next.n
                    ),
                });
            }
        } else {
            stall = 0;
        }
        state = next;
        converged = state.eps < cfg.eps_target;
    }
    Ok(KamRunResult {
        converged,
        lambda: state.lambda_acc.clone(),
        remainder: state.g.clone(),
        s_list: state.s_list.clone(),
        steps,
        eps_final: state.eps,
        theta_final: state.theta,
        trunc_residual: state.trunc_residual,
        k_fit,
        constants,
    })
}

/// One lower-dimensional step is the generic step on a tangential mode
/// set; exposed for symmetry with the full variant.
pub fn kam_lowdim_step(
    state: &KamState,
    omega: &FrequencyVector,
    torus: &TorusData,
    cfg: &KamConfig,
) -> Result<(KamState, Hamiltonian, CounterTerm, StepDiag)> {
    if state.g.modes().tangential_set().is_none() {
        return Err(Error::InvalidParameter(
            "lower-dimensional step requires a tangential mode set".into(),
        ));
    }
    kam_step(state, omega, torus, cfg)
}

/// Full lower-dimensional run; `g0.modes()` must carry the tangential set
/// and the torus actions must live on it.
pub fn run_lowdim(
    g0: &Hamiltonian,
    omega: &FrequencyVector,
    torus: &TorusData,
    cfg: &KamConfig,
) -> Result<KamRunResult> {
    for (j, _) in torus.actions() {
        if !g0.modes().is_tangential(j) {
            return Err(Error::InvalidParameter(format!(
                "action on normal mode {j} in a lower-dimensional run"
            )));
        }
    }
    run_counterterm_theorem(g0, omega, torus, cfg)
}

/// Result of the normal-frequency fixed point.
#[derive(Debug, Clone)]
pub struct FrequencyMapResult {
    /// `Omega_j` for normal modes `j`.
    pub omega_normal: BTreeMap<i32, f64>,
    /// The normal components `mu_j` of the final counter-term.
    pub mu: BTreeMap<i32, f64>,
    pub iterations: usize,
    pub residual: f64,
    pub run: KamRunResult,
}

/// Solves `Omega_j + mu_j(J, alpha, Omega) = j^2 + W_j` on the normal
/// modes by fixed-point iteration, running the lower-dimensional scheme at
/// each iterate.  `alpha` supplies the tangential frequencies, `w` the
/// normal-mode potential.  When an iterate leaves the admissible frequency
/// set, the counter-term map is extended from previously solved samples by
/// the componentwise sup-formula `mu~(x) = min_s (mu(s) + Lip |x - s|)`.
pub fn solve_frequency_map(
    alpha: &BTreeMap<i32, f64>,
    w: &BTreeMap<i32, f64>,
    g0: &Hamiltonian,
    torus: &TorusData,
    cfg: &KamConfig,
    tol: f64,
    max_sweeps: usize,
) -> Result<FrequencyMapResult> {
    let modes = g0.modes().clone();
    let j_max = modes.j_max();
    for (&j, &wj) in w {
        if modes.is_tangential(j) {
            return Err(Error::InvalidParameter(format!(
                "potential W on tangential mode {j}"
            )));
        }
        if wj.abs() > 0.25 {
            return Err(Error::InvalidParameter(format!(
                "|W_{j}| = {wj} exceeds 1/4"
            )));
        }
        if j == 0 && wj == 0.0 {
            return Err(Error::InvalidParameter(
                "W_0 must be nonzero when 0 is a normal mode".into(),
            ));
        }
    }
    // initial guess Omega_j = j^2 + W_j
    let mut omega_normal: BTreeMap<i32, f64> = modes
        .modes()
        .filter(|&j| !modes.is_tangential(j))
        .map(|j| (j, (j as f64) * (j as f64) + w.get(&j).copied().unwrap_or(0.0)))
        .collect();
    let mut samples: Vec<(FrequencyVector, BTreeMap<i32, f64>)> = Vec::new();
    let mut last_run: Option<KamRunResult> = None;
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    for sweep in 0..max_sweeps {
        iterations = sweep + 1;
        let omega = frequency_from_parts(j_max, &modes, alpha, &omega_normal)?;
        let mu = match run_lowdim(g0, &omega, torus, cfg) {
            Ok(run) => {
                let mu: BTreeMap<i32, f64> = omega_normal
                    .keys()
                    .map(|&j| (j, run.lambda.get(j)))
                    .collect();
                samples.push((omega.clone(), mu.clone()));
                last_run = Some(run);
                mu
            }
            Err(Error::NearResonance { .. }) if samples.len() >= 2 => {
                mcshane_extension(&omega, &samples)
            }
            Err(e) => return Err(e),
        };
        // next iterate
        let mut next = BTreeMap::new();
        let mut delta = 0.0_f64;
        for (&j, om) in &omega_normal {
            let target = (j as f64) * (j as f64) + w.get(&j).copied().unwrap_or(0.0)
                - mu.get(&j).copied().unwrap_or(0.0);
            delta = delta.max((target - om).abs());
            next.insert(j, target);
        }
        omega_normal = next;
        residual = delta;
        if delta < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(Error::ContractionFailure(max_sweeps));
    }
    let run = last_run.ok_or(Error::ContractionFailure(0))?;
    let mu = omega_normal
        .keys()
        .map(|&j| (j, run.lambda.get(j)))
        .collect();
    Ok(FrequencyMapResult {
        omega_normal,
        mu,
        iterations,
        residual,
        run,
    })
}

fn frequency_from_parts(
    j_max: i32,
    modes: &ModeSet,
    alpha: &BTreeMap<i32, f64>,
    omega_normal: &BTreeMap<i32, f64>,
) -> Result<FrequencyVector> {
    FrequencyVector::from_xi(j_max, |j| {
        let sq = (j as f64) * (j as f64);
        if modes.is_tangential(j) {
            alpha.get(&j).copied().unwrap_or(sq) - sq
        } else {
            omega_normal.get(&j).copied().unwrap_or(sq) - sq
        }
    })
}

/// Componentwise McShane sup-formula extension over solved samples, with
/// the Lipschitz constant measured pairwise.
fn mcshane_extension(
    omega: &FrequencyVector,
    samples: &[(FrequencyVector, BTreeMap<i32, f64>)],
) -> BTreeMap<i32, f64> {
    let mut lip = 0.0_f64;
    for i in 0..samples.len() {
        for k in (i + 1)..samples.len() {
            let d = samples[i].0.sup_distance(&samples[k].0);
            if d == 0.0 {
                continue;
            }
            for (j, v) in &samples[i].1 {
                let w = samples[k].1.get(j).copied().unwrap_or(0.0);
                lip = lip.max((v - w).abs() / d);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (j, _) in &samples[0].1 {
        let mut best = f64::INFINITY;
        for (om, mu) in samples {
            let d = omega.sup_distance(om);
            best = best.min(mu.get(j).copied().unwrap_or(0.0) + lip * d);
        }
        out.insert(*j, best);
    }
    out
}

/// One enumerated non-resonance condition.
#[derive(Debug, Clone)]
pub struct MelnikovEntry {
    pub h: Vec<(i32, i32)>,
    pub sigma: i32,
    pub j: Option<i32>,
    pub sigma_p: i32,
    pub k: Option<i32>,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct MelnikovReport {
    pub checked: u64,
    pub min_margin: f64,
    pub violations: Vec<MelnikovEntry>,
}

/// Checks `|alpha . h + sigma Omega_j + sigma' Omega_k| >
/// gamma prod_{n in S} 1/(1 + |h_n|^6 <n>^6)` over all tangential `h` with
/// `|h| <= h_mass_max` and normal `j, k` with `pi(h) + sigma j + sigma' k
/// = 0`.
pub fn melnikov_check(
    alpha: &BTreeMap<i32, f64>,
    omega_normal: &BTreeMap<i32, f64>,
    modes: &ModeSet,
    h_mass_max: u32,
    gamma: f64,
) -> MelnikovReport {
    let tangential: Vec<i32> = modes
        .modes()
        .filter(|&j| modes.is_tangential(j))
        .collect();
    let normal: Vec<i32> = modes
        .modes()
        .filter(|&j| !modes.is_tangential(j))
        .collect();
    // h vectors on S including h = 0
    let mut hs: Vec<Vec<(i32, i32)>> = vec![vec![]];
    fn rec(modes: &[i32], pos: usize, budget: u32, cur: &mut Vec<(i32, i32)>, out: &mut Vec<Vec<(i32, i32)>>) {
        if pos == modes.len() {
            if !cur.is_empty() {
                out.push(cur.clone());
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
    let mut cur = Vec::new();
    rec(&tangential, 0, h_mass_max, &mut cur, &mut hs);

    let alpha_dot = |h: &[(i32, i32)]| -> f64 {
        h.iter()
            .map(|&(j, v)| alpha.get(&j).copied().unwrap_or((j as f64) * (j as f64)) * v as f64)
            .sum()
    };
    let h_momentum = |h: &[(i32, i32)]| -> i64 {
        h.iter().map(|&(j, v)| j as i64 * v as i64).sum()
    };
    let threshold = |h: &[(i32, i32)]| -> f64 {
        let mut ln = gamma.ln();
        for &(n, v) in h {
            let x = (v.abs() as f64).powi(6) * crate::ham::jap(n).powi(6);
            ln -= (1.0 + x).ln();
        }
        ln.exp()
    };
    let omega_of = |j: i32| -> f64 {
        omega_normal
            .get(&j)
            .copied()
            .unwrap_or((j as f64) * (j as f64))
    };

    let mut report = MelnikovReport {
        checked: 0,
        min_margin: f64::INFINITY,
        violations: Vec::new(),
    };
    let push = |h: &[(i32, i32)], sigma: i32, j: Option<i32>, sigma_p: i32, k: Option<i32>,
                    report: &mut MelnikovReport| {
        let mut value = alpha_dot(h);
        if let Some(j) = j {
            value += sigma as f64 * omega_of(j);
        }
        if let Some(k) = k {
            value += sigma_p as f64 * omega_of(k);
        }
        let thr = threshold(h);
        report.checked += 1;
        let margin = value.abs() - thr;
        if margin < report.min_margin {
            report.min_margin = margin;
        }
        if value.abs() <= thr {
            report.violations.push(MelnikovEntry {
                h: h.to_vec(),
                sigma,
                j,
                sigma_p,
                k,
                value,
                threshold: thr,
            });
        }
    };
    for h in &hs {
        let pi_h = h_momentum(h);
        // sigma = sigma' = 0: pure tangential condition, needs h != 0 and
        // zero momentum to be an admissible resonance
        if !h.is_empty() && pi_h == 0 {
            push(h, 0, None, 0, None, &mut report);
        }
        // single normal mode: pi(h) + sigma j = 0
        for sigma in [-1i32, 1] {
            let j = -pi_h * sigma as i64;
            if let Ok(j) = i32::try_from(j) {
                if normal.binary_search(&j).is_ok() {
                    push(h, sigma, Some(j), 0, None, &mut report);
                }
            }
        }
        // two normal modes: pi(h) + sigma j + sigma' k = 0
        for sigma in [-1i32, 1] {
            for sigma_p in [-1i32, 1] {
                for &j in &normal {
                    let k = -(pi_h + sigma as i64 * j as i64) * sigma_p as i64;
                    if let Ok(k) = i32::try_from(k) {
                        if normal.binary_search(&k).is_ok() {
                            if h.is_empty() && sigma as i64 * j as i64 + sigma_p as i64 * (k as i64) == 0 && sigma * sigma_p == -1 && j == k {
                                continue; // ell = 0
                            }
                            push(h, sigma, Some(j), sigma_p, Some(k), &mut report);
                        }
                    }
                }
            }
        }
    }
    report
}

/// Monte Carlo estimate of the fraction of tangential frequencies whose
/// extended vector `(alpha, Omega(alpha))` fails the zero-momentum
/// Diophantine condition with at most two normal-mode units.
pub fn measure_lowdim(
    gamma: f64,
    modes: &ModeSet,
    l_max: u32,
    n_samples: u64,
    seed: u64,
    surrogate: impl Fn(&BTreeMap<i32, f64>) -> BTreeMap<i32, f64>,
) -> Result<crate::divisors::MeasureReport> {
    use rand::Rng;
    use rand::SeedableRng;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let j_max = modes.j_max();
    let ells: Vec<crate::divisors::DivisorVector> = crate::divisors::enumerate_divisors(j_max, l_max)
        .into_iter()
        .filter(|ell| {
            ell.momentum() == 0 && ell.normal_mass(|j| modes.is_tangential(j)) <= 2
        })
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0u64;
    for _ in 0..n_samples {
        let mut alpha = BTreeMap::new();
        for j in modes.modes().filter(|&j| modes.is_tangential(j)) {
            let sq = (j as f64) * (j as f64);
            alpha.insert(j, sq + rng.gen_range(-0.5..=0.5));
        }
        let omega_n = surrogate(&alpha);
        let omega = FrequencyVector::from_xi(j_max, |j| {
            let sq = (j as f64) * (j as f64);
            if modes.is_tangential(j) {
                alpha.get(&j).copied().unwrap_or(sq) - sq
            } else {
                omega_n.get(&j).copied().unwrap_or(sq) - sq
            }
        })?;
        if !crate::divisors::is_diophantine(&omega, gamma, &ells).ok {
            failures += 1;
        }
    }
    Ok(crate::divisors::MeasureReport {
        gamma,
        samples: n_samples,
        failures,
        fraction: failures as f64 / n_samples as f64,
    })
}
