//! Dynamical verification: trajectory integration of truncated
//! Hamiltonians, annulus geometry around the torus, action-drift and
//! stability experiments, orbit comparison on the invariant torus, and the
//! action-angle map.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ham::{FrequencyVector, Hamiltonian};
use crate::poisson::{rk4_step, vector_field, StateVector};
use crate::sampling;
use crate::torus::{self, TorusData};

/// Annulus membership data: points with
/// `sup_j sqrt(||u_j|^2 - I_j|) / u_{0,j} < delta`.
#[derive(Debug, Clone)]
pub struct AnnulusSpec {
    pub torus: TorusData,
    pub delta: f64,
}

impl AnnulusSpec {
    pub fn new(torus: TorusData, delta: f64) -> Result<Self> {
        let cap = (1.0 - torus.kappa() * torus.kappa()).sqrt();
        if !(delta > 0.0 && delta < cap) {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta} must lie in (0, sqrt(1 - kappa^2) = {cap})"
            )));
        }
        Ok(AnnulusSpec { torus, delta })
    }

    pub fn contains(&self, u: &StateVector) -> bool {
        annulus_delta(u, &self.torus) < self.delta
    }
}

/// `sup_j sqrt(||u_j|^2 - I_j|) / u_{0,j}(r)`: the rescaled distance of the
/// action profile from the torus.
pub fn annulus_delta(u: &StateVector, torus: &TorusData) -> f64 {
    let mut sup = 0.0_f64;
    for (j, v) in u.iter() {
        let dev = (v.norm_sqr() - torus.action(j)).abs();
        if dev == 0.0 {
            continue;
        }
        sup = sup.max(dev.sqrt() / torus.weights().u0(j));
    }
    sup
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    ImplicitMidpoint,
}

/// A recorded trajectory with conservation diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub mass_drift: f64,
    pub momentum_drift: f64,
}

fn midpoint_step(
    u: &StateVector,
    dt: f64,
    field: &impl Fn(&StateVector) -> StateVector,
) -> StateVector {
    // fixed-point iteration on u' = u + dt X((u + u')/2)
    let mut next = rk4_step(u, dt, field);
    for _ in 0..50 {
        let mut mid = u.clone();
        mid.axpy(1.0, &next);
        let mid = mid.scaled(0.5);
        let mut candidate = u.clone();
        candidate.axpy(dt, &field(&mid));
        let delta = candidate.sub(&next).sup_norm();
        next = candidate;
        if delta < 1e-14 {
            break;
        }
    }
    next
}

/// Integrates the truncated vector field of `h` from `u0` to time `t_end`,
/// recording every `stride`-th state.  Detects blow-up when the sup norm
/// exceeds twice its initial scale.
pub fn integrate(
    h: &Hamiltonian,
    u0: &StateVector,
    t_end: f64,
    dt: f64,
    method: Integrator,
    stride: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::InvalidParameter("dt and t_end must be positive".into()));
    }
    let stride = stride.max(1);
    let field = |u: &StateVector| vector_field(h, u);
    let guard = 2.0 * (u0.sup_norm() + 1e-12);
    let mass0 = u0.mass();
    let mom0 = u0.momentum();
    let steps = (t_end / dt).ceil() as usize;
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut u = u0.clone();
    let mut mass_drift = 0.0_f64;
    let mut momentum_drift = 0.0_f64;
    for i in 1..=steps {
        u = match method {
            Integrator::Rk4 => rk4_step(&u, dt, field),
            Integrator::ImplicitMidpoint => midpoint_step(&u, dt, &field),
        };
        let t = i as f64 * dt;
        if u.sup_norm() > guard {
            return Err(Error::FlowDivergence {
                t,
                norm: u.sup_norm(),
            });
        }
        mass_drift = mass_drift.max((u.mass() - mass0).abs());
        momentum_drift = momentum_drift.max((u.momentum() - mom0).abs());
        if i % stride == 0 || i == steps {
            times.push(t);
            states.push(u.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        mass_drift,
        momentum_drift,
    })
}

/// Integrates until `stop` fires or `t_max`; returns the exit time if any.
pub fn integrate_until(
    h: &Hamiltonian,
    u0: &StateVector,
    t_max: f64,
    dt: f64,
    method: Integrator,
    stop: impl Fn(&StateVector) -> bool,
) -> Result<Option<f64>> {
    let field = |u: &StateVector| vector_field(h, u);
    let guard = 2.0 * (u0.sup_norm() + 1e-12);
    let steps = (t_max / dt).ceil() as usize;
    let mut u = u0.clone();
    for i in 1..=steps {
        u = match method {
            Integrator::Rk4 => rk4_step(&u, dt, field),
            Integrator::ImplicitMidpoint => midpoint_step(&u, dt, &field),
        };
        let t = i as f64 * dt;
        if u.sup_norm() > guard {
            return Err(Error::FlowDivergence {
                t,
                norm: u.sup_norm(),
            });
        }
        if stop(&u) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// `u_j = sqrt(J_j) e^{i theta_j}`.
pub fn action_angle_forward(
    j_max: i32,
    actions: &dyn Fn(i32) -> f64,
    angles: &dyn Fn(i32) -> f64,
) -> StateVector {
    StateVector::from_fn(j_max, |j| {
        let a = actions(j);
        if a > 0.0 {
            Complex64::from_polar(a.sqrt(), angles(j))
        } else {
            Complex64::default()
        }
    })
}

/// Recovers `(J, theta) = (|u_j|^2, arg u_j)`; every stored coordinate must
/// be nonzero.
pub fn action_angle_inverse(u: &StateVector) -> Result<(Vec<(i32, f64)>, Vec<(i32, f64)>)> {
    let mut actions = Vec::new();
    let mut angles = Vec::new();
    for (j, v) in u.iter() {
        if v.norm() == 0.0 {
            return Err(Error::ZeroCoordinate { mode: j });
        }
        actions.push((j, v.norm_sqr()));
        angles.push((j, v.arg()));
    }
    Ok((actions, angles))
}

/// A point at rescaled distance exactly `delta` from the torus: action
/// deviations `delta^2 u_{0,j}^2 zeta_j` with random signs scaled so the
/// largest hits the boundary, and independent uniform angles.
pub fn sample_annulus_point(
    rng: &mut impl Rng,
    torus: &TorusData,
    j_max: i32,
    delta: f64,
) -> StateVector {
    let mut zeta: Vec<(i32, f64)> = Vec::new();
    let mut max_abs = 0.0_f64;
    for j in -j_max..=j_max {
        let u0 = torus.weights().u0(j);
        let cap = torus.action(j) / (delta * delta * u0 * u0);
        // keep I_j + dev >= 0
        let lo = -cap.min(1.0);
        let z = rng.gen_range(lo..=1.0);
        max_abs = max_abs.max(z.abs());
        zeta.push((j, z));
    }
    let scale = if max_abs > 0.0 { 1.0 / max_abs } else { 1.0 };
    let mut u = StateVector::zero(j_max);
    for (j, z) in zeta {
        let u0 = torus.weights().u0(j);
        let action = torus.action(j) + delta * delta * u0 * u0 * z * scale;
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        u.set(j, Complex64::from_polar(action.max(0.0).sqrt(), theta));
    }
    u
}

/// Exit statistics at one annulus width.
#[derive(Debug, Clone)]
pub struct ExitRow {
    pub delta: f64,
    pub exits: Vec<Option<f64>>,
    pub min_exit: Option<f64>,
    pub median_exit: Option<f64>,
    /// Measured `sup_j |d/dt |u_j|^2| / u_{0,j}^2` over the sampled points.
    pub action_rate: f64,
}

/// Outcome of the drift experiment.
#[derive(Debug, Clone)]
pub struct DriftReport {
    pub rows: Vec<ExitRow>,
    /// Fitted exponent of `min exit time ~ delta^x` (expected `-d`).
    pub exit_exponent: Option<f64>,
    /// Fitted exponent of `action rate ~ delta^x` (expected `d + 2`).
    pub rate_exponent: f64,
}

/// Measures exit times from the doubled annulus and the action-velocity
/// scaling for a normal form `N = D_omega + P`, across widths
/// `delta0, delta0/2, delta0/4`.
#[allow(clippy::too_many_arguments)]
pub fn drift_experiment(
    p: &Hamiltonian,
    omega: &FrequencyVector,
    torus: &TorusData,
    delta0: f64,
    t_max: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DriftReport> {
    let j_max = omega.j_max();
    let n_full = omega.d_omega(p.modes(), p.degree_cutoff()).add(p);
    let mut rows = Vec::new();
    for level in 0..3 {
        let delta = delta0 / 2.0_f64.powi(level);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(level as u64));
        let mut exits = Vec::new();
        let mut rate = 0.0_f64;
        for _ in 0..n_samples {
            let u0 = sample_annulus_point(&mut rng, torus, j_max, delta);
            // action velocity at the sampled point
            let x = vector_field(p, &u0);
            for (j, v) in u0.iter() {
                let dj = 2.0 * (v.conj() * x.get(j)).re;
                let u0w = torus.weights().u0(j);
                rate = rate.max(dj.abs() / (u0w * u0w));
            }
            let exit = integrate_until(&n_full, &u0, t_max, dt, Integrator::Rk4, |u| {
                annulus_delta(u, torus) >= 2.0 * delta
            })?;
            exits.push(exit);
        }
        let mut finite: Vec<f64> = exits.iter().flatten().copied().collect();
        finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min_exit = finite.first().copied();
        let median_exit = if finite.is_empty() {
            None
        } else {
            Some(finite[finite.len() / 2])
        };
        rows.push(ExitRow {
            delta,
            exits,
            min_exit,
            median_exit,
            action_rate: rate,
        });
    }
    let exit_exponent = fit_exponent(
        &rows
            .iter()
            .filter_map(|r| r.min_exit.map(|t| (r.delta, t)))
            .collect::<Vec<_>>(),
    );
    let rate_exponent = fit_exponent(
        &rows
            .iter()
            .map(|r| (r.delta, r.action_rate))
            .collect::<Vec<_>>(),
    )
    .unwrap_or(f64::NAN);
    Ok(DriftReport {
        rows,
        exit_exponent,
        rate_exponent,
    })
}

/// Least-squares slope of `ln y` against `ln x`; `None` under 2 points.
fn fit_exponent(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Comparison of the integrated orbit against the exact linear flow on the
/// invariant torus.
#[derive(Debug, Clone)]
pub struct OrbitDefectReport {
    /// Sup over sampled times and modes of `|u_num - u_exact|`.
    pub defect: f64,
    /// Sup deviation of the moduli from their initial values.
    pub action_drift: f64,
    pub normal_form_residual: f64,
}

/// Integrates `N = D_omega + remainder` from torus points and compares with
/// `u_j(t) = u_j(0) e^{i omega_j t}`.  Rejects remainders whose low-degree
/// norm exceeds `nf_tol`.
#[allow(clippy::too_many_arguments)]
pub fn torus_orbit_defect(
    remainder: &Hamiltonian,
    omega: &FrequencyVector,
    torus: &TorusData,
    t_end: f64,
    dt: f64,
    n_points: usize,
    seed: u64,
    nf_tol: f64,
) -> Result<OrbitDefectReport> {
    let env = torus.weights().clone();
    let low = torus::project_leq(remainder, torus, 0)?;
    let residual = low.norm(&env);
    if residual > nf_tol {
        return Err(Error::NotNormalForm {
            residual,
            tol: nf_tol,
        });
    }
    let n_full = omega.d_omega(remainder.modes(), remainder.degree_cutoff()).add(remainder);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut defect = 0.0_f64;
    let mut action_drift = 0.0_f64;
    for _ in 0..n_points {
        let u0 = sampling::random_torus_point(&mut rng, torus, omega.j_max());
        let traj = integrate(&n_full, &u0, t_end, dt, Integrator::Rk4, 16)?;
        for (t, u) in traj.times.iter().zip(&traj.states) {
            for (j, v) in u.iter() {
                let exact = u0.get(j) * Complex64::from_polar(1.0, omega.omega(j) * t);
                defect = defect.max((v - exact).norm());
                action_drift = action_drift.max((v.norm() - u0.get(j).norm()).abs());
            }
        }
    }
    Ok(OrbitDefectReport {
        defect,
        action_drift,
        normal_form_residual: residual,
    })
}

/// Sup over sampled torus points of the weighted norm of the remainder's
/// vector field: the defining property of an invariant torus is that it
/// vanishes there.
pub fn invariance_defect(
    remainder: &Hamiltonian,
    torus: &TorusData,
    j_max: i32,
    n_points: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup = 0.0_f64;
    for _ in 0..n_points {
        let u = sampling::random_torus_point(&mut rng, torus, j_max);
        let x = vector_field(remainder, &u);
        sup = sup.max(x.w_norm(torus.weights()));
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::{ModeSet, MultiIndex};
    use approx::assert_relative_eq;

    fn mi(pairs: &[(i32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs)
    }

    fn weights(r: f64) -> crate::ham::WeightParams {
        crate::ham::WeightParams::new(2.0, 1.0, 0.0, 0.0, 0.5, r).unwrap()
    }

    #[test]
    fn linear_flow_conserves_moduli_and_advances_phases() {
        let modes = ModeSet::new(2).unwrap();
        let omega = FrequencyVector::from_xi(2, |j| 0.2 - 0.07 * j as f64).unwrap();
        let d = omega.d_omega(&modes, 4);
        let u0 = StateVector::from_fn(2, |j| Complex64::new(0.1 + 0.02 * j as f64, -0.03));
        let t_end = 10.0;
        let traj = integrate(&d, &u0, t_end, 1e-3, Integrator::Rk4, 1000).unwrap();
        assert!(traj.mass_drift < 1e-10, "mass drift {}", traj.mass_drift);
        let last = traj.states.last().unwrap();
        for (j, v) in last.iter() {
            let exact = u0.get(j) * Complex64::from_polar(1.0, omega.omega(j) * t_end);
            assert_relative_eq!(v.re, exact.re, epsilon = 1e-8);
            assert_relative_eq!(v.im, exact.im, epsilon = 1e-8);
        }
    }

    #[test]
    fn midpoint_conserves_mass_on_nonlinear_field() {
        let modes = ModeSet::new(1).unwrap();
        let mut h = FrequencyVector::integer(1).d_omega(&modes, 6);
        h.add_real_pair(
            mi(&[(1, 1), (-1, 1)]),
            mi(&[(0, 2)]),
            Complex64::new(0.4, 0.1),
        )
        .unwrap();
        let u0 = StateVector::from_fn(1, |j| Complex64::new(0.2 - 0.03 * j as f64, 0.1));
        let traj = integrate(&h, &u0, 5.0, 1e-3, Integrator::ImplicitMidpoint, 500).unwrap();
        assert!(traj.mass_drift < 1e-9, "mass drift {}", traj.mass_drift);
        assert!(traj.momentum_drift < 1e-9);
    }

    #[test]
    fn annulus_distance_examples() {
        let w = weights(1.0);
        let torus = TorusData::new([(1, 0.01), (-1, 0.02)], 0.5, w).unwrap();
        // on the torus: zero
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = sampling::random_torus_point(&mut rng, &torus, 1);
        // the square root amplifies rounding: sqrt(eps * I) / u0 ~ 1e-8
        assert!(annulus_delta(&u, &torus) < 1e-7);
        // u = 0 with I = 0 on the untouched modes contributes only the
        // torus modes
        let zero = StateVector::zero(1);
        let d = annulus_delta(&zero, &torus);
        let expect = (0.02_f64).sqrt() / torus.weights().u0(-1);
        assert_relative_eq!(d, expect.max((0.01_f64).sqrt() / torus.weights().u0(1)), max_relative = 1e-12);
        // inversion: a point built at distance delta lands at delta
        let delta = 0.1;
        let pt = sample_annulus_point(&mut rng, &torus, 1, delta);
        assert_relative_eq!(annulus_delta(&pt, &torus), delta, max_relative = 1e-9);
        // angle invariance: rotating every coordinate leaves it unchanged
        let rotated = StateVector::from_fn(1, |j| pt.get(j) * Complex64::from_polar(1.0, 0.7));
        assert_relative_eq!(
            annulus_delta(&rotated, &torus),
            annulus_delta(&pt, &torus),
            max_relative = 1e-12
        );
    }

    #[test]
    fn action_angle_round_trip() {
        let u = StateVector::from_fn(1, |j| Complex64::new(0.3 + 0.1 * j as f64, -0.2));
        let (actions, angles) = action_angle_inverse(&u).unwrap();
        let back = action_angle_forward(
            1,
            &|j| actions.iter().find(|&&(m, _)| m == j).unwrap().1,
            &|j| angles.iter().find(|&&(m, _)| m == j).unwrap().1,
        );
        for (j, v) in u.iter() {
            assert_relative_eq!(back.get(j).re, v.re, epsilon = 1e-14);
            assert_relative_eq!(back.get(j).im, v.im, epsilon = 1e-14);
        }
        assert_eq!(
            action_angle_forward(1, &|j| if j == 1 { 1.0 } else { 0.0 }, &|_| 0.0).get(1),
            Complex64::new(1.0, 0.0)
        );
        // zero coordinate rejected
        let mut z = u.clone();
        z.set(0, Complex64::default());
        assert!(matches!(
            action_angle_inverse(&z),
            Err(Error::ZeroCoordinate { mode: 0 })
        ));
    }

    #[test]
    fn d_omega_never_exits() {
        let w = weights(0.5);
        let torus = TorusData::profile(&[1, -1], 0.4, w).unwrap();
        let omega = FrequencyVector::from_xi(1, |_| 0.23).unwrap();
        let modes = ModeSet::new(1).unwrap();
        let p = Hamiltonian::zero(modes, 6).unwrap();
        let report = drift_experiment(&p, &omega, &torus, 0.2, 50.0, 1e-2, 4, 3).unwrap();
        for row in &report.rows {
            assert!(row.exits.iter().all(|e| e.is_none()), "{:?}", row.min_exit);
        }
        assert!(report.exit_exponent.is_none());
    }

    #[test]
    fn conserved_quartic_never_exits() {
        // N = D + c (|u_1|^2 - I_1)^2: the action |u_1|^2 is conserved
        let w = weights(0.5);
        let torus = TorusData::profile(&[1, -1], 0.4, w).unwrap();
        let i1 = torus.action(1);
        let omega = FrequencyVector::from_xi(1, |_| 0.19).unwrap();
        let modes = ModeSet::new(1).unwrap();
        let mut p = Hamiltonian::zero(modes, 6).unwrap();
        // (|u_1|^2 - I_1)^2 expanded, constants dropped
        p.add_real_pair(mi(&[(1, 2)]), mi(&[(1, 2)]), Complex64::new(0.5, 0.0))
            .unwrap();
        p.add_real_pair(mi(&[(1, 1)]), mi(&[(1, 1)]), Complex64::new(-i1, 0.0))
            .unwrap();
        let report = drift_experiment(&p, &omega, &torus, 0.2, 20.0, 1e-2, 4, 7).unwrap();
        for row in &report.rows {
            assert!(row.exits.iter().all(|e| e.is_none()));
        }
    }

    #[test]
    fn orbit_defect_small_for_pure_linear_flow() {
        let w = weights(0.5);
        let torus = TorusData::profile(&[1, 0], 0.4, w).unwrap();
        let omega = FrequencyVector::from_xi(1, |j| 0.11 + 0.05 * j as f64).unwrap();
        let modes = ModeSet::new(1).unwrap();
        let zero = Hamiltonian::zero(modes, 6).unwrap();
        let report =
            torus_orbit_defect(&zero, &omega, &torus, 5.0, 1e-3, 3, 11, 1e-12).unwrap();
        assert!(report.defect < 1e-9, "defect {}", report.defect);
        assert!(report.action_drift < 1e-10);
        // a remainder with low-degree content is rejected
        let mut bad = Hamiltonian::zero(ModeSet::new(1).unwrap(), 6).unwrap();
        bad.add_real_pair(mi(&[(1, 1)]), mi(&[(0, 1)]), Complex64::new(0.1, 0.0))
            .unwrap();
        assert!(matches!(
            torus_orbit_defect(&bad, &omega, &torus, 1.0, 1e-2, 1, 1, 1e-12),
            Err(Error::NotNormalForm { .. })
        ));
    }
}
