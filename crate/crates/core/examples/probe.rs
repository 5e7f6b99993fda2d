use kamtori::ham::{FrequencyVector, WeightParams};
use kamtori::indices::ModeSet;
use kamtori::torus::{self, TorusData};
use kamtori::kam::{measure_eps_theta, kam_step, KamConfig, KamState, CounterOperator};
use kamtori::sampling;
use rand::SeedableRng;

fn main() {
    let j_max = 2;
    let modes = ModeSet::new(j_max).unwrap();
    let gamma = 0.1;
    let r = 0.1;
    let w = WeightParams::new(2.0, 1.0, 0.0, 0.0, 0.5, r).unwrap();
    // BIGGER actions: kappa = 0.7 profile so I-weights are not negligible
    let torus = TorusData::profile(&[-1,0,1], 0.7, w).unwrap();
    let omega = FrequencyVector::from_xi(j_max, |j| 0.1 * ((j as f64)*1.7).sin()).unwrap();
    let r0 = 2.0*2.0_f64.sqrt()*r;
    let rho = r0 - 2.0*r;
    let mut cfg = KamConfig::new(r0, 0.5, 1.0, rho, 0.5, gamma).unwrap();
    cfg.eps_target = 1e-13;
    cfg.max_steps = 6;
    let env0 = w.with_rse(cfg.r0, cfg.s0, cfg.eta0);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let g0 = sampling::random_hamiltonian(&mut rng, &modes, 8, 3, 12).scale(3e-3);
    let (eps0, th0) = measure_eps_theta(&g0, &torus, &env0, gamma).unwrap();
    println!("random G0: eps0 = {eps0:.3e} theta0 = {th0:.3e}");
    let mut state = KamState { n: 0, g: g0, lambda_acc: Default::default(),
        l_op: CounterOperator::zero(), eps: eps0, theta: th0, trunc_residual: 0.0, s_list: vec![] };
    for _ in 0..5 {
        match kam_step(&state, &omega, &torus, &cfg) {
            Ok((next, _s, lam, diag)) => {
                println!("n={} eps={:.3e} -> {:.3e}  ratio_to_sq={:.3e}  |lam|={:.3e} homres={:.3e} sweeps={} trunc={:.3e}",
                    state.n, state.eps, next.eps, next.eps/(state.eps*state.eps), lam.sup_norm(), diag.homological_residual_rel, diag.refine_sweeps, diag.trunc_residual);
                // independent: decompose G1 low parts
                let low = torus::project_leq(&next.g, &torus, 0).unwrap();
                println!("   |G^(<=0)| = {:.3e}", low.norm(&env0));
                state = next;
            }
            Err(e) => { println!("step error: {e}"); break; }
        }
        if state.eps < 1e-14 { break; }
    }
}
