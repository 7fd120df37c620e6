mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stacknash::config::TargetSpec;
use stacknash::coupled::solve_optimality;
use stacknash::geometry::{CoupledField, Region};
use stacknash::nash::{
    eval_j, eval_ji, follower_norm, solve_nash, verify_nash_stationarity, ControlTriple, FollowerPair,
};
use stacknash::tree::AdaptedProcess;

use common::{dense_nash, problem, tiny};

fn gap(p: &stacknash::problem::Problem, a: &FollowerPair, b: &FollowerPair) -> f64 {
    let mut d = a.clone();
    d.v1.axpy(-1.0, &b.v1);
    d.v2.axpy(-1.0, &b.v2);
    follower_norm(p, &d) / follower_norm(p, b).max(f64::MIN_POSITIVE)
}

#[test]
fn cg_agrees_with_dense_first_order_conditions() {
    let p = tiny(2);
    for seed in [1, 2, 3] {
        let u = ControlTriple::random(&p, seed);
        let cg = solve_nash(&p, &u).unwrap();
        let g = gap(&p, &cg.followers, &dense_nash(&p, &u));
        assert!(g <= 1e-8, "seed {seed}: {g:e}");
    }
}

#[test]
fn optimality_system_reproduces_equilibrium() {
    let p = problem(8, 5, |_| {});
    let u = ControlTriple::random(&p, 21);
    let via_cg = solve_nash(&p, &u).unwrap().followers;
    let via_system = solve_optimality(&p, &u).unwrap().followers;
    let g = gap(&p, &via_system, &via_cg);
    assert!(g <= 1e-8, "{g:e}");
}

#[test]
fn unilateral_deviations_do_not_pay() {
    let p = problem(8, 5, |_| {});
    let u = ControlTriple::random(&p, 31);
    let v = solve_nash(&p, &u).unwrap().followers;
    let base = [eval_ji(&p, 0, &u, &v).unwrap(), eval_ji(&p, 1, &u, &v).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for trial in 0..20 {
        let i = trial % 2;
        let mut w = v.clone();
        let mask = p.masks.follower(i);
        let n = p.ndof();
        let levels = (0..p.num_steps())
            .map(|k| {
                (0..n << k)
                    .map(|idx| mask.indicator[idx % n] * rng.random_range(-0.1..0.1))
                    .collect()
            })
            .collect();
        let dev = AdaptedProcess::from_levels(n, levels);
        w.get_mut(i).axpy(1.0, &dev);
        let ji = eval_ji(&p, i, &u, &w).unwrap();
        assert!(
            ji >= base[i] - 1e-12 * base[i].abs(),
            "trial {trial}: {ji} < {}",
            base[i]
        );
    }
}

#[test]
fn stationarity_check_flags_perturbed_followers() {
    let p = problem(8, 5, |_| {});
    let u = ControlTriple::random(&p, 41);
    let mut v = solve_nash(&p, &u).unwrap().followers;
    let ok = verify_nash_stationarity(&p, &u, &v, 6, 1e-4, 4).unwrap();
    assert!(ok.max() <= 1e-6, "{:e}", ok.max());
    let mask = p.masks.g1.indicator.clone();
    for k in 0..p.num_steps() {
        for (idx, x) in v.v1.level_mut(k).iter_mut().enumerate() {
            *x += mask[idx % mask.len()];
        }
    }
    let bad = verify_nash_stationarity(&p, &u, &v, 6, 1e-4, 4).unwrap();
    assert!(bad.per_follower[0] >= 1e-3, "{:e}", bad.per_follower[0]);
}

#[test]
fn unit_volume_leader_cost() {
    // Unit interval, unit horizon: J = |G| T / 2.
    let p = problem(11, 4, |_| {});
    let u = ControlTriple::constant(&p, 0.0, 1.0, 0.0);
    assert!((eval_j(&p, &u) - 0.5).abs() <= 1e-12);
}

#[test]
fn tracking_cost_of_a_constant_target() {
    // Zero state against target 1 on a subdomain of length 0.3 over the
    // whole horizon: J_1 = α_1 / 2 · 0.3 · 1.
    let mut p = problem(21, 4, |c| {
        c.subdomains.gd = Some(Region::interval(0.325, 0.625));
        c.subdomains.gprime = Region::interval(0.4, 0.5);
        c.subdomains.g0 = Region::interval(0.3, 0.7);
        c.cost.alpha = [2.0, 1.0];
        c.targets.y1 = TargetSpec { value: 1.0, until: 1.0 };
    });
    p.y0 = CoupledField::zeros(&p.mesh);
    let u = ControlTriple::zeros(&p);
    let j1 = eval_ji(&p, 0, &u, &FollowerPair::zeros(&p)).unwrap();
    assert!((j1 - 0.3).abs() <= 1e-12, "{j1}");
}
