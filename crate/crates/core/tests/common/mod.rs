#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use stacknash::config::ProblemConfig;
use stacknash::geometry::Region;
use stacknash::nash::{eval_ji, ControlTriple, FollowerPair};
use stacknash::problem::Problem;

pub fn problem(n: usize, steps: usize, edit: impl FnOnce(&mut ProblemConfig)) -> Problem {
    let mut cfg = ProblemConfig::default();
    cfg.geometry.n = n;
    cfg.tree.steps = steps;
    edit(&mut cfg);
    Problem::from_config(&cfg).expect("instance")
}

/// Three-node interval whose masks all contain the middle node.
pub fn tiny(steps: usize) -> Problem {
    problem(3, steps, |c| {
        c.subdomains.g0 = Region::interval(0.2, 0.8);
        c.subdomains.g1 = Region::interval(0.3, 0.7);
        c.subdomains.g2 = Region::interval(0.4, 0.9);
        c.subdomains.gd = Some(Region::interval(0.3, 0.8));
        c.cost.beta = [1e2, 2e2];
        c.cost.beta_floor_factor = 1.0;
    })
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    num / den
}

/// Equilibrium from the first-order conditions, assembled by exact central
/// differences of the quadratic follower costs and solved densely.
pub fn dense_nash(p: &Problem, u: &ControlTriple) -> FollowerPair {
    let steps = p.num_steps();
    let mut slots = Vec::new();
    for i in 0..2 {
        let mask = p.masks.follower(i);
        for k in 0..steps {
            for j in 0..p.tree.nodes_at(k) {
                for d in 0..p.ndof() {
                    if mask.indicator[d] != 0.0 {
                        slots.push((i, k, j * p.ndof() + d));
                    }
                }
            }
        }
    }
    let m = slots.len();
    let build = |x: &[f64]| {
        let mut v = FollowerPair::zeros(p);
        for (&(i, k, idx), &val) in slots.iter().zip(x) {
            v.get_mut(i).level_mut(k)[idx] = val;
        }
        v
    };
    let first_order = |x: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|s| {
                let i = slots[s].0;
                let mut plus = x.to_vec();
                plus[s] += 1.0;
                let mut minus = x.to_vec();
                minus[s] -= 1.0;
                0.5 * (eval_ji(p, i, u, &build(&plus)).unwrap() - eval_ji(p, i, u, &build(&minus)).unwrap())
            })
            .collect()
    };
    let f0 = first_order(&vec![0.0; m]);
    let mut a = DMatrix::<f64>::zeros(m, m);
    for c in 0..m {
        let mut e = vec![0.0; m];
        e[c] = 1.0;
        let fc = first_order(&e);
        for r in 0..m {
            a[(r, c)] = fc[r] - f0[r];
        }
    }
    let sol = a
        .lu()
        .solve(&DVector::from_iterator(m, f0.iter().map(|v| -v)))
        .expect("dense Nash system");
    build(sol.as_slice())
}
