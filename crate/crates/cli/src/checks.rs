//! The `verify` suite: every structural identity the solvers rely on,
//! each reported with its value and tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stacknash::carleman::{gaussian_terminal, observability_sides, validate_targets, WeightSet};
use stacknash::coupled::{duality_sides, mass_pairing_at, solve_adjoint, solve_optimality};
use stacknash::geometry::{inner_product, CoupledField};
use stacknash::hum::{eval_j_eps, grad_j_eps, leaf_weights, Penalty};
use stacknash::nash::{solve_nash, verify_nash_stationarity, ControlTriple};
use stacknash::problem::Problem;
use stacknash::tree::AdaptedProcess;

use anyhow::Result;

pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_process(rng: &mut ChaCha8Rng, dim: usize, levels: usize) -> AdaptedProcess {
    AdaptedProcess::from_levels(dim, (0..levels).map(|k| uniform(rng, dim << k)).collect())
}

fn generator(p: &Problem, rng: &mut ChaCha8Rng) -> Result<[Check; 2]> {
    let (mut sym, mut diss) = (0.0f64, f64::NEG_INFINITY);
    let ip = |a: &CoupledField, b: &CoupledField| inner_product(&p.mesh, a, b);
    for _ in 0..50 {
        let y = CoupledField::from_values(&p.mesh, uniform(rng, p.ndof()))?;
        let z = CoupledField::from_values(&p.mesh, uniform(rng, p.ndof()))?;
        let (ay, az) = (p.op.apply(&y)?, p.op.apply(&z)?);
        let scale = (ip(&ay, &ay)? * ip(&z, &z)?).sqrt() + (ip(&y, &y)? * ip(&az, &az)?).sqrt();
        sym = sym.max((ip(&ay, &z)? - ip(&y, &az)?).abs() / scale);
        diss = diss.max(ip(&ay, &y)? / ip(&y, &y)?);
    }
    Ok([
        Check {
            name: "generator_symmetry",
            value: sym,
            tolerance: 1e-12,
        },
        Check {
            name: "generator_dissipativity",
            value: diss,
            tolerance: 1e-12,
        },
    ])
}

fn tree_moments(p: &Problem) -> Check {
    let tree = &p.tree;
    let mut worst = 0.0f64;
    for k in 0..tree.num_steps() {
        for j in 0..tree.nodes_at(k) {
            let (a, b) = tree.children(j);
            let (da, db) = (tree.increment(a), tree.increment(b));
            worst = worst.max((0.5 * (da + db)).abs());
            worst = worst.max((0.5 * (da * da + db * db) - tree.dt()).abs());
        }
    }
    Check {
        name: "tree_moments",
        value: worst,
        tolerance: 1e-14,
    }
}

/// `𝔼⟨Y_N, p_N⟩ - ⟨Y_0, p_0⟩ = Σ dt 𝔼[L1·m + L2·Ẑ]` for random loads.
fn transpose_duality(p: &Problem, rng: &mut ChaCha8Rng) -> Result<Check> {
    let n = p.ndof();
    let steps = p.num_steps();
    let prop = p.propagator();
    let y0 = uniform(rng, n);
    let l1 = random_process(rng, n, steps);
    let l2 = random_process(rng, n, steps);
    let terminal = uniform(rng, n << steps);
    let y = prop.forward(&y0, Some(&l1), Some(&l2))?;
    let b = prop.transpose(&terminal, None)?;
    let lhs = mass_pairing_at(p, y.level(steps), &terminal, steps) - mass_pairing_at(p, &y0, b.initial(), 0);
    let mut rhs = 0.0;
    for k in 0..steps {
        let e: f64 = l1
            .level(k)
            .iter()
            .zip(b.z_implicit.level(k))
            .chain(l2.level(k).iter().zip(b.zhat.level(k)))
            .map(|(a, c)| a * c)
            .sum();
        rhs += p.tree.dt() * p.tree.probability(k) * e;
    }
    Ok(Check {
        name: "transpose_duality",
        value: rel(lhs, rhs),
        tolerance: 1e-10,
    })
}

pub fn run(p: &Problem, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(generator(p, &mut rng)?);
    out.push(tree_moments(p));
    out.push(transpose_duality(p, &mut rng)?);

    let u = ControlTriple::random(p, seed);
    let x = gaussian_terminal(p, seed);
    let opt = solve_optimality(p, &u)?;
    let adj = solve_adjoint(p, &x)?;
    let (l, r) = duality_sides(p, &u, &opt, &x, &adj);
    out.push(Check {
        name: "coupled_duality",
        value: rel(l, r),
        tolerance: 1e-9,
    });

    let nash = solve_nash(p, &u)?;
    let stat = verify_nash_stationarity(p, &u, &nash.followers, 10, 1e-4, seed)?;
    out.push(Check {
        name: "nash_stationarity",
        value: stat.max(),
        tolerance: 1e-6,
    });
    let mut gap = nash.followers.clone();
    gap.v1.axpy(-1.0, &opt.followers.v1);
    gap.v2.axpy(-1.0, &opt.followers.v2);
    let scale = stacknash::nash::follower_norm(p, &nash.followers).max(f64::MIN_POSITIVE);
    out.push(Check {
        name: "nash_vs_optimality_system",
        value: stacknash::nash::follower_norm(p, &gap) / scale,
        tolerance: 1e-8,
    });

    let pen = Penalty::from_config(&p.config.hum);
    let w = leaf_weights(p);
    let g = grad_j_eps(p, &pen, &x)?;
    let mut grad_err = 0.0f64;
    for i in 0..5u64 {
        let d = gaussian_terminal(p, seed.wrapping_add(1000 + i));
        let at = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            eval_j_eps(p, &pen, &xs)
        };
        let h = 1e-5;
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        let an: f64 = g.iter().zip(&d).zip(&w).map(|((a, b), c)| a * b * c).sum();
        grad_err = grad_err.max(rel(fd, an));
    }
    out.push(Check {
        name: "hum_gradient",
        value: grad_err,
        tolerance: 1e-5,
    });

    let ws = WeightSet::from_problem(p)?;
    let scaled: Vec<f64> = x.iter().map(|v| 37.0 * v).collect();
    let (a1, b1) = observability_sides(p, &ws, &adj)?;
    let (a2, b2) = observability_sides(p, &ws, &solve_adjoint(p, &scaled)?)?;
    out.push(Check {
        name: "observability_scaling",
        value: rel(a1 / b1, a2 / b2),
        tolerance: 1e-12,
    });

    let mut theta_gap = 0.0f64;
    let big_t = ws.horizon;
    for i in 1..20 {
        let t = 0.5 * big_t * (1.0 + i as f64 / 20.0);
        for d in 0..p.ndof() {
            let r = ws.eval_at_node(t, d)?;
            theta_gap = theta_gap.max(rel(r.log_theta, r.log_theta_bar));
        }
    }
    out.push(Check {
        name: "weights_agree_after_half_time",
        value: theta_gap,
        tolerance: 1e-14,
    });
    out.push(Check {
        name: "eta_certificate",
        value: if ws.certificate.passes() { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });
    let targets = validate_targets(p, &ws, &p.cost.targets)?;
    out.push(Check {
        name: "targets_admissible",
        value: if targets.admissible { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });
    Ok(out)
}
