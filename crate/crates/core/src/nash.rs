//! Follower game for fixed leaders: costs, the Nash equilibrium and a
//! finite-difference stationarity probe.
//!
//! After dividing follower `i`'s first-order condition by `α_i`, the
//! equilibrium solves the symmetric positive definite system
//!
//! ```text
//! ℓ_i* χ_Gd (ℓ_1 v_1 + ℓ_2 v_2) + (β_i / α_i) v_i = ℓ_i* χ_Gd (y_i,d - q)
//! ```
//!
//! where `ℓ_i` maps a follower control to the state it generates from rest,
//! `q` is the state under the leaders alone, and `ℓ_i*` is the exact discrete
//! transpose. One operator application costs one forward and one transposed
//! sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coupled::{bulk_pairing, bulk_source, forward_state, masked, surface_pairing};
use crate::error::{check_len, Result};
use crate::exec;
use crate::linalg::{conjugate_gradient, weighted_norm};
use crate::problem::Problem;
use crate::tree::AdaptedProcess;

/// Leaders on levels `0..N`: `u1` and `u2` on every node, `u3` on the boundary block.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTriple {
    pub u1: AdaptedProcess,
    pub u2: AdaptedProcess,
    pub u3: AdaptedProcess,
}

impl ControlTriple {
    pub fn zeros(p: &Problem) -> Self {
        let steps = p.num_steps();
        Self {
            u1: AdaptedProcess::zeros(p.ndof(), steps),
            u2: AdaptedProcess::zeros(p.ndof(), steps),
            u3: AdaptedProcess::zeros(p.n_boundary(), steps),
        }
    }

    /// Deterministic constants; `u1` is restricted to `G0`.
    pub fn constant(p: &Problem, u1: f64, u2: f64, u3: f64) -> Self {
        let steps = p.num_steps();
        let u1: Vec<f64> = p.masks.g0.indicator.iter().map(|c| c * u1).collect();
        Self {
            u1: AdaptedProcess::deterministic(&u1, steps),
            u2: AdaptedProcess::deterministic(&vec![u2; p.ndof()], steps),
            u3: AdaptedProcess::deterministic(&vec![u3; p.n_boundary()], steps),
        }
    }

    /// Independent standard normal entries, `u1` restricted to `G0`.
    pub fn random(p: &Problem, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = p.num_steps();
        let mut draw = |dim: usize| {
            let mut x = AdaptedProcess::zeros(dim, steps);
            for k in 0..steps {
                x.level_mut(k)
                    .iter_mut()
                    .for_each(|v| *v = StandardNormal.sample(&mut rng));
            }
            x
        };
        let u1 = draw(p.ndof());
        let u2 = draw(p.ndof());
        let u3 = draw(p.n_boundary());
        Self {
            u1: masked(&p.masks.g0, &u1, 1.0),
            u2,
            u3,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for x in [&mut out.u1, &mut out.u2, &mut out.u3] {
            x.scale(c);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.u1.axpy(1.0, &other.u1);
        out.u2.axpy(1.0, &other.u2);
        out.u3.axpy(1.0, &other.u3);
        out
    }
}

/// Followers on levels `0..N`, each supported on its own set.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerPair {
    pub v1: AdaptedProcess,
    pub v2: AdaptedProcess,
}

impl FollowerPair {
    pub fn zeros(p: &Problem) -> Self {
        let z = AdaptedProcess::zeros(p.ndof(), p.num_steps());
        Self { v1: z.clone(), v2: z }
    }

    pub fn get(&self, i: usize) -> &AdaptedProcess {
        if i == 0 {
            &self.v1
        } else {
            &self.v2
        }
    }

    pub fn get_mut(&mut self, i: usize) -> &mut AdaptedProcess {
        if i == 0 {
            &mut self.v1
        } else {
            &mut self.v2
        }
    }

    pub(crate) fn flatten(&self, steps: usize) -> Vec<f64> {
        let mut x = self.v1.flatten_levels(0, steps);
        x.extend(self.v2.flatten_levels(0, steps));
        x
    }

    pub(crate) fn unflatten(dim: usize, steps: usize, x: &[f64]) -> Self {
        let half = x.len() / 2;
        Self {
            v1: AdaptedProcess::unflatten(dim, 0, steps, &x[..half]),
            v2: AdaptedProcess::unflatten(dim, 0, steps, &x[half..]),
        }
    }
}

/// `‖v‖_𝒱`: the space-time bulk norm of both followers.
pub fn follower_norm(p: &Problem, v: &FollowerPair) -> f64 {
    (bulk_pairing(p, &v.v1, &v.v1, Some(&p.masks.g1)) + bulk_pairing(p, &v.v2, &v.v2, Some(&p.masks.g2))).sqrt()
}

/// `‖u‖_𝒰 = sqrt(2 J(u))`.
pub fn leader_norm(p: &Problem, u: &ControlTriple) -> f64 {
    (2.0 * eval_j(p, u)).sqrt()
}

/// Leader cost `½(‖χ_G0 u1‖² + ‖u2‖²) + ½‖u3‖²_Γ`.
pub fn eval_j(p: &Problem, u: &ControlTriple) -> f64 {
    0.5 * (bulk_pairing(p, &u.u1, &u.u1, Some(&p.masks.g0))
        + bulk_pairing(p, &u.u2, &u.u2, None)
        + surface_pairing(p, &u.u3, &u.u3))
}

/// Follower cost `J_i` (`i` is 0 or 1) with the state from `p.y0`.
pub fn eval_ji(p: &Problem, i: usize, u: &ControlTriple, v: &FollowerPair) -> Result<f64> {
    let y = forward_state(p, Some(u), Some(v))?;
    Ok(follower_cost(p, i, &y, v))
}

fn follower_cost(p: &Problem, i: usize, y: &AdaptedProcess, v: &FollowerPair) -> f64 {
    let mut diff = y.clone();
    diff.axpy(-1.0, &p.cost.targets[i]);
    let track = bulk_pairing(p, &diff, &diff, Some(&p.masks.gd));
    let effort = bulk_pairing(p, v.get(i), v.get(i), Some(p.masks.follower(i)));
    0.5 * p.cost.alpha[i] * track + 0.5 * p.cost.beta[i] * effort
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashSolution {
    pub followers: FollowerPair,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// `χ_Gi ℓ_i* (χ_Gd r)` for both `i`, from one transposed sweep.
fn adjoint_apply(p: &Problem, r: &AdaptedProcess) -> Result<[AdaptedProcess; 2]> {
    let n = p.ndof();
    let h = bulk_source(p, &p.masks.gd, |k, j, d| r.level(k)[j * n + d]);
    let terminal = vec![0.0; n << p.num_steps()];
    let sol = p.propagator().transpose(&terminal, Some(&h))?;
    Ok([
        masked(&p.masks.g1, &sol.z_implicit, 1.0),
        masked(&p.masks.g2, &sol.z_implicit, 1.0),
    ])
}

/// `ℓ_1 v_1 + ℓ_2 v_2` from rest.
fn follower_state(p: &Problem, v: &FollowerPair) -> Result<AdaptedProcess> {
    let drift = crate::coupled::drift_load(p, None, Some(v));
    p.propagator().forward(&vec![0.0; p.ndof()], Some(&drift), None)
}

fn nash_weights(p: &Problem) -> Vec<f64> {
    let mut w = p.bulk_space_time_weights(0, p.num_steps());
    w.extend_from_within(..);
    w
}

fn nash_rhs(p: &Problem, u: &ControlTriple) -> Result<Vec<f64>> {
    let steps = p.num_steps();
    let q = forward_state(p, Some(u), None)?;
    let residual = |i: usize| {
        let mut r = p.cost.targets[i].clone();
        r.axpy(-1.0, &q);
        adjoint_apply(p, &r)
    };
    let (r1, r2) = exec::join(|| residual(0), || residual(1));
    let [a, _] = r1?;
    let [_, b] = r2?;
    let mut rhs = a.flatten_levels(0, steps);
    rhs.extend(b.flatten_levels(0, steps));
    Ok(rhs)
}

fn nash_apply(p: &Problem, x: &[f64]) -> Result<Vec<f64>> {
    let steps = p.num_steps();
    let v = FollowerPair::unflatten(p.ndof(), steps, x);
    let s = follower_state(p, &v)?;
    let [a, b] = adjoint_apply(p, &s)?;
    let mut out = a.flatten_levels(0, steps);
    out.extend(b.flatten_levels(0, steps));
    let half = x.len() / 2;
    let c = [p.cost.beta[0] / p.cost.alpha[0], p.cost.beta[1] / p.cost.alpha[1]];
    for (idx, (o, xi)) in out.iter_mut().zip(x).enumerate() {
        *o += c[usize::from(idx >= half)] * xi;
    }
    Ok(out)
}

/// Nash equilibrium for the leaders `u`, starting CG from zero.
pub fn solve_nash(p: &Problem, u: &ControlTriple) -> Result<NashSolution> {
    solve_nash_from(p, u, None)
}

/// Nash equilibrium with an explicit CG starting point.
pub fn solve_nash_from(p: &Problem, u: &ControlTriple, start: Option<&FollowerPair>) -> Result<NashSolution> {
    let steps = p.num_steps();
    let rhs = nash_rhs(p, u)?;
    let w = nash_weights(p);
    let x0 = start.map(|v| v.flatten(steps));
    if let Some(x0) = &x0 {
        check_len("CG starting point", rhs.len(), x0.len())?;
    }
    let out = conjugate_gradient(
        |x| nash_apply(p, x),
        &rhs,
        x0.as_deref(),
        &w,
        p.solver.cg_tol,
        p.solver.cg_max_iters,
    )?;
    Ok(NashSolution {
        followers: FollowerPair::unflatten(p.ndof(), steps, &out.x),
        iterations: out.iterations,
        relative_residual: out.relative_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    /// Largest `|∂J_i/∂v_i · d| / (1 + |J_i|)` per follower.
    pub per_follower: [f64; 2],
    pub cost: [f64; 2],
}

impl StationarityReport {
    pub fn max(&self) -> f64 {
        self.per_follower[0].max(self.per_follower[1])
    }
}

/// Central differences of `J_i` along `directions` random unit directions in `𝒱_i`.
pub fn verify_nash_stationarity(
    p: &Problem,
    u: &ControlTriple,
    v: &FollowerPair,
    directions: usize,
    step: f64,
    seed: u64,
) -> Result<StationarityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = p.num_steps();
    let w = p.bulk_space_time_weights(0, steps);
    let mut per = [0.0; 2];
    let mut cost = [0.0; 2];
    for i in 0..2 {
        let ji = eval_ji(p, i, u, v)?;
        cost[i] = ji;
        let mask = p.masks.follower(i);
        for _ in 0..directions {
            let mut d = AdaptedProcess::zeros(p.ndof(), steps);
            for k in 0..steps {
                d.level_mut(k)
                    .iter_mut()
                    .for_each(|x| *x = StandardNormal.sample(&mut rng));
            }
            let mut d = masked(mask, &d, 1.0);
            let norm = weighted_norm(&w, &d.flatten_levels(0, steps));
            if norm == 0.0 {
                continue;
            }
            d.scale(1.0 / norm);
            let shifted = |c: f64| {
                let mut vv = v.clone();
                vv.get_mut(i).axpy(c, &d);
                eval_ji(p, i, u, &vv)
            };
            let dd = (shifted(step)? - shifted(-step)?) / (2.0 * step);
            per[i] = f64::max(per[i], dd.abs() / (1.0 + ji.abs()));
        }
    }
    Ok(StationarityReport {
        per_follower: per,
        cost,
    })
}
