//! The optimality system (state plus the two follower adjoints) and the
//! adjoint system used for observability and the leader problem.
//!
//! Both are linear forward-backward couplings, solved by Picard iteration on
//! the forward component with an assembled direct solve as fallback. Every
//! backward solve is the exact transpose of the forward sweep, so the duality
//! identity between the two systems holds to rounding:
//!
//! ```text
//! 𝔼⟨Y_N, φ_T⟩ - ⟨Y_0, φ_0⟩
//!     = ⟨u1, χ_G0 φ⟩ + ⟨u2, Φ⟩ + ⟨u3, Φ̂⟩_Γ + Σ_i α_i ⟨y_i,d, ψ^i⟩_Gd
//! ```

use crate::backward::BackwardSolution;
use crate::error::{check_len, Result};
use crate::exec;
use crate::geometry::SubdomainMask;
use crate::linalg::{affine_fixed_point_direct, picard, FixedPointOutcome};
use crate::nash::{ControlTriple, FollowerPair};
use crate::problem::Problem;
use crate::tree::AdaptedProcess;

#[derive(Debug, Clone)]
pub struct OptimalityBundle {
    /// State on levels `0..=N`.
    pub y: AdaptedProcess,
    /// Follower adjoints `z^1`, `z^2` (terminal value zero).
    pub z: [BackwardSolution; 2],
    /// `v_i = -χ_Gi z^i / β_i`.
    pub followers: FollowerPair,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub used_direct: bool,
}

#[derive(Debug, Clone)]
pub struct AdjointBundle {
    pub phi: BackwardSolution,
    /// `ψ^1`, `ψ^2` on levels `0..=N`, starting from zero.
    pub psi: [AdaptedProcess; 2],
    pub iterations: usize,
    pub history: Vec<f64>,
    pub used_direct: bool,
}

/// `Σ_k dt 𝔼 Σ w_dx χ a b` over levels `0..N` of bulk processes.
pub fn bulk_pairing(p: &Problem, a: &AdaptedProcess, b: &AdaptedProcess, mask: Option<&SubdomainMask>) -> f64 {
    let w = p.mesh.bulk_weights();
    let n = w.len();
    let mut total = 0.0;
    for k in 0..p.num_steps() {
        let c = p.tree.dt() * p.tree.probability(k);
        let (la, lb) = (a.level(k), b.level(k));
        let mut s = 0.0;
        for (idx, (x, y)) in la.iter().zip(lb).enumerate() {
            let i = idx % n;
            let chi = mask.map_or(1.0, |m| m.indicator[i]);
            s += w[i] * chi * x * y;
        }
        total += c * s;
    }
    total
}

/// `Σ_k dt 𝔼 Σ w_dσ a b` over levels `0..N` of boundary processes.
pub fn surface_pairing(p: &Problem, a: &AdaptedProcess, b: &AdaptedProcess) -> f64 {
    let w = p.mesh.surface_weights();
    let nb = w.len();
    let mut total = 0.0;
    for k in 0..p.num_steps() {
        let c = p.tree.dt() * p.tree.probability(k);
        let s: f64 = a
            .level(k)
            .iter()
            .zip(b.level(k))
            .enumerate()
            .map(|(idx, (x, y))| w[idx % nb] * x * y)
            .sum();
        total += c * s;
    }
    total
}

/// `𝔼⟨a, b⟩_𝕃²` at level `k`.
pub fn mass_pairing_at(p: &Problem, a: &[f64], b: &[f64], k: usize) -> f64 {
    let m = p.op.mass();
    let n = m.len();
    let s: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(idx, (x, y))| m[idx % n] * x * y)
        .sum();
    s * p.tree.probability(k)
}

/// Boundary block of a full-dof process.
pub fn boundary_part(p: &Problem, x: &AdaptedProcess) -> AdaptedProcess {
    let (n, ni, nb) = (p.ndof(), p.mesh.n_interior(), p.n_boundary());
    let levels = x
        .levels()
        .iter()
        .map(|l| l.chunks_exact(n).flat_map(|c| c[ni..].iter().copied()).collect())
        .collect();
    AdaptedProcess::from_levels(nb, levels)
}

/// `χ ⊙ x` nodewise.
pub fn masked(mask: &SubdomainMask, x: &AdaptedProcess, scale: f64) -> AdaptedProcess {
    let n = x.dim();
    let levels = x
        .levels()
        .iter()
        .map(|l| {
            l.iter()
                .enumerate()
                .map(|(idx, v)| scale * mask.indicator[idx % n] * v)
                .collect()
        })
        .collect();
    AdaptedProcess::from_levels(n, levels)
}

/// Drift load of `χ_G0 u1 + χ_G1 v1 + χ_G2 v2`.
pub(crate) fn drift_load(
    p: &Problem,
    leaders: Option<&ControlTriple>,
    followers: Option<&FollowerPair>,
) -> AdaptedProcess {
    let n = p.ndof();
    let w = p.mesh.bulk_weights();
    let m = &p.masks;
    AdaptedProcess::par_from_fn(n, p.num_steps(), |k, j, out| {
        for i in 0..n {
            let mut f = 0.0;
            if let Some(u) = leaders {
                f += m.g0.indicator[i] * u.u1.node(k, j)[i];
            }
            if let Some(v) = followers {
                f += m.g1.indicator[i] * v.v1.node(k, j)[i] + m.g2.indicator[i] * v.v2.node(k, j)[i];
            }
            out[i] = w[i] * f;
        }
    })
}

/// Noise load of `(u2, u3)`.
pub(crate) fn noise_load(p: &Problem, leaders: &ControlTriple) -> AdaptedProcess {
    let prop = p.propagator();
    AdaptedProcess::par_from_fn(p.ndof(), p.num_steps(), |k, j, out| {
        out.copy_from_slice(&prop.load(Some(leaders.u2.node(k, j)), Some(leaders.u3.node(k, j))))
    })
}

/// Field-form source `h = M⁻¹ (w_dx ⊙ χ ⊙ f)` for a transposed sweep.
pub(crate) fn bulk_source<F>(p: &Problem, mask: &SubdomainMask, f: F) -> AdaptedProcess
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    let n = p.ndof();
    let w = p.mesh.bulk_weights();
    let mass = p.op.mass();
    AdaptedProcess::par_from_fn(n, p.num_steps(), |k, j, out| {
        for i in 0..n {
            out[i] = if mask.indicator[i] != 0.0 {
                w[i] * mask.indicator[i] * f(k, j, i) / mass[i]
            } else {
                0.0
            };
        }
    })
}

/// State under given leaders and followers from `p.y0`.
pub fn forward_state(
    p: &Problem,
    leaders: Option<&ControlTriple>,
    followers: Option<&FollowerPair>,
) -> Result<AdaptedProcess> {
    let drift = drift_load(p, leaders, followers);
    let noise = leaders.map(|u| noise_load(p, u));
    p.propagator().forward(p.y0.as_slice(), Some(&drift), noise.as_ref())
}

fn zero_terminal(p: &Problem) -> Vec<f64> {
    vec![0.0; p.ndof() << p.num_steps()]
}

/// Follower adjoint `z^i` driven by `α_i χ_Gd (y - y_i,d)`.
fn follower_adjoint(p: &Problem, y: &AdaptedProcess, i: usize) -> Result<BackwardSolution> {
    let n = p.ndof();
    let alpha = p.cost.alpha[i];
    let target = &p.cost.targets[i];
    let h = bulk_source(p, &p.masks.gd, |k, j, d| {
        alpha * (y.level(k)[j * n + d] - target.node(k, j)[d])
    });
    p.propagator().transpose(&zero_terminal(p), Some(&h))
}

fn followers_from(p: &Problem, z: &[BackwardSolution; 2]) -> FollowerPair {
    FollowerPair {
        v1: masked(&p.masks.g1, &z[0].z_implicit, -1.0 / p.cost.beta[0]),
        v2: masked(&p.masks.g2, &z[1].z_implicit, -1.0 / p.cost.beta[1]),
    }
}

/// State process with level 0 = `y0` and levels `1..N` from `x`.
fn state_from(p: &Problem, x: &[f64]) -> AdaptedProcess {
    let n = p.ndof();
    let mut levels = vec![p.y0.as_slice().to_vec()];
    let mut off = 0;
    for k in 1..p.num_steps() {
        let len = n << k;
        levels.push(x[off..off + len].to_vec());
        off += len;
    }
    AdaptedProcess::from_levels(n, levels)
}

fn optimality_map(p: &Problem, leaders: &ControlTriple, x: &[f64]) -> Result<Vec<f64>> {
    let y = state_from(p, x);
    let (z1, z2) = exec::join(|| follower_adjoint(p, &y, 0), || follower_adjoint(p, &y, 1));
    let v = followers_from(p, &[z1?, z2?]);
    let y_new = forward_state(p, Some(leaders), Some(&v))?;
    Ok(y_new.flatten_levels(1, p.num_steps()))
}

fn finish_optimality(p: &Problem, leaders: &ControlTriple, fp: FixedPointOutcome) -> Result<OptimalityBundle> {
    let y_frozen = state_from(p, &fp.x);
    let (z1, z2) = exec::join(
        || follower_adjoint(p, &y_frozen, 0),
        || follower_adjoint(p, &y_frozen, 1),
    );
    let z = [z1?, z2?];
    let followers = followers_from(p, &z);
    let y = forward_state(p, Some(leaders), Some(&followers))?;
    Ok(OptimalityBundle {
        y,
        z,
        followers,
        iterations: fp.iterations,
        history: fp.history,
        used_direct: fp.used_direct,
    })
}

fn check_leaders(p: &Problem, u: &ControlTriple) -> Result<()> {
    check_len("u1 dimension", p.ndof(), u.u1.dim())?;
    check_len("u2 dimension", p.ndof(), u.u2.dim())?;
    check_len("u3 dimension", p.n_boundary(), u.u3.dim())?;
    for c in [&u.u1, &u.u2, &u.u3] {
        if c.num_levels() < p.num_steps() {
            return Err(crate::Error::Shape {
                context: "control levels",
                expected: p.num_steps(),
                found: c.num_levels(),
            });
        }
    }
    Ok(())
}

/// Optimality system for fixed leaders, with `p.y0` and `p.cost.targets`.
pub fn solve_optimality(p: &Problem, leaders: &ControlTriple) -> Result<OptimalityBundle> {
    check_leaders(p, leaders)?;
    let w = p.mass_space_time_weights(1, p.num_steps());
    let x0 = forward_state(p, Some(leaders), None)?.flatten_levels(1, p.num_steps());
    let fp = picard(|x| optimality_map(p, leaders, x), x0, &w, &p.solver)?;
    finish_optimality(p, leaders, fp)
}

/// Optimality system through the assembled direct solve only.
pub fn solve_optimality_direct(p: &Problem, leaders: &ControlTriple) -> Result<OptimalityBundle> {
    check_leaders(p, leaders)?;
    let size = p.mass_space_time_weights(1, p.num_steps()).len();
    let x = affine_fixed_point_direct(|x| optimality_map(p, leaders, x), size)?;
    finish_optimality(
        p,
        leaders,
        FixedPointOutcome {
            x,
            iterations: 0,
            history: Vec::new(),
            used_direct: true,
        },
    )
}

fn psi_from(p: &Problem, x: &[f64]) -> [AdaptedProcess; 2] {
    let half = x.len() / 2;
    let n = p.ndof();
    let build = |data: &[f64]| {
        let mut levels = vec![vec![0.0; n]];
        let mut off = 0;
        for k in 1..p.num_steps() {
            let len = n << k;
            levels.push(data[off..off + len].to_vec());
            off += len;
        }
        AdaptedProcess::from_levels(n, levels)
    };
    [build(&x[..half]), build(&x[half..])]
}

fn adjoint_phi(p: &Problem, terminal: &[f64], psi: &[AdaptedProcess; 2]) -> Result<BackwardSolution> {
    let n = p.ndof();
    let [a1, a2] = p.cost.alpha;
    let h = bulk_source(p, &p.masks.gd, |k, j, d| {
        -(a1 * psi[0].level(k)[j * n + d] + a2 * psi[1].level(k)[j * n + d])
    });
    p.propagator().transpose(terminal, Some(&h))
}

fn adjoint_psi(p: &Problem, phi: &BackwardSolution, i: usize) -> Result<AdaptedProcess> {
    let n = p.ndof();
    let mask = p.masks.follower(i);
    let beta = p.cost.beta[i];
    let w = p.mesh.bulk_weights();
    let m = &phi.z_implicit;
    let drift = AdaptedProcess::par_from_fn(n, p.num_steps(), |k, j, out| {
        let node = m.node(k, j);
        for d in 0..n {
            out[d] = w[d] * mask.indicator[d] * node[d] / beta;
        }
    });
    p.propagator().forward(&vec![0.0; n], Some(&drift), None)
}

fn adjoint_map(p: &Problem, terminal: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let psi = psi_from(p, x);
    let phi = adjoint_phi(p, terminal, &psi)?;
    let (s1, s2) = exec::join(|| adjoint_psi(p, &phi, 0), || adjoint_psi(p, &phi, 1));
    let mut out = s1?.flatten_levels(1, p.num_steps());
    out.extend(s2?.flatten_levels(1, p.num_steps()));
    Ok(out)
}

fn finish_adjoint(p: &Problem, terminal: &[f64], fp: FixedPointOutcome) -> Result<AdjointBundle> {
    let psi_frozen = psi_from(p, &fp.x);
    let phi = adjoint_phi(p, terminal, &psi_frozen)?;
    let (s1, s2) = exec::join(|| adjoint_psi(p, &phi, 0), || adjoint_psi(p, &phi, 1));
    Ok(AdjointBundle {
        phi,
        psi: [s1?, s2?],
        iterations: fp.iterations,
        history: fp.history,
        used_direct: fp.used_direct,
    })
}

fn adjoint_weights(p: &Problem) -> Vec<f64> {
    let mut w = p.mass_space_time_weights(1, p.num_steps());
    w.extend_from_within(..);
    w
}

/// Adjoint system from the leaf datum `terminal` (one field per leaf).
pub fn solve_adjoint(p: &Problem, terminal: &[f64]) -> Result<AdjointBundle> {
    check_len("terminal datum", p.ndof() << p.num_steps(), terminal.len())?;
    let w = adjoint_weights(p);
    let x0 = vec![0.0; w.len()];
    let fp = picard(|x| adjoint_map(p, terminal, x), x0, &w, &p.solver)?;
    finish_adjoint(p, terminal, fp)
}

/// Adjoint system through the assembled direct solve only.
pub fn solve_adjoint_direct(p: &Problem, terminal: &[f64]) -> Result<AdjointBundle> {
    check_len("terminal datum", p.ndof() << p.num_steps(), terminal.len())?;
    let size = adjoint_weights(p).len();
    let x = affine_fixed_point_direct(|x| adjoint_map(p, terminal, x), size)?;
    finish_adjoint(
        p,
        terminal,
        FixedPointOutcome {
            x,
            iterations: 0,
            history: Vec::new(),
            used_direct: true,
        },
    )
}

/// Leaders read off an adjoint solution: `(χ_G0 φ, Φ, Φ̂)`.
pub fn controls_from_adjoint(p: &Problem, adj: &AdjointBundle) -> ControlTriple {
    ControlTriple {
        u1: masked(&p.masks.g0, &adj.phi.z_implicit, 1.0),
        u2: adj.phi.zhat.clone(),
        u3: boundary_part(p, &adj.phi.zhat),
    }
}

/// Both sides of the duality identity. Returns `(lhs, rhs)`.
pub fn duality_sides(
    p: &Problem,
    leaders: &ControlTriple,
    opt: &OptimalityBundle,
    terminal: &[f64],
    adj: &AdjointBundle,
) -> (f64, f64) {
    let steps = p.num_steps();
    let lhs = mass_pairing_at(p, opt.y.level(steps), terminal, steps)
        - mass_pairing_at(p, p.y0.as_slice(), adj.phi.initial(), 0);
    let phi_b = boundary_part(p, &adj.phi.zhat);
    let mut rhs = bulk_pairing(p, &leaders.u1, &adj.phi.z_implicit, Some(&p.masks.g0))
        + bulk_pairing(p, &leaders.u2, &adj.phi.zhat, None)
        + surface_pairing(p, &leaders.u3, &phi_b);
    for i in 0..2 {
        rhs += p.cost.alpha[i] * bulk_pairing(p, &p.cost.targets[i], &adj.psi[i], Some(&p.masks.gd));
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemConfig;

    fn small() -> Problem {
        let mut cfg = ProblemConfig::default();
        cfg.geometry.n = 6;
        cfg.tree.steps = 3;
        cfg.subdomains.g0 = crate::geometry::Region::interval(0.2, 0.8);
        cfg.subdomains.gd = Some(crate::geometry::Region::interval(0.2, 0.8));
        Problem::from_config(&cfg).unwrap()
    }

    #[test]
    fn zero_instance_optimality() {
        let mut p = small();
        p.y0 = crate::geometry::CoupledField::zeros(&p.mesh);
        p.cost.targets = p.zero_targets();
        let u = ControlTriple::zeros(&p);
        let b = solve_optimality(&p, &u).unwrap();
        assert_eq!(b.y.max_abs(), 0.0);
        assert_eq!(b.followers.v1.max_abs(), 0.0);
    }

    #[test]
    fn zero_terminal_adjoint() {
        let p = small();
        let a = solve_adjoint(&p, &zero_terminal(&p)).unwrap();
        assert_eq!(a.phi.z.max_abs(), 0.0);
        assert_eq!(a.psi[0].max_abs() + a.psi[1].max_abs(), 0.0);
    }

    #[test]
    fn boundary_part_picks_trailing_block() {
        let p = small();
        let x = AdaptedProcess::par_from_fn(p.ndof(), 2, |_, _, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = i as f64;
            }
        });
        let b = boundary_part(&p, &x);
        assert_eq!(b.node(1, 1), &[4.0, 5.0]);
    }
}
