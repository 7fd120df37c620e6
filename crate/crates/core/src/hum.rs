//! Leader controls by minimizing the penalized dual functional
//!
//! ```text
//! J_ε(x) = ½(‖χ_G0 φ‖² + ‖Φ‖² + ‖Φ̂‖²_Γ) + ε p(‖x‖) + ⟨Y_0, φ(0)⟩ + Σ_i α_i ⟨y_i,d, ψ^i⟩_Gd
//! ```
//!
//! over leaf data `x`, where `(φ, Φ, ψ^1, ψ^2)` solves the adjoint system
//! from `x`. By the duality identity the gradient in `𝔼⟨·,·⟩_𝕃²` is the
//! terminal state driven by the leaders `(χ_G0 φ, Φ, Φ̂)`, plus `ε ∇p`.
//!
//! The adjoint system is linear in `x`, so the line search combines the
//! cached adjoint solutions of the iterate and the search direction instead
//! of solving again for every trial step.

use crate::carleman::{validate_targets, WeightSet};
use crate::config::{HumConfig, PenaltyMode};
use crate::coupled::{
    boundary_part, bulk_pairing, controls_from_adjoint, duality_sides, mass_pairing_at, solve_adjoint,
    solve_optimality, surface_pairing, AdjointBundle,
};
use crate::error::{check_len, Error, Result};
use crate::linalg::{weighted_dot, weighted_norm};
use crate::nash::{ControlTriple, FollowerPair};
use crate::problem::Problem;

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub mode: PenaltyMode,
    pub epsilon: f64,
    pub delta: f64,
}

impl Penalty {
    pub fn from_config(cfg: &HumConfig) -> Self {
        Self {
            mode: cfg.penalty,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
        }
    }

    /// `ε p(s)`.
    pub fn value(&self, s: f64) -> f64 {
        self.epsilon
            * match self.mode {
                PenaltyMode::Quadratic => 0.5 * s * s,
                PenaltyMode::Regularized => s.hypot(self.delta),
            }
    }

    /// `ε p'(s) / s`, the factor multiplying `x` in the gradient.
    pub fn gradient_factor(&self, s: f64) -> f64 {
        self.epsilon
            * match self.mode {
                PenaltyMode::Quadratic => 1.0,
                PenaltyMode::Regularized => 1.0 / s.hypot(self.delta),
            }
    }
}

/// Leaf weights of `𝔼⟨a, b⟩_𝕃²`.
pub fn leaf_weights(p: &Problem) -> Vec<f64> {
    let prob = p.tree.probability(p.num_steps());
    let m = p.op.mass();
    (0..p.ndof() << p.num_steps()).map(|i| prob * m[i % m.len()]).collect()
}

fn quadratic_part(p: &Problem, adj: &AdjointBundle) -> f64 {
    let zb = boundary_part(p, &adj.phi.zhat);
    0.5 * (bulk_pairing(p, &adj.phi.z_implicit, &adj.phi.z_implicit, Some(&p.masks.g0))
        + bulk_pairing(p, &adj.phi.zhat, &adj.phi.zhat, None)
        + surface_pairing(p, &zb, &zb))
}

fn linear_part(p: &Problem, adj: &AdjointBundle) -> f64 {
    let mut s = mass_pairing_at(p, p.y0.as_slice(), adj.phi.initial(), 0);
    for i in 0..2 {
        s += p.cost.alpha[i] * bulk_pairing(p, &p.cost.targets[i], &adj.psi[i], Some(&p.masks.gd));
    }
    s
}

fn j_from_adjoint(p: &Problem, pen: &Penalty, x_norm: f64, adj: &AdjointBundle) -> f64 {
    quadratic_part(p, adj) + pen.value(x_norm) + linear_part(p, adj)
}

/// `J_ε(x)`.
pub fn eval_j_eps(p: &Problem, pen: &Penalty, x: &[f64]) -> Result<f64> {
    let adj = solve_adjoint(p, x)?;
    Ok(j_from_adjoint(p, pen, weighted_norm(&leaf_weights(p), x), &adj))
}

/// Gradient pieces at one iterate.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub gradient: Vec<f64>,
    pub controls: ControlTriple,
    pub followers: FollowerPair,
    /// `𝔼‖Y(T)‖²_𝕃²` under `controls`.
    pub terminal_norm_sq: f64,
    pub terminal: Vec<f64>,
}

fn gradient_from_adjoint(p: &Problem, pen: &Penalty, x: &[f64], adj: &AdjointBundle) -> Result<GradientEval> {
    let w = leaf_weights(p);
    let controls = controls_from_adjoint(p, adj);
    let opt = solve_optimality(p, &controls)?;
    let terminal = opt.y.level(p.num_steps()).to_vec();
    let c = pen.gradient_factor(weighted_norm(&w, x));
    let gradient = terminal.iter().zip(x).map(|(y, xi)| y + c * xi).collect();
    Ok(GradientEval {
        gradient,
        controls,
        followers: opt.followers,
        terminal_norm_sq: weighted_dot(&w, &terminal, &terminal),
        terminal,
    })
}

/// `∇J_ε(x)` in the `𝔼⟨·,·⟩_𝕃²` inner product.
pub fn grad_j_eps(p: &Problem, pen: &Penalty, x: &[f64]) -> Result<Vec<f64>> {
    check_len("terminal datum", p.ndof() << p.num_steps(), x.len())?;
    let adj = solve_adjoint(p, x)?;
    Ok(gradient_from_adjoint(p, pen, x, &adj)?.gradient)
}

/// `a + s b` for adjoint bundles.
fn combine(a: &AdjointBundle, s: f64, b: &AdjointBundle) -> AdjointBundle {
    let mut out = a.clone();
    out.phi.z.axpy(s, &b.phi.z);
    out.phi.zhat.axpy(s, &b.phi.zhat);
    out.phi.z_implicit.axpy(s, &b.phi.z_implicit);
    for i in 0..2 {
        out.psi[i].axpy(s, &b.psi[i]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub j_eps: f64,
    pub grad_norm: f64,
    pub terminal_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct Minimization {
    pub x: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub last: GradientEval,
    pub adjoint: AdjointBundle,
}

/// Polak-Ribière (PR+) nonlinear CG with Armijo backtracking, from `x0`.
pub fn minimize_j_eps(p: &Problem, pen: &Penalty, cfg: &HumConfig, x0: Vec<f64>) -> Result<Minimization> {
    check_len("terminal datum", p.ndof() << p.num_steps(), x0.len())?;
    if !(pen.epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let w = leaf_weights(p);
    let tol = cfg.tol_grad * (1.0 + p.y0.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt());

    let mut x = x0;
    let mut adj = solve_adjoint(p, &x)?;
    let mut j = j_from_adjoint(p, pen, weighted_norm(&w, &x), &adj);
    let mut ge = gradient_from_adjoint(p, pen, &x, &adj)?;
    let mut g_norm = weighted_norm(&w, &ge.gradient);
    let mut trace = vec![TraceRow {
        iter: 0,
        j_eps: j,
        grad_norm: g_norm,
        terminal_norm_sq: ge.terminal_norm_sq,
    }];
    let mut d: Vec<f64> = ge.gradient.iter().map(|g| -g).collect();
    let mut converged = g_norm <= tol;

    for iter in 1..=cfg.max_iters {
        if converged {
            break;
        }
        let mut slope = weighted_dot(&w, &ge.gradient, &d);
        if !(slope < 0.0) {
            d = ge.gradient.iter().map(|g| -g).collect();
            slope = -g_norm * g_norm;
        }
        let adj_d = solve_adjoint(p, &d)?;

        // Quadratic model step, exact in quadratic-penalty mode.
        let x_norm = weighted_norm(&w, &x);
        let d_norm_sq = weighted_dot(&w, &d, &d);
        let x_dot_d = weighted_dot(&w, &x, &d);
        let curvature = 2.0 * quadratic_part(p, &adj_d) + pen.gradient_factor(x_norm) * d_norm_sq;
        let mut step = if curvature > 0.0 { -slope / curvature } else { 1.0 };
        let line = |s: f64| {
            let trial = combine(&adj, s, &adj_d);
            let n = (x_norm * x_norm + 2.0 * s * x_dot_d + s * s * d_norm_sq)
                .max(0.0)
                .sqrt();
            (j_from_adjoint(p, pen, n, &trial), trial)
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let (jt, trial) = line(step);
            if jt <= j + ARMIJO * step * slope {
                accepted = Some((jt, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((j_new, adj_new)) = accepted else {
            // No decrease representable in floating point: stationary to rounding.
            break;
        };
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += step * di;
        }
        adj = adj_new;
        j = j_new.min(j);
        let ge_new = gradient_from_adjoint(p, pen, &x, &adj)?;
        let g_new_norm = weighted_norm(&w, &ge_new.gradient);
        let diff: Vec<f64> = ge_new.gradient.iter().zip(&ge.gradient).map(|(a, b)| a - b).collect();
        let beta = (weighted_dot(&w, &ge_new.gradient, &diff) / (g_norm * g_norm)).max(0.0);
        for (di, gi) in d.iter_mut().zip(&ge_new.gradient) {
            *di = -gi + beta * *di;
        }
        ge = ge_new;
        g_norm = g_new_norm;
        trace.push(TraceRow {
            iter,
            j_eps: j,
            grad_norm: g_norm,
            terminal_norm_sq: ge.terminal_norm_sq,
        });
        converged = g_norm <= tol;
    }
    Ok(Minimization {
        x,
        trace,
        converged,
        last: ge,
        adjoint: adj,
    })
}

#[derive(Debug, Clone)]
pub struct HumResult {
    pub controls: ControlTriple,
    pub followers: FollowerPair,
    pub terminal_datum: Vec<f64>,
    pub terminal_norm_sq: f64,
    /// `2 J(u)`.
    pub control_norm_sq: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// Terminal norm above ten times the goal after convergence.
    pub observability_violation: bool,
    pub duality_residual: f64,
    /// `ε` of the returned run.
    pub epsilon: f64,
}

/// Relative duality residual between the optimality system driven by
/// `controls` and the adjoint system from `terminal`.
pub fn duality_residual(p: &Problem, controls: &ControlTriple, terminal: &[f64], adj: &AdjointBundle) -> Result<f64> {
    let opt = solve_optimality(p, controls)?;
    let (lhs, rhs) = duality_sides(p, controls, &opt, terminal, adj);
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE))
}

/// Full pipeline: check the targets, minimize `J_ε` from zero, read off the
/// leaders and the Nash followers. When the terminal goal is missed, up to
/// `continuation_steps` further runs divide `ε` by `continuation_factor`.
pub fn compute_leader_controls(p: &Problem, ws: &WeightSet, cfg: &HumConfig) -> Result<HumResult> {
    let check = validate_targets(p, ws, &p.cost.targets)?;
    if !check.admissible {
        return Err(Error::Contract(format!(
            "targets are not admissible: the rho-weighted norm overflows (log rho reaches {:.1})",
            check.max_log_rho
        )));
    }
    let mut pen = Penalty::from_config(cfg);
    let size = p.ndof() << p.num_steps();
    let mut run = 0;
    loop {
        let m = minimize_j_eps(p, &pen, cfg, vec![0.0; size])?;
        let done = m.last.terminal_norm_sq <= cfg.terminal_target || run >= cfg.continuation_steps;
        if done {
            let duality = duality_residual(p, &m.last.controls, &m.x, &m.adjoint)?;
            let control_norm_sq = 2.0 * crate::nash::eval_j(p, &m.last.controls);
            return Ok(HumResult {
                observability_violation: m.converged && m.last.terminal_norm_sq > 10.0 * cfg.terminal_target,
                controls: m.last.controls,
                followers: m.last.followers,
                terminal_norm_sq: m.last.terminal_norm_sq,
                control_norm_sq,
                iterations: m.trace.len() - 1,
                trace: m.trace,
                converged: m.converged,
                duality_residual: duality,
                terminal_datum: m.x,
                epsilon: pen.epsilon,
            });
        }
        run += 1;
        pen.epsilon /= cfg.continuation_factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemConfig;
    use crate::geometry::CoupledField;

    fn small() -> Problem {
        let mut cfg = ProblemConfig::default();
        cfg.geometry.n = 5;
        cfg.tree.steps = 3;
        Problem::from_config(&cfg).unwrap()
    }

    #[test]
    fn zero_instance_is_trivial() {
        let mut p = small();
        p.y0 = CoupledField::zeros(&p.mesh);
        p.cost.targets = p.zero_targets();
        let cfg = HumConfig::default();
        let pen = Penalty::from_config(&cfg);
        let x = vec![0.0; p.ndof() << p.num_steps()];
        assert_eq!(eval_j_eps(&p, &pen, &x).unwrap(), 0.0);
        assert!(grad_j_eps(&p, &pen, &x).unwrap().iter().all(|&g| g == 0.0));
        let ws = WeightSet::from_problem(&p).unwrap();
        let r = compute_leader_controls(&p, &ws, &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.terminal_norm_sq, 0.0);
        assert_eq!(r.control_norm_sq, 0.0);
        assert_eq!(r.followers.v1.max_abs() + r.followers.v2.max_abs(), 0.0);
    }

    #[test]
    fn penalty_values() {
        let q = Penalty {
            mode: PenaltyMode::Quadratic,
            epsilon: 2.0,
            delta: 1e-8,
        };
        assert_eq!(q.value(3.0), 9.0);
        assert_eq!(q.gradient_factor(3.0), 2.0);
        let pp = Penalty {
            mode: PenaltyMode::Regularized,
            ..q
        };
        assert!((pp.value(3.0) - 6.0).abs() < 1e-12);
        assert!((pp.gradient_factor(3.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn trace_is_monotone() {
        let p = small();
        let cfg = HumConfig {
            max_iters: 30,
            ..HumConfig::default()
        };
        let m = minimize_j_eps(
            &p,
            &Penalty::from_config(&cfg),
            &cfg,
            vec![0.0; p.ndof() << p.num_steps()],
        )
        .unwrap();
        for w in m.trace.windows(2) {
            assert!(w[1].j_eps <= w[0].j_eps);
        }
        assert!(m.trace.last().unwrap().j_eps < 0.0);
    }
}
