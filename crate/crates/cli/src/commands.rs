use std::path::Path;

use anyhow::Result;
use stacknash::carleman::{check_observability, WeightSet};
use stacknash::config::FollowerMode;
use stacknash::coupled::{forward_state, solve_optimality};
use stacknash::hum::compute_leader_controls;
use stacknash::nash::{
    eval_j, eval_ji, follower_norm, leader_norm, solve_nash, verify_nash_stationarity, ControlTriple, FollowerPair,
};
use stacknash::problem::Problem;
use stacknash::tree::{expectation, AdaptedProcess};

use crate::output::{Cell, CsvFile, Summary};
use crate::CheckFailed;

/// Stationarity threshold for the `nash` report.
pub const NASH_TOL: f64 = 1e-6;

/// `𝔼 Σ_d w_d x_d²` at level `k`.
fn level_norm_sq(p: &Problem, x: &AdaptedProcess, k: usize, w: &[f64]) -> f64 {
    let s: f64 = x
        .level(k)
        .iter()
        .enumerate()
        .map(|(idx, v)| w[idx % w.len()] * v * v)
        .sum();
    s * p.tree.probability(k)
}

fn masked_weights(p: &Problem, chi: &[f64]) -> Vec<f64> {
    p.mesh.bulk_weights().iter().zip(chi).map(|(w, c)| w * c).collect()
}

/// Node table: coordinates plus any number of per-node columns.
fn write_profile(dir: &Path, p: &Problem, columns: &[(&str, &[f64])]) -> Result<()> {
    let mut header = vec!["dof", "x", "y", "boundary"];
    header.extend(columns.iter().map(|(name, _)| *name));
    let mut f = CsvFile::create(dir, "profile.csv", &header)?;
    let coords = p.mesh.coords();
    for d in 0..p.ndof() {
        let mut row: Vec<Cell> = vec![
            d.into(),
            coords[d][0].into(),
            coords[d][1].into(),
            (d >= p.mesh.n_interior()).into(),
        ];
        row.extend(columns.iter().map(|(_, v)| Cell::from(v[d])));
        f.row(&row)?;
    }
    f.finish()
}

fn write_levels(
    dir: &Path,
    name: &str,
    p: &Problem,
    columns: &[(&str, &AdaptedProcess, &[f64])],
    levels: usize,
) -> Result<()> {
    let mut header = vec!["level", "time"];
    header.extend(columns.iter().map(|(n, _, _)| *n));
    let mut f = CsvFile::create(dir, name, &header)?;
    for k in 0..levels {
        let mut row: Vec<Cell> = vec![k.into(), p.tree.time(k).into()];
        for (_, x, w) in columns {
            row.push(if k < x.num_levels() {
                level_norm_sq(p, x, k, w).into()
            } else {
                Cell::Missing
            });
        }
        f.row(&row)?;
    }
    f.finish()
}

pub fn forward(p: &Problem, dir: &Path, summary: &mut Summary) -> Result<()> {
    let fc = &p.config.forward;
    let u = ControlTriple::constant(p, fc.u1, fc.u2, fc.u3);
    let (v, nash_iters) = match fc.followers {
        FollowerMode::Zero => (FollowerPair::zeros(p), 0),
        FollowerMode::Nash => {
            let s = solve_nash(p, &u)?;
            (s.followers, s.iterations)
        }
    };
    let y = forward_state(p, Some(&u), Some(&v))?;
    let steps = p.num_steps();
    let mass = p.op.mass();
    write_levels(dir, "trajectory.csv", p, &[("state_norm_sq", &y, mass)], steps + 1)?;
    let mean_t = expectation(&p.tree, &y, steps);
    write_profile(dir, p, &[("y0", p.y0.as_slice()), ("mean_terminal", &mean_t)])?;
    summary
        .put("steps", steps)
        .put("ndof", p.ndof())
        .put("initial_norm_sq", level_norm_sq(p, &y, 0, mass))
        .put("terminal_norm_sq", level_norm_sq(p, &y, steps, mass))
        .put("max_abs_state", y.max_abs())
        .put("leader_cost", eval_j(p, &u))
        .put("follower_cost_1", eval_ji(p, 0, &u, &v)?)
        .put("follower_cost_2", eval_ji(p, 1, &u, &v)?)
        .put("nash_iterations", nash_iters);
    Ok(())
}

pub fn nash(p: &Problem, dir: &Path, seed: u64, summary: &mut Summary) -> Result<()> {
    let u = ControlTriple::random(p, seed);
    let sol = solve_nash(p, &u)?;
    let v = &sol.followers;
    let stat = verify_nash_stationarity(p, &u, v, 10, 1e-4, seed)?;
    let w1 = masked_weights(p, &p.masks.g1.indicator);
    let w2 = masked_weights(p, &p.masks.g2.indicator);
    write_levels(
        dir,
        "followers.csv",
        p,
        &[("v1_norm_sq", &v.v1, &w1), ("v2_norm_sq", &v.v2, &w2)],
        p.num_steps(),
    )?;
    summary
        .put("leader_norm", leader_norm(p, &u))
        .put("follower_norm", follower_norm(p, v))
        .put("cg_iterations", sol.iterations)
        .put("cg_relative_residual", sol.relative_residual)
        .put("follower_cost_1", stat.cost[0])
        .put("follower_cost_2", stat.cost[1])
        .put("stationarity_1", stat.per_follower[0])
        .put("stationarity_2", stat.per_follower[1])
        .put("stationarity_tol", NASH_TOL);
    if stat.max() > NASH_TOL {
        return Err(CheckFailed(vec![format!("nash_stationarity = {:e} > {NASH_TOL:e}", stat.max())]).into());
    }
    Ok(())
}

pub fn observability(p: &Problem, dir: &Path, seed: u64, summary: &mut Summary) -> Result<()> {
    let ws = WeightSet::from_problem(p)?;
    let rep = check_observability(p, &ws, p.config.observability.samples, seed)?;
    let mut f = CsvFile::create(dir, "samples.csv", &["sample_id", "lhs", "rhs", "ratio"])?;
    for s in &rep.samples {
        f.row(&[s.sample_id.into(), s.lhs.into(), s.rhs.into(), s.ratio.into()])?;
    }
    f.finish()?;
    write_weights(dir, p, &ws)?;
    write_profile(dir, p, &[("eta", &ws.eta)])?;
    let min_ratio = rep.samples.iter().filter_map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    summary
        .put("samples", rep.samples.len())
        .put("max_ratio", rep.max_ratio)
        .put("min_ratio", if rep.samples.is_empty() { None } else { Some(min_ratio) })
        .put("violations", rep.violations)
        .put("lambda", ws.lambda)
        .put("mu", ws.mu)
        .put("eta_certificate", ws.certificate.passes());
    Ok(())
}

/// Time profiles of the weights on a uniform grid of cell midpoints.
fn write_weights(dir: &Path, p: &Problem, ws: &WeightSet) -> Result<()> {
    const POINTS: usize = 200;
    let mut f = CsvFile::create(
        dir,
        "weights.csv",
        &["time", "ell", "log_rho", "alpha_bar_star", "phi_bar_star"],
    )?;
    for i in 0..POINTS {
        let t = p.tree.horizon() * (i as f64 + 0.5) / POINTS as f64;
        f.row(&[
            t.into(),
            ws.ell(t).into(),
            ws.eval_rho(t)?.log.into(),
            ws.alpha_bar_star(t).into(),
            ws.phi_bar_star(t).into(),
        ])?;
    }
    f.finish()
}

pub fn control(p: &Problem, dir: &Path, summary: &mut Summary) -> Result<()> {
    let ws = WeightSet::from_problem(p)?;
    let r = compute_leader_controls(p, &ws, &p.config.hum)?;
    let mut f = CsvFile::create(dir, "trace.csv", &["iter", "J_eps", "grad_norm", "terminal_norm_sq"])?;
    for row in &r.trace {
        f.row(&[
            row.iter.into(),
            row.j_eps.into(),
            row.grad_norm.into(),
            row.terminal_norm_sq.into(),
        ])?;
    }
    f.finish()?;

    let y = forward_state(p, Some(&r.controls), Some(&r.followers))?;
    let free = solve_optimality(p, &ControlTriple::zeros(p))?;
    let steps = p.num_steps();
    let mass = p.op.mass();
    let g0 = masked_weights(p, &p.masks.g0.indicator);
    let w1 = masked_weights(p, &p.masks.g1.indicator);
    let w2 = masked_weights(p, &p.masks.g2.indicator);
    write_levels(
        dir,
        "controls.csv",
        p,
        &[
            ("u1_norm_sq", &r.controls.u1, &g0),
            ("u2_norm_sq", &r.controls.u2, p.mesh.bulk_weights()),
            ("u3_norm_sq", &r.controls.u3, p.mesh.surface_weights()),
            ("v1_norm_sq", &r.followers.v1, &w1),
            ("v2_norm_sq", &r.followers.v2, &w2),
            ("state_norm_sq", &y, mass),
            ("uncontrolled_norm_sq", &free.y, mass),
        ],
        steps + 1,
    )?;
    let mean_t = expectation(&p.tree, &y, steps);
    write_profile(dir, p, &[("y0", p.y0.as_slice()), ("mean_terminal", &mean_t)])?;
    summary
        .put("terminal_norm_sq", r.terminal_norm_sq)
        .put("uncontrolled_terminal_norm_sq", level_norm_sq(p, &free.y, steps, mass))
        .put("control_norm_sq", r.control_norm_sq)
        .put("iterations", r.iterations)
        .put("converged", r.converged)
        .put("epsilon", r.epsilon)
        .put("duality_residual", r.duality_residual)
        .put("observability_violation", r.observability_violation);
    Ok(())
}
