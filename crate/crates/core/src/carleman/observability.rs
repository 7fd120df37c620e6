//! Empirical observability and Carleman ratios over random terminal data,
//! and the admissibility check for tracking targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::functional::{carleman_functional, carleman_functional_bar, surface_node_weights, weighted_square};
use super::{WeightRecord, WeightSet};
use crate::coupled::{boundary_part, bulk_pairing, mass_pairing_at, solve_adjoint, surface_pairing, AdjointBundle};
use crate::error::Result;
use crate::exec;
use crate::problem::Problem;
use crate::tree::AdaptedProcess;

/// Independent standard normal leaf data, one field per leaf.
pub fn gaussian_terminal(p: &Problem, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p.ndof() << p.num_steps())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub sample_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when `rhs = 0 < lhs`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub samples: Vec<SampleRow>,
    pub max_ratio: f64,
    pub violations: usize,
}

fn ratio(lhs: f64, rhs: f64) -> Option<f64> {
    if rhs > 0.0 {
        Some(lhs / rhs)
    } else if lhs > 0.0 {
        None
    } else {
        Some(0.0)
    }
}

fn summarize(samples: Vec<SampleRow>) -> ObservabilityReport {
    let violations = samples.iter().filter(|s| s.ratio.is_none()).count();
    let max_ratio = samples.iter().filter_map(|s| s.ratio).fold(0.0, f64::max);
    ObservabilityReport {
        samples,
        max_ratio,
        violations,
    }
}

/// Both sides of the observability inequality for one adjoint solution.
pub fn observability_sides(p: &Problem, ws: &WeightSet, adj: &AdjointBundle) -> Result<(f64, f64)> {
    let phi0 = adj.phi.initial();
    let mut lhs = mass_pairing_at(p, phi0, phi0, 0);
    let m = p.op.mass();
    for psi in &adj.psi {
        for k in 0..p.num_steps() {
            let rho = ws.eval_rho(p.tree.time(k))?;
            let w = (-2.0 * rho.log).exp();
            let s: f64 = psi
                .level(k)
                .iter()
                .enumerate()
                .map(|(idx, v)| m[idx % m.len()] * v * v)
                .sum();
            lhs += p.tree.dt() * p.tree.probability(k) * w * s;
        }
    }
    let zhat = &adj.phi.zhat;
    let zhat_b = boundary_part(p, zhat);
    let rhs = bulk_pairing(p, &adj.phi.z_implicit, &adj.phi.z_implicit, Some(&p.masks.g0))
        + bulk_pairing(p, zhat, zhat, None)
        + surface_pairing(p, &zhat_b, &zhat_b);
    Ok((lhs, rhs))
}

/// Observability ratios over `num_samples` Gaussian terminal data; sample
/// `i` is drawn with seed `seed + i`.
pub fn check_observability(p: &Problem, ws: &WeightSet, num_samples: usize, seed: u64) -> Result<ObservabilityReport> {
    let rows: Vec<Result<SampleRow>> = exec::map_range(num_samples, |i| {
        let terminal = gaussian_terminal(p, seed.wrapping_add(i as u64));
        let adj = solve_adjoint(p, &terminal)?;
        let (lhs, rhs) = observability_sides(p, ws, &adj)?;
        Ok(SampleRow {
            sample_id: i,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        })
    });
    Ok(summarize(rows.into_iter().collect::<Result<_>>()?))
}

/// Both sides of the weighted Carleman inequality for one adjoint solution.
pub fn carleman_sides(p: &Problem, ws: &WeightSet, adj: &AdjointBundle) -> Result<(f64, f64)> {
    let phi0 = adj.phi.initial();
    let mut h = adj.psi[0].clone();
    h.scale(p.cost.alpha[0]);
    h.axpy(p.cost.alpha[1], &adj.psi[1]);
    let lhs = mass_pairing_at(p, phi0, phi0, 0)
        + carleman_functional_bar(ws, &p.mesh, &p.tree, &adj.phi.z)?.total()
        + carleman_functional(ws, &p.mesh, &p.tree, &h)?.total();

    let l = ws.lambda;
    let wb = p.mesh.bulk_weights();
    let g0: Vec<f64> = wb.iter().zip(&p.masks.g0.indicator).map(|(w, c)| w * c).collect();
    let pow = |e: f64| move |r: &WeightRecord| 2.0 * r.log_theta + e * r.phi.ln();
    let rhs = l.powi(7) * weighted_square(ws, &p.tree, &adj.phi.z_implicit, &g0, pow(7.0))?
        + l.powi(2) * weighted_square(ws, &p.tree, &adj.phi.zhat, wb, pow(2.0))?
        + l.powi(2) * weighted_square(ws, &p.tree, &adj.phi.zhat, &surface_node_weights(&p.mesh), pow(1.0))?;
    Ok((lhs, rhs))
}

/// Weighted Carleman ratios over Gaussian terminal data.
pub fn carleman_sanity(p: &Problem, ws: &WeightSet, num_samples: usize, seed: u64) -> Result<ObservabilityReport> {
    let rows: Vec<Result<SampleRow>> = exec::map_range(num_samples, |i| {
        let terminal = gaussian_terminal(p, seed.wrapping_add(i as u64));
        let adj = solve_adjoint(p, &terminal)?;
        let (lhs, rhs) = carleman_sides(p, ws, &adj)?;
        Ok(SampleRow {
            sample_id: i,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        })
    });
    Ok(summarize(rows.into_iter().collect::<Result<_>>()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetValidation {
    pub admissible: bool,
    /// `𝔼∫_(0,T)×G_d ρ² |y_i,d|²`, `None` where it overflows.
    pub norms: [Option<f64>; 2],
    /// Largest `log ρ` met where a target is nonzero.
    pub max_log_rho: f64,
}

/// Midpoints and lengths of the pieces used to integrate `ρ²` over cell `k`.
/// The last cell is graded geometrically towards `T`.
fn cell_pieces(dt: f64, t0: f64, last: bool) -> Vec<(f64, f64)> {
    const UNIFORM: usize = 256;
    const GRADED: i32 = 60;
    if !last {
        let h = dt / UNIFORM as f64;
        return (0..UNIFORM).map(|i| (t0 + (i as f64 + 0.5) * h, h)).collect();
    }
    let end = t0 + dt;
    (0..GRADED)
        .map(|m| {
            let a = end - dt * 0.5f64.powi(m);
            let b = end - dt * 0.5f64.powi(m + 1);
            (0.5 * (a + b), b - a)
        })
        .collect()
}

/// Checks that `𝔼∫ ρ² |y_i,d|²` over `(0,T) × G_d` stays finite. Targets are
/// taken piecewise constant in time, equal to level `k` on `[t_k, t_k+1)`.
pub fn validate_targets(p: &Problem, ws: &WeightSet, targets: &[AdaptedProcess; 2]) -> Result<TargetValidation> {
    let steps = p.num_steps();
    let dt = p.tree.dt();
    let mut norms = [Some(0.0); 2];
    let mut max_log_rho = 0.0f64;
    for k in 0..steps {
        let pieces = cell_pieces(dt, p.tree.time(k), k + 1 == steps);
        for (i, y) in targets.iter().enumerate() {
            let sq = mass_like_gd(p, y.level(k)) * p.tree.probability(k);
            if sq == 0.0 {
                continue;
            }
            let mut integral = 0.0;
            for &(t, len) in &pieces {
                let log_rho = ws.eval_rho(t)?.log;
                max_log_rho = max_log_rho.max(log_rho);
                if 2.0 * log_rho > ws.overflow_budget {
                    norms[i] = None;
                    break;
                }
                integral += (2.0 * log_rho).exp() * len;
            }
            if let Some(n) = norms[i].as_mut() {
                *n += integral * sq;
            }
        }
    }
    Ok(TargetValidation {
        admissible: norms.iter().all(Option::is_some),
        norms,
        max_log_rho,
    })
}

fn mass_like_gd(p: &Problem, level: &[f64]) -> f64 {
    let wb = p.mesh.bulk_weights();
    let chi = &p.masks.gd.indicator;
    level
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let d = idx % wb.len();
            wb[d] * chi[d] * v * v
        })
        .sum()
}
