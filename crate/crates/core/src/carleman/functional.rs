//! Weighted space-time functionals `ℐ` and `Ī`.
//!
//! Time integrals use the interior levels `1..N` with weight `dt`; the
//! endpoints, where the weights degenerate, are left out.

use super::{clamped_exp, WeightRecord, WeightSet};
use crate::error::{check_len, Result};
use crate::exec;
use crate::geometry::{Edge, SpatialMesh};
use crate::tree::{AdaptedProcess, ScenarioTree};

/// The four contributions to `ℐ` (or the two to `Ī`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CarlemanTerms {
    pub zeroth_bulk: f64,
    pub zeroth_surface: f64,
    pub gradient_bulk: f64,
    pub gradient_surface: f64,
}

impl CarlemanTerms {
    pub fn total(&self) -> f64 {
        self.zeroth_bulk + self.zeroth_surface + self.gradient_bulk + self.gradient_surface
    }

    pub fn zeroth(&self) -> f64 {
        self.zeroth_bulk + self.zeroth_surface
    }
}

/// Surface weights spread onto full-dof indexing (zero in the interior).
pub(crate) fn surface_node_weights(mesh: &SpatialMesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.ndof()];
    w[mesh.n_interior()..].copy_from_slice(mesh.surface_weights());
    w
}

/// `Σ_{k=1}^{N-1} dt 𝔼 Σ_d w_d e^{L(t_k, d)} ξ_d²` with `L` a log-weight.
pub(crate) fn weighted_square<L>(
    ws: &WeightSet,
    tree: &ScenarioTree,
    xi: &AdaptedProcess,
    node_w: &[f64],
    log_weight: L,
) -> Result<f64>
where
    L: Fn(&WeightRecord) -> f64 + Sync,
{
    let n = node_w.len();
    check_len("weighted integrand", n, xi.dim())?;
    let levels: Vec<Result<f64>> = exec::map_range(tree.num_steps().saturating_sub(1), |i| {
        let k = i + 1;
        let t = tree.time(k);
        let mut factor = Vec::with_capacity(n);
        for (d, &w) in node_w.iter().enumerate() {
            factor.push(if w == 0.0 {
                0.0
            } else {
                w * clamped_exp(log_weight(&ws.eval_at_node(t, d)?), ws.overflow_budget)
            });
        }
        let s: f64 = xi
            .level(k)
            .iter()
            .enumerate()
            .map(|(idx, v)| factor[idx % n] * v * v)
            .sum();
        Ok(tree.dt() * tree.probability(k) * s)
    });
    levels.into_iter().sum()
}

fn weighted_gradient<L>(
    ws: &WeightSet,
    tree: &ScenarioTree,
    xi: &AdaptedProcess,
    edges: &[Edge],
    log_weight: L,
) -> Result<f64>
where
    L: Fn(&WeightRecord) -> f64 + Sync,
{
    if edges.is_empty() {
        return Ok(0.0);
    }
    let n = xi.dim();
    let levels: Vec<Result<f64>> = exec::map_range(tree.num_steps().saturating_sub(1), |i| {
        let k = i + 1;
        let t = tree.time(k);
        let mut factor = Vec::with_capacity(edges.len());
        for e in edges {
            let wa = clamped_exp(log_weight(&ws.eval_at_node(t, e.a)?), ws.overflow_budget);
            let wb = clamped_exp(log_weight(&ws.eval_at_node(t, e.b)?), ws.overflow_budget);
            factor.push(e.weight * 0.5 * (wa + wb));
        }
        let s: f64 = xi
            .level(k)
            .chunks_exact(n)
            .map(|x| {
                edges
                    .iter()
                    .zip(&factor)
                    .map(|(e, f)| f * (x[e.a] - x[e.b]).powi(2))
                    .sum::<f64>()
            })
            .sum();
        Ok(tree.dt() * tree.probability(k) * s)
    });
    levels.into_iter().sum()
}

/// `ℐ(λ, μ; ξ, ξ_Γ)` for a full-dof process whose boundary block is `ξ_Γ`.
pub fn carleman_functional(
    ws: &WeightSet,
    mesh: &SpatialMesh,
    tree: &ScenarioTree,
    xi: &AdaptedProcess,
) -> Result<CarlemanTerms> {
    let l = ws.lambda;
    let cubic = |r: &WeightRecord| 2.0 * r.log_theta + 3.0 * r.phi.ln();
    let linear = |r: &WeightRecord| 2.0 * r.log_theta + r.phi.ln();
    Ok(CarlemanTerms {
        zeroth_bulk: l.powi(3) * weighted_square(ws, tree, xi, mesh.bulk_weights(), cubic)?,
        zeroth_surface: l.powi(3) * weighted_square(ws, tree, xi, &surface_node_weights(mesh), cubic)?,
        gradient_bulk: l * weighted_gradient(ws, tree, xi, mesh.bulk_edges(), linear)?,
        gradient_surface: l * weighted_gradient(ws, tree, xi, mesh.surface_edges(), linear)?,
    })
}

/// `Ī(λ, μ; ξ, ξ_Γ)`: zeroth-order terms only, with the modified weights and no powers of `λ`.
pub fn carleman_functional_bar(
    ws: &WeightSet,
    mesh: &SpatialMesh,
    tree: &ScenarioTree,
    xi: &AdaptedProcess,
) -> Result<CarlemanTerms> {
    let cubic = |r: &WeightRecord| 2.0 * r.log_theta_bar + 3.0 * r.phi_bar.ln();
    Ok(CarlemanTerms {
        zeroth_bulk: weighted_square(ws, tree, xi, mesh.bulk_weights(), cubic)?,
        zeroth_surface: weighted_square(ws, tree, xi, &surface_node_weights(mesh), cubic)?,
        ..CarlemanTerms::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, GeometryKind, Region};
    use crate::tree::build_tree;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: GeometryKind) -> (SpatialMesh, ScenarioTree, WeightSet) {
        let (dom, gp) = match kind {
            GeometryKind::Interval => (Region::interval(0.0, 1.0), Region::interval(0.4, 0.6)),
            GeometryKind::Rectangle => (
                Region::new(vec![(0.0, 1.0), (0.0, 1.0)]),
                Region::new(vec![(0.4, 0.6), (0.4, 0.6)]),
            ),
        };
        let mesh = build_mesh(kind, 6, &dom).unwrap();
        let tree = build_tree(4, 1.0).unwrap();
        let ws = WeightSet::new(&mesh, &gp, 2.0, 2.0, 1.0, 500.0).unwrap();
        (mesh, tree, ws)
    }

    fn random_process(tree: &ScenarioTree, dim: usize) -> AdaptedProcess {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let levels = (0..=tree.num_steps())
            .map(|k| {
                (0..dim * tree.nodes_at(k))
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        AdaptedProcess::from_levels(dim, levels)
    }

    #[test]
    fn zero_process_gives_zero() {
        let (mesh, tree, ws) = setup(GeometryKind::Interval);
        let xi = AdaptedProcess::zeros(mesh.ndof(), tree.num_steps() + 1);
        assert_eq!(carleman_functional(&ws, &mesh, &tree, &xi).unwrap().total(), 0.0);
        assert_eq!(carleman_functional_bar(&ws, &mesh, &tree, &xi).unwrap().total(), 0.0);
    }

    #[test]
    fn homogeneous_of_degree_two() {
        for kind in [GeometryKind::Interval, GeometryKind::Rectangle] {
            let (mesh, tree, ws) = setup(kind);
            let xi = random_process(&tree, mesh.ndof());
            let mut scaled = xi.clone();
            scaled.scale(3.0);
            let a = carleman_functional(&ws, &mesh, &tree, &xi).unwrap().total();
            let b = carleman_functional(&ws, &mesh, &tree, &scaled).unwrap().total();
            assert!(a > 0.0);
            assert!((b - 9.0 * a).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn gradient_term_matches_stiffness_form_for_unit_weight() {
        // With the weight replaced by 1, the edge sum is ξᵀKξ.
        let (mesh, tree, ws) = setup(GeometryKind::Rectangle);
        let xi = random_process(&tree, mesh.ndof());
        let op = crate::geometry::assemble_generator(&mesh);
        let k_mat = op.stiffness();
        let edges: Vec<Edge> = mesh.bulk_edges().iter().chain(mesh.surface_edges()).cloned().collect();
        let got = weighted_gradient(&ws, &tree, &xi, &edges, |_| 0.0).unwrap();
        let mut want = 0.0;
        for k in 1..tree.num_steps() {
            for x in xi.level(k).chunks_exact(mesh.ndof()) {
                let v = nalgebra::DVector::from_column_slice(x);
                want += tree.dt() * tree.probability(k) * v.dot(&(&k_mat * &v));
            }
        }
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }
}
