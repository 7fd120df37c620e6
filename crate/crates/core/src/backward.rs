//! Backward equations on the scenario tree.
//!
//! Two schemes share the output layout:
//!
//! * [`solve_backward`] is the direct martingale-representation scheme: the
//!   children of a node give the conditional mean and the diffusion part
//!   `Ẑ = (z_up - z_down) / (2√dt)`, then one implicit step isolates `z_k`.
//! * [`Propagator::transpose`] is the exact algebraic transpose of the forward
//!   sweep. It is what every gradient and every adjoint operator uses, because
//!   it makes the discrete duality identity hold to rounding.
//!
//! For the transpose with dual datum `p`, node values are
//!
//! ```text
//! q_c  = (M + dt K)⁻¹ M p_c                  for both children c
//! m_k  = (q_up + q_down) / 2
//! Ẑ_k  = (q_up - q_down) / (2√dt)
//! p_k  = m_k + dt M⁻¹ (R1 m_k + R2 Ẑ_k) + dt h_k
//! ```
//!
//! and with `Y` from [`Propagator::forward`] the identity
//!
//! ```text
//! 𝔼⟨Y_N, p_N⟩_M - ⟨Y_0, p_0⟩_M
//!     = Σ_k dt 𝔼[L1_k · m_k + L2_k · Ẑ_k] - Σ_k dt 𝔼⟨Y_k, h_k⟩_M
//! ```
//!
//! holds exactly. Sources therefore pair with `m_k` (stored as `z_implicit`).

use nalgebra::{Cholesky, DMatrix, DVectorViewMut, Dyn};

use crate::error::{check_len, Error, Result};
use crate::exec;
use crate::forward::{FieldCoefficient, Propagator};
use crate::geometry::{CoupledOperator, SpatialMesh};
use crate::tree::{AdaptedProcess, ScenarioTree};

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    /// Levels `0..=N`; the last level is the terminal datum.
    pub z: AdaptedProcess,
    /// Diffusion part on levels `0..N`.
    pub zhat: AdaptedProcess,
    /// Implicit conditional mean on levels `0..N`; the value that pairs with sources.
    pub z_implicit: AdaptedProcess,
}

impl BackwardSolution {
    pub fn zeros(ndof: usize, num_steps: usize) -> Self {
        Self {
            z: AdaptedProcess::zeros(ndof, num_steps + 1),
            zhat: AdaptedProcess::zeros(ndof, num_steps),
            z_implicit: AdaptedProcess::zeros(ndof, num_steps),
        }
    }

    pub fn initial(&self) -> &[f64] {
        self.z.level(0)
    }
}

/// Reaction (`a3`, `b3`) and diffusion-coupling (`a4`, `b4`) coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardCoefficients {
    pub a3: FieldCoefficient,
    pub a4: FieldCoefficient,
    pub b3: FieldCoefficient,
    pub b4: FieldCoefficient,
}

impl BackwardCoefficients {
    pub fn constant(mesh: &SpatialMesh, a3: f64, a4: f64, b3: f64, b4: f64) -> Self {
        let (n, nb) = (mesh.ndof(), mesh.n_boundary());
        Self {
            a3: FieldCoefficient::constant(n, a3),
            a4: FieldCoefficient::constant(n, a4),
            b3: FieldCoefficient::constant(nb, b3),
            b4: FieldCoefficient::constant(nb, b4),
        }
    }

    pub fn zero(mesh: &SpatialMesh) -> Self {
        Self::constant(mesh, 0.0, 0.0, 0.0, 0.0)
    }
}

/// Bulk (`f3`) and boundary (`g3`) sources on levels `0..N`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackwardSources {
    pub f3: Option<AdaptedProcess>,
    pub g3: Option<AdaptedProcess>,
}

fn lumped(mesh: &SpatialMesh, bulk: &[f64], bdry: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = mesh.bulk_weights().iter().zip(bulk).map(|(w, a)| w * a).collect();
    let ni = mesh.n_interior();
    for (b, (w, v)) in mesh.surface_weights().iter().zip(bdry).enumerate() {
        r[ni + b] += w * v;
    }
    r
}

fn check_terminal(tree: &ScenarioTree, ndof: usize, terminal: &[f64]) -> Result<()> {
    if terminal.len() != ndof << tree.num_steps() {
        return Err(Error::Contract(format!(
            "terminal datum must hold one field per leaf ({} values), got {}",
            ndof << tree.num_steps(),
            terminal.len()
        )));
    }
    Ok(())
}

/// Direct scheme: `(M + dt K + dt R3) z_k = M m - dt (R4 Ẑ_k + L3_k)` with
/// `m` and `Ẑ_k` taken from the children.
pub fn solve_backward(
    mesh: &SpatialMesh,
    op: &CoupledOperator,
    tree: &ScenarioTree,
    coeffs: &BackwardCoefficients,
    terminal: &[f64],
    sources: &BackwardSources,
) -> Result<BackwardSolution> {
    let n = mesh.ndof();
    let nb = mesh.n_boundary();
    check_len("operator size", n, op.ndof())?;
    check_terminal(tree, n, terminal)?;
    for (c, len) in [(&coeffs.a3, n), (&coeffs.a4, n), (&coeffs.b3, nb), (&coeffs.b4, nb)] {
        check_len("backward coefficient length", len, c.len())?;
    }
    let dt = tree.dt();
    let steps = tree.num_steps();
    let base = op.implicit_matrix(dt);
    let implicit = Cholesky::new(base.clone())
        .ok_or_else(|| Error::Numerical("implicit step matrix is not positive definite".into()))?;
    let factor_at = |k: usize, j: usize| -> Result<Cholesky<f64, Dyn>> {
        let r3 = lumped(mesh, coeffs.a3.at(k, j), coeffs.b3.at(k, j));
        let mut s: DMatrix<f64> = base.clone();
        for (i, r) in r3.iter().enumerate() {
            s[(i, i)] += dt * r;
        }
        Cholesky::new(s).ok_or_else(|| {
            Error::Numerical(format!(
                "backward step matrix at level {k} is not positive definite; reduce dt or the reaction a3"
            ))
        })
    };
    let static_factor = if coeffs.a3.is_static() && coeffs.b3.is_static() {
        Some(factor_at(0, 0)?)
    } else {
        None
    };
    let mass = op.mass();

    let mut z_levels = vec![terminal.to_vec()];
    let mut zhat_levels = Vec::with_capacity(steps);
    let mut zimp_levels = Vec::with_capacity(steps);
    for k in (0..steps).rev() {
        let next = z_levels.last().unwrap();
        let mut buf = vec![0.0; 3 * (n << k)];
        let failure = std::sync::Mutex::new(None);
        exec::for_each_node(&mut buf, 3 * n, |j, chunk| {
            let up = &next[2 * j * n..(2 * j + 1) * n];
            let down = &next[(2 * j + 1) * n..(2 * j + 2) * n];
            let (z, rest) = chunk.split_at_mut(n);
            let (zh, zi) = rest.split_at_mut(n);
            let r4 = lumped(mesh, coeffs.a4.at(k, j), coeffs.b4.at(k, j));
            let l3 = (sources.f3.is_some() || sources.g3.is_some()).then(|| {
                let zeros_b = vec![0.0; n];
                let zeros_g = vec![0.0; nb];
                lumped(
                    mesh,
                    sources.f3.as_ref().map_or(&zeros_b[..], |f| f.node(k, j)),
                    sources.g3.as_ref().map_or(&zeros_g[..], |g| g.node(k, j)),
                )
            });
            for i in 0..n {
                let m = 0.5 * (up[i] + down[i]);
                zh[i] = (up[i] - down[i]) / (2.0 * tree.sqrt_dt());
                zi[i] = mass[i] * m;
                z[i] = mass[i] * m - dt * (r4[i] * zh[i] + l3.as_ref().map_or(0.0, |l| l[i]));
            }
            let mut zi_view = DVectorViewMut::from_slice(zi, n);
            implicit.solve_mut(&mut zi_view);
            let mut z_view = DVectorViewMut::from_slice(z, n);
            match &static_factor {
                Some(f) => f.solve_mut(&mut z_view),
                None => match factor_at(k, j) {
                    Ok(f) => f.solve_mut(&mut z_view),
                    Err(e) => *failure.lock().unwrap() = Some(e),
                },
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let (mut z, mut zh, mut zi) = (
            Vec::with_capacity(n << k),
            Vec::with_capacity(n << k),
            Vec::with_capacity(n << k),
        );
        for chunk in buf.chunks_exact(3 * n) {
            z.extend_from_slice(&chunk[..n]);
            zh.extend_from_slice(&chunk[n..2 * n]);
            zi.extend_from_slice(&chunk[2 * n..]);
        }
        z_levels.push(z);
        zhat_levels.push(zh);
        zimp_levels.push(zi);
    }
    z_levels.reverse();
    zhat_levels.reverse();
    zimp_levels.reverse();
    Ok(BackwardSolution {
        z: AdaptedProcess::from_levels(n, z_levels),
        zhat: AdaptedProcess::from_levels(n, zhat_levels),
        z_implicit: AdaptedProcess::from_levels(n, zimp_levels),
    })
}

impl Propagator {
    /// Transposed sweep from the leaf datum `terminal`; `h` is a field-valued
    /// source on levels `0..N` entering as `+dt h_k`.
    pub fn transpose(&self, terminal: &[f64], h: Option<&AdaptedProcess>) -> Result<BackwardSolution> {
        let n = self.ndof();
        let tree = *self.tree();
        check_terminal(&tree, n, terminal)?;
        if let Some(h) = h {
            if h.dim() != n || h.num_levels() < tree.num_steps() {
                return Err(Error::Contract(format!(
                    "transpose source has dim {} and {} levels, configuration needs dim {n} and {} levels",
                    h.dim(),
                    h.num_levels(),
                    tree.num_steps()
                )));
            }
        }
        let dt = tree.dt();
        let inv_two_sq = 1.0 / (2.0 * tree.sqrt_dt());
        let mass = self.mass();
        let steps = tree.num_steps();
        let mut z_levels = vec![terminal.to_vec()];
        let mut zhat_levels = Vec::with_capacity(steps);
        let mut zimp_levels = Vec::with_capacity(steps);
        for k in (0..steps).rev() {
            let next = z_levels.last().unwrap();
            let mut buf = vec![0.0; 3 * (n << k)];
            exec::for_each_node(&mut buf, 3 * n, |j, chunk| {
                let up = &next[2 * j * n..(2 * j + 1) * n];
                let down = &next[(2 * j + 1) * n..(2 * j + 2) * n];
                let (p, rest) = chunk.split_at_mut(n);
                let (zh, m) = rest.split_at_mut(n);
                for i in 0..n {
                    m[i] = 0.5 * mass[i] * (up[i] + down[i]);
                    zh[i] = inv_two_sq * mass[i] * (up[i] - down[i]);
                }
                self.solve_in_place(m);
                self.solve_in_place(zh);
                let r1 = self.drift_diag(k, j);
                let r2 = self.noise_diag(k, j);
                for i in 0..n {
                    p[i] = m[i] + dt * (r1[i] * m[i] + r2[i] * zh[i]) / mass[i];
                }
                if let Some(h) = h {
                    for (pi, hi) in p.iter_mut().zip(h.node(k, j)) {
                        *pi += dt * hi;
                    }
                }
            });
            let (mut z, mut zh, mut zi) = (
                Vec::with_capacity(n << k),
                Vec::with_capacity(n << k),
                Vec::with_capacity(n << k),
            );
            for chunk in buf.chunks_exact(3 * n) {
                z.extend_from_slice(&chunk[..n]);
                zh.extend_from_slice(&chunk[n..2 * n]);
                zi.extend_from_slice(&chunk[2 * n..]);
            }
            z_levels.push(z);
            zhat_levels.push(zh);
            zimp_levels.push(zi);
        }
        z_levels.reverse();
        zhat_levels.reverse();
        zimp_levels.reverse();
        Ok(BackwardSolution {
            z: AdaptedProcess::from_levels(n, z_levels),
            zhat: AdaptedProcess::from_levels(n, zhat_levels),
            z_implicit: AdaptedProcess::from_levels(n, zimp_levels),
        })
    }
}

/// Exact transpose of the forward sweep configured in `prop`.
pub fn solve_backward_transpose(
    prop: &Propagator,
    terminal: &[f64],
    h: Option<&AdaptedProcess>,
) -> Result<BackwardSolution> {
    prop.transpose(terminal, h)
}
