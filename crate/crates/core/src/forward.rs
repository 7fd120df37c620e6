//! Semi-implicit Euler–Maruyama propagation on the scenario tree.
//!
//! In mass-weighted form one step reads
//!
//! ```text
//! (M + dt K) Y_{k+1} = M Y_k + dt (R1 Y_k + L1_k) + (R2 Y_k + L2_k) ΔW_k
//! ```
//!
//! where `R1 = diag(w_dx a1 + w_dσ b1)` (likewise `R2`) and `L1`, `L2` are
//! load vectors of the drift and noise sources. `M + dt K` does not depend on
//! the node, so one Cholesky factor serves the whole run.

use std::borrow::Cow;

use nalgebra::{Cholesky, DVectorViewMut, Dyn};

use crate::error::{check_len, Error, Result};
use crate::exec;
use crate::geometry::{CoupledField, CoupledOperator, SpatialMesh};
use crate::tree::{AdaptedProcess, ScenarioTree};

/// A spatial coefficient that is either fixed in time or adapted to the tree.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldCoefficient {
    Static(Vec<f64>),
    /// One value per node on levels `0..N`.
    Adapted(AdaptedProcess),
}

impl FieldCoefficient {
    pub fn constant(len: usize, c: f64) -> Self {
        FieldCoefficient::Static(vec![c; len])
    }

    pub fn zero(len: usize) -> Self {
        Self::constant(len, 0.0)
    }

    pub fn at(&self, k: usize, node: usize) -> &[f64] {
        match self {
            FieldCoefficient::Static(v) => v,
            FieldCoefficient::Adapted(p) => p.node(k, node),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FieldCoefficient::Static(v) => v.len(),
            FieldCoefficient::Adapted(p) => p.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_static(&self) -> bool {
        matches!(self, FieldCoefficient::Static(_))
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            FieldCoefficient::Static(v) => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            FieldCoefficient::Adapted(p) => p.max_abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }

    fn validate(&self, name: &str, len: usize, tree: &ScenarioTree) -> Result<()> {
        check_len("coefficient length", len, self.len())?;
        if let FieldCoefficient::Adapted(p) = self {
            if p.num_levels() < tree.num_steps() {
                return Err(Error::Config(format!(
                    "adapted coefficient {name} covers {} levels, tree needs {}",
                    p.num_levels(),
                    tree.num_steps()
                )));
            }
        }
        if !self.max_abs().is_finite() {
            return Err(Error::Config(format!("coefficient {name} is not bounded")));
        }
        Ok(())
    }
}

/// Reaction (`a1`, `b1`) and noise (`a2`, `b2`) coefficients; bulk fields on
/// every node, boundary fields on the boundary block.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a1: FieldCoefficient,
    pub a2: FieldCoefficient,
    pub b1: FieldCoefficient,
    pub b2: FieldCoefficient,
}

impl Coefficients {
    pub fn constant(mesh: &SpatialMesh, a1: f64, a2: f64, b1: f64, b2: f64) -> Self {
        let (n, nb) = (mesh.ndof(), mesh.n_boundary());
        Self {
            a1: FieldCoefficient::constant(n, a1),
            a2: FieldCoefficient::constant(n, a2),
            b1: FieldCoefficient::constant(nb, b1),
            b2: FieldCoefficient::constant(nb, b2),
        }
    }

    pub fn zero(mesh: &SpatialMesh) -> Self {
        Self::constant(mesh, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_noise_free(&self) -> bool {
        self.a2.is_zero() && self.b2.is_zero()
    }

    pub(crate) fn validate(&self, mesh: &SpatialMesh, tree: &ScenarioTree) -> Result<()> {
        self.a1.validate("a1", mesh.ndof(), tree)?;
        self.a2.validate("a2", mesh.ndof(), tree)?;
        self.b1.validate("b1", mesh.n_boundary(), tree)?;
        self.b2.validate("b2", mesh.n_boundary(), tree)?;
        Ok(())
    }
}

/// Drift (`f1`, `g1`) and noise (`f2`, `g2`) sources on levels `0..N`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardSources {
    pub f1: Option<AdaptedProcess>,
    pub f2: Option<AdaptedProcess>,
    pub g1: Option<AdaptedProcess>,
    pub g2: Option<AdaptedProcess>,
}

/// Source values at a single node.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepSources<'a> {
    pub f1: Option<&'a [f64]>,
    pub f2: Option<&'a [f64]>,
    pub g1: Option<&'a [f64]>,
    pub g2: Option<&'a [f64]>,
}

/// Shared state of every forward and transposed sweep on one configuration.
#[derive(Debug, Clone)]
pub struct Propagator {
    tree: ScenarioTree,
    n_interior: usize,
    bulk_w: Vec<f64>,
    surf_w: Vec<f64>,
    mass: Vec<f64>,
    factor: Cholesky<f64, Dyn>,
    coeffs: Coefficients,
    static_drift: Option<Vec<f64>>,
    static_noise: Option<Vec<f64>>,
}

impl Propagator {
    pub fn new(mesh: &SpatialMesh, op: &CoupledOperator, tree: &ScenarioTree, coeffs: &Coefficients) -> Result<Self> {
        check_len("operator size", mesh.ndof(), op.ndof())?;
        coeffs.validate(mesh, tree)?;
        let react = coeffs.a1.max_abs().max(coeffs.b1.max_abs());
        if tree.dt() * react >= 1.0 {
            return Err(Error::Contract(format!(
                "dt * |reaction| = {} must stay below 1; refine the time grid",
                tree.dt() * react
            )));
        }
        let factor = Cholesky::new(op.implicit_matrix(tree.dt()))
            .ok_or_else(|| Error::Numerical("implicit step matrix is not positive definite".into()))?;
        let mut p = Self {
            tree: *tree,
            n_interior: mesh.n_interior(),
            bulk_w: mesh.bulk_weights().to_vec(),
            surf_w: mesh.surface_weights().to_vec(),
            mass: op.mass().to_vec(),
            factor,
            coeffs: coeffs.clone(),
            static_drift: None,
            static_noise: None,
        };
        if coeffs.a1.is_static() && coeffs.b1.is_static() {
            p.static_drift = Some(p.reaction(&coeffs.a1, &coeffs.b1, 0, 0));
        }
        if coeffs.a2.is_static() && coeffs.b2.is_static() {
            p.static_noise = Some(p.reaction(&coeffs.a2, &coeffs.b2, 0, 0));
        }
        Ok(p)
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn ndof(&self) -> usize {
        self.mass.len()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    fn reaction(&self, bulk: &FieldCoefficient, bdry: &FieldCoefficient, k: usize, j: usize) -> Vec<f64> {
        let mut r: Vec<f64> = self.bulk_w.iter().zip(bulk.at(k, j)).map(|(w, a)| w * a).collect();
        for (b, (w, v)) in self.surf_w.iter().zip(bdry.at(k, j)).enumerate() {
            r[self.n_interior + b] += w * v;
        }
        r
    }

    /// Diagonal `R1` at node `(k, j)`.
    pub(crate) fn drift_diag(&self, k: usize, j: usize) -> Cow<'_, [f64]> {
        match &self.static_drift {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.reaction(&self.coeffs.a1, &self.coeffs.b1, k, j)),
        }
    }

    /// Diagonal `R2` at node `(k, j)`.
    pub(crate) fn noise_diag(&self, k: usize, j: usize) -> Cow<'_, [f64]> {
        match &self.static_noise {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.reaction(&self.coeffs.a2, &self.coeffs.b2, k, j)),
        }
    }

    /// In-place `(M + dt K)⁻¹ v`.
    pub(crate) fn solve_in_place(&self, v: &mut [f64]) {
        let n = v.len();
        let mut view = DVectorViewMut::from_slice(v, n);
        self.factor.solve_mut(&mut view);
    }

    /// Load vector `w_dx ⊙ bulk + E(w_dσ ⊙ boundary)`.
    pub fn load(&self, bulk: Option<&[f64]>, boundary: Option<&[f64]>) -> Vec<f64> {
        let mut out = vec![0.0; self.ndof()];
        if let Some(f) = bulk {
            for ((o, w), v) in out.iter_mut().zip(&self.bulk_w).zip(f) {
                *o = w * v;
            }
        }
        if let Some(g) = boundary {
            for (b, (w, v)) in self.surf_w.iter().zip(g).enumerate() {
                out[self.n_interior + b] += w * v;
            }
        }
        out
    }

    /// Load process of bulk/boundary source processes on levels `0..N`.
    pub fn load_process(
        &self,
        bulk: Option<&AdaptedProcess>,
        boundary: Option<&AdaptedProcess>,
    ) -> Result<Option<AdaptedProcess>> {
        if bulk.is_none() && boundary.is_none() {
            return Ok(None);
        }
        let n_steps = self.tree.num_steps();
        if let Some(b) = bulk {
            check_len("bulk source dimension", self.ndof(), b.dim())?;
            check_len("bulk source levels", n_steps, b.num_levels().min(n_steps))?;
        }
        if let Some(g) = boundary {
            check_len("boundary source dimension", self.surf_w.len(), g.dim())?;
            check_len("boundary source levels", n_steps, g.num_levels().min(n_steps))?;
        }
        let n = self.ndof();
        let mut out = AdaptedProcess::zeros(n, n_steps);
        for k in 0..n_steps {
            let level = out.level_mut(k);
            exec::for_each_node(level, n, |j, chunk| {
                let l = self.load(bulk.map(|b| b.node(k, j)), boundary.map(|g| g.node(k, j)));
                chunk.copy_from_slice(&l);
            });
        }
        Ok(Some(out))
    }

    /// Forward sweep. `drift` and `noise` are load processes on levels `0..N`.
    pub fn forward(
        &self,
        y0: &[f64],
        drift: Option<&AdaptedProcess>,
        noise: Option<&AdaptedProcess>,
    ) -> Result<AdaptedProcess> {
        let n = self.ndof();
        check_len("initial state", n, y0.len())?;
        for p in [drift, noise].into_iter().flatten() {
            check_len("load dimension", n, p.dim())?;
            if p.num_levels() < self.tree.num_steps() {
                return Err(Error::Shape {
                    context: "load levels",
                    expected: self.tree.num_steps(),
                    found: p.num_levels(),
                });
            }
        }
        let dt = self.tree.dt();
        let sq = self.tree.sqrt_dt();
        let mut out = AdaptedProcess::from_levels(n, vec![y0.to_vec()]);
        for k in 0..self.tree.num_steps() {
            let mut next = vec![0.0; n << (k + 1)];
            let prev = out.level(k);
            exec::for_each_node(&mut next, 2 * n, |j, pair| {
                let y = &prev[j * n..(j + 1) * n];
                let r1 = self.drift_diag(k, j);
                let r2 = self.noise_diag(k, j);
                let (a, b) = pair.split_at_mut(n);
                for i in 0..n {
                    a[i] = self.mass[i] * y[i] + dt * r1[i] * y[i];
                    b[i] = r2[i] * y[i];
                }
                if let Some(d) = drift {
                    for (ai, li) in a.iter_mut().zip(d.node(k, j)) {
                        *ai += dt * li;
                    }
                }
                if let Some(s) = noise {
                    for (bi, li) in b.iter_mut().zip(s.node(k, j)) {
                        *bi += li;
                    }
                }
                self.solve_in_place(a);
                self.solve_in_place(b);
                for i in 0..n {
                    let (m, s) = (a[i], sq * b[i]);
                    a[i] = m + s;
                    b[i] = m - s;
                }
            });
            out.push_level(next);
        }
        Ok(out)
    }
}

/// One step at node `node` of level `k` with increment `dw`.
#[allow(clippy::too_many_arguments)]
pub fn step_forward(
    mesh: &SpatialMesh,
    op: &CoupledOperator,
    coeffs: &Coefficients,
    tree: &ScenarioTree,
    (k, node): (usize, usize),
    y_k: &CoupledField,
    sources: &StepSources<'_>,
    dw: f64,
) -> Result<CoupledField> {
    let prop = Propagator::new(mesh, op, tree, coeffs)?;
    let n = mesh.ndof();
    check_len("state", n, y_k.len())?;
    let dt = tree.dt();
    let l1 = prop.load(sources.f1, sources.g1);
    let l2 = prop.load(sources.f2, sources.g2);
    let r1 = prop.drift_diag(k, node);
    let r2 = prop.noise_diag(k, node);
    let y = y_k.as_slice();
    let mut rhs: Vec<f64> = (0..n)
        .map(|i| prop.mass[i] * y[i] + dt * (r1[i] * y[i] + l1[i]) + (r2[i] * y[i] + l2[i]) * dw)
        .collect();
    prop.solve_in_place(&mut rhs);
    CoupledField::from_values(mesh, rhs)
}

/// Forward solution on levels `0..=N` from a deterministic `Y_0`.
pub fn solve_forward(
    mesh: &SpatialMesh,
    op: &CoupledOperator,
    tree: &ScenarioTree,
    coeffs: &Coefficients,
    y0: &CoupledField,
    sources: &ForwardSources,
) -> Result<AdaptedProcess> {
    let prop = Propagator::new(mesh, op, tree, coeffs)?;
    let drift = prop.load_process(sources.f1.as_ref(), sources.g1.as_ref())?;
    let noise = prop.load_process(sources.f2.as_ref(), sources.g2.as_ref())?;
    prop.forward(y0.as_slice(), drift.as_ref(), noise.as_ref())
}
