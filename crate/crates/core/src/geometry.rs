//! Bulk-surface meshes and the coupled generator.
//!
//! Degrees of freedom are nodal values of lumped-mass P1 elements. Interior
//! nodes come first, boundary nodes last; the boundary block therefore *is*
//! the trace of the bulk field, so `(y, y_Γ)` pairs are trace-consistent by
//! construction. Bulk fields (coefficients, sources, masks) are sampled on
//! every node of the closed domain and integrated with the trapezoidal bulk
//! weights, surface fields live on the boundary block only.
//!
//! The generator is `𝒜 = -M⁻¹K` where `M = diag(bulk + surface weights)` and
//! `K` is the bulk stiffness plus the Laplace–Beltrami stiffness of the
//! boundary chain. The normal-derivative coupling is carried by the boundary
//! rows of the bulk stiffness, which keeps `K` symmetric.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Interval,
    Rectangle,
}

impl GeometryKind {
    pub fn dimension(self) -> usize {
        match self {
            GeometryKind::Interval => 1,
            GeometryKind::Rectangle => 2,
        }
    }
}

/// Axis-aligned box `[lo, hi]` per direction; nodes on the faces are included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    pub bounds: Vec<(f64, f64)>,
}

impl Region {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![(lo, hi)])
    }

    pub fn contains(&self, point: &[f64; 2]) -> bool {
        const TOL: f64 = 1e-12;
        self.bounds
            .iter()
            .zip(point.iter())
            .all(|(&(lo, hi), &x)| x >= lo - TOL && x <= hi + TOL)
    }

    /// Strict containment of `other` (compact inclusion of boxes).
    pub fn contains_region_strictly(&self, other: &Region) -> bool {
        self.bounds
            .iter()
            .zip(other.bounds.iter())
            .all(|(&(lo, hi), &(olo, ohi))| olo > lo && ohi < hi)
    }

    pub fn intersection(&self, other: &Region) -> Option<Region> {
        let mut bounds = Vec::with_capacity(self.bounds.len());
        for (&(lo, hi), &(olo, ohi)) in self.bounds.iter().zip(other.bounds.iter()) {
            let (l, h) = (lo.max(olo), hi.min(ohi));
            if l >= h {
                return None;
            }
            bounds.push((l, h));
        }
        Some(Region { bounds })
    }

    pub fn center(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for (ci, &(lo, hi)) in c.iter_mut().zip(self.bounds.iter()) {
            *ci = 0.5 * (lo + hi);
        }
        c
    }

    pub fn contains_point_strictly(&self, point: &[f64; 2]) -> bool {
        self.bounds
            .iter()
            .zip(point.iter())
            .all(|(&(lo, hi), &x)| x > lo && x < hi)
    }
}

/// A symmetric stiffness contribution `weight * (u_a - u_b) * (v_a - v_b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct SpatialMesh {
    kind: GeometryKind,
    n: usize,
    domain: Region,
    spacing: [f64; 2],
    coords: Vec<[f64; 2]>,
    grid: Vec<[usize; 2]>,
    n_interior: usize,
    bulk_weights: Vec<f64>,
    surface_weights: Vec<f64>,
    bulk_edges: Vec<Edge>,
    surface_edges: Vec<Edge>,
}

/// Builds a uniform mesh with `n` nodes per direction (endpoints included).
pub fn build_mesh(kind: GeometryKind, n: usize, domain: &Region) -> Result<SpatialMesh> {
    if n < 3 {
        return Err(Error::Config(format!(
            "mesh needs at least 3 nodes per direction, got {n}"
        )));
    }
    if domain.bounds.len() != kind.dimension() {
        return Err(Error::Config(format!(
            "{:?} geometry needs {} extent pairs, got {}",
            kind,
            kind.dimension(),
            domain.bounds.len()
        )));
    }
    for &(lo, hi) in &domain.bounds {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "domain extent ({lo}, {hi}) must be finite with positive length"
            )));
        }
    }
    Ok(match kind {
        GeometryKind::Interval => interval_mesh(n, domain),
        GeometryKind::Rectangle => rectangle_mesh(n, domain),
    })
}

fn interval_mesh(n: usize, domain: &Region) -> SpatialMesh {
    let (a, b) = domain.bounds[0];
    let h = (b - a) / (n - 1) as f64;
    let n_interior = n - 2;
    // grid node i -> dof
    let dof_of = |i: usize| -> usize {
        if i == 0 {
            n_interior
        } else if i == n - 1 {
            n_interior + 1
        } else {
            i - 1
        }
    };
    let mut coords = vec![[0.0; 2]; n];
    let mut grid = vec![[0usize; 2]; n];
    let mut bulk_weights = vec![h; n];
    for i in 0..n {
        let d = dof_of(i);
        coords[d] = [a + i as f64 * h, 0.0];
        grid[d] = [i, 0];
        if i == 0 || i == n - 1 {
            bulk_weights[d] = 0.5 * h;
        }
    }
    // Endpoints to their exact values so measures sum without drift.
    coords[n_interior] = [a, 0.0];
    coords[n_interior + 1] = [b, 0.0];
    let bulk_edges = (0..n - 1)
        .map(|i| Edge {
            a: dof_of(i),
            b: dof_of(i + 1),
            weight: 1.0 / h,
        })
        .collect();
    SpatialMesh {
        kind: GeometryKind::Interval,
        n,
        domain: domain.clone(),
        spacing: [h, 0.0],
        coords,
        grid,
        n_interior,
        bulk_weights,
        // A point boundary carries counting measure.
        surface_weights: vec![1.0, 1.0],
        bulk_edges,
        surface_edges: Vec::new(),
    }
}

fn rectangle_mesh(n: usize, domain: &Region) -> SpatialMesh {
    let (x0, x1) = domain.bounds[0];
    let (y0, y1) = domain.bounds[1];
    let hx = (x1 - x0) / (n - 1) as f64;
    let hy = (y1 - y0) / (n - 1) as f64;
    let last = n - 1;

    // Boundary chain, counter-clockwise from the lower-left corner.
    let mut chain = Vec::with_capacity(4 * last);
    for i in 0..last {
        chain.push([i, 0]);
    }
    for j in 0..last {
        chain.push([last, j]);
    }
    for i in (1..=last).rev() {
        chain.push([i, last]);
    }
    for j in (1..=last).rev() {
        chain.push([0, j]);
    }

    let n_interior = (n - 2) * (n - 2);
    let total = n * n;
    let mut dof_of = vec![usize::MAX; total];
    let mut grid = Vec::with_capacity(total);
    for j in 1..last {
        for i in 1..last {
            dof_of[j * n + i] = grid.len();
            grid.push([i, j]);
        }
    }
    for g in &chain {
        dof_of[g[1] * n + g[0]] = grid.len();
        grid.push(*g);
    }
    let coords: Vec<[f64; 2]> = grid
        .iter()
        .map(|&[i, j]| [x0 + i as f64 * hx, y0 + j as f64 * hy])
        .collect();
    let on_edge = |k: usize| k == 0 || k == last;
    let bulk_weights = grid
        .iter()
        .map(|&[i, j]| {
            let fx = if on_edge(i) { 0.5 } else { 1.0 };
            let fy = if on_edge(j) { 0.5 } else { 1.0 };
            hx * hy * fx * fy
        })
        .collect();

    let mut bulk_edges = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let here = dof_of[j * n + i];
            if i + 1 < n {
                let w = hy / hx * if on_edge(j) { 0.5 } else { 1.0 };
                bulk_edges.push(Edge {
                    a: here,
                    b: dof_of[j * n + i + 1],
                    weight: w,
                });
            }
            if j + 1 < n {
                let w = hx / hy * if on_edge(i) { 0.5 } else { 1.0 };
                bulk_edges.push(Edge {
                    a: here,
                    b: dof_of[(j + 1) * n + i],
                    weight: w,
                });
            }
        }
    }

    let nb = chain.len();
    let seg_len = |p: [usize; 2], q: [usize; 2]| -> f64 {
        if p[0] != q[0] {
            hx
        } else {
            hy
        }
    };
    let mut surface_edges = Vec::with_capacity(nb);
    let mut surface_weights = vec![0.0; nb];
    for k in 0..nb {
        let next = (k + 1) % nb;
        let len = seg_len(chain[k], chain[next]);
        surface_edges.push(Edge {
            a: n_interior + k,
            b: n_interior + next,
            weight: 1.0 / len,
        });
        surface_weights[k] += 0.5 * len;
        surface_weights[next] += 0.5 * len;
    }

    SpatialMesh {
        kind: GeometryKind::Rectangle,
        n,
        domain: domain.clone(),
        spacing: [hx, hy],
        coords,
        grid,
        n_interior,
        bulk_weights,
        surface_weights,
        bulk_edges,
        surface_edges,
    }
}

impl SpatialMesh {
    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    /// Nodes per direction.
    pub fn nodes_per_direction(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    /// Largest grid spacing.
    pub fn mesh_size(&self) -> f64 {
        self.spacing[0].max(self.spacing[1])
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn ndof(&self) -> usize {
        self.coords.len()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn n_boundary(&self) -> usize {
        self.surface_weights.len()
    }

    /// Coordinates of every degree of freedom, interior block first.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn interior_nodes(&self) -> &[[f64; 2]] {
        &self.coords[..self.n_interior]
    }

    pub fn boundary_nodes(&self) -> &[[f64; 2]] {
        &self.coords[self.n_interior..]
    }

    /// Lattice index `[i, j]` of a degree of freedom.
    pub fn grid_index(&self, dof: usize) -> [usize; 2] {
        self.grid[dof]
    }

    /// Trapezoidal `dx` weights on every node of the closed domain.
    pub fn bulk_weights(&self) -> &[f64] {
        &self.bulk_weights
    }

    /// `dσ` weights on the boundary block.
    pub fn surface_weights(&self) -> &[f64] {
        &self.surface_weights
    }

    pub fn bulk_edges(&self) -> &[Edge] {
        &self.bulk_edges
    }

    pub fn surface_edges(&self) -> &[Edge] {
        &self.surface_edges
    }

    /// Nodes joined to `dof` by a stiffness edge.
    pub fn neighbors(&self, dof: usize) -> Vec<usize> {
        self.bulk_edges
            .iter()
            .chain(self.surface_edges.iter())
            .filter_map(|e| {
                if e.a == dof {
                    Some(e.b)
                } else if e.b == dof {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// `|G|` as integrated by the bulk weights.
    pub fn bulk_measure(&self) -> f64 {
        self.bulk_weights.iter().sum()
    }

    /// `|Γ|` as integrated by the surface weights.
    pub fn surface_measure(&self) -> f64 {
        self.surface_weights.iter().sum()
    }

    /// Lumped `𝕃²` mass: bulk weight plus, on boundary nodes, surface weight.
    pub fn mass(&self) -> Vec<f64> {
        let mut m = self.bulk_weights.clone();
        for (b, w) in self.surface_weights.iter().enumerate() {
            m[self.n_interior + b] += w;
        }
        m
    }

    /// Writes the load vector `w_dx ⊙ bulk + E(w_dσ ⊙ boundary)` into `out`.
    pub fn load_into(&self, bulk: Option<&[f64]>, boundary: Option<&[f64]>, out: &mut [f64]) {
        match bulk {
            Some(f) => {
                for ((o, w), v) in out.iter_mut().zip(&self.bulk_weights).zip(f) {
                    *o = w * v;
                }
            }
            None => out.iter_mut().for_each(|o| *o = 0.0),
        }
        if let Some(g) = boundary {
            for (b, (w, v)) in self.surface_weights.iter().zip(g).enumerate() {
                out[self.n_interior + b] += w * v;
            }
        }
    }

    /// `∫_G a b dx` by the bulk quadrature.
    pub fn bulk_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.bulk_weights
            .iter()
            .zip(a)
            .zip(b)
            .map(|((w, x), y)| w * x * y)
            .sum()
    }

    /// `∫_Γ a b dσ` for boundary-block vectors.
    pub fn surface_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.surface_weights
            .iter()
            .zip(a)
            .zip(b)
            .map(|((w, x), y)| w * x * y)
            .sum()
    }

    /// Samples `f` on every node of the closed domain.
    pub fn sample<F: Fn(&[f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        self.coords.iter().map(f).collect()
    }

    /// Samples `f` on the boundary nodes.
    pub fn sample_boundary<F: Fn(&[f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        self.boundary_nodes().iter().map(f).collect()
    }
}

/// The pair `(y, y_Γ)` stored as one nodal vector (interior block, then boundary block).
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledField {
    values: Vec<f64>,
    n_interior: usize,
}

impl CoupledField {
    pub fn zeros(mesh: &SpatialMesh) -> Self {
        Self {
            values: vec![0.0; mesh.ndof()],
            n_interior: mesh.n_interior(),
        }
    }

    pub fn from_values(mesh: &SpatialMesh, values: Vec<f64>) -> Result<Self> {
        check_len("coupled field", mesh.ndof(), values.len())?;
        Ok(Self {
            values,
            n_interior: mesh.n_interior(),
        })
    }

    pub fn from_fn<F: Fn(&[f64; 2]) -> f64>(mesh: &SpatialMesh, f: F) -> Self {
        Self {
            values: mesh.sample(f),
            n_interior: mesh.n_interior(),
        }
    }

    pub fn constant(mesh: &SpatialMesh, c: f64) -> Self {
        Self::from_fn(mesh, |_| c)
    }

    pub fn bulk_values(&self) -> &[f64] {
        &self.values[..self.n_interior]
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.values[self.n_interior..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mass-weighted symmetric discretization of the bulk-surface generator.
#[derive(Debug, Clone)]
pub struct CoupledOperator {
    ndof: usize,
    edges: Vec<Edge>,
    mass: Vec<f64>,
}

pub fn assemble_generator(mesh: &SpatialMesh) -> CoupledOperator {
    let mut edges = mesh.bulk_edges().to_vec();
    edges.extend_from_slice(mesh.surface_edges());
    CoupledOperator {
        ndof: mesh.ndof(),
        edges,
        mass: mesh.mass(),
    }
}

impl CoupledOperator {
    /// The zero generator on the same degrees of freedom (pure reaction/noise dynamics).
    pub fn zero(mesh: &SpatialMesh) -> Self {
        Self {
            ndof: mesh.ndof(),
            edges: Vec::new(),
            mass: mesh.mass(),
        }
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Dense stiffness `K` (symmetric positive semidefinite).
    pub fn stiffness(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.ndof, self.ndof);
        for e in &self.edges {
            k[(e.a, e.a)] += e.weight;
            k[(e.b, e.b)] += e.weight;
            k[(e.a, e.b)] -= e.weight;
            k[(e.b, e.a)] -= e.weight;
        }
        k
    }

    /// Dense `𝒜 = -M⁻¹K`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = -self.stiffness();
        for (i, m) in self.mass.iter().enumerate() {
            a.row_mut(i).scale_mut(1.0 / m);
        }
        a
    }

    /// `K u` without forming the matrix.
    pub fn stiffness_apply(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for e in &self.edges {
            let d = e.weight * (u[e.a] - u[e.b]);
            out[e.a] += d;
            out[e.b] -= d;
        }
    }

    pub fn apply(&self, field: &CoupledField) -> Result<CoupledField> {
        check_len("generator input", self.ndof, field.len())?;
        let mut out = vec![0.0; self.ndof];
        self.stiffness_apply(field.as_slice(), &mut out);
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o = -*o / m;
        }
        Ok(CoupledField {
            values: out,
            n_interior: field.n_interior,
        })
    }

    /// Dense `M + dt K`, symmetric positive definite for `dt >= 0`.
    pub fn implicit_matrix(&self, dt: f64) -> DMatrix<f64> {
        let mut s = self.stiffness() * dt;
        for (i, m) in self.mass.iter().enumerate() {
            s[(i, i)] += m;
        }
        s
    }
}

/// `⟨A, B⟩_𝕃² = ∫_G a b dx + ∫_Γ a_Γ b_Γ dσ`.
pub fn inner_product(mesh: &SpatialMesh, a: &CoupledField, b: &CoupledField) -> Result<f64> {
    check_len("inner product (left)", mesh.ndof(), a.len())?;
    check_len("inner product (right)", mesh.ndof(), b.len())?;
    Ok(weighted_dot(&mesh.mass(), a.as_slice(), b.as_slice()))
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskDomain {
    /// Indexed by every node of the closed domain.
    Bulk,
    /// Indexed by the boundary block.
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    pub name: String,
    pub domain: MaskDomain,
    pub indicator: Vec<f64>,
}

impl SubdomainMask {
    pub fn bulk_from_region(mesh: &SpatialMesh, name: &str, region: &Region) -> Result<Self> {
        if region.bounds.len() != mesh.kind().dimension() {
            return Err(Error::Config(format!(
                "subdomain {name} has {} extent pairs, geometry needs {}",
                region.bounds.len(),
                mesh.kind().dimension()
            )));
        }
        let indicator = mesh.sample(|p| if region.contains(p) { 1.0 } else { 0.0 });
        Ok(Self {
            name: name.to_string(),
            domain: MaskDomain::Bulk,
            indicator,
        })
    }

    pub fn full(mesh: &SpatialMesh, name: &str) -> Self {
        Self {
            name: name.to_string(),
            domain: MaskDomain::Bulk,
            indicator: vec![1.0; mesh.ndof()],
        }
    }

    pub fn boundary_full(mesh: &SpatialMesh, name: &str) -> Self {
        Self {
            name: name.to_string(),
            domain: MaskDomain::Boundary,
            indicator: vec![1.0; mesh.n_boundary()],
        }
    }

    pub fn len(&self) -> usize {
        self.indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicator.iter().all(|&c| c == 0.0)
    }

    pub fn active_count(&self) -> usize {
        self.indicator.iter().filter(|&&c| c != 0.0).count()
    }

    pub fn intersects(&self, other: &SubdomainMask) -> bool {
        self.indicator
            .iter()
            .zip(&other.indicator)
            .any(|(a, b)| *a != 0.0 && *b != 0.0)
    }

    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        check_len("mask application", self.indicator.len(), field.len())?;
        Ok(field.iter().zip(&self.indicator).map(|(f, c)| f * c).collect())
    }

    pub fn apply_in_place(&self, field: &mut [f64]) {
        for (f, c) in field.iter_mut().zip(&self.indicator) {
            *f *= c;
        }
    }
}

/// Pointwise `χ ⊙ F`.
pub fn apply_mask(mask: &SubdomainMask, field: &[f64]) -> Result<Vec<f64>> {
    mask.apply(field)
}
