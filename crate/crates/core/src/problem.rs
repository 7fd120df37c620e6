//! A fully assembled problem instance: mesh, tree, propagator, masks, cost
//! parameters, targets and initial state.

use crate::config::{CoefficientSpec, ProblemConfig, SolverConfig, TargetSpec};
use crate::error::{Error, Result};
use crate::forward::{Coefficients, FieldCoefficient, Propagator};
use crate::geometry::{
    assemble_generator, build_mesh, CoupledField, CoupledOperator, GeometryKind, Region, SpatialMesh, SubdomainMask,
};
use crate::tree::{build_tree_with_budget, AdaptedProcess, ScenarioTree};

#[derive(Debug, Clone)]
pub struct Masks {
    pub g0: SubdomainMask,
    pub g1: SubdomainMask,
    pub g2: SubdomainMask,
    pub gd: SubdomainMask,
}

impl Masks {
    pub fn follower(&self, i: usize) -> &SubdomainMask {
        if i == 0 {
            &self.g1
        } else {
            &self.g2
        }
    }
}

/// Follower cost weights and targets (bulk fields on levels `0..N`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub targets: [AdaptedProcess; 2],
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: SpatialMesh,
    pub op: CoupledOperator,
    pub tree: ScenarioTree,
    pub masks: Masks,
    pub gprime: Region,
    pub cost: CostParams,
    pub y0: CoupledField,
    pub solver: SolverConfig,
    pub config: ProblemConfig,
    prop: Propagator,
}

fn region_check(name: &str, r: &Region, dim: usize) -> Result<()> {
    if r.bounds.len() != dim {
        return Err(Error::Config(format!(
            "subdomain {name} needs {dim} extent pairs, got {}",
            r.bounds.len()
        )));
    }
    if r.bounds.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(Error::Config(format!("subdomain {name} has an empty extent")));
    }
    Ok(())
}

fn coefficient(
    spec: &CoefficientSpec,
    mesh: &SpatialMesh,
    tree: &ScenarioTree,
    boundary: bool,
) -> Result<FieldCoefficient> {
    let coords = if boundary { mesh.boundary_nodes() } else { mesh.coords() };
    Ok(match spec {
        CoefficientSpec::Constant(c) => FieldCoefficient::constant(coords.len(), *c),
        CoefficientSpec::Profile { profile } => {
            if profile.is_empty() {
                return Err(Error::Config("coefficient profile needs at least one value".into()));
            }
            let (a, b) = mesh.domain().bounds[0];
            let values = coords
                .iter()
                .map(|p| piecewise_linear(profile, (p[0] - a) / (b - a)))
                .collect();
            FieldCoefficient::Static(values)
        }
        CoefficientSpec::Adapted { base, scale } => {
            let w = tree.brownian_process();
            let len = coords.len();
            FieldCoefficient::Adapted(AdaptedProcess::from_fn(tree, len, tree.num_steps(), |k, j, out| {
                out.fill(base + scale * w.node(k, j)[0].tanh())
            }))
        }
    })
}

fn piecewise_linear(knots: &[f64], s: f64) -> f64 {
    if knots.len() == 1 {
        return knots[0];
    }
    let pos = s.clamp(0.0, 1.0) * (knots.len() - 1) as f64;
    let i = (pos.floor() as usize).min(knots.len() - 2);
    let f = pos - i as f64;
    knots[i] * (1.0 - f) + knots[i + 1] * f
}

/// Target process on levels `0..N`. Level `k` stands for the cell
/// `[t_k, t_k+1)` and carries `value` when that cell ends by `until`.
pub fn target_process(tree: &ScenarioTree, ndof: usize, spec: &TargetSpec) -> AdaptedProcess {
    AdaptedProcess::from_fn(tree, ndof, tree.num_steps(), |k, _, out| {
        let v = if tree.time(k + 1) <= spec.until + 1e-12 {
            spec.value
        } else {
            0.0
        };
        out.fill(v);
    })
}

fn initial_state(mesh: &SpatialMesh, amplitude: f64, offset: f64) -> CoupledField {
    let dom = mesh.domain().clone();
    CoupledField::from_fn(mesh, |p| {
        let mut s = amplitude;
        for (x, &(a, b)) in p.iter().zip(&dom.bounds) {
            s *= (std::f64::consts::PI * (x - a) / (b - a)).sin();
        }
        s + offset
    })
}

impl Problem {
    pub fn from_config(config: &ProblemConfig) -> Result<Self> {
        let g = &config.geometry;
        let mesh = build_mesh(g.kind, g.n, &g.domain)?;
        let tree = build_tree_with_budget(config.tree.steps, config.tree.horizon, config.tree.node_budget)?;
        let dim = g.kind.dimension();

        let sd = &config.subdomains;
        let gd = sd.gd.as_ref().ok_or_else(|| {
            Error::Config(
                "observation set gd is missing: both followers share one observation set G_d, \
                 which must be given and must intersect G0"
                    .into(),
            )
        })?;
        for (name, r) in [
            ("g0", &sd.g0),
            ("g1", &sd.g1),
            ("g2", &sd.g2),
            ("gd", gd),
            ("gprime", &sd.gprime),
        ] {
            region_check(name, r, dim)?;
        }
        let masks = Masks {
            g0: SubdomainMask::bulk_from_region(&mesh, "G0", &sd.g0)?,
            g1: SubdomainMask::bulk_from_region(&mesh, "G1", &sd.g1)?,
            g2: SubdomainMask::bulk_from_region(&mesh, "G2", &sd.g2)?,
            gd: SubdomainMask::bulk_from_region(&mesh, "Gd", gd)?,
        };
        for m in [&masks.g0, &masks.g1, &masks.g2, &masks.gd] {
            if m.is_empty() {
                return Err(Error::Config(format!(
                    "subdomain {} contains no mesh node; refine the mesh or widen it",
                    m.name
                )));
            }
        }
        if !masks.gd.intersects(&masks.g0) {
            return Err(Error::Config(
                "observation set G_d does not intersect G0: the shared observation set must meet the leader control set"
                    .into(),
            ));
        }

        let c = &config.cost;
        if c.alpha.iter().chain(&c.beta).any(|&v| !(v > 0.0)) {
            return Err(Error::Config("alpha and beta weights must be positive".into()));
        }
        let floor = c.beta_floor_factor * c.alpha[0].max(c.alpha[1]) * tree.horizon() * mesh.bulk_measure();
        if c.beta.iter().any(|&b| b < floor) {
            return Err(Error::Config(format!(
                "beta = {:?} is below the coercivity floor {floor}; raise beta or lower beta_floor_factor",
                c.beta
            )));
        }
        let s = &config.solver;
        if !(s.picard_tol > 0.0 && s.cg_tol > 0.0 && config.hum.tol_grad > 0.0 && config.hum.epsilon > 0.0) {
            return Err(Error::Config("tolerances and epsilon must be positive".into()));
        }

        let cc = &config.coefficients;
        let coeffs = Coefficients {
            a1: coefficient(&cc.a1, &mesh, &tree, false)?,
            a2: coefficient(&cc.a2, &mesh, &tree, false)?,
            b1: coefficient(&cc.b1, &mesh, &tree, true)?,
            b2: coefficient(&cc.b2, &mesh, &tree, true)?,
        };
        let op = assemble_generator(&mesh);
        let prop = Propagator::new(&mesh, &op, &tree, &coeffs)?;
        let targets = [
            target_process(&tree, mesh.ndof(), &config.targets.y1),
            target_process(&tree, mesh.ndof(), &config.targets.y2),
        ];
        let y0 = initial_state(&mesh, config.initial.amplitude, config.initial.offset);
        Ok(Self {
            mesh,
            op,
            tree,
            masks,
            gprime: sd.gprime.clone(),
            cost: CostParams {
                alpha: c.alpha,
                beta: c.beta,
                targets,
            },
            y0,
            solver: config.solver.clone(),
            config: config.clone(),
            prop,
        })
    }

    pub fn propagator(&self) -> &Propagator {
        &self.prop
    }

    pub fn coefficients(&self) -> &Coefficients {
        self.prop.coefficients()
    }

    pub fn set_coefficients(&mut self, coeffs: Coefficients) -> Result<()> {
        self.prop = Propagator::new(&self.mesh, &self.op, &self.tree, &coeffs)?;
        Ok(())
    }

    /// Replaces the generator (for instance with [`CoupledOperator::zero`]).
    pub fn set_operator(&mut self, op: CoupledOperator) -> Result<()> {
        self.prop = Propagator::new(&self.mesh, &op, &self.tree, self.prop.coefficients())?;
        self.op = op;
        Ok(())
    }

    pub fn ndof(&self) -> usize {
        self.mesh.ndof()
    }

    pub fn n_boundary(&self) -> usize {
        self.mesh.n_boundary()
    }

    pub fn num_steps(&self) -> usize {
        self.tree.num_steps()
    }

    pub fn geometry_kind(&self) -> GeometryKind {
        self.mesh.kind()
    }

    /// Zero targets.
    pub fn zero_targets(&self) -> [AdaptedProcess; 2] {
        let z = AdaptedProcess::zeros(self.ndof(), self.num_steps());
        [z.clone(), z]
    }

    /// Weight of one entry of a flattened bulk process on levels `from..to`:
    /// `dt * 2^-k * w_dx`.
    pub fn bulk_space_time_weights(&self, from: usize, to: usize) -> Vec<f64> {
        space_time_weights(&self.tree, self.mesh.bulk_weights(), from, to)
    }

    /// Same with the full `𝕃²` mass.
    pub fn mass_space_time_weights(&self, from: usize, to: usize) -> Vec<f64> {
        space_time_weights(&self.tree, self.op.mass(), from, to)
    }
}

pub(crate) fn space_time_weights(tree: &ScenarioTree, base: &[f64], from: usize, to: usize) -> Vec<f64> {
    let mut w = Vec::new();
    for k in from..to {
        let c = tree.dt() * tree.probability(k);
        for _ in 0..tree.nodes_at(k) {
            w.extend(base.iter().map(|b| c * b));
        }
    }
    w
}
