//! Problem configuration. Every section has documented defaults so a config
//! file only needs to list what it changes.

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryKind, Region};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub geometry: GeometryConfig,
    pub tree: TreeConfig,
    pub subdomains: SubdomainConfig,
    pub coefficients: CoefficientConfig,
    pub cost: CostConfig,
    pub targets: TargetConfig,
    pub initial: InitialConfig,
    pub weights: WeightsConfig,
    pub hum: HumConfig,
    pub solver: SolverConfig,
    pub observability: ObservabilityConfig,
    pub forward: ForwardConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    /// Nodes per direction, endpoints included.
    pub n: usize,
    pub domain: Region,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            kind: GeometryKind::Interval,
            n: 16,
            domain: Region::interval(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub steps: usize,
    pub horizon: f64,
    pub node_budget: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            horizon: 1.0,
            node_budget: crate::tree::DEFAULT_NODE_BUDGET,
        }
    }
}

/// Control, follower and observation sets. `gd` has no default inside the
/// section: a `[subdomains]` table that omits it is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubdomainConfig {
    #[serde(default = "default_g0")]
    pub g0: Region,
    #[serde(default = "default_g1")]
    pub g1: Region,
    #[serde(default = "default_g2")]
    pub g2: Region,
    #[serde(default)]
    pub gd: Option<Region>,
    #[serde(default = "default_gprime")]
    pub gprime: Region,
}

fn default_g0() -> Region {
    Region::interval(0.3, 0.7)
}
fn default_g1() -> Region {
    Region::interval(0.1, 0.4)
}
fn default_g2() -> Region {
    Region::interval(0.6, 0.9)
}
fn default_gprime() -> Region {
    Region::interval(0.45, 0.55)
}

impl Default for SubdomainConfig {
    fn default() -> Self {
        Self {
            g0: default_g0(),
            g1: default_g1(),
            g2: default_g2(),
            gd: Some(Region::interval(0.35, 0.65)),
            gprime: default_gprime(),
        }
    }
}

/// A coefficient given as a constant, a piecewise-linear profile along the
/// first coordinate (knots equally spaced over the domain), or the adapted
/// formula `base + scale * tanh(W(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Profile { profile: Vec<f64> },
    Adapted { base: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientConfig {
    pub a1: CoefficientSpec,
    pub a2: CoefficientSpec,
    pub b1: CoefficientSpec,
    pub b2: CoefficientSpec,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self {
            a1: CoefficientSpec::Constant(1.0),
            a2: CoefficientSpec::Constant(0.5),
            b1: CoefficientSpec::Constant(1.0),
            b2: CoefficientSpec::Constant(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    /// `beta_i` must be at least `beta_floor_factor * max(alpha) * T * |G|`.
    pub beta_floor_factor: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            alpha: [1.0, 1.0],
            beta: [1e4, 1e4],
            beta_floor_factor: 100.0,
        }
    }
}

/// Target `value` on `G_d` on the time cells inside `[0, until]`, zero afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub value: f64,
    pub until: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            value: 0.0,
            until: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub y1: TargetSpec,
    pub y2: TargetSpec,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            y1: TargetSpec {
                value: 1.0,
                until: 0.75,
            },
            y2: TargetSpec {
                value: 0.5,
                until: 0.75,
            },
        }
    }
}

/// `Y_0 = amplitude * Π sin(π (x - a) / L) + offset` on every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub amplitude: f64,
    pub offset: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            offset: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub lambda: f64,
    pub mu: f64,
    /// Largest natural-log magnitude turned back into a float.
    pub overflow_budget: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            mu: 2.0,
            overflow_budget: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// `p(s) = s² / 2`.
    Quadratic,
    /// `p(s) = sqrt(s² + δ²)`.
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumConfig {
    pub epsilon: f64,
    pub penalty: PenaltyMode,
    pub delta: f64,
    /// Gradient tolerance is `tol_grad * (1 + ‖Y_0‖)`.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Goal for `𝔼‖Y(T)‖²`.
    pub terminal_target: f64,
    /// Extra runs with `epsilon` divided by `continuation_factor` while the goal is missed.
    pub continuation_steps: usize,
    pub continuation_factor: f64,
}

impl Default for HumConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            penalty: PenaltyMode::Quadratic,
            delta: 1e-8,
            tol_grad: 1e-8,
            max_iters: 500,
            terminal_target: 1e-3,
            continuation_steps: 0,
            continuation_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Consecutive distance increases that count as a stall.
    pub picard_stall: usize,
    /// Largest unknown count for the assembled fixed-point fallback.
    pub dense_limit: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            picard_max_iters: 200,
            picard_stall: 5,
            dense_limit: 2048,
            cg_tol: 1e-10,
            cg_max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilityConfig {
    pub samples: usize,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self { samples: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FollowerMode {
    Zero,
    Nash,
}

/// Deterministic constant leaders for the `forward` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub followers: FollowerMode,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            u1: 0.0,
            u2: 0.0,
            u3: 0.0,
            followers: FollowerMode::Nash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 20240601 }
    }
}
