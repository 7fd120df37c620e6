//! Carleman weight families, the weighted functionals built from them and
//! the numerical observability audit.
//!
//! With `η` from [`eta::build_eta`] and `ℓ(t) = T²/4` on `(0, T/2]`,
//! `t(T - t)` afterwards:
//!
//! ```text
//! α = (e^{μη} - e^{2μ|η|∞}) / (t(T - t))     φ = e^{μη} / (t(T - t))     θ = e^{λα}
//! ᾱ = (e^{μη} - e^{2μ|η|∞}) / ℓ(t)           φ̄ = e^{μη} / ℓ(t)           θ̄ = e^{λᾱ}
//! ρ(t) = e^{-λ ᾱ*(t)},  ᾱ*(t) = min_x ᾱ(t, x)
//! ```
//!
//! All exponentials are kept as logarithms and only turned into floats
//! through [`clamped_exp`].

pub mod eta;
pub mod functional;
pub mod observability;

pub use eta::{build_eta, EtaCertificate};
pub use functional::{carleman_functional, carleman_functional_bar, CarlemanTerms};
pub use observability::{
    carleman_sanity, carleman_sides, check_observability, gaussian_terminal, observability_sides, validate_targets,
    ObservabilityReport, SampleRow, TargetValidation,
};

use crate::error::{Error, Result};
use crate::geometry::{Region, SpatialMesh};
use crate::problem::Problem;

/// `|η|∞` of the continuous profile; node values may fall short of it.
pub const ETA_SUP: f64 = 0.25;

/// `exp(x)` with `x` clamped to `[-budget, budget]`.
pub fn clamped_exp(x: f64, budget: f64) -> f64 {
    x.clamp(-budget, budget).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub lambda: f64,
    pub mu: f64,
    pub horizon: f64,
    /// `η` on every node.
    pub eta: Vec<f64>,
    /// Always [`ETA_SUP`].
    pub eta_max: f64,
    pub gprime: Region,
    pub overflow_budget: f64,
    pub certificate: EtaCertificate,
}

/// Weights at one `(t, x)`; `log_*` fields are exact, the others clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRecord {
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
    pub log_theta: f64,
    pub alpha_bar: f64,
    pub phi_bar: f64,
    pub theta_bar: f64,
    pub log_theta_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoValue {
    pub log: f64,
    pub value: f64,
}

impl WeightSet {
    pub fn new(
        mesh: &SpatialMesh,
        gprime: &Region,
        lambda: f64,
        mu: f64,
        horizon: f64,
        overflow_budget: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && mu > 0.0 && horizon > 0.0 && overflow_budget > 0.0) {
            return Err(Error::Config(
                "lambda, mu, horizon and the overflow budget must be positive".into(),
            ));
        }
        let (eta, certificate) = build_eta(mesh, gprime)?;
        Ok(Self {
            lambda,
            mu,
            horizon,
            eta_max: ETA_SUP,
            eta,
            gprime: gprime.clone(),
            overflow_budget,
            certificate,
        })
    }

    /// Weights for a problem; also checks `G′ ⊂ G0 ∩ G_d`.
    pub fn from_problem(p: &Problem) -> Result<Self> {
        let sd = &p.config.subdomains;
        let inner = sd
            .gd
            .as_ref()
            .and_then(|gd| sd.g0.intersection(gd))
            .ok_or_else(|| Error::Construction("G0 and G_d do not overlap".into()))?;
        if !inner.contains_region_strictly(&p.gprime) {
            return Err(Error::Construction(format!(
                "G' {:?} must lie strictly inside G0 ∩ G_d {:?}",
                p.gprime.bounds, inner.bounds
            )));
        }
        let w = &p.config.weights;
        Self::new(&p.mesh, &p.gprime, w.lambda, w.mu, p.tree.horizon(), w.overflow_budget)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// `ℓ(t)`, extended by `T²/4` down to `t = 0`.
    pub fn ell(&self, t: f64) -> f64 {
        let big_t = self.horizon;
        if t <= 0.5 * big_t {
            0.25 * big_t * big_t
        } else {
            t * (big_t - t)
        }
    }

    fn check_open(&self, t: f64) -> Result<()> {
        if t > 0.0 && t < self.horizon {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "weights are defined for 0 < t < {}, got t = {t}",
                self.horizon
            )))
        }
    }

    /// Weights at time `t` for a point with profile value `eta`.
    pub fn eval_weights(&self, t: f64, eta: f64) -> Result<WeightRecord> {
        self.check_open(t)?;
        let b = self.overflow_budget;
        let e = (self.mu * eta).exp();
        let top = (2.0 * self.mu * self.eta_max).exp();
        let tt = t * (self.horizon - t);
        let l = self.ell(t);
        let alpha = (e - top) / tt;
        let alpha_bar = (e - top) / l;
        let log_theta = self.lambda * alpha;
        let log_theta_bar = self.lambda * alpha_bar;
        Ok(WeightRecord {
            alpha,
            phi: e / tt,
            theta: clamped_exp(log_theta, b),
            log_theta,
            alpha_bar,
            phi_bar: e / l,
            theta_bar: clamped_exp(log_theta_bar, b),
            log_theta_bar,
        })
    }

    /// Weights at node `dof`.
    pub fn eval_at_node(&self, t: f64, dof: usize) -> Result<WeightRecord> {
        self.eval_weights(t, self.eta[dof])
    }

    /// `ᾱ*(t)`, attained where `η = 0`.
    pub fn alpha_bar_star(&self, t: f64) -> f64 {
        (1.0 - (2.0 * self.mu * self.eta_max).exp()) / self.ell(t)
    }

    /// `φ̄*(t)`, attained where `η = |η|∞`.
    pub fn phi_bar_star(&self, t: f64) -> f64 {
        (self.mu * self.eta_max).exp() / self.ell(t)
    }

    /// `ρ(t)` for `0 <= t < T`.
    pub fn eval_rho(&self, t: f64) -> Result<RhoValue> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(Error::Domain(format!(
                "rho is finite on [0, {}), got t = {t}",
                self.horizon
            )));
        }
        let log = -self.lambda * self.alpha_bar_star(t);
        Ok(RhoValue {
            log,
            value: clamped_exp(log, self.overflow_budget),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, GeometryKind};

    fn weights() -> WeightSet {
        let mesh = build_mesh(GeometryKind::Interval, 16, &Region::interval(0.0, 1.0)).unwrap();
        WeightSet::new(&mesh, &Region::interval(0.45, 0.55), 2.0, 2.0, 1.0, 500.0).unwrap()
    }

    #[test]
    fn ell_pieces() {
        let w = weights();
        assert_eq!(w.ell(0.25), 0.25);
        assert_eq!(w.ell(0.75), 0.1875);
        assert_eq!(w.ell(0.5), 0.25);
        assert_eq!(w.ell(0.5 + 1e-15), (0.5 + 1e-15) * (0.5 - 1e-15));
    }

    #[test]
    fn weights_are_negative_and_vanish_at_ends() {
        let w = weights();
        for &t in &[1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
            for &e in &[0.0, 0.1, 0.25] {
                let r = w.eval_weights(t, e).unwrap();
                assert!(r.alpha < 0.0 && r.theta < 1.0 && r.theta >= 0.0);
            }
        }
        assert!(w.eval_weights(1e-6, 0.25).unwrap().theta < 1e-100);
        assert!(w.eval_weights(1.0 - 1e-6, 0.25).unwrap().theta < 1e-100);
        assert!(matches!(w.eval_weights(0.0, 0.1), Err(Error::Domain(_))));
        assert!(matches!(w.eval_weights(1.0, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn rho_closed_form_near_horizon() {
        let w = weights();
        let t = 1.0 - 1e-3;
        let expected = 2.0 * (1.0f64.exp() - 1.0) / (t * (1.0 - t));
        let r = w.eval_rho(t).unwrap();
        assert!((r.log - expected).abs() <= 1e-12 * expected);
        assert!(r.log > 1e6f64.ln());
        assert!(r.value.is_finite());
    }

    #[test]
    fn rho_at_least_one() {
        let w = weights();
        for i in 0..100 {
            assert!(w.eval_rho(i as f64 / 100.0).unwrap().value >= 1.0);
        }
    }
}
