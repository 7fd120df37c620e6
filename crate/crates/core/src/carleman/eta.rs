//! The auxiliary spatial profile `η`: positive inside, zero on the boundary,
//! with its only critical point at the centre of the domain.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{GeometryKind, Region, SpatialMesh};

/// Discrete checks of the profile's defining properties.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaCertificate {
    pub positive_inside: bool,
    pub zero_on_boundary: bool,
    /// Smallest discrete gradient magnitude over nodes outside `G′`
    /// (rectangle corners excluded, where every profile vanishing on both
    /// edges has zero gradient).
    pub min_gradient_outside: f64,
    pub max_value: f64,
}

impl EtaCertificate {
    pub fn passes(&self) -> bool {
        self.positive_inside && self.zero_on_boundary && self.min_gradient_outside > 0.0
    }
}

fn profile(mesh: &SpatialMesh, p: &[f64; 2]) -> f64 {
    let dom = mesh.domain();
    let mut v = match mesh.kind() {
        GeometryKind::Interval => 1.0,
        GeometryKind::Rectangle => 4.0,
    };
    for (x, &(a, b)) in p.iter().zip(&dom.bounds) {
        v *= (x - a) * (b - x) / ((b - a) * (b - a));
    }
    v
}

/// Builds `η` on every node; fails when its critical point is not inside `gprime`.
pub fn build_eta(mesh: &SpatialMesh, gprime: &Region) -> Result<(Vec<f64>, EtaCertificate)> {
    let centre = mesh.domain().center();
    if gprime.bounds.len() != mesh.kind().dimension() {
        return Err(Error::Construction(format!(
            "G' needs {} extent pairs",
            mesh.kind().dimension()
        )));
    }
    if !gprime.contains_point_strictly(&centre) {
        return Err(Error::Construction(format!(
            "critical point of eta at {:?} lies outside G' {:?}: the gradient of eta must not vanish off G'",
            &centre[..mesh.kind().dimension()],
            gprime.bounds
        )));
    }
    let eta: Vec<f64> = mesh.coords().iter().map(|p| profile(mesh, p)).collect();

    let ni = mesh.n_interior();
    let last = mesh.nodes_per_direction() - 1;
    let lookup: HashMap<[usize; 2], usize> = (0..mesh.ndof()).map(|d| (mesh.grid_index(d), d)).collect();
    let spacing = mesh.spacing();
    let dims = mesh.kind().dimension();
    let derivative = |d: usize, axis: usize| -> f64 {
        let g = mesh.grid_index(d);
        let shifted = |delta: isize| {
            let mut q = g;
            q[axis] = (g[axis] as isize + delta) as usize;
            eta[lookup[&q]]
        };
        let h = spacing[axis];
        if g[axis] == 0 {
            (shifted(1) - eta[d]) / h
        } else if g[axis] == last {
            (eta[d] - shifted(-1)) / h
        } else {
            (shifted(1) - shifted(-1)) / (2.0 * h)
        }
    };
    let mut min_grad = f64::INFINITY;
    for d in 0..mesh.ndof() {
        if gprime.contains(&mesh.coords()[d]) {
            continue;
        }
        let g = mesh.grid_index(d);
        let corner = dims == 2 && (g[0] == 0 || g[0] == last) && (g[1] == 0 || g[1] == last);
        if corner {
            continue;
        }
        let norm = (0..dims).map(|a| derivative(d, a).powi(2)).sum::<f64>().sqrt();
        min_grad = min_grad.min(norm);
    }
    let cert = EtaCertificate {
        positive_inside: eta[..ni].iter().all(|&v| v > 0.0),
        zero_on_boundary: eta[ni..].iter().all(|&v| v.abs() < 1e-15),
        min_gradient_outside: min_grad,
        max_value: eta.iter().copied().fold(0.0, f64::max),
    };
    Ok((eta, cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_mesh;

    #[test]
    fn unit_interval_values() {
        let mesh = build_mesh(GeometryKind::Interval, 11, &Region::interval(0.0, 1.0)).unwrap();
        let (eta, cert) = build_eta(&mesh, &Region::interval(0.45, 0.55)).unwrap();
        let at = |x: f64| {
            let d = mesh.coords().iter().position(|p| (p[0] - x).abs() < 1e-12).unwrap();
            eta[d]
        };
        assert_eq!(at(0.0), 0.0);
        assert_eq!(at(1.0), 0.0);
        assert!((at(0.5) - 0.25).abs() < 1e-15);
        assert!(cert.passes(), "{cert:?}");
    }

    #[test]
    fn off_centre_gprime_fails() {
        let mesh = build_mesh(GeometryKind::Interval, 11, &Region::interval(0.0, 1.0)).unwrap();
        let err = build_eta(&mesh, &Region::interval(0.1, 0.2)).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
        assert!(err.to_string().contains("critical point"));
    }

    #[test]
    fn rectangle_certificate() {
        let mesh = build_mesh(GeometryKind::Rectangle, 9, &Region::new(vec![(0.0, 1.0), (0.0, 2.0)])).unwrap();
        let (_, cert) = build_eta(&mesh, &Region::new(vec![(0.4, 0.6), (0.8, 1.2)])).unwrap();
        assert!(cert.passes(), "{cert:?}");
        assert!((cert.max_value - 0.25).abs() < 1e-12);
    }
}
