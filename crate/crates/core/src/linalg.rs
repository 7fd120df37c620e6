//! Small iterative and dense solvers shared by the coupled systems and the
//! follower game.

use nalgebra::{DMatrix, DVector};

use crate::config::SolverConfig;
use crate::error::{Error, Result};

pub(crate) fn weighted_norm(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradient for an operator symmetric in `⟨a, b⟩ = Σ w a b`.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &[f64],
    x0: Option<&[f64]>,
    w: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = rhs.len();
    let b_norm = weighted_norm(w, rhs);
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    if b_norm == 0.0 && x0.is_none() {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let scale = b_norm.max(f64::MIN_POSITIVE);
    let ax = apply(&x)?;
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = weighted_dot(w, &r, &r);
    for it in 0..=max_iters {
        let res = rr.sqrt() / scale;
        if res <= tol || rr == 0.0 {
            return Ok(CgOutcome {
                x,
                iterations: it,
                relative_residual: res,
            });
        }
        if it == max_iters {
            return Err(Error::CoercivityFailure {
                iterations: max_iters,
                residual: res,
            });
        }
        let ap = apply(&p)?;
        let pap = weighted_dot(w, &p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CoercivityFailure {
                iterations: it,
                residual: res,
            });
        }
        let a = rr / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rr_new = weighted_dot(w, &r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    unreachable!("loop returns on its last pass")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Successive distances `‖x_{m+1} - x_m‖`.
    pub history: Vec<f64>,
    pub used_direct: bool,
}

/// Solves `x = T(x)` for an affine `T` by assembling `I - A` column by column.
pub fn affine_fixed_point_direct<F>(map: F, n: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let zero = vec![0.0; n];
    let b = map(&zero)?;
    let cols: Vec<Result<Vec<f64>>> = crate::exec::map_range(n, |j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        map(&e)
    });
    let mut m = DMatrix::<f64>::identity(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        let col = col?;
        for i in 0..n {
            m[(i, j)] -= col[i] - b[i];
        }
    }
    m.lu()
        .solve(&DVector::from_vec(b))
        .map(|v| v.as_slice().to_vec())
        .ok_or_else(|| Error::Numerical("assembled fixed-point system is singular".into()))
}

/// Picard iteration with a relative stopping rule, falling back to the
/// assembled solve on stall or budget exhaustion when small enough.
pub fn picard<F>(map: F, x0: Vec<f64>, w: &[f64], settings: &SolverConfig) -> Result<FixedPointOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = x0.len();
    let mut x = x0;
    let mut history = Vec::new();
    let mut increases = 0usize;
    let mut stalled = false;
    for it in 1..=settings.picard_max_iters {
        let next = map(&x)?;
        let diff: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dist = weighted_norm(w, &diff);
        let scale = weighted_norm(w, &next).max(f64::MIN_POSITIVE);
        if !dist.is_finite() {
            stalled = true;
            history.push(dist);
            break;
        }
        if history.last().is_some_and(|&prev| dist > prev) {
            increases += 1;
        } else {
            increases = 0;
        }
        history.push(dist);
        x = next;
        if dist <= settings.picard_tol * scale {
            return Ok(FixedPointOutcome {
                x,
                iterations: it,
                history,
                used_direct: false,
            });
        }
        if increases >= settings.picard_stall {
            stalled = true;
            break;
        }
    }
    if n <= settings.dense_limit {
        let x = affine_fixed_point_direct(&map, n)?;
        return Ok(FixedPointOutcome {
            x,
            iterations: history.len(),
            history,
            used_direct: true,
        });
    }
    if stalled {
        Err(Error::Diverged { history })
    } else {
        Err(Error::Resource(format!(
            "fixed-point iteration used its {} iterations (last distance {:e}) and {n} unknowns exceed the direct-solve limit {}",
            settings.picard_max_iters,
            history.last().copied().unwrap_or(f64::NAN),
            settings.dense_limit
        )))
    }
}
