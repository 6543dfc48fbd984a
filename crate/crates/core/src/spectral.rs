//! Principal eigenpair of `-sigma Laplacian + potential` under Neumann
//! closure, and empirical exponential decay rates.

use crate::discretize::helmholtz_matrix;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::model::Field;

pub const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Positive eigenfunction normalized so that its minimum is 1.
    pub phi: Field,
    pub iterations: usize,
    pub residual: f64,
}

/// Smallest eigenvalue of the discrete operator by shifted inverse power
/// iteration.
pub fn principal_eigenpair(potential: &Field, sigma: f64) -> Result<EigenPair> {
    let g = *potential.grid();
    let n = g.n_cells;
    let pot = potential.values();
    let shift = potential.min() - 1.0;
    let shifted: Vec<f64> = pot.iter().map(|v| v - shift).collect();
    let a = helmholtz_matrix(pot, g.dx(), sigma);
    let factor = helmholtz_matrix(&shifted, g.dx(), sigma).factor()?;

    let scale = a.diag.iter().fold(0.0f64, |m, d| m.max(d.abs())) + 1.0;
    let mut x = vec![1.0; n];
    let mut ax = vec![0.0; n];
    for it in 1..=MAX_ITERATIONS {
        factor.solve_in_place(&mut x);
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonConvergence {
                what: "inverse power iteration",
                iterations: it,
            });
        }
        let sign = if x[0] < 0.0 { -1.0 } else { 1.0 };
        for v in x.iter_mut() {
            *v *= sign / norm;
        }
        a.apply_into(&x, &mut ax);
        let lambda = dot(&x, &ax) / dot(&x, &x);
        let residual = ax
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (p, q)| m.max((p - lambda * q).abs()));
        if residual <= 1e-13 * scale {
            let min = x.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min > 0.0) {
                return Err(Error::Domain(format!(
                    "principal eigenvector not positive (min {min})"
                )));
            }
            let phi: Vec<f64> = x.iter().map(|v| v / min).collect();
            return Ok(EigenPair {
                lambda1: lambda,
                phi: Field::from_vec_unchecked(g, phi),
                iterations: it,
                residual: residual / min,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "inverse power iteration",
        iterations: MAX_ITERATIONS,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares slope of `-ln(max_x V_i)` over `window`.
pub fn decay_rate_estimate(traj: &Trajectory, window: (f64, f64)) -> Result<f64> {
    decay_rate_from_series(&traj.step_times, &traj.max_infected, window)
}

/// Least-squares slope of `-ln(values)` against `times` on `window`.
pub fn decay_rate_from_series(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    let (ta, tb) = window;
    let mut pts = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < ta || t > tb {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::DecayFit(format!("V_i vanished at t = {t}")));
        }
        pts.push((t, -v.ln()));
    }
    if pts.len() < 2 {
        return Err(Error::DecayFit(format!(
            "need at least two samples in [{ta}, {tb}], got {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DecayFit("window has zero length".into()));
    }
    let slope = sxy / sxx;
    let tol = 1e-10 * (1.0 + my.abs()) / (tb - ta).max(f64::MIN_POSITIVE);
    if slope < -tol {
        return Err(Error::DecayFit(format!("V_i grows on the window (rate {slope})")));
    }
    Ok(slope.max(0.0))
}
