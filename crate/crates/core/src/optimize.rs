//! Gradient of the linearized harvest with respect to the refuge, projected
//! ascent over admissible refuges, and the optimality verifiers.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;

use crate::dynamics::fmt17;
use crate::error::{Error, Result};
use crate::harvest::{eta_l, eta_l_with_phi, phi_r, r_opt_const, require_positive_m, solve_with_refuge};
use crate::model::{Field, Grid, ModelParams, Refuge};
use crate::par;
use crate::rearrange::is_symmetric_decreasing;

/// Gradient density `g` of the linearized harvest:
/// `d eta_L (R)[zeta] = int g zeta`.
pub fn grad_eta_l(refuge: &Refuge, vi0: &Field, p: &ModelParams) -> Result<Field> {
    let phi = phi_r(refuge, p)?;
    grad_with_phi(refuge, vi0, p, &phi)
}

fn grad_with_phi(refuge: &Refuge, vi0: &Field, p: &ModelParams, phi: &Field) -> Result<Field> {
    let m = require_positive_m(p)?;
    let psi = solve_with_refuge(refuge, p, vi0)?;
    let k = p.host_loss;
    let a = p.beta_vh * p.h0 * (m + k * p.xi());
    let b = -k * p.h0;
    phi.zip_map(&psi, |f, s| b + a * f * s)
}

/// `int g zeta`.
pub fn directional_derivative(refuge: &Refuge, vi0: &Field, zeta: &Field, p: &ModelParams) -> Result<f64> {
    grad_eta_l(refuge, vi0, p)?.dot(zeta)
}

/// Clips into `[0, 1]`.
pub fn project_box(f: &Field) -> Refuge {
    Refuge::clipped(f)
}

/// Euclidean projection onto `{0 <= R <= 1, int R = mass}`: the clip of
/// `f + tau` for the unique level `tau` that meets the mass.
pub fn project_mass_box(f: &Field, mass: f64) -> Result<Refuge> {
    let g = *f.grid();
    let dx = g.dx();
    let measure = g.measure();
    if !(0.0..=measure).contains(&mass) {
        return Err(Error::InvalidParameter {
            name: "mass",
            reason: format!("must lie in [0, {measure}], got {mass}"),
        });
    }
    let v = f.values();
    let in_box = v.iter().all(|x| (0.0..=1.0).contains(x));
    if in_box && (f.integrate() - mass).abs() <= 1e-14 * measure {
        return Ok(Refuge::clipped(f));
    }
    let target = mass / dx;
    let mass_at = |tau: f64| v.iter().map(|x| (x + tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = -f.max();
    let mut hi = 1.0 - f.min();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    // Solve exactly on the free set identified by the bisection.
    let tau0 = 0.5 * (lo + hi);
    let (mut fixed, mut free_sum, mut free) = (0.0, 0.0, 0usize);
    for x in v {
        let y = x + tau0;
        if y >= 1.0 {
            fixed += 1.0;
        } else if y > 0.0 {
            free_sum += x;
            free += 1;
        }
    }
    let tau = if free > 0 {
        let t = (target - fixed - free_sum) / free as f64;
        if t >= lo - 1e-12 && t <= hi + 1e-12 {
            t
        } else {
            tau0
        }
    } else {
        tau0
    };
    let out = Field::new(g, v.iter().map(|x| (x + tau).clamp(0.0, 1.0)).collect())?;
    Refuge::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Initial step; `None` means `1 / (k H0)`.
    pub step: Option<f64>,
    pub max_iterations: usize,
    /// Stop when the sup norm of the projected gradient step falls below
    /// this value.
    pub grad_tol: f64,
    /// Target `int R`, if constrained.
    pub mass: Option<f64>,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            step: None,
            max_iterations: 5000,
            grad_tol: 1e-10,
            mass: None,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub refuge: Refuge,
    pub eta_l: f64,
    pub history: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cells at the lower bound.
    pub active_lower: usize,
    /// Cells at the upper bound.
    pub active_upper: usize,
}

impl OptResult {
    pub fn refuge_csv(&self) -> String {
        let g = self.refuge.grid();
        let mut s = String::from("x,R\n");
        for (j, r) in self.refuge.values().iter().enumerate() {
            let _ = writeln!(s, "{},{}", fmt17(g.center(j)), fmt17(*r));
        }
        s
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("iter,eta_L,grad_norm\n");
        for (i, (e, g)) in self.history.iter().zip(&self.grad_norms).enumerate() {
            let _ = writeln!(s, "{i},{},{}", fmt17(*e), fmt17(*g));
        }
        s
    }
}

/// Projected gradient ascent on the linearized harvest with
/// Barzilai-Borwein trial steps and monotone Armijo backtracking.
pub fn projected_ascent(r0: &Refuge, vi0: &Field, p: &ModelParams, cfg: &OptConfig) -> Result<OptResult> {
    require_positive_m(p)?;
    r0.field().check_same_grid(vi0)?;
    let unit = 1.0 / (p.host_loss * p.h0);
    let project = |f: &Field| -> Result<Refuge> {
        match cfg.mass {
            Some(m) => project_mass_box(f, m),
            None => Ok(project_box(f)),
        }
    };
    let dx = vi0.grid().dx();
    let ip = |a: &Field, b: &Field| a.dot(b).expect("same grid");

    let mut r = project(r0.field())?;
    let mut phi = phi_r(&r, p)?;
    let mut f = eta_l_with_phi(&r, vi0, p, &phi)?;
    let mut g = grad_with_phi(&r, vi0, p, &phi)?;
    let mut step = cfg.step.unwrap_or(unit);
    let mut history = vec![f];
    let pg_norm = |r: &Refuge, g: &Field| -> Result<f64> {
        let trial = project(&r.field().axpy(unit, g)?)?;
        Ok(trial.field().sub(r.field())?.sup_norm())
    };
    let mut gn = pg_norm(&r, &g)?;
    let mut grad_norms = vec![gn];
    let mut converged = gn <= cfg.grad_tol;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = project(&r.field().axpy(t, &g)?)?;
            let d = cand.field().sub(r.field())?;
            let phi_c = phi_r(&cand, p)?;
            let f_c = eta_l_with_phi(&cand, vi0, p, &phi_c)?;
            if f_c >= f + cfg.armijo * ip(&g, &d) {
                accepted = Some((cand, phi_c, f_c, d));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, phi_c, f_c, s)) = accepted else {
            // no ascent possible at rounding level
            converged = gn <= cfg.grad_tol.max(1e-8);
            break;
        };
        let g_c = grad_with_phi(&cand, vi0, p, &phi_c)?;
        let y = g_c.sub(&g)?;
        let sy = ip(&s, &y);
        let ss = ip(&s, &s);
        step = if sy < 0.0 && ss > 0.0 { (ss / -sy).min(1e6 * unit) } else { unit };
        r = cand;
        phi = phi_c;
        f = f_c;
        g = g_c;
        gn = pg_norm(&r, &g)?;
        history.push(f);
        grad_norms.push(gn);
        converged = gn <= cfg.grad_tol || s.sup_norm() == 0.0 && dx > 0.0 && gn <= cfg.grad_tol.max(1e-8);
    }
    let _ = phi;
    if !converged {
        log::warn!("projected ascent stopped after {iterations} iterations, grad norm {gn:e}");
    }
    let active_lower = r.values().iter().filter(|&&v| v <= 0.0).count();
    let active_upper = r.values().iter().filter(|&&v| v >= 1.0).count();
    Ok(OptResult {
        refuge: r,
        eta_l: f,
        history,
        grad_norms,
        grad_norm: gn,
        iterations,
        converged,
        active_lower,
        active_upper,
    })
}

/// Outcome of [`cosine_perturbation_gain`].
#[derive(Debug, Clone, PartialEq)]
pub struct CosineGain {
    /// First variation of `phi_R` in the direction `cos(pi x / L)`.
    pub u: Field,
    /// `eta_L(R + eps cos) - eta_L(R)`.
    pub gain: f64,
    /// `int u V_i0`.
    pub int_u_v: f64,
    pub eps: f64,
}

/// Perturbs a constant refuge by `eps cos(pi x / L)` and reports the
/// closed-form first variation of `phi_R` and the resulting change in the
/// linearized harvest. `eps` defaults to `min(R, 1 - R) / 2`.
pub fn cosine_perturbation_gain(
    r_bar: f64,
    eps: Option<f64>,
    vi0: &Field,
    p: &ModelParams,
) -> Result<CosineGain> {
    let m = require_positive_m(p)?;
    if !(r_bar > 0.0 && r_bar < 1.0) {
        return Err(Error::InvalidParameter {
            name: "r_bar",
            reason: format!("must lie in (0, 1), got {r_bar}"),
        });
    }
    let scale = vi0.sup_norm().max(f64::MIN_POSITIVE);
    if !is_symmetric_decreasing(vi0.values(), 1e-12 * scale) {
        return Err(Error::Domain("V_i0 is not symmetric decreasing".into()));
    }
    let eps = eps.unwrap_or(0.5 * r_bar.min(1.0 - r_bar));
    if !(eps > 0.0) || r_bar + eps > 1.0 || r_bar - eps < 0.0 {
        return Err(Error::InfeasiblePerturbation { eps });
    }
    let g = *vi0.grid();
    let l = g.half_length;
    let xi = p.xi();
    let base = xi + m * r_bar;
    let k2 = p.sigma_v * (PI / l).powi(2);
    let u = Field::from_fn(g, |x| -m * (PI * x / l).cos() / (base * (base + k2)));
    let int_u_v = u.dot(vi0)?;
    let r0 = Refuge::constant(g, r_bar)?;
    let r1 = Refuge::new(Field::from_fn(g, |x| r_bar + eps * (PI * x / l).cos()))?;
    let gain = eta_l(&r1, vi0, p)? - eta_l(&r0, vi0, p)?;
    Ok(CosineGain { u, gain, int_u_v, eps })
}

/// Outcome of [`verify_constant_optimum`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantOptimumReport {
    pub r_star: f64,
    /// `int g` at the candidate optimum.
    pub grad_integral: f64,
    /// Largest `eta_L(R* + eps zeta) - eta_L(R*)` over the trials.
    pub max_increase: f64,
    /// `H0 |Omega|`.
    pub scale: f64,
    /// At a clamped optimum, whether every positive direction descends.
    pub one_sided_ok: bool,
    pub trials: usize,
    pub passed: bool,
}

/// Smooth random perturbation with a few cosine modes.
fn random_mode_field(grid: Grid, rng: &mut impl Rng, mean_zero: bool) -> Field {
    let l = grid.half_length;
    let coeffs: Vec<(f64, f64)> = (1..=4)
        .map(|k| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0) / k as f64))
        .collect();
    let c0 = if mean_zero { 0.0 } else { rng.gen_range(-1.0..1.0) };
    Field::from_fn(grid, |x| {
        c0 + coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = (k + 1) as f64 * PI * x / l;
                a * w.cos() + b * (w + 0.3).sin()
            })
            .sum::<f64>()
    })
}

/// Checks that the closed-form constant refuge for a constant infected load
/// `e_vi0` is a local maximum of the linearized harvest.
pub fn verify_constant_optimum(
    e_vi0: f64,
    grid: Grid,
    p: &ModelParams,
    trials: usize,
    seed: u64,
) -> Result<ConstantOptimumReport> {
    let r_star = r_opt_const(e_vi0, p)?;
    if r_star > 1.0 {
        return Err(Error::Domain(format!("optimal constant refuge {r_star} exceeds 1")));
    }
    let vi0 = Field::constant(grid, e_vi0);
    let rs = Refuge::constant(grid, r_star)?;
    let g = grad_eta_l(&rs, &vi0, p)?;
    let f0 = eta_l(&rs, &vi0, p)?;
    let scale = p.h0 * grid.measure();
    let clamped = r_star <= 0.0;
    let outcomes = par::try_map(&(0..trials).collect::<Vec<_>>(), |_, &i| -> Result<(f64, bool)> {
        let mut rng = par::item_rng(seed, i);
        let mut zeta = random_mode_field(grid, &mut rng, i % 2 == 0);
        if clamped {
            // only upward perturbations are admissible at R = 0
            let lo = zeta.min();
            zeta = zeta.map(|z| z - lo + 0.1);
        }
        let amp = zeta.sup_norm();
        let room = if clamped { 1.0 } else { r_star.min(1.0 - r_star) };
        let eps = 0.5 * room / amp;
        let r = Refuge::new(rs.field().axpy(eps, &zeta)?)?;
        let inc = eta_l(&r, &vi0, p)? - f0;
        let descends = !clamped || g.dot(&zeta)? < 0.0;
        Ok((inc, descends))
    })?;
    let max_increase = outcomes.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
    let one_sided_ok = outcomes.iter().all(|o| o.1);
    let grad_integral = g.integrate();
    let grad_ok = clamped || grad_integral.abs() <= 1e-8 * scale;
    let passed = grad_ok && one_sided_ok && (trials == 0 || max_increase <= 1e-10 * scale);
    Ok(ConstantOptimumReport {
        r_star,
        grad_integral,
        max_increase: if trials == 0 { 0.0 } else { max_increase },
        scale,
        one_sided_ok,
        trials,
        passed,
    })
}
