//! Harvest of healthy hosts, its linearization around the disease-free
//! state, and the closed forms available for constant refuges.

use std::fmt::Write as _;

use crate::discretize::solve_helmholtz_neumann;
use crate::dynamics::{fmt17, Simulation, State, Stepper, StepperConfig};
use crate::error::{Error, Result};
use crate::model::{Field, ModelParams, Refuge, SpatialCoeffs};
use crate::spectral::{decay_rate_from_series, principal_eigenpair};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestOptions {
    /// Stop once `max V_i` falls below `eps_tail * max V_i(0)`.
    pub eps_tail: f64,
    pub t_max: f64,
    /// Trailing fraction of the run used to fit the decay rate.
    pub fit_fraction: f64,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        Self {
            eps_tail: 1e-6,
            t_max: 1e3,
            fit_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestReport {
    pub eta: f64,
    /// Harvest from the truncated integral only.
    pub eta_truncated: f64,
    pub t_used: f64,
    /// `V_i(T) / lambda_eff`.
    pub tail_estimate: Field,
    /// `int_0^T V_i` plus the tail.
    pub j_total: Field,
    /// `int_0^T (V_i + V_s)` plus its own exponential tail.
    pub jv_total: Field,
    pub lambda_eff: f64,
    pub lambda1: f64,
    pub host_integral: f64,
    pub converged: bool,
}

impl HarvestReport {
    pub fn csv_header() -> &'static str {
        "eta,eta_truncated,T_used,lambda_eff,converged"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            fmt17(self.eta),
            fmt17(self.eta_truncated),
            fmt17(self.t_used),
            fmt17(self.lambda_eff),
            self.converged
        )
    }

    /// Flat `key=value` record.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "eta={}", fmt17(self.eta));
        let _ = writeln!(s, "eta_truncated={}", fmt17(self.eta_truncated));
        let _ = writeln!(s, "T_used={}", fmt17(self.t_used));
        let _ = writeln!(s, "lambda_eff={}", fmt17(self.lambda_eff));
        let _ = writeln!(s, "lambda1={}", fmt17(self.lambda1));
        let _ = writeln!(s, "host_integral={}", fmt17(self.host_integral));
        let _ = writeln!(s, "converged={}", self.converged);
        s
    }
}

/// Harvest of the full system.
pub fn compute_harvest(
    initial: State,
    c: &SpatialCoeffs,
    p: &ModelParams,
    cfg: StepperConfig,
    opts: &HarvestOptions,
) -> Result<HarvestReport> {
    let stepper = Stepper::full(c, p, cfg)?;
    harvest_with(&stepper, initial, opts)
}

/// Harvest of whichever system `stepper` integrates.
pub fn harvest_with(stepper: &Stepper, initial: State, opts: &HarvestOptions) -> Result<HarvestReport> {
    let p = stepper.params();
    let lambda1 = principal_eigenpair(&stepper.potential(), p.sigma_v)?.lambda1;
    let host = stepper.host();
    let vi0_max = initial.infected_vectors.max();
    let threshold = opts.eps_tail * vi0_max;
    let stride = stepper.config().stride.max(1);
    let mut sim = Simulation::new(stepper, initial)?.with_history_stride(stride);
    let target = sim.steps_to(opts.t_max);
    let mut reached = vi0_max <= 0.0;
    while !reached && sim.steps() < target {
        sim.advance()?;
        reached = sim.state().infected_vectors.max() < threshold;
    }
    let t_used = sim.time();
    let j = sim.cumulative_infected();
    let jv = sim.cumulative_vectors();
    let state = sim.state();

    let mut times = sim.step_times.clone();
    let mut max_vi = sim.max_infected.clone();
    let mut max_v = sim.max_vectors.clone();
    if times.last() != Some(&t_used) {
        times.push(t_used);
        max_vi.push(state.infected_vectors.max());
        max_v.push(state.total_vectors().max());
    }
    let window = (t_used * (1.0 - opts.fit_fraction), t_used);
    let fit = |values: &[f64]| {
        if t_used <= 0.0 {
            return None;
        }
        decay_rate_from_series(&times, values, window)
            .ok()
            .filter(|r| *r > 0.0)
    };
    let lambda_eff = fit(&max_vi);
    let lambda_v = fit(&max_v);

    let mut converged = reached && lambda1 > 0.0;
    let tail_estimate = match lambda_eff {
        Some(rate) if lambda1 > 0.0 => state.infected_vectors.scale(1.0 / rate),
        _ => {
            if vi0_max > 0.0 {
                converged = false;
            }
            Field::zeros(*state.grid())
        }
    };
    if vi0_max <= 0.0 {
        converged = true;
    }
    let j_total = j.add(&tail_estimate)?;
    let jv_total = match lambda_v {
        Some(rate) if lambda1 > 0.0 => jv.axpy(1.0 / rate, &state.total_vectors())?,
        _ => jv,
    };
    let beta = p.beta_vh;
    let eta = host.zip_map(&j_total, |h, jj| h * (-beta * jj).exp())?.integrate();
    let eta_truncated = host.zip_map(&j, |h, jj| h * (-beta * jj).exp())?.integrate();
    if !converged {
        log::warn!("harvest not converged at T = {t_used} (lambda1 = {lambda1})");
    }
    Ok(HarvestReport {
        eta,
        eta_truncated,
        t_used,
        tail_estimate,
        j_total,
        jv_total,
        lambda_eff: lambda_eff.unwrap_or(0.0),
        lambda1,
        host_integral: host.integrate(),
        converged,
    })
}

/// Solution of `-sigma_V phi'' + (xi + m R) phi = 1` with Neumann closure.
pub fn phi_r(refuge: &Refuge, p: &ModelParams) -> Result<Field> {
    solve_with_refuge(refuge, p, &Field::constant(*refuge.grid(), 1.0))
}

/// Solution of `-sigma_V u'' + (xi + m R) u = rhs`.
pub fn solve_with_refuge(refuge: &Refuge, p: &ModelParams, rhs: &Field) -> Result<Field> {
    let (xi, m) = (p.xi(), p.m());
    let pot = refuge.field().map(|r| xi + m * r);
    solve_helmholtz_neumann(&pot, rhs, p.sigma_v)
}

pub(crate) fn require_positive_m(p: &ModelParams) -> Result<f64> {
    let m = p.m();
    if !(m > 0.0) {
        return Err(Error::TrivialRegime { m });
    }
    Ok(m)
}

/// Linearized harvest
/// `H0 (|Omega| - k int R) + (beta H0 k / m) int V - beta H0 (1 + k xi / m) int phi_R V`
/// with `k` the host-loss fraction.
pub fn eta_l(refuge: &Refuge, vi0: &Field, p: &ModelParams) -> Result<f64> {
    let phi = phi_r(refuge, p)?;
    eta_l_with_phi(refuge, vi0, p, &phi)
}

pub(crate) fn eta_l_with_phi(refuge: &Refuge, vi0: &Field, p: &ModelParams, phi: &Field) -> Result<f64> {
    let m = require_positive_m(p)?;
    let (xi, k, h0, beta) = (p.xi(), p.host_loss, p.h0, p.beta_vh);
    let measure = refuge.grid().measure();
    let int_r = refuge.field().integrate();
    let int_v = vi0.integrate();
    let int_phi_v = phi.dot(vi0)?;
    Ok(h0 * (measure - k * int_r) + beta * h0 * k / m * int_v - beta * h0 * (1.0 + k * xi / m) * int_phi_v)
}

/// Constant-refuge, constant-data form
/// `H0 |Omega| (1 - k R) (1 - beta V / (xi + m R))`.
pub fn eta_l_constant(r: f64, vi0: f64, p: &ModelParams, measure: f64) -> f64 {
    let (xi, m) = (p.xi(), p.m());
    p.h0 * measure * (1.0 - p.host_loss * r) * (1.0 - p.beta_vh * vi0 / (xi + m * r))
}

/// Constants of the aggregated-vector closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormParams {
    /// `h rP_f / s_P - rV_f`.
    pub xi_tilde: f64,
    /// `h (rP_r - rP_f) / s_P - rV_r + rV_f`.
    pub m_tilde: f64,
}

impl ClosedFormParams {
    pub fn new(p: &ModelParams) -> Self {
        Self {
            xi_tilde: p.h * p.rp_f / p.s_p - p.rv_f(),
            m_tilde: p.h * (p.rp_r - p.rp_f) / p.s_p - p.rv_r() + p.rv_f(),
        }
    }

    /// `m_hat = h r_P / s_P - r_V` at a constant refuge level.
    pub fn m_hat(&self, r: f64) -> f64 {
        self.xi_tilde + self.m_tilde * r
    }
}

/// Sub-estimate of the harvest for constant data with predators at
/// equilibrium and no predation gain.
pub fn eta_v_constant(r: f64, v0: f64, p: &ModelParams, measure: f64) -> Result<f64> {
    let m_hat = ClosedFormParams::new(p).m_hat(r);
    if !(m_hat > 0.0) {
        return Err(Error::Domain(format!("xi~ + m~ R = {m_hat} <= 0 at R = {r}")));
    }
    let base = 1.0 + p.s_v * v0 / m_hat;
    Ok(p.h0 * measure * (1.0 - p.host_loss * r) * base.powf(-p.beta_vh / p.s_v))
}

/// Maximizer over constant `R` of [`eta_v_constant`], clamped to `[0, 1]`.
///
/// Root of `m~^2 R^2 + m~ (2 xi~ + s V + beta V) R + xi~^2 + s V xi~ - beta V m~ / k = 0`.
pub fn r_opt_v(v0: f64, p: &ModelParams) -> Result<f64> {
    let cf = ClosedFormParams::new(p);
    let (xi, m) = (cf.xi_tilde, cf.m_tilde);
    if m == 0.0 {
        return Err(Error::Domain("m~ = 0: eta_V does not depend on the refuge through m_hat".into()));
    }
    let sv = p.s_v * v0;
    let bv = p.beta_vh * v0;
    let a = m * m;
    let b = m * (2.0 * xi + sv + bv);
    let c = xi * xi + sv * xi - bv * m / p.host_loss;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::ComplexRoot { discriminant: disc });
    }
    let root = (-b + disc.sqrt()) / (2.0 * a);
    Ok(root.clamp(0.0, 1.0))
}

/// Optimal constant refuge for a spatially homogeneous infection
/// `((sqrt(beta E (m + k xi) / k) - xi) / m)^+`.
pub fn r_opt_const(e_vi0: f64, p: &ModelParams) -> Result<f64> {
    let m = require_positive_m(p)?;
    if !(e_vi0 >= 0.0) {
        return Err(Error::Domain(format!("mean infected load {e_vi0} < 0")));
    }
    let xi = p.xi();
    let k = p.host_loss;
    let s = (p.beta_vh * e_vi0 * (m + k * xi) / k).sqrt();
    Ok(((s - xi) / m).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_coeffs, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams {
            beta_vh: 0.3,
            beta_hv: 0.2,
            sigma_v: 0.1,
            sigma_p: 0.1,
            alpha: 0.2,
            s_v: 0.5,
            s_p: 1.0,
            h: 1.0,
            gamma: 0.2,
            h0: 10.0,
            rp_r: 2.0,
            rp_f: 1.0,
            bv_r: 1.0,
            bv_f: 1.0,
            dv_r: 0.6,
            dv_f: 0.5,
            host_loss: 1.0,
        }
    }

    #[test]
    fn phi_constant_and_bounds() {
        let p = params();
        let g = Grid::new(1.0, 64).unwrap();
        let phi = phi_r(&Refuge::zeros(g), &p).unwrap();
        assert!(phi.values().iter().all(|v| (v - 1.0 / p.xi()).abs() < 1e-13));
        let r = Refuge::constant(g, 0.4).unwrap();
        let phi = phi_r(&r, &p).unwrap();
        assert!(phi.values().iter().all(|v| (v - 1.0 / (p.xi() + 0.4 * p.m())).abs() < 1e-13));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r = Refuge::new(Field::new(g, vals).unwrap()).unwrap();
            let phi = phi_r(&r, &p).unwrap();
            assert!(phi.min() > 0.0 && phi.max() <= 1.0 / p.xi() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn phi_is_antitone_in_refuge() {
        let p = params();
        let g = Grid::new(1.0, 48).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..0.6)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(0.0..0.4)).collect();
            let p1 = phi_r(&Refuge::new(Field::new(g, a).unwrap()).unwrap(), &p).unwrap();
            let p2 = phi_r(&Refuge::new(Field::new(g, b).unwrap()).unwrap(), &p).unwrap();
            for (x, y) in p1.values().iter().zip(p2.values()) {
                assert!(x >= y);
            }
        }
    }

    #[test]
    fn eta_l_degenerate_cases() {
        let p = params();
        let g = Grid::new(1.0, 32).unwrap();
        let r = Refuge::from_fn_clipped(g, |x| 0.5 + 0.3 * x);
        let e = eta_l(&r, &Field::zeros(g), &p).unwrap();
        assert!((e - p.h0 * (2.0 - r.field().integrate())).abs() < 1e-12);
        assert_eq!(eta_l_constant(1.0, 0.7, &p, 2.0), 0.0);
        assert!((eta_l_constant(0.3, 0.0, &p, 2.0) - p.h0 * 2.0 * 0.7).abs() < 1e-12);
        let mut q = p;
        q.dv_r = 0.0;
        q.rp_r = 0.5;
        assert!(matches!(eta_l(&r, &Field::zeros(g), &q), Err(Error::TrivialRegime { .. })));
    }

    #[test]
    fn eta_l_matches_constant_form_with_host_loss() {
        let mut p = params();
        p.host_loss = 0.35;
        let g = Grid::new(1.5, 40).unwrap();
        for &(r, v) in &[(0.0, 0.5), (0.3, 1.2), (0.9, 0.01)] {
            let a = eta_l(&Refuge::constant(g, r).unwrap(), &Field::constant(g, v), &p).unwrap();
            let b = eta_l_constant(r, v, &p, 3.0);
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn biological_remark_values() {
        let p = ModelParams::biological();
        let e0 = eta_l_constant(0.0, 1.0, &p, 2.0);
        assert!((e0 - 1058823.0 * (1.0 - 0.0448 / 1.58)).abs() < 1e-6);
        assert!((e0 - 1.0288e6).abs() / 1.0288e6 < 1e-4);
        assert!((r_opt_v(1.0, &p).unwrap() - 0.19).abs() < 0.005);
        assert_eq!(r_opt_const(1.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn eta_v_closed_form_properties() {
        let p = params();
        assert!((eta_v_constant(0.4, 0.0, &p, 2.0).unwrap() - p.h0 * 2.0 * 0.6).abs() < 1e-12);
        assert_eq!(eta_v_constant(1.0, 0.5, &p, 2.0).unwrap(), 0.0);
        let cf = ClosedFormParams::new(&p);
        for &v0 in &[1e-2, 1e-3, 1e-4] {
            let exact = eta_v_constant(0.3, v0, &p, 2.0).unwrap();
            let taylor = p.h0 * 2.0 * 0.7 * (1.0 - p.beta_vh * v0 / cf.m_hat(0.3));
            assert!(((exact - taylor) / exact).abs() < 10.0 * v0 * v0);
        }
        let mut bad = p;
        bad.rp_f = 0.1;
        assert!(eta_v_constant(0.0, 1.0, &bad, 2.0).is_err());
    }

    #[test]
    fn r_opt_v_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 20 {
            let mut p = params();
            p.beta_vh = rng.gen_range(0.1..3.0);
            p.s_v = rng.gen_range(0.05..1.0);
            p.host_loss = rng.gen_range(0.1..1.0);
            let v0 = rng.gen_range(0.0..3.0);
            let r = r_opt_v(v0, &p).unwrap();
            let k = p.host_loss;
            let scan = (0..=2000)
                .map(|i| i as f64 / 2000.0)
                .filter(|r| 1.0 - k * r > 0.0)
                .map(|r| (r, eta_v_constant(r, v0, &p, 2.0).unwrap()))
                .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
            assert!((scan.0 - r).abs() <= 1e-3, "scan {} vs {r}", scan.0);
            checked += 1;
        }
        assert_eq!(r_opt_v(0.0, &params()).unwrap(), 0.0);
    }

    #[test]
    fn r_opt_const_cases() {
        let p = params();
        assert_eq!(r_opt_const(0.0, &p).unwrap(), 0.0);
        let (xi, m) = (p.xi(), p.m());
        let e = xi * xi / (p.beta_vh * (xi + m));
        assert!(r_opt_const(e, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn harvest_without_infection_is_host_integral() {
        let p = params();
        let g = Grid::new(1.0, 32).unwrap();
        let r = Refuge::half_indicator(g);
        let c = derive_coeffs(&p, &r).unwrap();
        let s0 = State::new(Field::zeros(g), Field::constant(g, 0.5), c.predator_equilibrium(&p)).unwrap();
        let rep = compute_harvest(s0, &c, &p, StepperConfig::default(), &HarvestOptions::default()).unwrap();
        assert_eq!(rep.eta, c.host.integrate());
        assert_eq!(rep.t_used, 0.0);
        assert!(rep.converged);
    }

    #[test]
    fn full_refuge_has_zero_harvest() {
        let p = params();
        let g = Grid::new(1.0, 16).unwrap();
        let r = Refuge::constant(g, 1.0).unwrap();
        let c = derive_coeffs(&p, &r).unwrap();
        let s0 = State::new(Field::constant(g, 0.5), Field::zeros(g), c.predator_equilibrium(&p)).unwrap();
        let rep = compute_harvest(s0, &c, &p, StepperConfig::with_dt(1e-2), &HarvestOptions::default()).unwrap();
        assert_eq!(rep.eta, 0.0);
    }

    #[test]
    fn harvest_lies_in_range_and_tail_is_small() {
        let p = params();
        let g = Grid::new(1.0, 40).unwrap();
        let r = Refuge::from_fn_clipped(g, |x| 0.5 - 0.5 * x);
        let c = derive_coeffs(&p, &r).unwrap();
        let vi0 = Field::from_fn(g, |x| (-4.0 * x * x).exp());
        let s0 = State::new(vi0, Field::zeros(g), c.predator_equilibrium(&p)).unwrap();
        let rep = compute_harvest(s0, &c, &p, StepperConfig::with_dt(2e-3), &HarvestOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.eta > 0.0 && rep.eta < rep.host_integral);
        assert!(rep.eta <= rep.eta_truncated);
        assert!(rep.tail_estimate.min() >= 0.0);
        assert!((rep.eta - rep.eta_truncated).abs() < 1e-4 * rep.eta);
        assert!(rep.to_record().contains("converged=true"));
    }
}
