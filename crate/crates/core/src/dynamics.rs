//! Time integration of the host / vector / predator system and its reduced
//! and homogenized variants, plus the closed-form ODE solutions used as
//! oracles.
//!
//! Diffusion is treated with a theta scheme (Crank-Nicolson by default),
//! reactions with explicit Euler. The predator density is advanced in the
//! variable `q = P / w`, which turns the ideal-free dispersal operator into a
//! symmetric divergence-form operator with plain Neumann closure:
//!
//! ```text
//! w dq/dt = sigma_P div(kappa grad q) + w (gamma h V + a - b q) q
//! ```
//!
//! with `w = kappa = a = r_P`, `b = s_P r_P` for the full system.

use std::fmt::Write as _;

use crate::discretize::{divergence_matrix, laplacian_matrix, ThomasFactor, Tridiagonal};
use crate::error::{Error, Result};
use crate::homogenize::HomogenizedCoeffs;
use crate::model::{Field, Grid, ModelParams, SpatialCoeffs};

/// Values above this magnitude are treated as a blow-up.
pub const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub infected_hosts: Field,
    pub infected_vectors: Field,
    pub susceptible_vectors: Field,
    pub predators: Field,
    pub time: f64,
}

impl State {
    /// Initial state with no infected hosts.
    pub fn new(vi0: Field, vs0: Field, p0: Field) -> Result<Self> {
        vi0.check_same_grid(&vs0)?;
        vi0.check_same_grid(&p0)?;
        for f in [&vi0, &vs0, &p0] {
            if let Some(index) = f.values().iter().position(|&v| v < 0.0) {
                return Err(Error::Domain(format!(
                    "initial population negative at cell {index}"
                )));
            }
        }
        Ok(Self {
            infected_hosts: Field::zeros(*vi0.grid()),
            infected_vectors: vi0,
            susceptible_vectors: vs0,
            predators: p0,
            time: 0.0,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.infected_vectors.grid()
    }

    pub fn total_vectors(&self) -> Field {
        self.infected_vectors
            .add(&self.susceptible_vectors)
            .expect("state fields share a grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    CrankNicolson,
    BackwardEuler,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::CrankNicolson => 0.5,
            Scheme::BackwardEuler => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Keep every `stride`-th step as a snapshot.
    pub stride: usize,
    /// Negative undershoots larger than this (relative to the field's sup
    /// norm) are logged before clipping.
    pub clip_tol: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::CrankNicolson,
            stride: 100,
            clip_tol: 1e-8,
        }
    }
}

impl StepperConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be finite and > 0, got {}", self.dt),
            });
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter {
                name: "stride",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Predator {
    Dynamic {
        weight: Vec<f64>,
        growth: Vec<f64>,
        saturation: Vec<f64>,
        explicit: Tridiagonal,
        implicit: ThomasFactor,
    },
    Frozen {
        density: Vec<f64>,
    },
}

/// Precomputed operators for one coefficient set and one time step.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Grid,
    params: ModelParams,
    cfg: StepperConfig,
    host: Vec<f64>,
    birth: Vec<f64>,
    death: Vec<f64>,
    potential: Vec<f64>,
    vector_explicit: Tridiagonal,
    vector_implicit: ThomasFactor,
    predator: Predator,
}

impl Stepper {
    /// Stepper for the full four-population system.
    pub fn full(c: &SpatialCoeffs, p: &ModelParams, cfg: StepperConfig) -> Result<Self> {
        let rp = c.predator_growth.values();
        let saturation: Vec<f64> = rp.iter().map(|r| p.s_p * r).collect();
        let predator = dynamic_predator(*c.grid(), p, &cfg, rp, rp, rp.to_vec(), saturation)?;
        Self::build(c, p, cfg, predator)
    }

    /// Stepper with predators frozen at `r_P / s_P`.
    pub fn reduced(c: &SpatialCoeffs, p: &ModelParams, cfg: StepperConfig) -> Result<Self> {
        let density = c.predator_equilibrium(p).into_values();
        Self::build(c, p, cfg, Predator::Frozen { density })
    }

    /// Stepper for the homogenized system with spatially constant
    /// coefficients and effective predator conductivity `r_star`.
    pub fn homogenized(
        hc: &HomogenizedCoeffs,
        grid: Grid,
        p: &ModelParams,
        cfg: StepperConfig,
    ) -> Result<Self> {
        let n = grid.n_cells;
        let c = SpatialCoeffs {
            host: Field::constant(grid, hc.host),
            vector_birth: Field::constant(grid, hc.bv),
            vector_death: Field::constant(grid, hc.dv),
            vector_growth: Field::constant(grid, hc.rv),
            predator_growth: Field::constant(grid, hc.rp),
            m: p.m(),
            xi: p.xi(),
        };
        let weight = vec![hc.rp; n];
        let kappa = vec![hc.r_star; n];
        let growth = vec![hc.rp2 / hc.rp; n];
        let saturation = vec![p.s_p * hc.rp2 / hc.rp; n];
        let predator = dynamic_predator(grid, p, &cfg, &weight, &kappa, growth, saturation)?;
        Self::build(&c, p, cfg, predator)
    }

    fn build(
        c: &SpatialCoeffs,
        p: &ModelParams,
        cfg: StepperConfig,
        predator: Predator,
    ) -> Result<Self> {
        p.validate()?;
        cfg.validate()?;
        let grid = *c.grid();
        let theta = cfg.scheme.theta();
        let lap = laplacian_matrix(grid.n_cells, grid.dx(), p.sigma_v);
        let (vector_explicit, vector_implicit) = theta_pair(&lap, &vec![1.0; grid.n_cells], &cfg, theta)?;
        Ok(Self {
            grid,
            params: *p,
            cfg,
            host: c.host.values().to_vec(),
            birth: c.vector_birth.values().to_vec(),
            death: c.vector_death.values().to_vec(),
            potential: c.vector_potential(p).into_values(),
            vector_explicit,
            vector_implicit,
            predator,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Host density field used by this stepper.
    pub fn host(&self) -> Field {
        Field::from_vec_unchecked(self.grid, self.host.clone())
    }

    /// Potential `-r_V + h r_P / s_P` of the susceptible-vector operator.
    pub fn potential(&self) -> Field {
        Field::from_vec_unchecked(self.grid, self.potential.clone())
    }

    /// Replaces the predator field of a reduced-system state by the frozen
    /// density; other systems return the state unchanged.
    pub fn prepare(&self, mut s: State) -> Result<State> {
        if s.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if let Predator::Frozen { density } = &self.predator {
            s.predators = Field::from_vec_unchecked(self.grid, density.clone());
        }
        Ok(s)
    }

    /// Advances one step and returns the state.
    pub fn step(&self, s: &State) -> Result<State> {
        let mut next = self.prepare(s.clone())?;
        let mut scratch = Scratch::new(self.grid.n_cells);
        self.step_in_place(&mut next, &mut scratch)?;
        Ok(next)
    }

    /// Advances `s` by one step, reusing `scratch`. Returns the mass removed
    /// by clipping negative undershoots.
    pub fn step_in_place(&self, s: &mut State, scratch: &mut Scratch) -> Result<f64> {
        let n = self.grid.n_cells;
        let dt = self.cfg.dt;
        let p = &self.params;
        let inv_dt = 1.0 / dt;
        let t_new = s.time + dt;

        let i_old = s.infected_hosts.values().to_vec();
        let vi = s.infected_vectors.values();
        let vs = s.susceptible_vectors.values();
        let pred = s.predators.values();

        self.vector_explicit.apply_into(vi, &mut scratch.a);
        self.vector_explicit.apply_into(vs, &mut scratch.b);
        for j in 0..n {
            let v = vi[j] + vs[j];
            let transmission = p.beta_hv * i_old[j] * vs[j];
            let loss = self.death[j] + p.s_v * v + p.h * pred[j];
            let ri = transmission - (p.alpha + loss) * vi[j];
            let rs = -transmission + p.alpha * vi[j] - loss * vs[j] + self.birth[j] * v;
            scratch.a[j] += vi[j] * inv_dt + ri;
            scratch.b[j] += vs[j] * inv_dt + rs;
            scratch.v[j] = v;
        }
        self.vector_implicit.solve_in_place(&mut scratch.a);
        self.vector_implicit.solve_in_place(&mut scratch.b);

        let mut new_i = i_old;
        for j in 0..n {
            let h = self.host[j];
            let gain = dt * p.beta_vh * (h - new_i[j]) * vi[j];
            new_i[j] = (new_i[j] + gain.max(0.0)).min(h);
        }

        let new_p = match &self.predator {
            Predator::Frozen { .. } => None,
            Predator::Dynamic {
                weight,
                growth,
                saturation,
                explicit,
                implicit,
            } => {
                for j in 0..n {
                    scratch.q[j] = pred[j] / weight[j];
                }
                explicit.apply_into(&scratch.q, &mut scratch.c);
                for j in 0..n {
                    let q = scratch.q[j];
                    let w = weight[j];
                    let react = w * (p.gamma * p.h * scratch.v[j] + growth[j] - saturation[j] * q) * q;
                    scratch.c[j] += w * inv_dt * q + react;
                }
                implicit.solve_in_place(&mut scratch.c);
                Some(
                    scratch
                        .c
                        .iter()
                        .zip(weight)
                        .map(|(q, w)| q * w)
                        .collect::<Vec<f64>>(),
                )
            }
        };

        check_finite(&scratch.a, t_new)?;
        check_finite(&scratch.b, t_new)?;
        if let Some(pv) = &new_p {
            check_finite(pv, t_new)?;
        }

        let mut clipped = 0.0;
        clipped += clip(&mut scratch.a, self.cfg.clip_tol, "infected vectors", t_new);
        clipped += clip(&mut scratch.b, self.cfg.clip_tol, "susceptible vectors", t_new);
        let mut new_p = new_p;
        if let Some(pv) = new_p.as_mut() {
            clipped += clip(pv, self.cfg.clip_tol, "predators", t_new);
        }
        clipped *= self.grid.dx();


        s.infected_hosts = Field::from_vec_unchecked(self.grid, new_i);
        s.infected_vectors = Field::from_vec_unchecked(self.grid, scratch.a.clone());
        s.susceptible_vectors = Field::from_vec_unchecked(self.grid, scratch.b.clone());
        if let Some(pv) = new_p {
            s.predators = Field::from_vec_unchecked(self.grid, pv);
        }
        s.time = t_new;
        Ok(clipped)
    }
}

fn dynamic_predator(
    grid: Grid,
    p: &ModelParams,
    cfg: &StepperConfig,
    weight: &[f64],
    kappa: &[f64],
    growth: Vec<f64>,
    saturation: Vec<f64>,
) -> Result<Predator> {
    cfg.validate()?;
    let op = divergence_matrix(kappa, grid.dx(), p.sigma_p)?;
    let (explicit, implicit) = theta_pair(&op, weight, cfg, cfg.scheme.theta())?;
    Ok(Predator::Dynamic {
        weight: weight.to_vec(),
        growth,
        saturation,
        explicit,
        implicit,
    })
}

/// Returns `((1 - theta) A, factor(diag(w / dt) - theta A))`.
fn theta_pair(
    a: &Tridiagonal,
    weight: &[f64],
    cfg: &StepperConfig,
    theta: f64,
) -> Result<(Tridiagonal, ThomasFactor)> {
    let explicit = a.scaled_shifted(1.0 - theta, &vec![0.0; a.len()]);
    let mass: Vec<f64> = weight.iter().map(|w| w / cfg.dt).collect();
    let implicit = a.scaled_shifted(-theta, &mass).factor()?;
    Ok((explicit, implicit))
}

fn clip(values: &mut [f64], tol: f64, what: &str, time: f64) -> f64 {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut removed = 0.0;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if -*v > tol * scale.max(f64::MIN_POSITIVE) {
                log::debug!("clipping {what} undershoot {v:e} at t = {time}");
            }
            removed -= *v;
            *v = 0.0;
        }
    }
    removed
}

fn check_finite(values: &[f64], time: f64) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
        return Err(Error::BlowUp { time });
    }
    Ok(())
}

/// Reusable buffers for [`Stepper::step_in_place`].
#[derive(Debug, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl Scratch {
    pub fn new(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            q: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One-step wrapper for the full system.
pub fn step_full(s: &State, c: &SpatialCoeffs, p: &ModelParams, cfg: StepperConfig) -> Result<State> {
    Stepper::full(c, p, cfg)?.step(s)
}

/// One-step wrapper for the system with predators frozen at `r_P / s_P`.
pub fn step_reduced(
    s: &State,
    c: &SpatialCoeffs,
    p: &ModelParams,
    cfg: StepperConfig,
) -> Result<State> {
    Stepper::reduced(c, p, cfg)?.step(s)
}

/// One-step wrapper for the homogenized system.
pub fn step_homogenized(
    s: &State,
    hc: &HomogenizedCoeffs,
    p: &ModelParams,
    cfg: StepperConfig,
) -> Result<State> {
    Stepper::homogenized(hc, *s.grid(), p, cfg)?.step(s)
}

/// Running simulation with time-integral accumulators.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    stepper: &'a Stepper,
    state: State,
    scratch: Scratch,
    steps: usize,
    /// `int_0^t V_i`, trapezoidal.
    pub j: Vec<f64>,
    /// `int_0^t (V_i + V_s)`, trapezoidal.
    pub jv: Vec<f64>,
    pub step_times: Vec<f64>,
    pub max_infected: Vec<f64>,
    pub max_vectors: Vec<f64>,
    pub clipped_mass: f64,
    history_stride: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(stepper: &'a Stepper, initial: State) -> Result<Self> {
        let state = stepper.prepare(initial)?;
        let n = stepper.grid.n_cells;
        let mut sim = Self {
            stepper,
            scratch: Scratch::new(n),
            steps: 0,
            j: vec![0.0; n],
            jv: vec![0.0; n],
            step_times: Vec::new(),
            max_infected: Vec::new(),
            max_vectors: Vec::new(),
            clipped_mass: 0.0,
            history_stride: 1,
            state,
        };
        sim.record();
        Ok(sim)
    }

    /// Records the max-norm history only every `stride` steps.
    pub fn with_history_stride(mut self, stride: usize) -> Self {
        self.history_stride = stride.max(1);
        self
    }

    fn record(&mut self) {
        if !self.steps.is_multiple_of(self.history_stride) {
            return;
        }
        let vi = self.state.infected_vectors.values();
        let vs = self.state.susceptible_vectors.values();
        self.step_times.push(self.state.time);
        self.max_infected.push(vi.iter().copied().fold(0.0, f64::max));
        self.max_vectors
            .push(vi.iter().zip(vs).map(|(a, b)| a + b).fold(0.0, f64::max));
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn into_state(self) -> State {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn advance(&mut self) -> Result<()> {
        let half_dt = 0.5 * self.stepper.cfg.dt;
        let (old_vi, old_v): (Vec<f64>, Vec<f64>) = {
            let vi = self.state.infected_vectors.values();
            let vs = self.state.susceptible_vectors.values();
            (vi.to_vec(), vi.iter().zip(vs).map(|(a, b)| a + b).collect())
        };
        self.clipped_mass += self.stepper.step_in_place(&mut self.state, &mut self.scratch)?;
        self.steps += 1;
        // recompute from the step count so long runs do not drift
        self.state.time = self.steps as f64 * self.stepper.cfg.dt;
        let vi = self.state.infected_vectors.values();
        let vs = self.state.susceptible_vectors.values();
        for k in 0..vi.len() {
            self.j[k] += half_dt * (old_vi[k] + vi[k]);
            self.jv[k] += half_dt * (old_v[k] + vi[k] + vs[k]);
        }
        self.record();
        Ok(())
    }

    /// Number of steps needed to reach `t_end` from the start.
    pub fn steps_to(&self, t_end: f64) -> usize {
        let dt = self.stepper.cfg.dt;
        let exact = t_end / dt;
        let rounded = exact.round();
        if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
            rounded as usize
        } else {
            log::warn!("dt = {dt} does not divide t_end = {t_end}; overshooting to the next step");
            exact.ceil() as usize
        }
    }

    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        let target = self.steps_to(t_end);
        while self.steps < target {
            self.advance()?;
        }
        Ok(())
    }

    pub fn cumulative_infected(&self) -> Field {
        Field::from_vec_unchecked(self.stepper.grid, self.j.clone())
    }

    pub fn cumulative_vectors(&self) -> Field {
        Field::from_vec_unchecked(self.stepper.grid, self.jv.clone())
    }
}

/// Recorded history of a simulation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<State>,
    /// `int_0^t V_i` at each snapshot.
    pub cumulative: Vec<Field>,
    /// `int_0^T V_i` at the final time.
    pub j: Field,
    /// `int_0^T (V_i + V_s)` at the final time.
    pub jv: Field,
    pub step_times: Vec<f64>,
    pub max_infected: Vec<f64>,
    pub max_vectors: Vec<f64>,
    pub clipped_mass: f64,
    pub final_state: State,
}

impl Trajectory {
    /// CSV with one row per snapshot and cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,I,Vi,Vs,P,J\n");
        for ((t, s), j) in self.times.iter().zip(&self.snapshots).zip(&self.cumulative) {
            let g = s.grid();
            for k in 0..g.n_cells {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    fmt17(*t),
                    fmt17(g.center(k)),
                    fmt17(s.infected_hosts.values()[k]),
                    fmt17(s.infected_vectors.values()[k]),
                    fmt17(s.susceptible_vectors.values()[k]),
                    fmt17(s.predators.values()[k]),
                    fmt17(j.values()[k]),
                );
            }
        }
        out
    }
}

/// Formats with 17 significant digits, enough to round-trip an `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs `stepper` from `initial` to `t_end`, keeping every `stride`-th state.
pub fn simulate_with(stepper: &Stepper, initial: State, t_end: f64) -> Result<Trajectory> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            reason: format!("must be finite and >= 0, got {t_end}"),
        });
    }
    let stride = stepper.cfg.stride;
    let mut sim = Simulation::new(stepper, initial)?;
    let mut times = vec![0.0];
    let mut snapshots = vec![sim.state().clone()];
    let mut cumulative = vec![sim.cumulative_infected()];
    let target = sim.steps_to(t_end);
    while sim.steps() < target {
        sim.advance()?;
        if sim.steps() % stride == 0 || sim.steps() == target {
            times.push(sim.time());
            snapshots.push(sim.state().clone());
            cumulative.push(sim.cumulative_infected());
        }
    }
    Ok(Trajectory {
        times,
        snapshots,
        j: sim.cumulative_infected(),
        jv: sim.cumulative_vectors(),
        clipped_mass: sim.clipped_mass,
        step_times: std::mem::take(&mut sim.step_times),
        max_infected: std::mem::take(&mut sim.max_infected),
        max_vectors: std::mem::take(&mut sim.max_vectors),
        cumulative,
        final_state: sim.into_state(),
    })
}

/// Simulates the full system.
pub fn simulate(
    initial: State,
    c: &SpatialCoeffs,
    p: &ModelParams,
    cfg: StepperConfig,
    t_end: f64,
) -> Result<Trajectory> {
    let stepper = Stepper::full(c, p, cfg)?;
    simulate_with(&stepper, initial, t_end)
}

/// `u(t)` for `u' = u - u^2`, `u(0) = u0`.
pub fn exact_logistic(u0: f64, t: f64) -> f64 {
    1.0 / (1.0 + (1.0 / u0 - 1.0) * (-t).exp())
}

/// `V(t)` for `V' = -m_hat V - s_V V^2`, `V(0) = v0`.
pub fn exact_v_gamma0(v0: f64, m_hat: f64, s_v: f64, t: f64) -> Result<f64> {
    check_m_hat(m_hat, s_v, v0)?;
    if v0 == 0.0 {
        return Ok(0.0);
    }
    let k = m_hat / (s_v * v0) + 1.0;
    Ok(m_hat / s_v / (k * (m_hat * t).exp() - 1.0))
}

/// `int_0^inf V` for the same equation: `ln(1 + s_V v0 / m_hat) / s_V`.
pub fn exact_int_v(v0: f64, m_hat: f64, s_v: f64) -> Result<f64> {
    check_m_hat(m_hat, s_v, v0)?;
    Ok((s_v * v0 / m_hat).ln_1p() / s_v)
}

fn check_m_hat(m_hat: f64, s_v: f64, v0: f64) -> Result<()> {
    if !(m_hat > 0.0) {
        return Err(Error::Domain(format!(
            "m_hat = {m_hat} <= 0: the time integral of V diverges"
        )));
    }
    if !(s_v > 0.0) || !(v0 >= 0.0) {
        return Err(Error::Domain(format!("need s_V > 0 and V0 >= 0, got {s_v}, {v0}")));
    }
    Ok(())
}
