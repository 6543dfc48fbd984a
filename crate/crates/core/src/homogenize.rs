//! High-frequency refuges, their averaged coefficients, and the comparison
//! between harvests at increasing frequency and the homogenized harvest.

use std::fmt::Write as _;

use crate::dynamics::{fmt17, State, Stepper, StepperConfig};
use crate::error::{Error, Result};
use crate::harvest::{harvest_with, HarvestOptions};
use crate::model::{derive_coeffs, Field, ModelParams, Refuge};
use crate::par;

/// Spatial averages of the refuge-dependent coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogenizedCoeffs {
    /// Mean of the refuge.
    pub mean_refuge: f64,
    /// Mean of the squared refuge.
    pub mean_refuge_sq: f64,
    pub host: f64,
    pub bv: f64,
    pub dv: f64,
    pub rv: f64,
    pub rp: f64,
    /// Mean of `r_P^2`.
    pub rp2: f64,
    /// Effective predator conductivity, the harmonic mean of `r_P`.
    pub r_star: f64,
}

/// Refuge of frequency `n`: the periodic extension of `R` compressed `n`
/// times into the domain.
///
/// Each cell receives the average of the extension over the cell's preimage
/// under `x -> n x`, which keeps the mean exact for every `n` and makes the
/// result exact whenever `n` divides the cell count and `R` is resolved on
/// blocks of `n` cells.
pub fn refuge_freq(refuge: &Refuge, n: usize) -> Result<Refuge> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "frequency",
            reason: "must be >= 1".into(),
        });
    }
    let g = *refuge.grid();
    let cells = g.n_cells;
    if !cells.is_multiple_of(n) {
        log::warn!("frequency {n} does not divide {cells} cells; R_n is aliased");
    }
    if n == 1 {
        return Ok(refuge.clone());
    }
    let vals = refuge.values();
    let mut prefix = vec![0.0; cells + 1];
    for j in 0..cells {
        prefix[j + 1] = prefix[j] + vals[j];
    }
    // Preimage of cell j in cell units of the original grid: [c + n j, c + n j + n)
    // with c = -(n - 1) * cells / 2.
    let offset = -((n - 1) as f64) * cells as f64 / 2.0;
    let out: Vec<f64> = (0..cells)
        .map(|j| {
            let a = offset + (n * j) as f64;
            let avg = (periodic_primitive(&prefix, a + n as f64) - periodic_primitive(&prefix, a)) / n as f64;
            avg.clamp(0.0, 1.0)
        })
        .collect();
    Refuge::new(Field::new(g, out)?)
}

/// `int_0^s` of the periodic piecewise-constant extension, in cell units.
fn periodic_primitive(prefix: &[f64], s: f64) -> f64 {
    let cells = prefix.len() - 1;
    let total = prefix[cells];
    let periods = (s / cells as f64).floor();
    let rem = s - periods * cells as f64;
    let k = (rem.floor() as usize).min(cells - 1);
    let frac = rem - k as f64;
    let cell_value = prefix[k + 1] - prefix[k];
    periods * total + prefix[k] + frac * cell_value
}

/// Averages of every coefficient together with the effective conductivity.
pub fn averaged_coeffs(refuge: &Refuge, p: &ModelParams) -> Result<HomogenizedCoeffs> {
    p.validate()?;
    let r = refuge.field();
    let mean_refuge = r.mean();
    let mean_refuge_sq = r.map(|v| v * v).mean();
    let drp = p.rp_r - p.rp_f;
    let rp = p.predator_growth(mean_refuge);
    let rp2 = drp * drp * mean_refuge_sq + 2.0 * drp * p.rp_f * mean_refuge + p.rp_f * p.rp_f;
    Ok(HomogenizedCoeffs {
        mean_refuge,
        mean_refuge_sq,
        host: p.host_density(mean_refuge),
        bv: p.vector_birth(mean_refuge),
        dv: p.vector_death(mean_refuge),
        rv: p.vector_birth(mean_refuge) - p.vector_death(mean_refuge),
        rp,
        rp2,
        r_star: conductivity_star_1d(refuge, p),
    })
}

/// `<1 / r_P>^{-1}`, the one-dimensional effective conductivity.
pub fn conductivity_star_1d(refuge: &Refuge, p: &ModelParams) -> f64 {
    1.0 / refuge.field().map(|r| 1.0 / p.predator_growth(r)).mean()
}

/// Initial populations shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub vi0: Field,
    pub vs0: Field,
    pub p0: Field,
}

impl InitialData {
    pub fn state(&self) -> Result<State> {
        State::new(self.vi0.clone(), self.vs0.clone(), self.p0.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub eta_n: f64,
    pub eta_inf: f64,
    pub abs_gap: f64,
    pub lambda1: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub eta_inf: f64,
    pub coeffs: HomogenizedCoeffs,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,eta_n,eta_inf,abs_gap\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.n,
                fmt17(r.eta_n),
                fmt17(r.eta_inf),
                fmt17(r.abs_gap)
            );
        }
        s
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.abs_gap).collect()
    }
}

/// Harvest at each frequency in `freqs` against the homogenized harvest.
pub fn homogenization_sweep(
    refuge: &Refuge,
    initial: &InitialData,
    p: &ModelParams,
    cfg: StepperConfig,
    opts: &HarvestOptions,
    freqs: &[usize],
) -> Result<SweepReport> {
    let grid = *refuge.grid();
    let hc = averaged_coeffs(refuge, p)?;
    let hom = Stepper::homogenized(&hc, grid, p, cfg)?;
    let potential = p.vector_potential(hc.mean_refuge);
    if potential <= 0.0 {
        log::warn!("lambda1 of the averaged problem is {potential} <= 0; harvests may not converge");
    }
    let jobs: Vec<Option<usize>> = std::iter::once(None).chain(freqs.iter().map(|&n| Some(n))).collect();
    let results = par::try_map(&jobs, |_, job| -> Result<_> {
        let stepper = match job {
            None => hom.clone(),
            Some(n) => {
                let rn = refuge_freq(refuge, *n)?;
                Stepper::full(&derive_coeffs(p, &rn)?, p, cfg)?
            }
        };
        harvest_with(&stepper, initial.state()?, opts)
    })?;
    let eta_inf = results[0].eta;
    let rows = freqs
        .iter()
        .zip(&results[1..])
        .map(|(&n, rep)| SweepRow {
            n,
            eta_n: rep.eta,
            eta_inf,
            abs_gap: (rep.eta - eta_inf).abs(),
            lambda1: rep.lambda1,
            converged: rep.converged && results[0].converged,
        })
        .collect();
    Ok(SweepReport {
        rows,
        eta_inf,
        coeffs: hc,
    })
}
