//! Experiment commands. Each writes its files into the output directory and
//! returns the process exit status.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::Rng;
use refuge_core::dynamics::{fmt17, simulate};
use refuge_core::harvest::{compute_harvest, eta_l, eta_v_constant, r_opt_const};
use refuge_core::homogenize::{conductivity_star_1d, homogenization_sweep};
use refuge_core::optimize::{project_box, project_mass_box, projected_ascent, OptResult};
use refuge_core::verify::{format_table, run_suite, Status, SuiteInput};
use refuge_core::{derive_coeffs, par, Error, Field, Refuge};

use crate::config::RunConfig;

/// Failure class of a command, mapped to an exit code by [`Failure::code`].
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(e) => match e.downcast_ref::<Error>() {
                Some(Error::BlowUp { .. }) => 3,
                Some(Error::TrivialRegime { .. }) => 4,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Run(e) => write!(f, "{e:#}"),
        }
    }
}

fn run<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Run)
}

fn config<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn write(out: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    let path = out.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Run)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn host(cfg: &RunConfig, refuge: &Refuge) -> Field {
    refuge.field().map(|r| cfg.params.host_density(r))
}

pub fn simulate_cmd(cfg: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let refuge = config(cfg.build_refuge())?;
    let init = config(cfg.build_initial(&refuge))?;
    let coeffs = config(derive_coeffs(&cfg.params, &refuge).map_err(Into::into))?;
    let t_end = cfg.stepper.t_end;
    let traj = run(simulate(
        config(init.state().map_err(Into::into))?,
        &coeffs,
        &cfg.params,
        cfg.stepper.stepper(),
        t_end,
    )
    .map_err(Into::into))?;
    write(out, "trajectory.csv", &traj.to_csv())?;

    let h = host(cfg, &refuge);
    let beta = cfg.params.beta_vh;
    let eta = run(h.zip_map(&traj.j, |h, j| h * (-beta * j).exp()).map_err(Into::into))?.integrate();
    let fin = &traj.final_state;
    let mut s = String::new();
    let _ = writeln!(s, "t_end={}", fmt17(t_end));
    let _ = writeln!(s, "eta={}", fmt17(eta));
    let _ = writeln!(s, "host_integral={}", fmt17(h.integrate()));
    let _ = writeln!(s, "int_J={}", fmt17(traj.j.integrate()));
    let _ = writeln!(s, "max_Vi={}", fmt17(fin.infected_vectors.max()));
    let _ = writeln!(s, "max_Vs={}", fmt17(fin.susceptible_vectors.max()));
    let _ = writeln!(s, "min_P={}", fmt17(fin.predators.min()));
    let _ = writeln!(s, "max_P={}", fmt17(fin.predators.max()));
    let _ = writeln!(s, "clipped_mass={}", fmt17(traj.clipped_mass));
    write(out, "summary.txt", &s)?;
    print!("{s}");
    Ok(0)
}

pub fn harvest_cmd(cfg: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let g = config(cfg.grid())?;
    let p = &cfg.params;
    let inits = config(
        cfg.harvest_scan
            .iter()
            .map(|&r| {
                let refuge = Refuge::constant(g, r)?;
                Ok((cfg.build_initial(&refuge)?, refuge))
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    let rows = run(par::try_map(&inits, |i, (init, refuge)| -> Result<String> {
        let r = cfg.harvest_scan[i];
        let c = derive_coeffs(p, refuge)?;
        let rep = compute_harvest(init.state()?, &c, p, cfg.stepper.stepper(), &cfg.stepper.harvest())?;
        let el = eta_l(refuge, &init.vi0, p).unwrap_or(f64::NAN);
        let v0 = init.vi0.add(&init.vs0)?.mean();
        let ev = eta_v_constant(r, v0, p, g.measure()).unwrap_or(f64::NAN);
        Ok(format!(
            "{},{},{},{},{},{}",
            fmt17(r),
            fmt17(rep.eta),
            fmt17(el),
            fmt17(ev),
            fmt17(rep.lambda1),
            rep.converged
        ))
    }))?;
    let mut csv = String::from("R,eta,eta_L,eta_V,lambda1,converged\n");
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    write(out, "harvest.csv", &csv)?;
    Ok(0)
}

pub fn optimize_cmd(cfg: &RunConfig, out: &Path, seed: u64) -> std::result::Result<i32, Failure> {
    let p = &cfg.params;
    if p.m() <= 0.0 {
        return Err(Failure::Run(Error::TrivialRegime { m: p.m() }.into()));
    }
    let refuge = config(cfg.build_refuge())?;
    let init = config(cfg.build_initial(&refuge))?;
    let g = *refuge.grid();
    let opt = cfg.optimizer.config(&g);
    let project = |f: &Field| -> Result<Refuge> {
        Ok(match opt.mass {
            Some(mass) => project_mass_box(f, mass)?,
            None => project_box(f),
        })
    };
    let results = run(par::try_map_range(cfg.optimizer.starts, |i| -> Result<OptResult> {
        let start = if i == 0 {
            project(refuge.field())?
        } else {
            let mut rng = par::item_rng(seed, i);
            let (a, b, k): (f64, f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(0.5..4.0));
            let l = g.half_length;
            project(&Field::from_fn(g, |x| a + b * (k * std::f64::consts::PI * x / l).cos()))?
        };
        Ok(projected_ascent(&start, &init.vi0, p, &opt)?)
    }))?;
    let (best_idx, best) = results
        .iter()
        .enumerate()
        .fold(None::<(usize, &OptResult)>, |acc, (i, r)| match acc {
            Some((_, b)) if b.eta_l >= r.eta_l => acc,
            _ => Some((i, r)),
        })
        .expect("at least one start");

    write(out, "refuge.csv", &best.refuge_csv())?;
    write(out, "history.csv", &best.history_csv())?;
    let mut starts = String::from("start,eta_L,iterations,converged,grad_norm\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            starts,
            "{i},{},{},{},{}",
            fmt17(r.eta_l),
            r.iterations,
            r.converged,
            fmt17(r.grad_norm)
        );
    }
    write(out, "starts.csv", &starts)?;

    let mut s = String::new();
    let _ = writeln!(s, "best_start={best_idx}");
    let _ = writeln!(s, "eta_L={}", fmt17(best.eta_l));
    let _ = writeln!(s, "iterations={}", best.iterations);
    let _ = writeln!(s, "converged={}", best.converged);
    let _ = writeln!(s, "grad_norm={}", fmt17(best.grad_norm));
    let _ = writeln!(s, "active_lower={}", best.active_lower);
    let _ = writeln!(s, "active_upper={}", best.active_upper);
    let _ = writeln!(s, "int_R={}", fmt17(best.refuge.field().integrate()));
    if init.vi0.values().iter().all(|&v| v == init.vi0.values()[0]) && opt.mass.is_none() {
        let closed = run(r_opt_const(init.vi0.values()[0], p).map_err(Into::into))?;
        let _ = writeln!(s, "R_opt_const={}", fmt17(closed));
    }
    write(out, "summary.txt", &s)?;
    print!("{s}");
    Ok(0)
}

pub fn homogenize_cmd(cfg: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let refuge = config(cfg.build_refuge())?;
    let init = config(cfg.build_initial(&refuge))?;
    let rep = run(homogenization_sweep(
        &refuge,
        &init,
        &cfg.params,
        cfg.stepper.stepper(),
        &cfg.stepper.harvest(),
        &cfg.sweep_frequencies,
    )
    .map_err(Into::into))?;
    write(out, "sweep.csv", &rep.to_csv())?;
    let mut s = String::new();
    let _ = writeln!(s, "eta_inf={}", fmt17(rep.eta_inf));
    let _ = writeln!(s, "mean_refuge={}", fmt17(rep.coeffs.mean_refuge));
    let _ = writeln!(s, "r_star={}", fmt17(conductivity_star_1d(&refuge, &cfg.params)));
    let _ = writeln!(s, "converged={}", rep.rows.iter().all(|r| r.converged));
    write(out, "summary.txt", &s)?;
    print!("{s}{}", rep.to_csv());
    Ok(0)
}

pub fn verify_cmd(cfg: &RunConfig, out: &Path, seed: u64) -> std::result::Result<i32, Failure> {
    let refuge = config(cfg.build_refuge())?;
    let initial = config(cfg.build_initial(&refuge))?;
    let input = SuiteInput {
        params: cfg.params,
        refuge,
        initial,
        stepper: cfg.stepper.stepper(),
        harvest: cfg.stepper.harvest(),
    };
    let mut vcfg = cfg.verify.clone();
    vcfg.seed = seed;
    let results = run_suite(&input, &vcfg);
    print!("{}", format_table(&results));
    let mut csv = String::from("check,status,measured,threshold\n");
    for r in &results {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.name,
            r.status.as_str(),
            fmt17(r.measured),
            fmt17(r.threshold)
        );
    }
    write(out, "verify.csv", &csv)?;
    let failed: Vec<_> = results.iter().filter(|r| r.status == Status::Fail).collect();
    for r in &failed {
        eprintln!("FAILED {}: measured {:e} (threshold {:e}) {}", r.name, r.measured, r.threshold, r.detail);
    }
    Ok(if failed.is_empty() { 0 } else { 1 })
}
