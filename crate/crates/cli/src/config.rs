//! JSON run configuration and its conversion into core types.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use refuge_core::dynamics::{Scheme, StepperConfig};
use refuge_core::harvest::HarvestOptions;
use refuge_core::homogenize::{refuge_freq, InitialData};
use refuge_core::optimize::OptConfig;
use refuge_core::verify::VerifyConfig;
use refuge_core::{derive_coeffs, Field, Grid, ModelParams, Refuge};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ModelParams,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub stepper: StepperSpec,
    pub refuge: RefugeSpec,
    pub initial: InitialSpec,
    /// Constant refuge levels for `harvest`.
    #[serde(default = "default_scan")]
    pub harvest_scan: Vec<f64>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default = "default_frequencies")]
    pub sweep_frequencies: Vec<usize>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_scan() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn default_frequencies() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub half_length: f64,
    pub n_cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_length: 1.0,
            n_cells: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperSpec {
    pub dt: f64,
    pub scheme: Scheme,
    /// Snapshot every `stride` steps.
    pub stride: usize,
    pub clip_tol: f64,
    /// End time of `simulate`.
    pub t_end: f64,
    pub eps_tail: f64,
    pub t_max: f64,
    pub fit_fraction: f64,
}

impl Default for StepperSpec {
    fn default() -> Self {
        let s = StepperConfig::default();
        let h = HarvestOptions::default();
        Self {
            dt: s.dt,
            scheme: s.scheme,
            stride: s.stride,
            clip_tol: s.clip_tol,
            t_end: 10.0,
            eps_tail: h.eps_tail,
            t_max: h.t_max,
            fit_fraction: h.fit_fraction,
        }
    }
}

impl StepperSpec {
    pub fn stepper(&self) -> StepperConfig {
        StepperConfig {
            dt: self.dt,
            scheme: self.scheme,
            stride: self.stride,
            clip_tol: self.clip_tol,
        }
    }

    pub fn harvest(&self) -> HarvestOptions {
        HarvestOptions {
            eps_tail: self.eps_tail,
            t_max: self.t_max,
            fit_fraction: self.fit_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RefugeSpec {
    Constant {
        value: f64,
    },
    /// `values[k]` on the k-th interval cut by the increasing `breakpoints`.
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// One sample per cell, last column of each non-empty line.
    File {
        path: PathBuf,
    },
    /// Periodic rescaling `R(n x)` of `base`.
    Frequency {
        n: usize,
        base: Box<RefugeSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * exp(-((x - center) / width)^2)`.
    Gaussian {
        amplitude: f64,
        center: f64,
        width: f64,
        #[serde(default)]
        offset: f64,
    },
    File {
        path: PathBuf,
    },
    /// `r_P / s_P` evaluated on the refuge; predators only.
    PredatorEquilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub vi0: FieldSpec,
    pub vs0: FieldSpec,
    pub p0: FieldSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub step: Option<f64>,
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Target `int R` as a fraction of `|Omega|`.
    pub mass_fraction: Option<f64>,
    pub armijo: f64,
    /// Starting points: the configured refuge plus `starts - 1` random ones.
    pub starts: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        let o = OptConfig::default();
        Self {
            step: o.step,
            max_iterations: o.max_iterations,
            grad_tol: o.grad_tol,
            mass_fraction: None,
            armijo: o.armijo,
            starts: 4,
        }
    }
}

impl OptimizerSpec {
    pub fn config(&self, grid: &Grid) -> OptConfig {
        OptConfig {
            step: self.step,
            max_iterations: self.max_iterations,
            grad_tol: self.grad_tol,
            mass: self.mass_fraction.map(|f| f * grid.measure()),
            armijo: self.armijo,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative sample-file paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, dir: &Path) {
        fn fix(p: &mut PathBuf, dir: &Path) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        let mut spec = &mut self.refuge;
        loop {
            match spec {
                RefugeSpec::File { path } => {
                    fix(path, dir);
                    break;
                }
                RefugeSpec::Frequency { base, .. } => spec = base,
                _ => break,
            }
        }
        for f in [&mut self.initial.vi0, &mut self.initial.vs0, &mut self.initial.p0] {
            if let FieldSpec::File { path } = f {
                fix(path, dir);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().context("params")?;
        self.grid().context("grid")?;
        self.stepper.stepper().validate().context("stepper")?;
        let s = &self.stepper;
        ensure!(s.t_end.is_finite() && s.t_end >= 0.0, "stepper.t_end must be finite and >= 0");
        ensure!(s.eps_tail > 0.0 && s.eps_tail < 1.0, "stepper.eps_tail must lie in (0, 1)");
        ensure!(s.t_max.is_finite() && s.t_max > 0.0, "stepper.t_max must be finite and > 0");
        ensure!(
            s.fit_fraction > 0.0 && s.fit_fraction <= 1.0,
            "stepper.fit_fraction must lie in (0, 1]"
        );
        ensure!(
            self.harvest_scan.iter().all(|r| (0.0..=1.0).contains(r)),
            "harvest_scan values must lie in [0, 1]"
        );
        ensure!(self.sweep_frequencies.iter().all(|&n| n >= 1), "sweep_frequencies must be >= 1");
        let o = &self.optimizer;
        ensure!(o.starts >= 1, "optimizer.starts must be >= 1");
        ensure!(o.step.is_none_or(|s| s > 0.0), "optimizer.step must be > 0");
        if let Some(f) = o.mass_fraction {
            ensure!((0.0..=1.0).contains(&f), "optimizer.mass_fraction must lie in [0, 1]");
        }
        if matches!(self.initial.vi0, FieldSpec::PredatorEquilibrium)
            || matches!(self.initial.vs0, FieldSpec::PredatorEquilibrium)
        {
            bail!("predator_equilibrium is only valid for initial.p0");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.grid.half_length, self.grid.n_cells)?)
    }

    pub fn build_refuge(&self) -> Result<Refuge> {
        build_refuge(&self.refuge, self.grid()?).context("refuge")
    }

    pub fn build_initial(&self, refuge: &Refuge) -> Result<InitialData> {
        let g = *refuge.grid();
        let field = |spec: &FieldSpec, name: &str| -> Result<Field> {
            let f = match spec {
                FieldSpec::Constant { value } => Field::constant(g, *value),
                FieldSpec::Gaussian {
                    amplitude,
                    center,
                    width,
                    offset,
                } => {
                    ensure!(*width > 0.0, "width must be > 0");
                    Field::from_fn(g, |x| offset + amplitude * (-((x - center) / width).powi(2)).exp())
                }
                FieldSpec::File { path } => Field::new(g, read_samples(path)?)?,
                FieldSpec::PredatorEquilibrium => derive_coeffs(&self.params, refuge)?.predator_equilibrium(&self.params),
            };
            ensure!(
                f.values().iter().all(|v| v.is_finite() && *v >= 0.0),
                "initial.{name} must be finite and nonnegative"
            );
            Ok(f)
        };
        Ok(InitialData {
            vi0: field(&self.initial.vi0, "vi0")?,
            vs0: field(&self.initial.vs0, "vs0")?,
            p0: field(&self.initial.p0, "p0")?,
        })
    }
}

fn build_refuge(spec: &RefugeSpec, g: Grid) -> Result<Refuge> {
    Ok(match spec {
        RefugeSpec::Constant { value } => Refuge::constant(g, *value)?,
        RefugeSpec::Piecewise { breakpoints, values } => {
            ensure!(
                values.len() == breakpoints.len() + 1,
                "piecewise needs one more value than breakpoints"
            );
            ensure!(breakpoints.windows(2).all(|w| w[0] < w[1]), "breakpoints must increase");
            let samples = g
                .centers()
                .iter()
                .map(|&x| values[breakpoints.iter().take_while(|&&b| b <= x).count()])
                .collect();
            Refuge::new(Field::new(g, samples)?)?
        }
        RefugeSpec::File { path } => Refuge::new(Field::new(g, read_samples(path)?)?)?,
        RefugeSpec::Frequency { n, base } => {
            ensure!(*n >= 1, "frequency n must be >= 1");
            refuge_freq(&build_refuge(base, g)?, *n)?
        }
    })
}

/// Last comma-separated column of every line that parses as a number.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let cell = line.rsplit(',').next().unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if k == 0 => continue,
            Err(e) => bail!("{}:{}: {e}", path.display(), k + 1),
        }
    }
    Ok(out)
}
