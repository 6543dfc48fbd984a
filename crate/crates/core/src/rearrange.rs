//! Discrete Schwarz rearrangements on the symmetric cell-centered grid and
//! the rearrangement inequalities built on them.

use rand::seq::SliceRandom;

use crate::error::Result;
use crate::harvest::phi_r;
use crate::model::{Field, ModelParams, Refuge};
use crate::par;

/// Cells ordered by distance from the center of the domain, ties broken
/// toward negative `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RearrangeOrder {
    order: Vec<usize>,
}

impl RearrangeOrder {
    pub fn new(n: usize) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        // |2j + 1 - n| is proportional to |x_j| and exact in integers
        order.sort_by_key(|&j| ((2 * j + 1) as i64 - n as i64).unsigned_abs());
        Self { order }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }
}

/// Decreasing arrangement of raw values: largest nearest the center.
pub fn decreasing_slice(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    place(&sorted, values.len())
}

/// Increasing arrangement of raw values: smallest nearest the center.
pub fn increasing_slice(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    place(&sorted, values.len())
}

fn place(sorted: &[f64], n: usize) -> Vec<f64> {
    let order = RearrangeOrder::new(n);
    let mut out = vec![0.0; n];
    for (&cell, &v) in order.as_slice().iter().zip(sorted) {
        out[cell] = v;
    }
    out
}

/// Symmetric decreasing rearrangement `f_*`.
pub fn schwarz_decreasing(f: &Field) -> Field {
    Field::from_vec_unchecked(*f.grid(), decreasing_slice(f.values()))
}

/// Symmetric increasing rearrangement `f^*`.
pub fn schwarz_increasing(f: &Field) -> Field {
    Field::from_vec_unchecked(*f.grid(), increasing_slice(f.values()))
}

/// Maps the decreasing arrangement of some values to the increasing one
/// (the `x -> L - |x|` transform, realised on ranks).
pub fn reflect_slice(values: &[f64]) -> Vec<f64> {
    let order = RearrangeOrder::new(values.len());
    let o = order.as_slice();
    let n = o.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        out[o[n - 1 - k]] = values[o[k]];
    }
    out
}

/// `true` when `f` equals its decreasing arrangement up to `tol`.
pub fn is_symmetric_decreasing(values: &[f64], tol: f64) -> bool {
    let d = decreasing_slice(values);
    values.iter().zip(&d).all(|(a, b)| (a - b).abs() <= tol)
}

/// `(int f g, int f_* g_*)`.
pub fn hardy_littlewood_check(f: &Field, g: &Field) -> Result<(f64, f64)> {
    f.check_same_grid(g)?;
    Ok(hardy_littlewood_slices(f.values(), g.values(), f.grid().dx()))
}

pub fn hardy_littlewood_slices(f: &[f64], g: &[f64], dx: f64) -> (f64, f64) {
    let lhs = dx * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    let fs = decreasing_slice(f);
    let gs = decreasing_slice(g);
    let rhs = dx * fs.iter().zip(&gs).map(|(a, b)| a * b).sum::<f64>();
    (lhs, rhs)
}

/// Dirichlet energy with forward differences and no boundary wrap.
pub fn dirichlet_energy(values: &[f64], dx: f64) -> f64 {
    values
        .windows(2)
        .map(|w| {
            let d = (w[1] - w[0]) / dx;
            d * d * dx
        })
        .sum()
}

/// `int |grad f|^2 - int |grad f_*|^2`.
///
/// Nonnegative for generic data, but a monotone profile such as
/// `(0, 1, 2, 3)` already has a smaller discrete energy than its symmetric
/// rearrangement, so the sign is not guaranteed on every input.
pub fn polya_szego_deficit(f: &Field) -> f64 {
    let dx = f.grid().dx();
    dirichlet_energy(f.values(), dx) - dirichlet_energy(&decreasing_slice(f.values()), dx)
}

/// Outcome of [`arrangement_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArrangementReport {
    /// Whether the refuge was symmetric decreasing.
    pub refuge_symmetric_decreasing: bool,
    /// Whether `phi_R` came out symmetric increasing.
    pub phi_symmetric_increasing: bool,
    /// `max |phi_R(x) - phi_R(-x)|`.
    pub phi_symmetry_error: f64,
    /// `int phi_R V^*`, the conjectured maximum.
    pub upper: f64,
    /// `int phi_R V_*`, the conjectured minimum.
    pub lower: f64,
    /// Observed extremes over the tested arrangements.
    pub observed_max: f64,
    pub observed_min: f64,
    pub trials: usize,
    pub violations: usize,
}

impl ArrangementReport {
    pub fn passed(&self) -> bool {
        self.refuge_symmetric_decreasing && self.phi_symmetric_increasing && self.violations == 0
    }
}

fn arrangement_setup(refuge: &Refuge, p: &ModelParams) -> Result<(Vec<f64>, bool, bool, f64)> {
    let phi = phi_r(refuge, p)?;
    let v = phi.values();
    let n = v.len();
    let scale = phi.sup_norm();
    let sym = (0..n).map(|j| (v[j] - v[n - 1 - j]).abs()).fold(0.0, f64::max);
    let refuge_ok = is_symmetric_decreasing(refuge.values(), 1e-12);
    let increasing = increasing_slice(v);
    let phi_ok = v.iter().zip(&increasing).all(|(a, b)| (a - b).abs() <= 1e-10 * scale);
    Ok((v.to_vec(), refuge_ok, phi_ok, sym))
}

/// Checks that `int phi_R sigma(V)` over random arrangements `sigma` of the
/// pool stays between the values at the decreasing and increasing
/// arrangements.
pub fn arrangement_check(
    refuge: &Refuge,
    pool: &Field,
    p: &ModelParams,
    trials: usize,
    seed: u64,
) -> Result<ArrangementReport> {
    refuge.field().check_same_grid(pool)?;
    let (phi, refuge_ok, phi_ok, sym) = arrangement_setup(refuge, p)?;
    if !refuge_ok {
        log::warn!("arrangement check on a refuge that is not symmetric decreasing");
    }
    let dx = pool.grid().dx();
    let pair = |v: &[f64]| dx * phi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let upper = pair(&increasing_slice(pool.values()));
    let lower = pair(&decreasing_slice(pool.values()));
    let tol = 1e-12 * (upper.abs() + lower.abs()).max(f64::MIN_POSITIVE);
    let values = par::map_range(trials, |i| {
        let mut rng = par::item_rng(seed, i);
        let mut v = pool.values().to_vec();
        v.shuffle(&mut rng);
        pair(&v)
    });
    let violations = values.iter().filter(|&&x| x > upper + tol || x < lower - tol).count();
    Ok(ArrangementReport {
        refuge_symmetric_decreasing: refuge_ok,
        phi_symmetric_increasing: phi_ok,
        phi_symmetry_error: sym,
        upper,
        lower,
        observed_max: values.iter().copied().fold(upper.min(lower), f64::max),
        observed_min: values.iter().copied().fold(upper.max(lower), f64::min),
        trials,
        violations,
    })
}

/// Exhaustive variant over every arrangement of the pool (small grids only).
pub fn arrangement_check_exhaustive(refuge: &Refuge, pool: &Field, p: &ModelParams) -> Result<ArrangementReport> {
    refuge.field().check_same_grid(pool)?;
    let (phi, refuge_ok, phi_ok, sym) = arrangement_setup(refuge, p)?;
    let dx = pool.grid().dx();
    let pair = |v: &[f64]| dx * phi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let upper = pair(&increasing_slice(pool.values()));
    let lower = pair(&decreasing_slice(pool.values()));
    let tol = 1e-12 * (upper.abs() + lower.abs()).max(f64::MIN_POSITIVE);
    let mut observed_max = f64::NEG_INFINITY;
    let mut observed_min = f64::INFINITY;
    let mut trials = 0;
    let mut violations = 0;
    for_each_permutation(pool.values().to_vec(), |v| {
        let x = pair(v);
        observed_max = observed_max.max(x);
        observed_min = observed_min.min(x);
        trials += 1;
        if x > upper + tol || x < lower - tol {
            violations += 1;
        }
    });
    Ok(ArrangementReport {
        refuge_symmetric_decreasing: refuge_ok,
        phi_symmetric_increasing: phi_ok,
        phi_symmetry_error: sym,
        upper,
        lower,
        observed_max,
        observed_min,
        trials,
        violations,
    })
}

/// Visits every permutation of `v` (Heap's algorithm).
pub fn for_each_permutation(mut v: Vec<f64>, mut visit: impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(&v);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(&v);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
