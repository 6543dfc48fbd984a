//! Parameters, the cell-centered grid, sampled fields and the affine
//! refuge-to-coefficient map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar rates of the coupled host / vector / predator system.
///
/// The `*_r` / `*_f` pairs are the values of a coefficient inside a refuge
/// (`R = 1`) and in the field (`R = 0`); every spatial coefficient is the
/// affine interpolation between the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Vector-to-host transmission rate.
    pub beta_vh: f64,
    /// Host-to-vector transmission rate.
    pub beta_hv: f64,
    pub sigma_v: f64,
    pub sigma_p: f64,
    /// Recovery rate of infected vectors.
    pub alpha: f64,
    pub s_v: f64,
    pub s_p: f64,
    /// Predation rate.
    pub h: f64,
    /// Predation efficiency.
    pub gamma: f64,
    /// Host density in a refuge-free field.
    pub h0: f64,
    pub rp_r: f64,
    pub rp_f: f64,
    pub bv_r: f64,
    pub bv_f: f64,
    pub dv_r: f64,
    pub dv_f: f64,
    /// Fraction of the host density lost where a refuge is placed:
    /// `H = h0 * (1 - host_loss * R)`. Defaults to 1.
    #[serde(default = "default_host_loss")]
    pub host_loss: f64,
}

fn default_host_loss() -> f64 {
    1.0
}

impl ModelParams {
    /// Biologically consistent preset for the sugar-beet / aphid / ladybird
    /// setting. It yields `xi = 1.58`, `m = 0.468`, an initial infected-vector
    /// load of one percent of the vector carrying capacity with
    /// `beta_vh * Vi0 = 0.0448`, and `h0 * |Omega| = 1058823` on `L = 1`.
    pub fn biological() -> Self {
        Self {
            beta_vh: 0.0448,
            beta_hv: 1e-6,
            sigma_v: 0.05,
            sigma_p: 0.05,
            alpha: 0.1,
            s_v: 0.00775,
            s_p: 1.0,
            h: 1.0,
            gamma: 0.1,
            h0: 1058823.0 / 2.0,
            rp_r: 1.4,
            rp_f: 1.0,
            bv_r: 1.255,
            bv_f: 1.255,
            dv_r: 0.548,
            dv_f: 0.48,
            host_loss: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let strictly_positive = [
            ("beta_vh", self.beta_vh),
            ("beta_hv", self.beta_hv),
            ("sigma_v", self.sigma_v),
            ("sigma_p", self.sigma_p),
            ("s_v", self.s_v),
            ("s_p", self.s_p),
            ("h", self.h),
            ("h0", self.h0),
            ("rp_r", self.rp_r),
            ("rp_f", self.rp_f),
            ("bv_r", self.bv_r),
            ("bv_f", self.bv_f),
            ("dv_r", self.dv_r),
            ("dv_f", self.dv_f),
        ];
        for (name, value) in strictly_positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        for (name, value) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {value}"),
                });
            }
        }
        if !(self.host_loss.is_finite() && self.host_loss > 0.0 && self.host_loss <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "host_loss",
                reason: format!("must lie in (0, 1], got {}", self.host_loss),
            });
        }
        Ok(())
    }

    pub fn rv_r(&self) -> f64 {
        self.bv_r - self.dv_r
    }

    pub fn rv_f(&self) -> f64 {
        self.bv_f - self.dv_f
    }

    /// Rate at which a unit of refuge raises the removal rate of infected
    /// vectors: `(h/s_p)(rp_r - rp_f) + dv_r - dv_f`.
    pub fn m(&self) -> f64 {
        self.h / self.s_p * (self.rp_r - self.rp_f) + self.dv_r - self.dv_f
    }

    /// Removal rate of infected vectors in a refuge-free field:
    /// `alpha + dv_f + (h/s_p) rp_f`.
    pub fn xi(&self) -> f64 {
        self.alpha + self.dv_f + self.h / self.s_p * self.rp_f
    }

    pub fn predator_growth(&self, r: f64) -> f64 {
        (self.rp_r - self.rp_f) * r + self.rp_f
    }

    pub fn vector_birth(&self, r: f64) -> f64 {
        (self.bv_r - self.bv_f) * r + self.bv_f
    }

    pub fn vector_death(&self, r: f64) -> f64 {
        (self.dv_r - self.dv_f) * r + self.dv_f
    }

    pub fn host_density(&self, r: f64) -> f64 {
        self.h0 * (1.0 - self.host_loss * r)
    }

    /// Potential of the susceptible-vector operator at refuge level `r`:
    /// `-r_V + h r_P / s_P`.
    pub fn vector_potential(&self, r: f64) -> f64 {
        -(self.vector_birth(r) - self.vector_death(r)) + self.h * self.predator_growth(r) / self.s_p
    }
}

/// Uniform cell-centered grid on `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub half_length: f64,
    pub n_cells: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 4;

    pub fn new(half_length: f64, n_cells: usize) -> Result<Self> {
        let grid = Self {
            half_length,
            n_cells,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_length.is_finite() && self.half_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half-length must be finite and positive, got {}",
                self.half_length
            )));
        }
        if self.n_cells < Self::MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} cells, got {}",
                Self::MIN_CELLS,
                self.n_cells
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_length / self.n_cells as f64
    }

    /// `|Omega| = 2L`.
    pub fn measure(&self) -> f64 {
        2.0 * self.half_length
    }

    pub fn center(&self, j: usize) -> f64 {
        -self.half_length + (j as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            half_length: 1.0,
            n_cells: 200,
        }
    }
}

/// A function sampled at the cell centers of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells {
            return Err(Error::LengthMismatch {
                expected: grid.n_cells,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    /// Wraps values already known to be finite and correctly sized.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells);
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.centers().into_iter().map(f).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Midpoint rule, `dx * sum_j f(x_j)`.
    pub fn integrate(&self) -> f64 {
        self.grid.dx() * self.values.iter().sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.measure()
    }

    /// Midpoint inner product `integral f g`.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.grid.dx()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, factor: f64) -> Field {
        self.map(|v| factor * v)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + t * b)
    }
}

/// Midpoint quadrature of a field over the whole domain.
pub fn integrate(f: &Field) -> f64 {
    f.integrate()
}

/// Average of a field over the domain.
pub fn mean(f: &Field) -> f64 {
    f.mean()
}

/// A field with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Refuge(Field);

impl Refuge {
    pub fn new(field: Field) -> Result<Self> {
        if let Some((index, &value)) = field
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::RefugeOutOfRange { index, value });
        }
        Ok(Self(field))
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::new(Field::constant(grid, value))
    }

    pub fn zeros(grid: Grid) -> Self {
        Self(Field::zeros(grid))
    }

    /// Clips every value into `[0, 1]`.
    pub fn clipped(field: &Field) -> Self {
        Self(field.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Samples `f` at the cell centers and clips into `[0, 1]`.
    pub fn from_fn_clipped(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self(Field::from_fn(grid, |x| f(x).clamp(0.0, 1.0)))
    }

    /// Indicator of the left half `[-L, 0)`.
    pub fn half_indicator(grid: Grid) -> Self {
        Self(Field::from_fn(grid, |x| if x < 0.0 { 1.0 } else { 0.0 }))
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn grid(&self) -> &Grid {
        self.0.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn is_constant(&self) -> bool {
        let v = self.values();
        v.iter().all(|&x| x == v[0])
    }
}

/// Spatial coefficient fields induced by a refuge.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCoeffs {
    pub host: Field,
    pub vector_birth: Field,
    pub vector_death: Field,
    pub vector_growth: Field,
    pub predator_growth: Field,
    pub m: f64,
    pub xi: f64,
}

impl SpatialCoeffs {
    pub fn grid(&self) -> &Grid {
        self.host.grid()
    }

    /// Optimization is only meaningful for `m > 0`.
    pub fn refuges_help(&self) -> bool {
        self.m > 0.0
    }

    /// `-r_V + h r_P / s_P`, the potential of the susceptible-vector operator.
    pub fn vector_potential(&self, params: &ModelParams) -> Field {
        let ratio = params.h / params.s_p;
        self.vector_growth
            .zip_map(&self.predator_growth, |rv, rp| -rv + ratio * rp)
            .expect("coefficient fields share a grid")
    }

    /// Predator density at the predator-only equilibrium, `r_P / s_P`.
    pub fn predator_equilibrium(&self, params: &ModelParams) -> Field {
        self.predator_growth.scale(1.0 / params.s_p)
    }
}

/// Maps a refuge to the coefficient fields of the model.
pub fn derive_coeffs(params: &ModelParams, refuge: &Refuge) -> Result<SpatialCoeffs> {
    params.validate()?;
    let r = refuge.field();
    let host = r.map(|x| params.host_density(x));
    let vector_birth = r.map(|x| params.vector_birth(x));
    let vector_death = r.map(|x| params.vector_death(x));
    let vector_growth = vector_birth.sub(&vector_death)?;
    let predator_growth = r.map(|x| params.predator_growth(x));
    for f in [&host, &vector_birth, &vector_death, &predator_growth] {
        if let Some(index) = f.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    let m = params.m();
    let xi = params.xi();
    if m <= 0.0 {
        log::warn!("m = {m} <= 0: refuges do not help, optimization will be refused");
    }
    Ok(SpatialCoeffs {
        host,
        vector_birth,
        vector_death,
        vector_growth,
        predator_growth,
        m,
        xi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_params() -> ModelParams {
        ModelParams {
            beta_vh: 0.5,
            beta_hv: 0.1,
            sigma_v: 0.1,
            sigma_p: 0.1,
            alpha: 0.2,
            s_v: 1.0,
            s_p: 1.0,
            h: 1.0,
            gamma: 0.5,
            h0: 10.0,
            rp_r: 2.0,
            rp_f: 1.0,
            bv_r: 1.5,
            bv_f: 1.2,
            dv_r: 1.0,
            dv_f: 0.9,
            host_loss: 1.0,
        }
    }

    #[test]
    fn field_endpoint_coefficients() {
        let p = test_params();
        let grid = Grid::new(1.0, 16).unwrap();
        let c = derive_coeffs(&p, &Refuge::zeros(grid)).unwrap();
        assert!(c.host.values().iter().all(|&v| v == p.h0));
        assert!(c.predator_growth.values().iter().all(|&v| v == p.rp_f));
        assert!(c.vector_birth.values().iter().all(|&v| v == p.bv_f));
        assert!(c.vector_death.values().iter().all(|&v| v == p.dv_f));

        let c = derive_coeffs(&p, &Refuge::constant(grid, 1.0).unwrap()).unwrap();
        assert!(c.host.values().iter().all(|&v| v == 0.0));
        assert!(c.predator_growth.values().iter().all(|&v| v == p.rp_r));
    }

    #[test]
    fn linearization_constants() {
        // (2 - 1) + (1 - 0.9) by hand
        let p = test_params();
        assert!((p.m() - 1.1).abs() < 1e-14);
        assert!((p.xi() - (0.2 + 0.9 + 1.0)).abs() < 1e-14);

        let bio = ModelParams::biological();
        assert!((bio.xi() - 1.58).abs() < 1e-12);
        assert!((bio.m() - 0.468).abs() < 1e-12);
        assert!((bio.h0 * 2.0 - 1058823.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = test_params();
        p.s_v = 0.0;
        assert!(matches!(p.validate(), Err(Error::InvalidParameter { name: "s_v", .. })));
        let mut p = test_params();
        p.alpha = -1.0;
        assert!(p.validate().is_err());
        let mut p = test_params();
        p.host_loss = 1.5;
        assert!(p.validate().is_err());
        p.host_loss = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn grid_geometry() {
        assert!(Grid::new(1.0, 3).is_err());
        assert!(Grid::new(0.0, 10).is_err());
        let g = Grid::new(1.0, 4).unwrap();
        assert_eq!(g.centers(), vec![-0.75, -0.25, 0.25, 0.75]);
        let g = Grid::new(2.5, 101).unwrap();
        for j in 0..g.n_cells {
            assert!((g.center(j) + g.center(g.n_cells - 1 - j)).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::new(1.0, 100).unwrap();
        assert!((Field::constant(g, 1.0).integrate() - 2.0).abs() < 1e-14);
        assert_eq!(Field::zeros(g).integrate(), 0.0);
        assert!(Field::from_fn(g, |x| x).integrate().abs() < 1e-14);
        assert!((Field::constant(g, 3.25).mean() - 3.25).abs() < 1e-14);
        assert!((Refuge::half_indicator(g).field().mean() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn field_rejects_bad_input() {
        let g = Grid::new(1.0, 4).unwrap();
        assert!(matches!(Field::new(g, vec![0.0; 3]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(
            Field::new(g, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { index: 1 })
        ));
        let f = Field::new(g, vec![0.0, 0.5, 1.0, 1.2]).unwrap();
        assert!(matches!(Refuge::new(f), Err(Error::RefugeOutOfRange { index: 3, .. })));
        let other = Field::zeros(Grid::new(1.0, 5).unwrap());
        assert_eq!(Field::zeros(g).add(&other), Err(Error::GridMismatch));
    }

    fn field_strategy(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(lo..hi, n)
    }

    proptest! {
        #[test]
        fn coefficients_are_affine_in_refuge(
            a in field_strategy(12, 0.0, 1.0),
            b in field_strategy(12, 0.0, 1.0),
            theta in 0.0f64..1.0,
        ) {
            let p = test_params();
            let g = Grid::new(1.0, 12).unwrap();
            let r1 = Refuge::new(Field::new(g, a).unwrap()).unwrap();
            let r2 = Refuge::new(Field::new(g, b).unwrap()).unwrap();
            let mix = Refuge::clipped(
                &r1.field().scale(theta).axpy(1.0 - theta, r2.field()).unwrap(),
            );
            let c1 = derive_coeffs(&p, &r1).unwrap();
            let c2 = derive_coeffs(&p, &r2).unwrap();
            let cm = derive_coeffs(&p, &mix).unwrap();
            let pairs = [
                (&cm.host, &c1.host, &c2.host),
                (&cm.vector_birth, &c1.vector_birth, &c2.vector_birth),
                (&cm.vector_death, &c1.vector_death, &c2.vector_death),
                (&cm.vector_growth, &c1.vector_growth, &c2.vector_growth),
                (&cm.predator_growth, &c1.predator_growth, &c2.predator_growth),
            ];
            for (m, f1, f2) in pairs {
                let expected = f1.scale(theta).axpy(1.0 - theta, f2).unwrap();
                for (x, y) in m.values().iter().zip(expected.values()) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
            }
        }

        #[test]
        fn integrate_is_linear_and_monotone(
            a in field_strategy(20, -5.0, 5.0),
            d in field_strategy(20, 0.0, 3.0),
            s in -3.0f64..3.0,
        ) {
            let g = Grid::new(1.5, 20).unwrap();
            let f = Field::new(g, a).unwrap();
            let bump = Field::new(g, d).unwrap();
            let upper = f.add(&bump).unwrap();
            prop_assert!(integrate(&f) <= integrate(&upper));
            let lin = f.scale(s).add(&upper).unwrap();
            let expected = s * integrate(&f) + integrate(&upper);
            prop_assert!((integrate(&lin) - expected).abs() < 1e-12 * (1.0 + expected.abs()));
            prop_assert!((mean(&f) - integrate(&f) / 3.0).abs() < 1e-14);
        }
    }
}
