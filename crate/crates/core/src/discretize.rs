//! Cell-centered finite differences with homogeneous Neumann closure and the
//! tridiagonal machinery behind every implicit solve.

use crate::error::{Error, Result};
use crate::model::Field;

/// Tridiagonal matrix stored by diagonals. `lower[0]` and `upper[n - 1]` are
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        if n == 1 {
            y[0] = self.diag[0] * x[0];
            return;
        }
        y[0] = self.diag[0] * x[0] + self.upper[0] * x[1];
        for j in 1..n - 1 {
            y[j] = self.lower[j] * x[j - 1] + self.diag[j] * x[j] + self.upper[j] * x[j + 1];
        }
        y[n - 1] = self.lower[n - 1] * x[n - 2] + self.diag[n - 1] * x[n - 1];
    }

    /// `c * self + d * I`.
    pub fn scaled_shifted(&self, c: f64, d: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().map(|v| c * v).collect(),
            diag: self.diag.iter().zip(d).map(|(v, s)| c * v + s).collect(),
            upper: self.upper.iter().map(|v| c * v).collect(),
        }
    }

    pub fn factor(&self) -> Result<ThomasFactor> {
        ThomasFactor::new(self)
    }

    /// Solves `A x = rhs` with the Thomas algorithm.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let f = self.factor()?;
        let mut x = rhs.to_vec();
        f.solve_in_place(&mut x);
        Ok(x)
    }

    /// Dense row-major copy, for diagnostics and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut a = vec![vec![0.0; n]; n];
        for j in 0..n {
            a[j][j] = self.diag[j];
            if j > 0 {
                a[j][j - 1] = self.lower[j];
            }
            if j + 1 < n {
                a[j][j + 1] = self.upper[j];
            }
        }
        a
    }
}

/// LU factorization of a tridiagonal matrix without pivoting, reusable across
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct ThomasFactor {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_mod: Vec<f64>,
}

impl ThomasFactor {
    pub fn new(a: &Tridiagonal) -> Result<Self> {
        let n = a.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_mod = vec![0.0; n];
        let mut prev_c = 0.0;
        for j in 0..n {
            let l = if j > 0 { a.lower[j] } else { 0.0 };
            let pivot = a.diag[j] - l * prev_c;
            if !pivot.is_finite() || pivot.abs() < f64::MIN_POSITIVE * 1e10 {
                return Err(Error::SolverBreakdown { row: j });
            }
            inv_pivot[j] = 1.0 / pivot;
            let u = if j + 1 < n { a.upper[j] } else { 0.0 };
            prev_c = u * inv_pivot[j];
            upper_mod[j] = prev_c;
        }
        Ok(Self {
            lower: a.lower.clone(),
            inv_pivot,
            upper_mod,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.inv_pivot.len();
        debug_assert_eq!(x.len(), n);
        x[0] *= self.inv_pivot[0];
        for j in 1..n {
            x[j] = (x[j] - self.lower[j] * x[j - 1]) * self.inv_pivot[j];
        }
        for j in (0..n.saturating_sub(1)).rev() {
            x[j] -= self.upper_mod[j] * x[j + 1];
        }
    }
}

/// Matrix of `sigma * Laplacian` with mirror ghost cells.
pub fn laplacian_matrix(n: usize, dx: f64, sigma: f64) -> Tridiagonal {
    let ones = vec![1.0; n - 1];
    face_matrix(&ones, dx, sigma)
}

/// Matrix of `sigma * d/dx (r d/dx)` with arithmetic-mean face values and
/// zero flux through the boundary faces.
pub fn divergence_matrix(r: &[f64], dx: f64, sigma: f64) -> Result<Tridiagonal> {
    check_conductivity(r)?;
    Ok(face_matrix(&face_means(r), dx, sigma))
}

/// Interior face conductivities `(r_j + r_{j+1}) / 2`.
pub fn face_means(r: &[f64]) -> Vec<f64> {
    r.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Operator assembled from `n - 1` interior face conductivities.
pub fn face_matrix(faces: &[f64], dx: f64, sigma: f64) -> Tridiagonal {
    let n = faces.len() + 1;
    let s = sigma / (dx * dx);
    let mut a = Tridiagonal::zeros(n);
    for (j, &k) in faces.iter().enumerate() {
        let w = s * k;
        a.upper[j] = w;
        a.lower[j + 1] = w;
        a.diag[j] -= w;
        a.diag[j + 1] -= w;
    }
    a
}

fn check_conductivity(r: &[f64]) -> Result<()> {
    let min = r.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NonPositiveConductivity { min });
    }
    Ok(())
}

/// `sigma * (f_{j-1} - 2 f_j + f_{j+1}) / dx^2` with `f_{-1} = f_0` and
/// `f_n = f_{n-1}`.
pub fn laplacian_neumann(f: &Field, sigma: f64) -> Field {
    let g = *f.grid();
    let a = laplacian_matrix(g.n_cells, g.dx(), sigma);
    Field::from_vec_unchecked(g, a.apply(f.values()))
}

/// `sigma * div(r grad q)` in flux form.
pub fn divergence_form_apply(r: &Field, q: &Field, sigma: f64) -> Result<Field> {
    r.check_same_grid(q)?;
    let g = *q.grid();
    let a = divergence_matrix(r.values(), g.dx(), sigma)?;
    Ok(Field::from_vec_unchecked(g, a.apply(q.values())))
}

/// Solves `(-sigma * Laplacian + potential) u = rhs` with Neumann closure.
pub fn solve_helmholtz_neumann(potential: &Field, rhs: &Field, sigma: f64) -> Result<Field> {
    potential.check_same_grid(rhs)?;
    let min = potential.min();
    if !(min > 0.0) {
        return Err(Error::NonPositivePotential { min });
    }
    let g = *rhs.grid();
    let a = helmholtz_matrix(potential.values(), g.dx(), sigma);
    let u = a.solve(rhs.values())?;
    if let Some(index) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(Field::from_vec_unchecked(g, u))
}

/// Matrix of `-sigma * Laplacian + diag(potential)`.
pub fn helmholtz_matrix(potential: &[f64], dx: f64, sigma: f64) -> Tridiagonal {
    laplacian_matrix(potential.len(), dx, sigma).scaled_shifted(-1.0, potential)
}
