//! Discrete spatial structures: density grids, staggered momentum fields,
//! obstacle masks, boundary conditions, and the divergence/gradient stencils.
//!
//! Densities live at cell centers of an n×n grid. Momenta live on cell
//! faces at half-grid offsets: the vertical component `m1` is (n+1)×n
//! (flux in the row direction), the horizontal component `m2` is n×(n+1)
//! (flux in the column direction). Face `m1[i][j]` sits between cells
//! `(i-1, j)` and `(i, j)`.
//!
//! Under `Periodic` boundaries each row/column has exactly n distinct
//! faces: the wrap face connecting cells `(n-1, j)` and `(0, j)` is stored
//! at index 0, and index n is unused (kept zero).

use crate::error::{Error, Result};
use ndarray::Array2;

/// Boundary condition for the momentum field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryCondition {
    /// Zero momentum through the domain boundary; boundary faces are not unknowns.
    #[default]
    Dirichlet,
    /// Boundary faces are free unknowns with one-sided weights.
    Neumann,
    /// Faces wrap around; n faces per row/column.
    Periodic,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(BoundaryCondition::Dirichlet),
            "neumann" => Ok(BoundaryCondition::Neumann),
            "periodic" => Ok(BoundaryCondition::Periodic),
            other => Err(Error::Config(format!(
                "unknown boundary condition '{other}' (expected dirichlet|neumann|periodic)"
            ))),
        }
    }
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
            BoundaryCondition::Periodic => "periodic",
        };
        f.write_str(s)
    }
}

/// Nonnegative n×n mass field; one image or one time slice.
///
/// Constructors only enforce squareness and finiteness. Nonnegativity (and
/// the ≥ ε floor) is established by [`DensityGrid::threshold`], which the
/// preprocessing pipeline applies before any energy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    values: Array2<f64>,
}

impl DensityGrid {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows != cols {
            return Err(Error::ShapeMismatch(format!(
                "density grid must be square, got {rows}x{cols}"
            )));
        }
        if rows == 0 {
            return Err(Error::ShapeMismatch("density grid must be non-empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "density grid contains non-finite value {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((n, n), |(i, j)| f(i, j)))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((n, n), value))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// In-place access for the optimizer; callers maintain the invariants.
    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Total mass, Σ |x_{i,j}|.
    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Mass-weighted centroid in (row, col) pixel coordinates.
    pub fn centroid(&self) -> Result<(f64, f64)> {
        let mass = self.mass();
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let mut ci = 0.0;
        let mut cj = 0.0;
        for ((i, j), v) in self.values.indexed_iter() {
            let w = v.abs();
            ci += w * i as f64;
            cj += w * j as f64;
        }
        Ok((ci / mass, cj / mass))
    }

    /// Clamp every cell to at least `eps`.
    pub fn threshold(&self, eps: f64) -> DensityGrid {
        DensityGrid {
            values: self.values.mapv(|v| v.max(eps)),
        }
    }

    /// Block-average pooling down to `target_n` x `target_n`.
    ///
    /// Average (not sum) pooling keeps values in [0, 1] for image data;
    /// total mass scales by (target_n / n)^2 and callers renormalize when
    /// they need a specific mass.
    pub fn downsample(&self, target_n: usize) -> Result<DensityGrid> {
        let n = self.n();
        if target_n == 0 || n % target_n != 0 {
            return Err(Error::IncompatibleSize { n, target_n });
        }
        let k = n / target_n;
        let scale = 1.0 / (k * k) as f64;
        let values = Array2::from_shape_fn((target_n, target_n), |(bi, bj)| {
            let mut acc = 0.0;
            for di in 0..k {
                for dj in 0..k {
                    acc += self.values[(bi * k + di, bj * k + dj)];
                }
            }
            acc * scale
        });
        Ok(DensityGrid { values })
    }

    /// Rescale so the total mass equals `target_mass`.
    pub fn normalize_mass(&self, target_mass: f64) -> Result<DensityGrid> {
        let mass = self.mass();
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let scale = target_mass / mass;
        Ok(DensityGrid {
            values: self.values.mapv(|v| v * scale),
        })
    }

    /// Grid transpose (swap row and column axes).
    pub fn transposed(&self) -> DensityGrid {
        DensityGrid {
            values: self.values.t().to_owned(),
        }
    }
}

/// Ordered sequence of T+1 density slices ρ_0 … ρ_T.
#[derive(Debug, Clone)]
pub struct DensityPath {
    slices: Vec<DensityGrid>,
}

impl DensityPath {
    pub fn new(slices: Vec<DensityGrid>) -> Result<Self> {
        if slices.len() < 2 {
            return Err(Error::ShapeMismatch(
                "a path needs at least two slices (T >= 1)".into(),
            ));
        }
        let n = slices[0].n();
        if let Some((t, s)) = slices.iter().enumerate().find(|(_, s)| s.n() != n) {
            return Err(Error::ShapeMismatch(format!(
                "slice {t} is {0}x{0}, expected {n}x{n}",
                s.n()
            )));
        }
        Ok(Self { slices })
    }

    /// Number of time steps T (slices minus one).
    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn n(&self) -> usize {
        self.slices[0].n()
    }

    pub fn slices(&self) -> &[DensityGrid] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [DensityGrid] {
        &mut self.slices
    }

    pub fn into_slices(self) -> Vec<DensityGrid> {
        self.slices
    }
}

/// Momentum on cell faces: `m1` is (n+1)×n, `m2` is n×(n+1).
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    m1: Array2<f64>,
    m2: Array2<f64>,
}

impl StaggeredField {
    pub fn new(m1: Array2<f64>, m2: Array2<f64>) -> Result<Self> {
        let n = m1.ncols();
        if m1.nrows() != n + 1 || m2.nrows() != n || m2.ncols() != n + 1 {
            return Err(Error::ShapeMismatch(format!(
                "staggered field components disagree: m1 is {}x{}, m2 is {}x{} (want (n+1)xn and nx(n+1))",
                m1.nrows(),
                m1.ncols(),
                m2.nrows(),
                m2.ncols()
            )));
        }
        Ok(Self { m1, m2 })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m1: Array2::zeros((n + 1, n)),
            m2: Array2::zeros((n, n + 1)),
        }
    }

    pub fn n(&self) -> usize {
        self.m1.ncols()
    }

    pub fn m1(&self) -> &Array2<f64> {
        &self.m1
    }

    pub fn m2(&self) -> &Array2<f64> {
        &self.m2
    }

    pub fn m1_mut(&mut self) -> &mut Array2<f64> {
        &mut self.m1
    }

    pub fn m2_mut(&mut self) -> &mut Array2<f64> {
        &mut self.m2
    }
}

/// Strictly positive interior-face weights: `w1` is (n-1)×n, `w2` is n×(n-1).
///
/// `w1[i][j]` belongs to the vertical face between cells `(i, j)` and
/// `(i+1, j)`; `w2[i][j]` to the horizontal face between `(i, j)` and
/// `(i, j+1)`.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

/// Boolean obstacle mask; `true` marks a wall cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMask {
    cells: Array2<bool>,
}

impl ObstacleMask {
    pub fn new(cells: Array2<bool>) -> Result<Self> {
        let (rows, cols) = cells.dim();
        if rows != cols {
            return Err(Error::ShapeMismatch(format!(
                "obstacle mask must be square, got {rows}x{cols}"
            )));
        }
        Ok(Self { cells })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            cells: Array2::from_elem((n, n), false),
        }
    }

    pub fn n(&self) -> usize {
        self.cells.nrows()
    }

    pub fn is_obstacle(&self, i: usize, j: usize) -> bool {
        self.cells[(i, j)]
    }

    /// Number of obstacle cells.
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cells(&self) -> &Array2<bool> {
        &self.cells
    }
}

/// Discrete divergence of a staggered field:
/// `out[i][j] = m1[i+1][j] - m1[i][j] + m2[i][j+1] - m2[i][j]`,
/// with wrapped indices under `Periodic`.
pub fn divergence(m: &StaggeredField, bc: BoundaryCondition) -> Array2<f64> {
    let n = m.n();
    let (m1, m2) = (m.m1(), m.m2());
    match bc {
        BoundaryCondition::Dirichlet | BoundaryCondition::Neumann => {
            Array2::from_shape_fn((n, n), |(i, j)| {
                m1[(i + 1, j)] - m1[(i, j)] + m2[(i, j + 1)] - m2[(i, j)]
            })
        }
        BoundaryCondition::Periodic => Array2::from_shape_fn((n, n), |(i, j)| {
            m1[((i + 1) % n, j)] - m1[(i, j)] + m2[(i, (j + 1) % n)] - m2[(i, j)]
        }),
    }
}

/// Adjoint of [`divergence`]: the face gradient of a cell field.
///
/// The face between cells `(i-1, j)` and `(i, j)` carries
/// `y[i-1][j] - y[i][j]`; the sign is fixed by the adjoint identity
/// `<div m, y> = <m, grad y>`. Dirichlet keeps boundary faces at zero;
/// Neumann boundary faces carry the one-sided values `-y_edge` / `+y_edge`;
/// Periodic wrap faces live at index 0 with index n unused.
pub fn face_gradient(y: &Array2<f64>, bc: BoundaryCondition) -> Result<StaggeredField> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "multiplier field must be square, got {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    let mut g = StaggeredField::zeros(n);
    match bc {
        BoundaryCondition::Dirichlet => {
            for i in 1..n {
                for j in 0..n {
                    g.m1[(i, j)] = y[(i - 1, j)] - y[(i, j)];
                }
            }
            for i in 0..n {
                for j in 1..n {
                    g.m2[(i, j)] = y[(i, j - 1)] - y[(i, j)];
                }
            }
        }
        BoundaryCondition::Neumann => {
            for i in 1..n {
                for j in 0..n {
                    g.m1[(i, j)] = y[(i - 1, j)] - y[(i, j)];
                }
            }
            for i in 0..n {
                for j in 1..n {
                    g.m2[(i, j)] = y[(i, j - 1)] - y[(i, j)];
                }
            }
            for j in 0..n {
                g.m1[(0, j)] = -y[(0, j)];
                g.m1[(n, j)] = y[(n - 1, j)];
            }
            for i in 0..n {
                g.m2[(i, 0)] = -y[(i, 0)];
                g.m2[(i, n)] = y[(i, n - 1)];
            }
        }
        BoundaryCondition::Periodic => {
            for i in 0..n {
                for j in 0..n {
                    g.m1[(i, j)] = y[((i + n - 1) % n, j)] - y[(i, j)];
                    g.m2[(i, j)] = y[(i, (j + n - 1) % n)] - y[(i, j)];
                }
            }
        }
    }
    Ok(g)
}
