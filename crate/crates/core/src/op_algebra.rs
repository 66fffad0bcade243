//! Dense complex operators on a grid and their elementary algebra.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QgrError, Result};
use crate::geobracket::StructureFunction;
use crate::grid::{Boundary, Grid, PhysicalConstants};

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Absolute bound on `max|M - M^dagger|` for the Hermitian hint.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeScheme {
    Fd2,
    #[default]
    Fd4,
    Spectral,
}

impl DerivativeScheme {
    /// Formal order of accuracy; `None` stands for spectral.
    pub fn order(self) -> Option<u32> {
        match self {
            DerivativeScheme::Fd2 => Some(2),
            DerivativeScheme::Fd4 => Some(4),
            DerivativeScheme::Spectral => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivativeScheme::Fd2 => "fd2",
            DerivativeScheme::Fd4 => "fd4",
            DerivativeScheme::Spectral => "spectral",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Operator {
    grid: Grid,
    matrix: Array2<C64>,
    label: String,
    hermitian_hint: bool,
    // diagonal entries when the operator is a pure multiplication
    diag: Option<Array1<C64>>,
}

impl Operator {
    pub fn from_matrix(grid: Grid, matrix: Array2<C64>, label: impl Into<String>) -> Result<Self> {
        let n = grid.n();
        if matrix.dim() != (n, n) {
            return Err(QgrError::DimensionMismatch {
                expected: n,
                got: matrix.nrows(),
            });
        }
        if matrix.iter().any(|z| !z.is_finite()) {
            return Err(QgrError::NonFinite("operator matrix"));
        }
        Ok(Self::assemble(grid, matrix, label.into(), None))
    }

    pub fn from_diagonal(grid: Grid, diag: Array1<C64>, label: impl Into<String>) -> Result<Self> {
        if diag.len() != grid.n() {
            return Err(QgrError::LengthMismatch {
                expected: grid.n(),
                got: diag.len(),
            });
        }
        if diag.iter().any(|z| !z.is_finite()) {
            return Err(QgrError::NonFinite("multiplication samples"));
        }
        let matrix = Array2::from_diag(&diag);
        Ok(Self::assemble(grid, matrix, label.into(), Some(diag)))
    }

    fn assemble(grid: Grid, matrix: Array2<C64>, label: String, diag: Option<Array1<C64>>) -> Self {
        let hermitian_hint = match &diag {
            Some(d) => d.iter().all(|z| z.im.abs() <= HERMITIAN_TOL),
            None => hermiticity_defect(&matrix) <= HERMITIAN_TOL,
        };
        Operator {
            grid,
            matrix,
            label,
            hermitian_hint,
            diag,
        }
    }

    pub fn identity(grid: &Grid) -> Self {
        Self::assemble(
            *grid,
            Array2::eye(grid.n()),
            "I".into(),
            Some(Array1::from_elem(grid.n(), C64::new(1.0, 0.0))),
        )
    }

    pub fn zero(grid: &Grid) -> Self {
        let n = grid.n();
        Self::assemble(
            *grid,
            Array2::zeros((n, n)),
            "0".into(),
            Some(Array1::zeros(n)),
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn hermitian_hint(&self) -> bool {
        self.hermitian_hint
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diagonal(&self) -> Option<&Array1<C64>> {
        self.diag.as_ref()
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        match &self.diag {
            Some(d) => d * v,
            None => self.matrix.dot(v),
        }
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.matrix)
    }

    /// Hermitian up to `rel` relative to the operator scale.
    pub fn is_hermitian_within(&self, rel: f64) -> bool {
        self.hermiticity_defect() <= rel * self.max_norm().max(1.0)
    }

    pub fn scaled(&self, c: C64) -> Operator {
        let diag = self.diag.as_ref().map(|d| d * c);
        Self::assemble(
            self.grid,
            &self.matrix * c,
            format!("{c}·{}", self.label),
            diag,
        )
    }

    pub fn plus(&self, other: &Operator) -> Result<Operator> {
        linear_combine(&[(C64::new(1.0, 0.0), self), (C64::new(1.0, 0.0), other)])
    }

    pub fn minus(&self, other: &Operator) -> Result<Operator> {
        linear_combine(&[(C64::new(1.0, 0.0), self), (C64::new(-1.0, 0.0), other)])
    }
}

pub(crate) fn hermiticity_defect(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

fn is_zero(m: &Array2<C64>) -> bool {
    m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

pub(crate) fn same_grid(a: &Operator, b: &Operator) -> Result<()> {
    if a.grid != b.grid {
        Err(QgrError::GridMismatch)
    } else {
        Ok(())
    }
}

pub fn build_multiplication(grid: &Grid, f: &Array1<C64>) -> Result<Operator> {
    Operator::from_diagonal(*grid, f.clone(), "M_f")
}

pub fn build_multiplication_real(grid: &Grid, f: &Array1<f64>) -> Result<Operator> {
    Operator::from_diagonal(*grid, f.mapv(|x| C64::new(x, 0.0)), "M_f")
}

/// Real antisymmetric matrix approximating d/dx.
pub fn build_derivative(grid: &Grid, scheme: DerivativeScheme) -> Result<Operator> {
    let n = grid.n();
    let h = grid.h();
    let mut d = Array2::<f64>::zeros((n, n));
    match scheme {
        DerivativeScheme::Fd2 => fill_stencil(&mut d, grid, &[(1, 0.5 / h)]),
        DerivativeScheme::Fd4 => fill_stencil(
            &mut d,
            grid,
            &[(1, 8.0 / (12.0 * h)), (2, -1.0 / (12.0 * h))],
        ),
        DerivativeScheme::Spectral => {
            if grid.boundary() != Boundary::Periodic {
                return Err(QgrError::SpectralOnDirichlet);
            }
            let scale = PI / grid.length();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let k = i as f64 - j as f64;
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    let t = PI * k / n as f64;
                    let v = if n % 2 == 0 {
                        1.0 / t.tan()
                    } else {
                        1.0 / t.sin()
                    };
                    d[[i, j]] = scale * sign * v;
                }
            }
            // enforce exact antisymmetry against rounding in cot/csc
            for i in 0..n {
                for j in 0..i {
                    d[[i, j]] = -d[[j, i]];
                }
            }
        }
    }
    let m = d.mapv(|x| C64::new(x, 0.0));
    Operator::from_matrix(*grid, m, format!("D[{}]", scheme.name()))
}

// Central stencil: for each offset k, +c at i+k and -c at i-k.
fn fill_stencil(d: &mut Array2<f64>, grid: &Grid, coeffs: &[(usize, f64)]) {
    let n = grid.n() as isize;
    let periodic = grid.boundary() == Boundary::Periodic;
    for i in 0..n {
        for &(k, c) in coeffs {
            for (off, w) in [(k as isize, c), (-(k as isize), -c)] {
                let j = i + off;
                let j = if periodic {
                    j.rem_euclid(n)
                } else if (0..n).contains(&j) {
                    j
                } else {
                    continue;
                };
                d[[i as usize, j as usize]] += w;
            }
        }
    }
}

pub fn build_position(grid: &Grid) -> Operator {
    let x = grid.points().mapv(|v| C64::new(v, 0.0));
    Operator::assemble(*grid, Array2::from_diag(&x), "x".into(), Some(x))
}

/// `-i hbar D`.
pub fn build_momentum_classical(
    grid: &Grid,
    scheme: DerivativeScheme,
    c: &PhysicalConstants,
) -> Result<Operator> {
    let d = build_derivative(grid, scheme)?;
    Ok(d.scaled(-I * c.hbar).with_label("p"))
}

/// `-i hbar (D + diag(s'))`.
pub fn build_geomentum(
    grid: &Grid,
    scheme: DerivativeScheme,
    s: &StructureFunction,
    c: &PhysicalConstants,
) -> Result<Operator> {
    if s.grid() != grid {
        return Err(QgrError::GridMismatch);
    }
    let d = build_derivative(grid, scheme)?;
    let ds = build_multiplication_real(grid, s.s1())?;
    Ok(d.plus(&ds)?.scaled(-I * c.hbar).with_label("p_geo"))
}

pub fn adjoint(a: &Operator) -> Operator {
    let m = a.matrix.t().mapv(|z| z.conj());
    let diag = a.diag.as_ref().map(|d| d.mapv(|z| z.conj()));
    Operator::assemble(a.grid, m, format!("{}†", a.label), diag)
}

pub fn compose(a: &Operator, b: &Operator) -> Result<Operator> {
    same_grid(a, b)?;
    let label = format!("{}∘{}", a.label, b.label);
    let op = match (&a.diag, &b.diag) {
        (Some(da), Some(db)) => {
            let d = da * db;
            Operator::assemble(a.grid, Array2::from_diag(&d), label, Some(d))
        }
        (Some(da), None) => {
            let mut m = b.matrix.clone();
            Zip::from(m.rows_mut())
                .and(da)
                .for_each(|mut row, &s| row.mapv_inplace(|z| z * s));
            Operator::assemble(a.grid, m, label, None)
        }
        (None, Some(db)) => {
            let mut m = a.matrix.clone();
            Zip::from(m.columns_mut())
                .and(db)
                .for_each(|mut col, &s| col.mapv_inplace(|z| z * s));
            Operator::assemble(a.grid, m, label, None)
        }
        // skip the GEMM when either factor vanishes (common with s = 0)
        (None, None) if is_zero(&a.matrix) || is_zero(&b.matrix) => {
            let n = a.dim();
            Operator::assemble(a.grid, Array2::zeros((n, n)), label, Some(Array1::zeros(n)))
        }
        (None, None) => Operator::assemble(a.grid, a.matrix.dot(&b.matrix), label, None),
    };
    Ok(op)
}

pub fn linear_combine(terms: &[(C64, &Operator)]) -> Result<Operator> {
    let (_, first) = terms.first().ok_or(QgrError::EmptyCombination)?;
    for (_, op) in terms {
        same_grid(first, op)?;
    }
    let n = first.dim();
    let mut m = Array2::<C64>::zeros((n, n));
    for (c, op) in terms {
        m.scaled_add(*c, &op.matrix);
    }
    let diag = if terms.iter().all(|(_, op)| op.diag.is_some()) {
        let mut d = Array1::<C64>::zeros(n);
        for (c, op) in terms {
            d.scaled_add(*c, op.diag.as_ref().unwrap());
        }
        Some(d)
    } else {
        None
    };
    let label = terms
        .iter()
        .map(|(c, op)| format!("{c}·{}", op.label))
        .collect::<Vec<_>>()
        .join(" + ");
    Ok(Operator::assemble(first.grid, m, label, diag))
}

/// `ab - ba`.
pub fn commutator_cr(a: &Operator, b: &Operator) -> Result<Operator> {
    let ab = compose(a, b)?;
    let ba = compose(b, a)?;
    Ok(ab
        .minus(&ba)?
        .with_label(format!("[{},{}]", a.label, b.label)))
}

/// `ab + ba`.
pub fn anticommutator_ir(a: &Operator, b: &Operator) -> Result<Operator> {
    let ab = compose(a, b)?;
    let ba = compose(b, a)?;
    Ok(ab
        .plus(&ba)?
        .with_label(format!("{{{},{}}}", a.label, b.label)))
}

/// Max-norm distance between two operators.
pub fn max_diff(a: &Operator, b: &Operator) -> f64 {
    (&a.matrix - &b.matrix)
        .iter()
        .fold(0.0, |m, z| m.max(z.norm()))
}
