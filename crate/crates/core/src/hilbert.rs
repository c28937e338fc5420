//! Truncated Hilbert space elements and Hilbert-Schmidt operators.
//!
//! Every space is represented by its first `D` coordinates against a fixed
//! orthonormal basis `u_1..u_D`. Operators are dense `D x D` coefficient
//! matrices with entry `(i, j) = <T u_j, u_i>`, stored row-major.

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative cutoff below which eigenvalues of `T^T T` count as zero.
const SINGULAR_CLIP: f64 = 1e-12;

/// Coefficients of an element of a truncated Hilbert space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilbertVector {
    coeffs: Vec<f64>,
}

impl HilbertVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim] }
    }

    /// The `index`-th basis vector, zero-based.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.coeffs[index] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    /// Norm via Parseval: square root of the sum of squared coefficients.
    pub fn norm(&self) -> f64 {
        dot(&self.coeffs, &self.coeffs).sqrt()
    }
}

impl From<Vec<f64>> for HilbertVector {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}

/// Dense coefficient matrix of a Hilbert-Schmidt operator.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertOperator {
    dim: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OperatorJson {
    dim: usize,
    entries: Vec<Vec<f64>>,
}

impl Serialize for HilbertOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OperatorJson {
            dim: self.dim,
            entries: self.rows().map(<[f64]>::to_vec).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HilbertOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = OperatorJson::deserialize(d)?;
        HilbertOperator::from_rows(raw.entries)
            .and_then(|op| {
                if op.dim == raw.dim {
                    Ok(op)
                } else {
                    Err(Error::DimensionMismatch { expected: raw.dim, got: op.dim })
                }
            })
            .map_err(serde::de::Error::custom)
    }
}

impl HilbertOperator {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            op.set(i, i, 1.0);
        }
        op
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut op = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            op.set(i, i, d);
        }
        op
    }

    /// Builds an operator from row-major entries of length `dim * dim`.
    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        check_dim(dim * dim, entries.len())?;
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            entries.extend(row);
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.dim + j] = value;
    }

    pub fn add_to(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.dim + j] += value;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.dim.max(1)).take(self.dim)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|e| e * factor).collect() }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn apply(&self, x: &HilbertVector) -> Result<HilbertVector> {
        check_dim(self.dim, x.dim())?;
        Ok(HilbertVector::new(self.rows().map(|row| dot(row, x.coeffs())).collect()))
    }

    /// Largest absolute difference between the operator and its adjoint.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `(T + T^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                out.set(i, j, avg);
                out.set(j, i, avg);
            }
        }
        out
    }

    pub fn hs_norm(&self) -> f64 {
        dot(&self.entries, &self.entries).sqrt()
    }

    /// Sum of singular values, from the eigenvalues of `T^T T`.
    pub fn trace_norm(&self) -> f64 {
        self.singular_values().iter().sum()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        if self.dim == 0 {
            return Vec::new();
        }
        let t = self.to_matrix();
        let gram = t.transpose() * &t;
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
        let mut sv: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&e| if e <= SINGULAR_CLIP * top { 0.0 } else { e.sqrt() })
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Eigenvalues of the symmetric part, sorted decreasing.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.symmetrized().to_matrix().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        check_dim(m.nrows(), m.ncols())?;
        let dim = m.nrows();
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                op.set(i, j, m[(i, j)]);
            }
        }
        Ok(op)
    }

    /// Row-major CSV with a `# hilbert-operator dim=D` header line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# hilbert-operator dim={}\n", self.dim);
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty operator CSV".into()))??;
        let dim: usize = header
            .trim()
            .strip_prefix("# hilbert-operator dim=")
            .ok_or_else(|| Error::Parse(format!("bad operator header: {header}")))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad dim in header: {e}")))?;
        let mut rows = Vec::with_capacity(dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| cell.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{cell:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let op = Self::from_rows(rows)?;
        check_dim(dim, op.dim)?;
        Ok(op)
    }
}

/// `A ⊗ B` on the product space, kept in factored form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorOperator {
    pub factor_a: HilbertOperator,
    pub factor_b: HilbertOperator,
}

impl TensorOperator {
    pub fn new(factor_a: HilbertOperator, factor_b: HilbertOperator) -> Self {
        Self { factor_a, factor_b }
    }

    pub fn dim(&self) -> usize {
        self.factor_a.dim() * self.factor_b.dim()
    }

    /// Entry `((a, i), (b, j)) = A[a, b] * B[i, j]`.
    pub fn entry(&self, a: usize, i: usize, b: usize, j: usize) -> f64 {
        self.factor_a.get(a, b) * self.factor_b.get(i, j)
    }

    pub fn hs_norm(&self) -> f64 {
        tensor_hs_norm(&self.factor_a, &self.factor_b)
    }

    /// Explicit Kronecker product; row index is `a * D_b + i`.
    pub fn materialize(&self) -> HilbertOperator {
        let (da, db) = (self.factor_a.dim(), self.factor_b.dim());
        let mut out = HilbertOperator::zeros(da * db);
        for a in 0..da {
            for b in 0..da {
                let ab = self.factor_a.get(a, b);
                for i in 0..db {
                    for j in 0..db {
                        out.set(a * db + i, b * db + j, ab * self.factor_b.get(i, j));
                    }
                }
            }
        }
        out
    }
}

pub fn hs_norm(t: &HilbertOperator) -> f64 {
    t.hs_norm()
}

pub fn trace_norm(t: &HilbertOperator) -> f64 {
    t.trace_norm()
}

pub fn tensor_hs_norm(a: &HilbertOperator, b: &HilbertOperator) -> f64 {
    a.hs_norm() * b.hs_norm()
}

/// `x ⊗ y` as the operator with entries `x_i y_j`.
pub fn outer_product(x: &HilbertVector, y: &HilbertVector) -> Result<HilbertOperator> {
    check_dim(x.dim(), y.dim())?;
    let dim = x.dim();
    let mut entries = Vec::with_capacity(dim * dim);
    for &xi in x.coeffs() {
        entries.extend(y.coeffs().iter().map(|&yj| xi * yj));
    }
    Ok(HilbertOperator { dim, entries })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
