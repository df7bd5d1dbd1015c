//! Dense row-major matrices and vectors.
//!
//! Everything here is double precision and strictly shape-checked: there is no
//! broadcasting, and a mismatch is always an [`Error::Shape`].

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn ones(len: usize) -> Self {
        Vector(vec![1.0; len])
    }

    /// Unit vector `e_index` of length `len`.
    pub fn basis(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::Index {
                what: "basis vector",
                index,
                len,
            });
        }
        let mut v = Self::zeros(len);
        v.0[index] = 1.0;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, c: f64) -> Vector {
        self.map(|x| c * x)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len("dot", self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Vector) -> Result<()> {
        check_len("axpy", self, other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &x) in self.0.iter().enumerate() {
            match best {
                Some((_, b)) if x <= b => {}
                _ => best = Some((i, x)),
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn zip_with(&self, other: &Vector, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        check_len(op, self, other)?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect()))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

fn check_len(op: &'static str, a: &Vector, b: &Vector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(
            op,
            format!("vector of length {}", a.len()),
            format!("vector of length {}", b.len()),
        ));
    }
    Ok(())
}

/// Row-major dense matrix. Entry `(j, k)` is the weight from source `k` into
/// destination `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix construction",
                format!("{rows}x{cols}"),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(v: &Vector) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = v[i];
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "matrix rows",
                    format!("row 0 of length {cols}"),
                    format!("row {i} of length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matvec(&self, a: &Vector) -> Result<Vector> {
        matvec(self, a)
    }

    /// `Wᵀ δ` without materializing the transpose.
    pub fn matvec_transposed(&self, d: &Vector) -> Result<Vector> {
        if d.len() != self.rows {
            return Err(Error::shape(
                "transposed matvec",
                format!("matrix {}x{} (transposed)", self.rows, self.cols),
                format!("vector of length {}", d.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &dr) in d.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * dr;
            }
        }
        Ok(Vector(out))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                "matrix axpy",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: Vec<String> = self.row(r).iter().map(|x| format!("{x:8.4}")).collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

pub fn matvec(w: &Matrix, a: &Vector) -> Result<Vector> {
    if w.cols != a.len() {
        return Err(Error::shape(
            "matvec",
            format!("matrix {}x{}", w.rows, w.cols),
            format!("vector of length {}", a.len()),
        ));
    }
    let out = (0..w.rows)
        .map(|r| w.row(r).iter().zip(a.iter()).map(|(x, y)| x * y).sum())
        .collect();
    Ok(Vector(out))
}

/// Componentwise product `x ∘ y`.
pub fn hadamard(x: &Vector, y: &Vector) -> Result<Vector> {
    x.zip_with(y, "hadamard", |a, b| a * b)
}

/// `u vᵀ`, a `u.len() × v.len()` matrix.
pub fn outer(u: &Vector, v: &Vector) -> Matrix {
    let mut data = Vec::with_capacity(u.len() * v.len());
    for &a in u.iter() {
        data.extend(v.iter().map(|&b| a * b));
    }
    Matrix {
        rows: u.len(),
        cols: v.len(),
        data,
    }
}

/// `‖v‖₂²`.
pub fn sq_norm(v: &Vector) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(matvec(&Matrix::identity(3), &v(&[1., 2., 3.])).unwrap(), v(&[1., 2., 3.]));
        let w = Matrix::from_rows(&[vec![1., -1., 0.], vec![0., 1., -1.]]).unwrap();
        assert_eq!(matvec(&w, &v(&[5., 3., 2.])).unwrap(), v(&[2., 1.]));
        assert_eq!(matvec(&Matrix::zeros(2, 2), &v(&[7., 9.])).unwrap(), v(&[0., 0.]));
    }

    #[test]
    fn matvec_shape_error_names_both_operands() {
        let err = matvec(&Matrix::zeros(2, 3), &v(&[1., 2.])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("length 2"), "{msg}");
    }

    #[test]
    fn hadamard_examples() {
        let x = v(&[1., 2., 3.]);
        assert_eq!(hadamard(&x, &v(&[4., 5., 6.])).unwrap(), v(&[4., 10., 18.]));
        assert_eq!(hadamard(&x, &Vector::ones(3)).unwrap(), x);
        assert_eq!(hadamard(&x, &Vector::zeros(3)).unwrap(), Vector::zeros(3));
        assert!(hadamard(&x, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn outer_examples() {
        let m = outer(&v(&[1., 2.]), &v(&[3., 4., 5.]));
        assert_eq!(m, Matrix::from_rows(&[vec![3., 4., 5.], vec![6., 8., 10.]]).unwrap());
        assert_eq!(outer(&v(&[0., 0.]), &v(&[1., 2., 3.])), Matrix::zeros(2, 3));
        assert_eq!(outer(&v(&[1.]), &v(&[1.])), Matrix::identity(1));
    }

    #[test]
    fn sq_norm_examples() {
        assert_eq!(sq_norm(&v(&[3., 4.])), 25.0);
        assert_eq!(sq_norm(&Vector::zeros(4)), 0.0);
        assert_eq!(sq_norm(&v(&[1.])), 1.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(v(&[0.4, 0.4]).argmax(), Some(0));
        assert_eq!(v(&[0.1, 0.2, 0.7]).argmax(), Some(2));
        assert_eq!(Vector::zeros(0).argmax(), None);
    }

    fn small_matrix() -> impl Strategy<Value = (Matrix, Vector)> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            (
                prop::collection::vec(-10.0f64..10.0, r * c),
                prop::collection::vec(-10.0f64..10.0, r),
            )
                .prop_map(move |(w, d)| (Matrix::new(r, c, w).unwrap(), Vector::new(d)))
        })
    }

    proptest! {
        #[test]
        fn transposed_matvec_matches_double_loop((w, d) in small_matrix()) {
            let fast = w.matvec_transposed(&d).unwrap();
            let via_t = matvec(&w.transpose(), &d).unwrap();
            for k in 0..w.cols() {
                let mut acc = 0.0;
                for j in 0..w.rows() {
                    acc += w.get(j, k) * d[j];
                }
                let tol = 1e-12 * acc.abs().max(1.0);
                prop_assert!((fast[k] - acc).abs() <= tol);
                prop_assert!((via_t[k] - acc).abs() <= tol);
            }
        }

        #[test]
        fn hadamard_commutes_and_associates(
            xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..10)
        ) {
            let x = Vector::new(xs.iter().map(|t| t.0).collect());
            let y = Vector::new(xs.iter().map(|t| t.1).collect());
            let z = Vector::new(xs.iter().map(|t| t.2).collect());
            prop_assert_eq!(hadamard(&x, &y).unwrap(), hadamard(&y, &x).unwrap());
            let l = hadamard(&hadamard(&x, &y).unwrap(), &z).unwrap();
            let r = hadamard(&x, &hadamard(&y, &z).unwrap()).unwrap();
            for i in 0..x.len() {
                prop_assert!((l[i] - r[i]).abs() <= 1e-12 * l[i].abs().max(1.0));
            }
        }

        #[test]
        fn outer_entries_are_products(
            u in prop::collection::vec(-3.0f64..3.0, 5),
            w in prop::collection::vec(-3.0f64..3.0, 7)
        ) {
            let (u, w) = (Vector::new(u), Vector::new(w));
            let m = outer(&u, &w);
            prop_assert_eq!((m.rows(), m.cols()), (5, 7));
            for j in 0..5 {
                for k in 0..7 {
                    prop_assert_eq!(m.get(j, k), u[j] * w[k]);
                }
            }
        }
    }
}
