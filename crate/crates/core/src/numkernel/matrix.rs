use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix. Column vectors are matrices with `cols == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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

    pub fn col_to_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Reinterprets the row-major buffer under a new shape with the same element count.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: (self.rows, self.cols),
                right: (rows, cols),
            });
        }
        Ok(Self {
            rows,
            cols,
            data: self.data,
        })
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn ensure_shape(&self, op: &'static str, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: shape,
            });
        }
        Ok(())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        other.ensure_shape("add_assign", self.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for p in 0..a.cols {
            let a_ip = a.data[i * a.cols + p];
            let b_row = &b.data[p * b.cols..(p + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    Ok(out)
}

/// `a · x` for a plain vector `x`; each output entry sums over columns in ascending order.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::Shape {
            op: "matvec",
            left: a.shape(),
            right: (x.len(), 1),
        });
    }
    Ok(a
        .data
        .chunks_exact(a.cols.max(1))
        .take(a.rows)
        .map(|row| {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            acc
        })
        .collect())
}

/// `aᵀ · y`; each output entry sums over rows of `a` in ascending order.
pub fn matvec_transposed(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if a.rows != y.len() {
        return Err(Error::Shape {
            op: "matvec_transposed",
            left: a.shape(),
            right: (y.len(), 1),
        });
    }
    let mut out = vec![0.0; a.cols];
    for (r, &yr) in y.iter().enumerate() {
        let row = &a.data[r * a.cols..(r + 1) * a.cols];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * yr;
        }
    }
    Ok(out)
}

/// Rank-one product `left · rightᵀ`.
pub fn outer(left: &[f64], right: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(left.len(), right.len());
    for (r, &l) in left.iter().enumerate() {
        for (c, &rv) in right.iter().enumerate() {
            out.data[r * right.len() + c] = l * rv;
        }
    }
    out
}

pub fn relu(x: &Matrix) -> Matrix {
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data: relu_slice(&x.data),
    }
}

/// Passes `upstream` where `x > 0`, zero elsewhere.
pub fn relu_backward(x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    upstream.ensure_shape("relu_backward", x.shape())?;
    Ok(Matrix {
        rows: x.rows,
        cols: x.cols,
        data: relu_backward_slice(&x.data, &upstream.data),
    })
}

pub(crate) fn relu_slice(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn relu_backward_slice(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(upstream)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_zero() {
        let x = Matrix::column(vec![3.0, 4.0]);
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let z = Matrix::column(vec![0.0, 0.0]);
        assert_eq!(matmul(&a, &z).unwrap(), z);
    }

    #[test]
    fn matmul_small_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::column(vec![5.0, 6.0]);
        let expected = brute_matmul(&a, &b);
        assert_eq!(expected.as_slice(), &[17.0, 39.0]);
        assert_eq!(matmul(&a, &b).unwrap(), expected);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 1);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)") && err.contains("(2, 1)"), "{err}");
    }

    #[test]
    fn matvec_variants_agree_with_matmul() {
        let a = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 4.0, -1.0]]).unwrap();
        let x = vec![2.0, 1.0, -4.0];
        let y = vec![0.5, -1.5];
        assert_eq!(
            matvec(&a, &x).unwrap(),
            matmul(&a, &Matrix::column(x.clone())).unwrap().into_vec()
        );
        assert_eq!(
            matvec_transposed(&a, &y).unwrap(),
            matmul(&a.transpose(), &Matrix::column(y.clone()))
                .unwrap()
                .into_vec()
        );
    }

    #[test]
    fn relu_examples() {
        let x = Matrix::column(vec![-1.0, 2.0]);
        assert_eq!(relu(&x).as_slice(), &[0.0, 2.0]);
        let up = Matrix::column(vec![5.0, 7.0]);
        assert_eq!(relu_backward(&x, &up).unwrap().as_slice(), &[0.0, 7.0]);
        assert!(relu_backward(&x, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn relu_gradient_matches_central_difference() {
        let f = |v: f64| relu(&Matrix::column(vec![v])).as_slice().iter().sum::<f64>();
        let h = 1e-6;
        let fd = (f(3.0 + h) - f(3.0 - h)) / (2.0 * h);
        let analytic = relu_backward(&Matrix::column(vec![3.0]), &Matrix::column(vec![1.0]))
            .unwrap()
            .as_slice()[0];
        assert_eq!(analytic, 1.0);
        assert!((fd - analytic).abs() < 1e-5);
    }

    fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in mat(3, 4), b in mat(4, 2), c in mat(2, 5)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(left.max_abs_diff(&right) <= 1e-10 * scale);
        }

        #[test]
        fn relu_backward_matches_finite_differences(x in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            let h = 1e-6;
            let xm = Matrix::column(x.clone());
            let ones = Matrix::column(vec![1.0; x.len()]);
            let analytic = relu_backward(&xm, &ones).unwrap();
            for i in 0..x.len() {
                if x[i].abs() < 1e-3 {
                    continue;
                }
                let mut plus = x.clone();
                plus[i] += h;
                let mut minus = x.clone();
                minus[i] -= h;
                let sum = |v: Vec<f64>| relu(&Matrix::column(v)).as_slice().iter().sum::<f64>();
                let fd = (sum(plus) - sum(minus)) / (2.0 * h);
                let a = analytic.as_slice()[i];
                prop_assert!((fd - a).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1.0));
            }
        }

        #[test]
        fn kernels_keep_finite_inputs_finite(a in mat(3, 3), b in mat(3, 3)) {
            prop_assert!(matmul(&a, &b).unwrap().is_finite());
            prop_assert!(relu(&a).is_finite());
        }
    }
}
