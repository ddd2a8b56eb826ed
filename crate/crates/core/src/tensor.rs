//! Dense row-major tensors and the forward kernels shared by the graph.
//!
//! Matrix-style kernels view a tensor as `rows × cols`, where `cols` is the
//! last extent and `rows` the product of the others. A rank-1 tensor is a
//! single row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer-norm epsilon used by the reference configuration.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be nonempty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptySequence("from_rows"));
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` under the last-axis matrix view.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.split_last() {
            None => (1, 1),
            Some((&cols, rest)) => (rest.iter().product(), cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = require_matrix("transpose", a)?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Row-wise softmax over the last axis, with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = x.data.clone();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

/// Row-wise log-softmax, evaluated as `x - max - ln Σ exp(x - max)`.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = x.data.clone();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

/// Normalizes each last-axis vector to zero mean and unit population
/// variance: `(x - mean) / sqrt(var + eps)`.
pub fn layer_normalize(x: &Tensor, eps: f64) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = x.data.clone();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unary {
    Tanh,
    Sigmoid,
    Log,
    Exp,
    Sqrt,
    /// `max(x, 0)`; the hinge `[·]_+`.
    Relu,
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Sqrt => "sqrt",
            Unary::Relu => "relu",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Sqrt => x.sqrt(),
            Unary::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    /// The hinge subgradient at 0 is 0.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Unary::Log => {
                if let Some(bad) = x.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
            }
            Unary::Sqrt => {
                if let Some(bad) = x.data.iter().find(|&&v| v < 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: format!("negative argument {bad}"),
                    });
                }
            }
            _ => {}
        }
        Ok(x.map(|v| self.eval(v)))
    }
}

pub fn elementwise(f: Unary, x: &Tensor) -> Result<Tensor> {
    f.apply(x)
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("l2_distance", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `D[i][j] = ‖a_i − b_j‖` for row sets `a: p×d`, `b: q×d`.
pub fn pairwise_distances(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (p, d) = a.dims2();
    let (q, d2) = b.dims2();
    if d != d2 {
        return Err(Error::dim("pairwise_distances", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(p * q);
    for i in 0..p {
        let ai = a.row(i);
        for j in 0..q {
            out.push(l2_distance(ai, b.row(j))?);
        }
    }
    Tensor::new(vec![p, q], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let a = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.item(), 11.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&Tensor::vector(vec![0.0, 0.0, 0.0]));
        for &v in u.data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        let p = softmax_rows(&Tensor::vector(vec![0.0, 3f64.ln()]));
        assert!(close(p.data()[0], 0.25, 1e-15));
        assert!(close(p.data()[1], 0.75, 1e-15));
        let x = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let shifted = x.map(|v| v + 17.0);
        assert!(softmax_rows(&x).max_abs_diff(&softmax_rows(&shifted)) < 1e-14);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax_rows(&Tensor::vector(vec![500.0, -500.0, 499.0]));
        assert!(p.is_finite());
        assert!(close(p.data().iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = Tensor::from_rows(&[[0.1, 2.0, -3.0], [5.0, 5.0, 5.0]]).unwrap();
        let a = log_softmax_rows(&x);
        let b = softmax_rows(&x).map(f64::ln);
        assert!(a.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn layer_norm_examples() {
        let c = layer_normalize(&Tensor::vector(vec![5.0; 4]), 1e-5);
        assert!(c.data().iter().all(|v| v.abs() < 1e-12));
        let y = layer_normalize(&Tensor::vector(vec![1.0, 3.0]), 0.0);
        assert_eq!(y.data(), &[-1.0, 1.0]);
        let x = Tensor::vector(vec![0.4, -2.0, 1.5, 3.0]);
        let a = layer_normalize(&x, 0.0);
        let b = layer_normalize(&x.map(|v| 7.5 * v), 0.0);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn elementwise_examples() {
        let z = Tensor::scalar(0.0);
        assert_eq!(elementwise(Unary::Tanh, &z).unwrap().item(), 0.0);
        assert_eq!(elementwise(Unary::Sigmoid, &z).unwrap().item(), 0.5);
        let x = Tensor::vector(vec![-3.0, -0.1, 0.0, 0.7, 4.0]);
        let back = Unary::Log.apply(&Unary::Exp.apply(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-14);
        assert!(matches!(
            elementwise(Unary::Log, &Tensor::vector(vec![1.0, 0.0])),
            Err(Error::Domain { op: "log", .. })
        ));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(l2_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let a = [0.3, -1.0, 2.2];
        let b = [1.1, 0.5, -0.4];
        assert_eq!(l2_distance(&a, &b).unwrap(), l2_distance(&b, &a).unwrap());
        assert!(matches!(l2_distance(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }
}
