//! Dense tensors with an explicit element precision.
//!
//! Elements are always stored as `f64`. A tensor tagged [`Precision::Single`]
//! only ever holds values that are exactly representable as `f32`, and every
//! primitive applied to it is evaluated with native `f32` arithmetic, so the
//! results are bit-for-bit what an `f32` implementation would produce.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element precision. Ordered by bit width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::Single => 32,
            Precision::Double => 64,
        }
    }

    /// Round `v` to the nearest value representable at this precision.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Single => f.write_str("single"),
            Precision::Double => f.write_str("double"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::config(
                "precision",
                format!("expected `single` or `double`, got `{other}`"),
            )),
        }
    }
}

/// Which precision the equilibrium function is evaluated in, and which
/// precision the add/subtract/divide steps of the solver run in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrecisionPolicy {
    pub compute: Precision,
    pub accumulate: Precision,
}

impl PrecisionPolicy {
    pub const DOUBLE: Self = Self {
        compute: Precision::Double,
        accumulate: Precision::Double,
    };
    pub const SINGLE: Self = Self {
        compute: Precision::Single,
        accumulate: Precision::Single,
    };
    /// Single-precision function evaluation with double-precision
    /// accumulation.
    pub const MIXED: Self = Self {
        compute: Precision::Single,
        accumulate: Precision::Double,
    };

    pub fn new(compute: Precision, accumulate: Precision) -> Result<Self> {
        let policy = Self { compute, accumulate };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.accumulate < self.compute {
            return Err(Error::config(
                "accumulate_precision",
                format!(
                    "accumulate precision ({}) must be at least compute precision ({})",
                    self.accumulate, self.compute
                ),
            ));
        }
        Ok(())
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> &'static str {
        match (self.compute, self.accumulate) {
            (Precision::Double, Precision::Double) => "double",
            (Precision::Single, Precision::Single) => "single",
            (Precision::Single, Precision::Double) => "mixed",
            (Precision::Double, Precision::Single) => "invalid",
        }
    }
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self::DOUBLE
    }
}

impl std::str::FromStr for PrecisionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Self::DOUBLE),
            "single" => Ok(Self::SINGLE),
            "mixed" => Ok(Self::MIXED),
            other => Err(Error::config(
                "policy",
                format!("expected `double`, `single` or `mixed`, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Immutable dense array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("precision", &self.precision)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        let data = match precision {
            Precision::Double => data,
            Precision::Single => data.into_iter().map(|v| precision.round(v)).collect(),
        };
        Ok(Self { shape, data, precision })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            precision: Precision::Double,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::vector(vec![v])
    }

    /// Row-major matrix from nested rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged matrix rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data, Precision::Double)
    }

    pub fn zeros(shape: &[usize], precision: Precision) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            precision,
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape, other.precision)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same shape and precision, new contents.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape.clone(),
            data,
            precision: self.precision,
        }
    }

    pub fn cast(&self, precision: Precision) -> Tensor {
        if precision == self.precision {
            return self.clone();
        }
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| precision.round(v)).collect(),
            precision,
        }
    }

    fn check_binary(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        if self.precision != other.precision {
            return Err(Error::PrecisionMismatch {
                op,
                lhs: self.precision,
                rhs: other.precision,
            });
        }
        Ok(())
    }

    fn zip_map(&self, other: &Tensor, f32op: fn(f32, f32) -> f32, f64op: fn(f64, f64) -> f64) -> Tensor {
        let data = match self.precision {
            Precision::Double => self.data.iter().zip(&other.data).map(|(&a, &b)| f64op(a, b)).collect(),
            Precision::Single => self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f32op(a as f32, b as f32) as f64)
                .collect(),
        };
        self.with_data(data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_binary(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_binary(other, "subtract")?;
        Ok(self.zip_map(other, |a, b| a - b, |a, b| a - b))
    }

    /// Elementwise product. Used by VJP rules only.
    pub(crate) fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_binary(other, "multiply")?;
        Ok(self.zip_map(other, |a, b| a * b, |a, b| a * b))
    }

    /// Multiply by a scalar. The scalar is first rounded to the tensor's
    /// precision.
    pub fn scale(&self, c: f64) -> Tensor {
        let data = match self.precision {
            Precision::Double => self.data.iter().map(|&a| a * c).collect(),
            Precision::Single => {
                let c = c as f32;
                self.data.iter().map(|&a| (a as f32 * c) as f64).collect()
            }
        };
        self.with_data(data)
    }

    /// Divide by a scalar (rounded to the tensor's precision first).
    pub fn div_scalar(&self, c: f64) -> Tensor {
        let data = match self.precision {
            Precision::Double => self.data.iter().map(|&a| a / c).collect(),
            Precision::Single => {
                let c = c as f32;
                self.data.iter().map(|&a| (a as f32 / c) as f64).collect()
            }
        };
        self.with_data(data)
    }

    /// Matrix-vector product `self · v` for a `[rows, cols]` matrix and a
    /// `[cols]` vector. Row sums accumulate left to right at the operand
    /// precision.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.matrix_dims("matmul")?;
        if v.shape != [cols] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        if self.precision != v.precision {
            return Err(Error::PrecisionMismatch {
                op: "matmul",
                lhs: self.precision,
                rhs: v.precision,
            });
        }
        let mut out = Vec::with_capacity(rows);
        match self.precision {
            Precision::Double => {
                for row in self.data.chunks_exact(cols) {
                    let mut acc = 0.0f64;
                    for (a, b) in row.iter().zip(&v.data) {
                        acc += a * b;
                    }
                    out.push(acc);
                }
            }
            Precision::Single => {
                for row in self.data.chunks_exact(cols) {
                    let mut acc = 0.0f32;
                    for (a, b) in row.iter().zip(&v.data) {
                        acc += *a as f32 * *b as f32;
                    }
                    out.push(acc as f64);
                }
            }
        }
        Ok(Tensor {
            shape: vec![rows],
            data: out,
            precision: self.precision,
        })
    }

    /// `selfᵀ · v` without materialising the transpose.
    pub(crate) fn matvec_transposed(&self, v: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.matrix_dims("matmul_t")?;
        if v.shape != [rows] {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        let data = match self.precision {
            Precision::Double => {
                let mut out = vec![0.0f64; cols];
                for (row, &g) in self.data.chunks_exact(cols).zip(&v.data) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * g;
                    }
                }
                out
            }
            Precision::Single => {
                let mut out = vec![0.0f32; cols];
                for (row, &g) in self.data.chunks_exact(cols).zip(&v.data) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += *a as f32 * g as f32;
                    }
                }
                out.into_iter().map(f64::from).collect()
            }
        };
        Ok(Tensor {
            shape: vec![cols],
            data,
            precision: self.precision,
        })
    }

    /// Outer product `a bᵀ`, the matrix cotangent of a matrix-vector product.
    pub(crate) fn outer(a: &Tensor, b: &Tensor) -> Tensor {
        let precision = a.precision;
        let mut data = Vec::with_capacity(a.len() * b.len());
        for &x in &a.data {
            for &y in &b.data {
                data.push(match precision {
                    Precision::Double => x * y,
                    Precision::Single => (x as f32 * y as f32) as f64,
                });
            }
        }
        Tensor {
            shape: vec![a.len(), b.len()],
            data,
            precision,
        }
    }

    pub fn activation(&self, act: Activation) -> Tensor {
        let data = match (act, self.precision) {
            (Activation::Tanh, Precision::Double) => self.data.iter().map(|a| a.tanh()).collect(),
            (Activation::Tanh, Precision::Single) => self.data.iter().map(|&a| (a as f32).tanh() as f64).collect(),
            (Activation::Relu, _) => self.data.iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect(),
        };
        self.with_data(data)
    }

    pub fn tanh(&self) -> Tensor {
        self.activation(Activation::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.activation(Activation::Relu)
    }

    /// Norm evaluated in double precision regardless of the tensor's tag.
    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::L2 => self.data.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::Max => self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }
}

/// Concatenate the elements of several tensors into one flat vector.
pub fn flatten(tensors: &[Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Inverse of [`flatten`]: split `flat` into tensors shaped like `like`.
pub fn unflatten(flat: &[f64], like: &[Tensor]) -> Result<Vec<Tensor>> {
    let total: usize = like.iter().map(Tensor::len).sum();
    if total != flat.len() {
        return Err(Error::InvalidTensor(format!(
            "cannot split {} values into tensors holding {}",
            flat.len(),
            total
        )));
    }
    let mut offset = 0;
    like.iter()
        .map(|t| {
            let part = flat[offset..offset + t.len()].to_vec();
            offset += t.len();
            Tensor::new(t.shape().to_vec(), part, t.precision())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_componentwise() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn matvec_diagonal() {
        let m = Tensor::matrix(&[vec![0.5, 0.0], vec![0.0, 0.3]]).unwrap();
        let v = Tensor::vector(vec![2.0, 10.0 / 7.0]);
        let out = m.matvec(&v).unwrap();
        assert_eq!(out.data()[0], 1.0);
        assert!((out.data()[1] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn tanh_at_origin() {
        assert_eq!(Tensor::vector(vec![0.0]).tanh().data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = a.sub(&b).unwrap_err().to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn precision_mismatch_is_an_error() {
        let a = Tensor::vector(vec![1.0]);
        let b = a.cast(Precision::Single);
        assert!(matches!(a.add(&b), Err(Error::PrecisionMismatch { .. })));
    }

    #[test]
    fn element_count_checked() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3], Precision::Double).is_err());
    }

    #[test]
    fn single_precision_matches_native_f32() {
        let a = Tensor::vector(vec![0.1, 1.0 / 3.0]).cast(Precision::Single);
        let b = Tensor::vector(vec![0.7, 2.0 / 3.0]).cast(Precision::Single);
        let sum = a.add(&b).unwrap();
        assert_eq!(sum.data()[0], (0.1f32 + 0.7f32) as f64);
        assert_eq!(sum.data()[1], ((1.0f32 / 3.0) + (2.0f32 / 3.0)) as f64);
    }

    #[test]
    fn norms() {
        let a = Tensor::vector(vec![3.0, -4.0]);
        assert_eq!(a.norm(NormKind::L2), 5.0);
        assert_eq!(a.norm(NormKind::Max), 4.0);
    }

    #[test]
    fn policy_rejects_narrow_accumulation() {
        assert!(PrecisionPolicy::new(Precision::Double, Precision::Single).is_err());
        assert!(PrecisionPolicy::new(Precision::Single, Precision::Double).is_ok());
    }

    #[test]
    fn sub_undoes_add_when_exact() {
        let a = Tensor::vector(vec![1.5, -0.25, 3.0]);
        let b = Tensor::vector(vec![0.5, 0.125, -1.0]);
        assert_eq!(a.add(&b).unwrap().sub(&b).unwrap(), a);
    }

    #[test]
    fn flatten_roundtrip() {
        let ts = vec![Tensor::matrix(&[vec![1.0, 2.0]]).unwrap(), Tensor::vector(vec![3.0])];
        let flat = flatten(&ts);
        assert_eq!(unflatten(&flat, &ts).unwrap(), ts);
    }
}
