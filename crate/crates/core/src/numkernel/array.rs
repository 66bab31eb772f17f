use serde::{Deserialize, Serialize};

use super::KernelError;

/// Storage precision of an [`Array`]. Arithmetic always runs at 64 bits;
/// `F32` arrays hold values that are exactly representable as `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Dense row-major real array of rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, KernelError> {
        Self::with_dtype(shape, DType::F64, data)
    }

    pub fn with_dtype(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Result<Self, KernelError> {
        if shape.is_empty() || shape.len() > 3 || shape.iter().any(|&d| d == 0) {
            return Err(KernelError::Shape(format!("invalid extents {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(KernelError::Shape(format!(
                "extents {shape:?} need {n} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite(format!("array element {bad}")));
        }
        let data = match dtype {
            DType::F64 => data,
            DType::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        Ok(Array { shape, dtype, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array::new(shape, vec![0.0; n]).expect("valid extents")
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, KernelError> {
        Array::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Converts to the given storage precision, rounding when narrowing.
    pub fn to_dtype(&self, dtype: DType) -> Array {
        Array::with_dtype(self.shape.clone(), dtype, self.data.clone()).expect("already valid")
    }

    /// Row `r` of a rank-2 array.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Little-endian bytes at the array's storage precision.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * self.dtype.byte_width());
        for &v in &self.data {
            match self.dtype {
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        out
    }

    pub fn from_le_bytes(shape: Vec<usize>, dtype: DType, bytes: &[u8]) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        let w = dtype.byte_width();
        if bytes.len() != n * w {
            return Err(KernelError::Shape(format!(
                "expected {} bytes, found {}",
                n * w,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(w)
            .map(|c| match dtype {
                DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            })
            .collect();
        Array::with_dtype(shape, dtype, data)
    }
}

/// Dot product with four independent accumulators; summation order is fixed
/// so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
