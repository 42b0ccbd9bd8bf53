//! Model parameters as exchanged between clusters.
//!
//! # Wire layout (`ModelBytes`)
//!
//! All integers and floats are little-endian.
//!
//! | offset          | size        | content                                   |
//! |-----------------|-------------|-------------------------------------------|
//! | 0               | 4           | magic `b"UFW1"`                           |
//! | 4               | 4           | layer count `L` (`u32`)                   |
//! | 8               | 8·L         | per layer: `rows: u32`, `cols: u32`       |
//! | 8 + 8·L         | 8·Σ rows·cols | values as IEEE-754 binary64             |
//!
//! The encoding is canonical: equal weight vectors always produce identical
//! bytes, which is what makes content identifiers stable.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"UFW1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeightsError {
    #[error("shape expects {expected} values but {actual} were given")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("cannot combine an empty list of models")]
    Empty,
    #[error("bad magic {found:?}, expected \"UFW1\"")]
    BadMagic { found: Vec<u8> },
    #[error("truncated model bytes: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload holds {payload} bytes after the header but dims declare {declared}")]
    PayloadMismatch { declared: usize, payload: usize },
}

/// Dimensions of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerShape {
    pub rows: u32,
    pub cols: u32,
}

impl LayerShape {
    pub const fn new(rows: u32, cols: u32) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

fn describe(shape: &[LayerShape]) -> String {
    let parts: Vec<String> = shape.iter().map(|l| l.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Flat model parameters plus a per-layer shape descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    values: Vec<T>,
    shape: Vec<LayerShape>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn new(shape: Vec<LayerShape>, values: Vec<T>) -> Result<Self, WeightsError> {
        let expected: usize = shape.iter().map(LayerShape::len).sum();
        if expected != values.len() {
            return Err(WeightsError::LengthMismatch { expected, actual: values.len() });
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: Vec<LayerShape>) -> Self {
        let n = shape.iter().map(LayerShape::len).sum();
        Self { values: vec![T::zero(); n], shape }
    }

    /// Single-layer row vector, convenient for tests and 1-D toy models.
    pub fn from_slice(values: &[T]) -> Self {
        Self {
            shape: vec![LayerShape::new(1, values.len() as u32)],
            values: values.to_vec(),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn shape(&self) -> &[LayerShape] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self, WeightsError> {
        Self::new(self.shape.clone(), values)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn check_shape(&self, other: &Self) -> Result<(), WeightsError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(WeightsError::ShapeMismatch {
                left: describe(&self.shape),
                right: describe(&other.shape),
            })
        }
    }

    pub fn check_finite(&self) -> Result<(), WeightsError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(WeightsError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * factor).collect(),
            shape: self.shape.clone(),
        }
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Self) -> Result<Self, WeightsError> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        Ok(Self { values, shape: self.shape.clone() })
    }

    pub fn squared_distance(&self, other: &Self) -> Result<T, WeightsError> {
        self.check_shape(other)?;
        let mut acc = T::zero();
        for (&a, &b) in self.values.iter().zip(&other.values) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc)
    }

    /// Converts to another precision through the wire type.
    pub fn cast<U: Scalar>(&self) -> WeightVector<U> {
        WeightVector {
            values: self.values.iter().map(|v| U::from_wire(v.to_wire())).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<ModelBytes, WeightsError> {
        serialize(self)
    }
}

/// Canonical serialized model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelBytes(Vec<u8>);

impl ModelBytes {
    pub fn from_vec(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }
}

impl AsRef<[u8]> for ModelBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn serialize<T: Scalar>(w: &WeightVector<T>) -> Result<ModelBytes, WeightsError> {
    w.check_finite()?;
    let mut out = Vec::with_capacity(8 + 8 * w.shape.len() + 8 * w.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(w.shape.len() as u32).to_le_bytes());
    for layer in &w.shape {
        out.extend_from_slice(&layer.rows.to_le_bytes());
        out.extend_from_slice(&layer.cols.to_le_bytes());
    }
    for v in &w.values {
        out.extend_from_slice(&v.to_wire().to_le_bytes());
    }
    Ok(ModelBytes(out))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, WeightsError> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().expect("4-byte slice")))
        .ok_or(WeightsError::Truncated { needed: at + 4, available: bytes.len() })
}

pub fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<WeightVector<T>, WeightsError> {
    if bytes.len() < 4 {
        return Err(WeightsError::Truncated { needed: 4, available: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(WeightsError::BadMagic { found: bytes[..4].to_vec() });
    }
    let layers = read_u32(bytes, 4)? as usize;
    let mut shape = Vec::with_capacity(layers.min(1024));
    let mut at = 8;
    for _ in 0..layers {
        let rows = read_u32(bytes, at)?;
        let cols = read_u32(bytes, at + 4)?;
        shape.push(LayerShape::new(rows, cols));
        at += 8;
    }
    let count: usize = shape.iter().map(LayerShape::len).sum();
    let declared = count * 8;
    let payload = bytes.len() - at;
    if payload < declared {
        return Err(WeightsError::Truncated { needed: at + declared, available: bytes.len() });
    }
    if payload > declared {
        return Err(WeightsError::PayloadMismatch { declared, payload });
    }
    let values: Vec<T> = bytes[at..]
        .chunks_exact(8)
        .map(|c| T::from_wire(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    let w = WeightVector { values, shape };
    w.check_finite()?;
    Ok(w)
}

/// Σ coefficient·values, accumulated left to right over `terms`.
pub fn linear_combine<T: Scalar>(terms: &[(&WeightVector<T>, T)]) -> Result<WeightVector<T>, WeightsError> {
    let (first, _) = terms.first().ok_or(WeightsError::Empty)?;
    for (w, _) in &terms[1..] {
        first.check_shape(w)?;
    }
    let mut acc = vec![T::zero(); first.len()];
    for (w, c) in terms {
        for (a, &v) in acc.iter_mut().zip(&w.values) {
            *a += *c * v;
        }
    }
    let out = WeightVector { values: acc, shape: first.shape.clone() };
    out.check_finite()?;
    Ok(out)
}
