//! Per-tensor scalar quantization onto bounded integer grids.
//!
//! Two grids are supported. The polar grid is symmetric with the extreme
//! level `-L/2` dropped, so magnitudes fit in `A - 1` bits. The non-polar
//! grid covers `[0, L - 1]` and is what standard unfolding consumes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::codec::CodecKind;
use crate::error::{Error, Result};

/// Largest supported activation bit-width.
pub const MAX_BIT_WIDTH: u32 = 16;

/// Sign handling of the integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Symmetric grid `[-L/2 + 1, L/2 - 1]`; sign travels as spike polarity.
    Polar,
    /// Non-negative grid `[0, L - 1]`.
    #[serde(alias = "non-polar")]
    Nonpolar,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Polar => "polar",
            Mode::Nonpolar => "nonpolar",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polar" => Ok(Mode::Polar),
            "nonpolar" | "non-polar" => Ok(Mode::Nonpolar),
            other => Err(Error::InvalidSpec(format!("unknown mode `{other}`"))),
        }
    }
}

/// Bit-width plus grid mode. Level count and timestep counts are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawQuantSpec", into = "RawQuantSpec")]
pub struct QuantSpec {
    bit_width: u32,
    mode: Mode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuantSpec {
    bits: u32,
    mode: Mode,
}

impl TryFrom<RawQuantSpec> for QuantSpec {
    type Error = Error;

    fn try_from(raw: RawQuantSpec) -> Result<Self> {
        QuantSpec::new(raw.bits, raw.mode)
    }
}

impl From<QuantSpec> for RawQuantSpec {
    fn from(spec: QuantSpec) -> Self {
        RawQuantSpec {
            bits: spec.bit_width,
            mode: spec.mode,
        }
    }
}

impl QuantSpec {
    pub fn new(bit_width: u32, mode: Mode) -> Result<Self> {
        if !(2..=MAX_BIT_WIDTH).contains(&bit_width) {
            return Err(Error::InvalidSpec(format!(
                "bit width {bit_width} outside [2, {MAX_BIT_WIDTH}]"
            )));
        }
        Ok(Self { bit_width, mode })
    }

    pub fn polar(bit_width: u32) -> Result<Self> {
        Self::new(bit_width, Mode::Polar)
    }

    pub fn nonpolar(bit_width: u32) -> Result<Self> {
        Self::new(bit_width, Mode::Nonpolar)
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of quantization levels, `L = 2^A`.
    pub fn levels(&self) -> u32 {
        1 << self.bit_width
    }

    /// Inclusive integer range of the grid.
    pub fn range(&self) -> (i32, i32) {
        let levels = self.levels() as i32;
        match self.mode {
            Mode::Polar => (-levels / 2 + 1, levels / 2 - 1),
            Mode::Nonpolar => (0, levels - 1),
        }
    }

    /// Largest representable magnitude.
    pub fn max_magnitude(&self) -> u32 {
        self.range().1 as u32
    }

    /// Timesteps a codec needs to carry this grid losslessly.
    pub fn timesteps(&self, kind: CodecKind) -> usize {
        match (kind, self.mode) {
            (CodecKind::Standard, _) => self.levels() as usize - 1,
            (CodecKind::Tclif, Mode::Polar) => self.bit_width as usize - 1,
            (CodecKind::Tclif, Mode::Nonpolar) => self.bit_width as usize,
        }
    }

    pub fn contains(&self, value: i64) -> bool {
        let (lo, hi) = self.range();
        (lo as i64..=hi as i64).contains(&value)
    }

    pub(crate) fn check(&self, index: usize, value: i64) -> Result<()> {
        if self.contains(value) {
            Ok(())
        } else {
            let (lo, hi) = self.range();
            Err(Error::OutOfRange {
                index,
                value,
                lo: lo as i64,
                hi: hi as i64,
            })
        }
    }
}

impl fmt::Display for QuantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}-{}", self.bit_width, self.mode)
    }
}

/// Integer tensor with a per-tensor scale; real value is `values * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    values: Vec<i32>,
    dims: Vec<usize>,
    scale: f64,
    spec: QuantSpec,
}

impl QuantizedTensor {
    /// Build from raw integers, validating range, scale and shape.
    pub fn new(values: Vec<i32>, dims: Vec<usize>, scale: f64, spec: QuantSpec) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonPositive {
                name: "scale",
                value: scale,
            });
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor element count",
                expected,
                found: values.len(),
            });
        }
        for (index, &v) in values.iter().enumerate() {
            spec.check(index, v as i64)?;
        }
        Ok(Self {
            values,
            dims,
            scale,
            spec,
        })
    }

    /// Flat tensor of the given integers.
    pub fn from_values(values: Vec<i32>, scale: f64, spec: QuantSpec) -> Result<Self> {
        let dims = vec![values.len()];
        Self::new(values, dims, scale, spec)
    }

    pub(crate) fn new_unchecked(
        values: Vec<i32>,
        dims: Vec<usize>,
        scale: f64,
        spec: QuantSpec,
    ) -> Self {
        Self {
            values,
            dims,
            scale,
            spec,
        }
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn spec(&self) -> QuantSpec {
        self.spec
    }

    /// Reshape without touching the data.
    pub fn with_dims(mut self, dims: Vec<usize>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != self.values.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor element count",
                expected,
                found: self.values.len(),
            });
        }
        self.dims = dims;
        Ok(self)
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `max|U| / (L/2 - 1)`, or 1.0 for an all-zero tensor.
pub fn scale_symmetric(values: &[f64], spec: QuantSpec) -> Result<f64> {
    if spec.mode() != Mode::Polar {
        return Err(Error::Contract(format!(
            "scale_symmetric needs a polar spec, got {spec}"
        )));
    }
    Ok(scale_from_max(max_abs(values), spec.max_magnitude()))
}

/// `max|U| / (L - 1)`, or 1.0 for an all-zero tensor.
pub fn scale_nonneg(values: &[f64], spec: QuantSpec) -> Result<f64> {
    if spec.mode() != Mode::Nonpolar {
        return Err(Error::Contract(format!(
            "scale_nonneg needs a non-polar spec, got {spec}"
        )));
    }
    Ok(scale_from_max(max_abs(values), spec.max_magnitude()))
}

/// Scale matching the spec's mode.
pub fn scale_for(values: &[f64], spec: QuantSpec) -> Result<f64> {
    match spec.mode() {
        Mode::Polar => scale_symmetric(values, spec),
        Mode::Nonpolar => scale_nonneg(values, spec),
    }
}

fn scale_from_max(max: f64, top: u32) -> f64 {
    if max > 0.0 && max.is_finite() {
        max / top as f64
    } else {
        1.0
    }
}

/// `clip(round(U / scale), lo, hi)` with ties rounded away from zero.
pub fn quantize(values: &[f64], scale: f64, spec: QuantSpec) -> Result<QuantizedTensor> {
    quantize_shaped(values, vec![values.len()], scale, spec)
}

/// [`quantize`] with explicit logical dimensions.
pub fn quantize_shaped(
    values: &[f64],
    dims: Vec<usize>,
    scale: f64,
    spec: QuantSpec,
) -> Result<QuantizedTensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::NonPositive {
            name: "scale",
            value: scale,
        });
    }
    let expected: usize = dims.iter().product();
    if expected != values.len() {
        return Err(Error::DimensionMismatch {
            what: "tensor element count",
            expected,
            found: values.len(),
        });
    }
    let (lo, hi) = spec.range();
    let mut out = Vec::with_capacity(values.len());
    for (index, &u) in values.iter().enumerate() {
        if !u.is_finite() {
            return Err(Error::NonFinite { index, value: u });
        }
        // f64::round is half-away-from-zero; clamp before the cast so huge
        // ratios cannot saturate through `as`.
        let q = (u / scale).round().clamp(lo as f64, hi as f64);
        out.push(q as i32);
    }
    Ok(QuantizedTensor::new_unchecked(out, dims, scale, spec))
}

/// Scale with the mode's rule, then quantize.
pub fn quantize_auto(values: &[f64], spec: QuantSpec) -> Result<QuantizedTensor> {
    let scale = scale_for(values, spec)?;
    quantize(values, scale, spec)
}

/// Elementwise `values * scale`.
pub fn dequantize(q: &QuantizedTensor) -> Vec<f64> {
    q.values.iter().map(|&v| v as f64 * q.scale).collect()
}
