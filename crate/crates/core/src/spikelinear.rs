//! Spike-driven linear layers.
//!
//! A weight column is added into the accumulator only when its input
//! element spikes at a timestep; silent elements are skipped entirely.
//! Partial sums are formed per timestep and then weighted by that
//! timestep's weight, the same factoring the PE's shift-and-add stage uses.
//! With integer weights all accumulation is done in `i64` and a single real
//! scale is applied at the end, so the spike path and the dense path agree
//! bit for bit.

use bitvec::prelude::*;

use crate::codec::SpikeTrain;
use crate::error::{Error, Result};
use crate::quant::QuantizedTensor;

/// Integer form of a weight matrix: real value = `values * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerWeights {
    values: Vec<i32>,
    // column-major copy so a spike touches one contiguous column
    columns: Vec<i32>,
    scale: f64,
}

impl IntegerWeights {
    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// `rows x cols` (output x input) weight matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    integer: Option<IntegerWeights>,
}

fn check_shape(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Contract(format!(
            "weight matrix must be non-empty, got {rows}x{cols}"
        )));
    }
    if rows * cols != len {
        return Err(Error::DimensionMismatch {
            what: "weight element count",
            expected: rows * cols,
            found: len,
        });
    }
    Ok(())
}

fn transpose<T: Copy>(rows: usize, cols: usize, values: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    for c in 0..cols {
        out.extend((0..rows).map(|r| values[r * cols + c]));
    }
    out
}

impl WeightMatrix {
    /// Real-valued weights; the spike path accumulates in `f64`.
    pub fn from_real(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            rows,
            cols,
            values,
            integer: None,
        })
    }

    /// Integer weights with a real scale.
    pub fn from_integers(rows: usize, cols: usize, ints: Vec<i32>, scale: f64) -> Result<Self> {
        check_shape(rows, cols, ints.len())?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonPositive {
                name: "weight scale",
                value: scale,
            });
        }
        let values = ints.iter().map(|&v| v as f64 * scale).collect();
        let columns = transpose(rows, cols, &ints);
        Ok(Self {
            rows,
            cols,
            values,
            integer: Some(IntegerWeights {
                values: ints,
                columns,
                scale,
            }),
        })
    }

    /// Symmetric per-tensor weight quantization to `bits` bits,
    /// `scale = max|W| / (2^(bits-1) - 1)`.
    pub fn quantized(rows: usize, cols: usize, values: &[f64], bits: u32) -> Result<Self> {
        check_shape(rows, cols, values.len())?;
        if !(2..=31).contains(&bits) {
            return Err(Error::InvalidSpec(format!(
                "weight bit width {bits} outside [2, 31]"
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let top = ((1i64 << (bits - 1)) - 1) as f64;
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if max > 0.0 { max / top } else { 1.0 };
        let ints = values
            .iter()
            .map(|&v| (v / scale).round().clamp(-top, top) as i32)
            .collect();
        Self::from_integers(rows, cols, ints, scale)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Real values (the dequantized form when integer weights are present).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integer(&self) -> Option<&IntegerWeights> {
        self.integer.as_ref()
    }
}

/// Result of a (spike or dense) linear map over a batch of input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOutput {
    /// Number of input vectors.
    pub batch: usize,
    /// Output width `M`.
    pub width: usize,
    /// `batch x width`, row-major.
    pub values: Vec<f64>,
    /// Wide integer accumulators before the final scaling, when the
    /// weights are integer.
    pub integer: Option<Vec<i64>>,
    /// Column additions performed (spike path) or MACs (dense path).
    pub operations: u64,
}

/// One timestep plane with its temporal weight.
#[derive(Debug, Clone, Copy)]
pub struct WeightedPlane<'a> {
    pub weight: u64,
    pub bits: &'a BitSlice<u64, Lsb0>,
}

fn batch_of(w: &WeightMatrix, len: usize, dims: &[usize]) -> Result<usize> {
    let last = dims.last().copied().unwrap_or(len);
    if last != w.cols {
        return Err(Error::DimensionMismatch {
            what: "input width vs weight columns",
            expected: w.cols,
            found: last,
        });
    }
    flat_batch(w, len)
}

fn flat_batch(w: &WeightMatrix, len: usize) -> Result<usize> {
    if !len.is_multiple_of(w.cols) {
        return Err(Error::DimensionMismatch {
            what: "input length vs weight columns",
            expected: w.cols,
            found: len,
        });
    }
    Ok(len / w.cols)
}

/// Accumulate `Σ_t weight_t · Σ_{i fires at t} polarity_i · W[:, i]`.
///
/// Returns integer accumulators when `w` has integer form, otherwise real
/// ones, plus the number of column additions executed. No scaling applied.
pub fn spike_accumulate(
    w: &WeightMatrix,
    planes: &[WeightedPlane<'_>],
    polarity: &[i8],
) -> Result<(Accumulators, u64)> {
    let len = polarity.len();
    if let Some(bad) = planes.iter().find(|p| p.bits.len() != len) {
        return Err(Error::DimensionMismatch {
            what: "plane length",
            expected: len,
            found: bad.bits.len(),
        });
    }
    let batch = flat_batch(w, len)?;
    let (m, k) = (w.rows, w.cols);
    let mut operations = 0u64;
    let acc = match &w.integer {
        Some(iw) => {
            let mut acc = vec![0i64; batch * m];
            let mut partial = vec![0i64; m];
            for b in 0..batch {
                let out = &mut acc[b * m..(b + 1) * m];
                for plane in planes {
                    let active = &plane.bits[b * k..(b + 1) * k];
                    if active.not_any() {
                        continue;
                    }
                    partial.iter_mut().for_each(|p| *p = 0);
                    for i in active.iter_ones() {
                        let column = &iw.columns[i * m..(i + 1) * m];
                        if polarity[b * k + i] < 0 {
                            partial
                                .iter_mut()
                                .zip(column)
                                .for_each(|(p, &c)| *p -= c as i64);
                        } else {
                            partial
                                .iter_mut()
                                .zip(column)
                                .for_each(|(p, &c)| *p += c as i64);
                        }
                        operations += m as u64;
                    }
                    let tw = plane.weight as i64;
                    out.iter_mut()
                        .zip(&partial)
                        .for_each(|(o, &p)| *o += tw * p);
                }
            }
            Accumulators::Integer(acc)
        }
        None => {
            let mut acc = vec![0f64; batch * m];
            let mut partial = vec![0f64; m];
            for b in 0..batch {
                let out = &mut acc[b * m..(b + 1) * m];
                for plane in planes {
                    let active = &plane.bits[b * k..(b + 1) * k];
                    if active.not_any() {
                        continue;
                    }
                    partial.iter_mut().for_each(|p| *p = 0.0);
                    for i in active.iter_ones() {
                        let sign = if polarity[b * k + i] < 0 { -1.0 } else { 1.0 };
                        for (r, p) in partial.iter_mut().enumerate() {
                            *p += sign * w.values[r * k + i];
                        }
                        operations += m as u64;
                    }
                    let tw = plane.weight as f64;
                    out.iter_mut()
                        .zip(&partial)
                        .for_each(|(o, &p)| *o += tw * p);
                }
            }
            Accumulators::Real(acc)
        }
    };
    Ok((acc, operations))
}

/// Unscaled accumulators from [`spike_accumulate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Accumulators {
    Integer(Vec<i64>),
    Real(Vec<f64>),
}

fn finish(
    w: &WeightMatrix,
    batch: usize,
    acc: Accumulators,
    act_scale: f64,
    operations: u64,
) -> LinearOutput {
    let (values, integer) = match acc {
        Accumulators::Integer(acc) => {
            let scale = act_scale * w.integer.as_ref().map_or(1.0, |iw| iw.scale);
            (acc.iter().map(|&a| a as f64 * scale).collect(), Some(acc))
        }
        Accumulators::Real(acc) => (acc.iter().map(|&a| act_scale * a).collect(), None),
    };
    LinearOutput {
        batch,
        width: w.rows,
        values,
        integer,
        operations,
    }
}

/// Spike-driven `W · S`, scaled back to reals by the train's scale.
///
/// The train's last logical dimension must equal `W`'s column count; any
/// leading dimensions form the batch.
pub fn spike_matmul(w: &WeightMatrix, s: &SpikeTrain) -> Result<LinearOutput> {
    let batch = batch_of(w, s.len(), s.dims())?;
    let planes: Vec<WeightedPlane<'_>> = s
        .planes()
        .iter()
        .zip(s.timestep_weights())
        .map(|(bits, &weight)| WeightedPlane {
            weight,
            bits: bits.as_bitslice(),
        })
        .collect();
    let (acc, operations) = spike_accumulate(w, &planes, s.polarity())?;
    Ok(finish(w, batch, acc, s.scale(), operations))
}

/// Ordinary matrix product of `W` with the decoded integers, times scale.
pub fn dense_reference(w: &WeightMatrix, q: &QuantizedTensor) -> Result<LinearOutput> {
    let batch = batch_of(w, q.len(), q.dims())?;
    let (m, k) = (w.rows, w.cols);
    let acc = match &w.integer {
        Some(iw) => {
            let mut acc = vec![0i64; batch * m];
            for b in 0..batch {
                let x = &q.values()[b * k..(b + 1) * k];
                for r in 0..m {
                    let row = &iw.values[r * k..(r + 1) * k];
                    acc[b * m + r] = row.iter().zip(x).map(|(&w, &x)| w as i64 * x as i64).sum();
                }
            }
            Accumulators::Integer(acc)
        }
        None => {
            let mut acc = vec![0f64; batch * m];
            for b in 0..batch {
                let x = &q.values()[b * k..(b + 1) * k];
                for r in 0..m {
                    let row = &w.values[r * k..(r + 1) * k];
                    acc[b * m + r] = row.iter().zip(x).map(|(&w, &x)| w * x as f64).sum();
                }
            }
            Accumulators::Real(acc)
        }
    };
    Ok(finish(w, batch, acc, q.scale(), (batch * m * k) as u64))
}

/// Column additions the spike path performs: `Σ_t popcount(S[t]) · M`.
pub fn accumulation_count(w: &WeightMatrix, s: &SpikeTrain) -> Result<u64> {
    batch_of(w, s.len(), s.dims())?;
    Ok(s.firing_stats().fired * w.rows as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_standard, encode_tclif};
    use crate::quant::QuantSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn polar_tensor(values: Vec<i32>, a: u32) -> QuantizedTensor {
        QuantizedTensor::from_values(values, 1.0, QuantSpec::polar(a).unwrap()).unwrap()
    }

    #[test]
    fn small_example_matches_hand_computation() {
        let w = WeightMatrix::from_integers(2, 2, vec![1, 2, 3, 4], 1.0).unwrap();
        let s = encode_tclif(&polar_tensor(vec![2, -3], 3)).unwrap();
        let out = spike_matmul(&w, &s).unwrap();
        assert_eq!(out.values, vec![-4.0, -6.0]);
        assert_eq!(out.integer, Some(vec![-4, -6]));

        let real = WeightMatrix::from_real(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(spike_matmul(&real, &s).unwrap().values, vec![-4.0, -6.0]);
    }

    #[test]
    fn zero_train_does_no_work() {
        let w = WeightMatrix::from_integers(3, 4, vec![1; 12], 1.0).unwrap();
        let s = encode_tclif(&polar_tensor(vec![0; 4], 4)).unwrap();
        let out = spike_matmul(&w, &s).unwrap();
        assert_eq!(out.values, vec![0.0; 3]);
        assert_eq!(out.operations, 0);
        assert_eq!(accumulation_count(&w, &s).unwrap(), 0);
    }

    #[test]
    fn dense_reference_examples() {
        let id = WeightMatrix::from_integers(2, 2, vec![1, 0, 0, 1], 1.0).unwrap();
        let q = polar_tensor(vec![5, -2], 4);
        assert_eq!(dense_reference(&id, &q).unwrap().values, vec![5.0, -2.0]);
        let ones = WeightMatrix::from_integers(1, 2, vec![1, 1], 1.0).unwrap();
        let q = polar_tensor(vec![7, -7], 4);
        assert_eq!(dense_reference(&ones, &q).unwrap().values, vec![0.0]);
    }

    #[test]
    fn single_saturated_element_count() {
        let w = WeightMatrix::from_integers(3, 1, vec![1, 2, 3], 1.0).unwrap();
        let s = encode_tclif(&polar_tensor(vec![7], 4)).unwrap();
        assert_eq!(accumulation_count(&w, &s).unwrap(), 9);
        assert_eq!(spike_matmul(&w, &s).unwrap().operations, 9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let w = WeightMatrix::from_integers(2, 3, vec![0; 6], 1.0).unwrap();
        let s = encode_tclif(&polar_tensor(vec![1, 2], 4)).unwrap();
        assert!(matches!(
            spike_matmul(&w, &s).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
        assert!(dense_reference(&w, &polar_tensor(vec![1, 2], 4)).is_err());
        assert!(WeightMatrix::from_real(2, 2, vec![0.0; 3]).is_err());
        assert!(WeightMatrix::from_real(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn batched_input_uses_last_dim() {
        let w = WeightMatrix::from_integers(2, 3, vec![1, 0, -1, 2, 2, 2], 0.5).unwrap();
        let spec = QuantSpec::polar(4).unwrap();
        let q = QuantizedTensor::new(vec![1, 2, 3, -4, 0, 7], vec![2, 3], 2.0, spec).unwrap();
        let s = encode_tclif(&q).unwrap();
        let spike = spike_matmul(&w, &s).unwrap();
        let dense = dense_reference(&w, &q).unwrap();
        assert_eq!(spike.batch, 2);
        assert_eq!(spike.integer, Some(vec![-2, 12, -11, 6]));
        assert_eq!(spike.values, dense.values);
    }

    #[test]
    fn random_polar_cases_match_dense_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let ints: Vec<i32> = (0..64).map(|_| rng.gen_range(-128..=127)).collect();
            let w = WeightMatrix::from_integers(8, 8, ints, rng.gen_range(0.01..2.0)).unwrap();
            let xs: Vec<i32> = (0..8).map(|_| rng.gen_range(-7..=7)).collect();
            let q = QuantizedTensor::from_values(
                xs,
                rng.gen_range(0.01..2.0),
                QuantSpec::polar(4).unwrap(),
            )
            .unwrap();
            let s = encode_tclif(&q).unwrap();
            let spike = spike_matmul(&w, &s).unwrap();
            let dense = dense_reference(&w, &q).unwrap();
            assert_eq!(spike.integer, dense.integer);
            assert_eq!(spike.values, dense.values);
        }
    }

    #[test]
    fn reordering_and_dropping_zero_planes_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = QuantSpec::nonpolar(3).unwrap();
        let ints: Vec<i32> = (0..5 * 6).map(|_| rng.gen_range(-9..=9)).collect();
        let w = WeightMatrix::from_integers(5, 6, ints, 1.0).unwrap();
        let xs: Vec<i32> = vec![3, 1, 0, 2, 1, 0];
        let q = QuantizedTensor::from_values(xs, 1.0, spec).unwrap();
        let s = encode_standard(&q).unwrap();
        let mut planes: Vec<WeightedPlane<'_>> = s
            .planes()
            .iter()
            .zip(s.timestep_weights())
            .map(|(b, &weight)| WeightedPlane {
                weight,
                bits: b.as_bitslice(),
            })
            .collect();
        let (base, base_ops) = spike_accumulate(&w, &planes, s.polarity()).unwrap();
        planes.reverse();
        let (rev, rev_ops) = spike_accumulate(&w, &planes, s.polarity()).unwrap();
        planes.retain(|p| p.bits.any());
        assert!(planes.len() < s.timesteps());
        let (kept, kept_ops) = spike_accumulate(&w, &planes, s.polarity()).unwrap();
        assert_eq!(base, rev);
        assert_eq!(base, kept);
        assert_eq!(base_ops, rev_ops);
        assert_eq!(base_ops, kept_ops);
    }

    #[test]
    fn quantized_weights_are_symmetric() {
        let w = WeightMatrix::quantized(1, 3, &[-1.0, 0.5, 0.25], 4).unwrap();
        let iw = w.integer().unwrap();
        assert_eq!(iw.values(), &[-7, 4, 2]);
        assert!((iw.scale() - 1.0 / 7.0).abs() < 1e-15);
    }
}
