//! Lossless integer/spike-train conversion.
//!
//! Standard unfolding spreads an integer `k` over `L - 1` unit-weight
//! timesteps (the first `k` fire). The temporally compressed codec gives
//! timestep `t` the weight `2^(t-1)` and stores the binary expansion of the
//! magnitude, so a polar grid needs `A - 1` timesteps and a non-polar grid
//! needs `A`. Sign always travels in a separate polarity vector.

use bitvec::prelude::*;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::quant::{Mode, QuantSpec, QuantizedTensor};

/// Bit storage of one timestep plane.
pub type Plane = BitVec<u64, Lsb0>;

/// Timestep weighting family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    /// Unit weights, prefix-monotone spikes, `T = L - 1`.
    Standard,
    /// Power-of-two weights, `T = A - 1` (polar) or `A` (non-polar).
    Tclif,
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodecKind::Standard => "standard",
            CodecKind::Tclif => "tclif",
        })
    }
}

impl FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CodecKind::Standard),
            "tclif" => Ok(CodecKind::Tclif),
            other => Err(Error::InvalidSpec(format!("unknown codec kind `{other}`"))),
        }
    }
}

/// A codec kind paired with the grid mode it runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Codec {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "tclif-polar")]
    TclifPolar,
    #[serde(rename = "tclif-nonpolar")]
    TclifNonpolar,
}

impl Codec {
    pub const ALL: [Codec; 3] = [Codec::Standard, Codec::TclifPolar, Codec::TclifNonpolar];

    pub fn kind(self) -> CodecKind {
        match self {
            Codec::Standard => CodecKind::Standard,
            Codec::TclifPolar | Codec::TclifNonpolar => CodecKind::Tclif,
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Codec::TclifPolar => Mode::Polar,
            Codec::Standard | Codec::TclifNonpolar => Mode::Nonpolar,
        }
    }

    pub fn spec(self, bit_width: u32) -> Result<QuantSpec> {
        QuantSpec::new(bit_width, self.mode())
    }

    /// Grid whose timestep count under this codec is exactly `timesteps`.
    pub fn spec_for_timesteps(self, timesteps: usize) -> Result<QuantSpec> {
        let bits = match self {
            Codec::Standard => {
                let levels = timesteps + 1;
                if !levels.is_power_of_two() {
                    return Err(Error::InvalidSpec(format!(
                        "standard unfolding needs T = 2^A - 1, got T = {timesteps}"
                    )));
                }
                levels.trailing_zeros()
            }
            Codec::TclifPolar => timesteps as u32 + 1,
            Codec::TclifNonpolar => timesteps as u32,
        };
        let spec = QuantSpec::new(bits, self.mode())
            .map_err(|_| Error::InvalidSpec(format!("{self} cannot run with T = {timesteps}")))?;
        debug_assert_eq!(spec.timesteps(self.kind()), timesteps);
        Ok(spec)
    }

    pub fn encode(self, q: &QuantizedTensor) -> Result<SpikeTrain> {
        if q.spec().mode() != self.mode() {
            return Err(Error::Contract(format!(
                "{self} expects a {} grid, got {}",
                self.mode(),
                q.spec()
            )));
        }
        match self.kind() {
            CodecKind::Standard => encode_standard(q),
            CodecKind::Tclif => encode_tclif(q),
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codec::Standard => "standard",
            Codec::TclifPolar => "tclif-polar",
            Codec::TclifNonpolar => "tclif-nonpolar",
        })
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Codec::Standard),
            "tclif-polar" => Ok(Codec::TclifPolar),
            "tclif-nonpolar" => Ok(Codec::TclifNonpolar),
            other => Err(Error::InvalidSpec(format!("unknown codec `{other}`"))),
        }
    }
}

/// Count of fired slots out of `T * N`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiringStats {
    pub fired: u64,
    pub slots: u64,
}

impl FiringStats {
    pub fn rate(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.fired as f64 / self.slots as f64
        }
    }
}

impl Add for FiringStats {
    type Output = FiringStats;

    fn add(self, rhs: FiringStats) -> FiringStats {
        FiringStats {
            fired: self.fired + rhs.fired,
            slots: self.slots + rhs.slots,
        }
    }
}

impl AddAssign for FiringStats {
    fn add_assign(&mut self, rhs: FiringStats) {
        *self = *self + rhs;
    }
}

/// One spike: `element` fired at zero-based `timestep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeEvent {
    pub timestep: usize,
    pub element: usize,
}

/// Dense bit-plane spike train carrying an integer tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    spec: QuantSpec,
    kind: CodecKind,
    dims: Vec<usize>,
    planes: Vec<Plane>,
    polarity: Vec<i8>,
    weights: Vec<u64>,
    scale: f64,
}

fn timestep_weights(kind: CodecKind, timesteps: usize) -> Vec<u64> {
    match kind {
        CodecKind::Standard => vec![1; timesteps],
        CodecKind::Tclif => (0..timesteps).map(|t| 1u64 << t).collect(),
    }
}

impl SpikeTrain {
    /// Assemble a train from parts, checking every structural invariant.
    pub fn from_parts(
        spec: QuantSpec,
        kind: CodecKind,
        dims: Vec<usize>,
        planes: Vec<Plane>,
        polarity: Vec<i8>,
        scale: f64,
    ) -> Result<Self> {
        let len: usize = dims.iter().product();
        let timesteps = spec.timesteps(kind);
        if planes.len() != timesteps {
            return Err(Error::DimensionMismatch {
                what: "timestep planes",
                expected: timesteps,
                found: planes.len(),
            });
        }
        if let Some(bad) = planes.iter().find(|p| p.len() != len) {
            return Err(Error::DimensionMismatch {
                what: "plane length",
                expected: len,
                found: bad.len(),
            });
        }
        if polarity.len() != len {
            return Err(Error::DimensionMismatch {
                what: "polarity length",
                expected: len,
                found: polarity.len(),
            });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonPositive {
                name: "scale",
                value: scale,
            });
        }
        let train = Self {
            spec,
            kind,
            dims,
            planes,
            polarity,
            weights: timestep_weights(kind, timesteps),
            scale,
        };
        train.validate()?;
        Ok(train)
    }

    /// Check polarity, range and (for standard unfolding) prefix order.
    pub fn validate(&self) -> Result<()> {
        for (i, &p) in self.polarity.iter().enumerate() {
            let ok = match self.spec.mode() {
                Mode::Polar => p == 1 || p == -1,
                Mode::Nonpolar => p == 1,
            };
            if !ok {
                return Err(Error::Contract(format!(
                    "element {i}: polarity {p} not allowed in {} mode",
                    self.spec.mode()
                )));
            }
            self.spec.check(i, self.reconstruct(i))?;
            if self.kind == CodecKind::Standard {
                let mut seen_zero = false;
                for (t, plane) in self.planes.iter().enumerate() {
                    if plane[i] && seen_zero {
                        return Err(Error::Contract(format!(
                            "element {i}: standard train fires at timestep {} after a gap",
                            t + 1
                        )));
                    }
                    seen_zero |= !plane[i];
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> QuantSpec {
        self.spec
    }

    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Element count `N`.
    pub fn len(&self) -> usize {
        self.polarity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polarity.is_empty()
    }

    /// Timestep count `T`.
    pub fn timesteps(&self) -> usize {
        self.planes.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, t: usize) -> &BitSlice<u64, Lsb0> {
        &self.planes[t]
    }

    pub fn polarity(&self) -> &[i8] {
        &self.polarity
    }

    pub fn timestep_weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn spike(&self, t: usize, i: usize) -> bool {
        self.planes[t][i]
    }

    /// Signed integer carried by element `i`.
    pub fn reconstruct(&self, i: usize) -> i64 {
        let magnitude: u64 = self
            .planes
            .iter()
            .zip(&self.weights)
            .filter(|(plane, _)| plane[i])
            .map(|(_, &w)| w)
            .sum();
        self.polarity[i] as i64 * magnitude as i64
    }

    /// Read-only event list, ordered by timestep then element.
    pub fn events(&self) -> impl Iterator<Item = SpikeEvent> + '_ {
        self.planes
            .iter()
            .enumerate()
            .flat_map(|(timestep, plane)| {
                plane
                    .iter_ones()
                    .map(move |element| SpikeEvent { timestep, element })
            })
    }

    pub fn firing_stats(&self) -> FiringStats {
        FiringStats {
            fired: self.planes.iter().map(|p| p.count_ones() as u64).sum(),
            slots: (self.timesteps() * self.len()) as u64,
        }
    }

    /// Toggle one spike bit. Used for fault injection; the result may no
    /// longer satisfy [`SpikeTrain::validate`].
    pub fn flip(&mut self, t: usize, i: usize) {
        let old = self.planes[t][i];
        self.planes[t].set(i, !old);
    }

    /// Write the binary train format: one ASCII header line, then `T`
    /// packed bit-planes (`ceil(N/8)` bytes each, LSB-first), then `N`
    /// polarity bytes (`0x01` or `0xFF`).
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let dims = self
            .dims
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        writeln!(
            out,
            "{TRAIN_MAGIC} T={} N={} dims={} codec={} mode={} A={} scale={:?}",
            self.timesteps(),
            self.len(),
            if dims.is_empty() { "-".into() } else { dims },
            self.kind,
            self.spec.mode(),
            self.spec.bit_width(),
            self.scale
        )?;
        let bytes_per_plane = self.len().div_ceil(8);
        for plane in &self.planes {
            let mut buf = vec![0u8; bytes_per_plane];
            for i in plane.iter_ones() {
                buf[i / 8] |= 1 << (i % 8);
            }
            out.write_all(&buf)?;
        }
        let pol: Vec<u8> = self.polarity.iter().map(|&p| p as u8).collect();
        out.write_all(&pol)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let mut fields = header.trim_end().split(' ');
        if fields.next() != Some(TRAIN_MAGIC) {
            return Err(Error::format("spike train", "missing header magic"));
        }
        let mut get = |key: &str| -> Result<String> {
            let field = fields
                .next()
                .ok_or_else(|| Error::format("spike train", format!("missing `{key}`")))?;
            field
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .map(str::to_owned)
                .ok_or_else(|| Error::format("spike train", format!("expected `{key}=`")))
        };
        let parse_num = |what: &str, s: String| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::format("spike train", format!("bad {what} `{s}`")))
        };
        let timesteps = parse_num("T", get("T")?)?;
        let len = parse_num("N", get("N")?)?;
        let dims_field = get("dims")?;
        let dims = if dims_field == "-" {
            Vec::new()
        } else {
            dims_field
                .split('x')
                .map(|d| parse_num("dim", d.to_owned()))
                .collect::<Result<Vec<_>>>()?
        };
        let kind: CodecKind = get("codec")?.parse()?;
        let mode: Mode = get("mode")?.parse()?;
        let bits = parse_num("A", get("A")?)? as u32;
        let scale_field = get("scale")?;
        let scale: f64 = scale_field
            .parse()
            .map_err(|_| Error::format("spike train", format!("bad scale `{scale_field}`")))?;
        let spec = QuantSpec::new(bits, mode)?;
        if spec.timesteps(kind) != timesteps {
            return Err(Error::format(
                "spike train",
                format!("T={timesteps} inconsistent with {kind} on {spec}"),
            ));
        }
        if dims.iter().product::<usize>() != len {
            return Err(Error::format("spike train", "dims do not multiply to N"));
        }
        let bytes_per_plane = len.div_ceil(8);
        let mut planes = Vec::with_capacity(timesteps);
        let mut buf = vec![0u8; bytes_per_plane];
        for _ in 0..timesteps {
            input.read_exact(&mut buf)?;
            let plane: Plane = (0..len).map(|i| buf[i / 8] >> (i % 8) & 1 == 1).collect();
            planes.push(plane);
        }
        let mut pol = vec![0u8; len];
        input.read_exact(&mut pol)?;
        let polarity = pol.into_iter().map(|b| b as i8).collect();
        Self::from_parts(spec, kind, dims, planes, polarity, scale)
    }
}

const TRAIN_MAGIC: &str = "spikekit-spikes/1";

fn empty_planes(timesteps: usize, len: usize) -> Vec<Plane> {
    (0..timesteps).map(|_| bitvec![u64, Lsb0; 0; len]).collect()
}

/// Unit-weight unfolding of a non-polar tensor over `T = L - 1` steps.
pub fn encode_standard(q: &QuantizedTensor) -> Result<SpikeTrain> {
    let spec = q.spec();
    if spec.mode() != Mode::Nonpolar {
        return Err(Error::Contract(format!(
            "standard unfolding needs a non-polar grid, got {spec}"
        )));
    }
    for (i, &v) in q.values().iter().enumerate() {
        spec.check(i, v as i64)?;
    }
    let timesteps = spec.timesteps(CodecKind::Standard);
    let mut planes = empty_planes(timesteps, q.len());
    let mut residual: Vec<i32> = q.values().to_vec();
    for plane in planes.iter_mut() {
        // fire while residual remains
        for (i, r) in residual.iter_mut().enumerate() {
            if *r >= 1 {
                plane.set(i, true);
                *r -= 1;
            }
        }
    }
    Ok(SpikeTrain {
        spec,
        kind: CodecKind::Standard,
        dims: q.dims().to_vec(),
        planes,
        polarity: vec![1; q.len()],
        weights: timestep_weights(CodecKind::Standard, timesteps),
        scale: q.scale(),
    })
}

/// Power-of-two weighted encoding; sign goes to polarity (+1 for zero).
pub fn encode_tclif(q: &QuantizedTensor) -> Result<SpikeTrain> {
    let spec = q.spec();
    for (i, &v) in q.values().iter().enumerate() {
        spec.check(i, v as i64)?;
    }
    let timesteps = spec.timesteps(CodecKind::Tclif);
    let polarity: Vec<i8> = q
        .values()
        .iter()
        .map(|&v| if v < 0 { -1 } else { 1 })
        .collect();
    let mut residual: Vec<u32> = q.values().iter().map(|v| v.unsigned_abs()).collect();
    let mut planes = empty_planes(timesteps, q.len());
    // Highest weight first, peeling the residual down to zero.
    for t in (0..timesteps).rev() {
        let weight = 1u32 << t;
        let plane = &mut planes[t];
        for (i, r) in residual.iter_mut().enumerate() {
            if *r >= weight {
                plane.set(i, true);
                *r -= weight;
            }
        }
    }
    debug_assert!(residual.iter().all(|&r| r == 0));
    Ok(SpikeTrain {
        spec,
        kind: CodecKind::Tclif,
        dims: q.dims().to_vec(),
        planes,
        polarity,
        weights: timestep_weights(CodecKind::Tclif, timesteps),
        scale: q.scale(),
    })
}

/// Weighted polarity sum per element; inverse of both encoders.
pub fn decode(s: &SpikeTrain) -> QuantizedTensor {
    let mut magnitude = vec![0u64; s.len()];
    for (plane, &w) in s.planes.iter().zip(&s.weights) {
        for i in plane.iter_ones() {
            magnitude[i] += w;
        }
    }
    let values = magnitude
        .iter()
        .zip(&s.polarity)
        .map(|(&m, &p)| p as i32 * m as i32)
        .collect();
    QuantizedTensor::new_unchecked(values, s.dims.clone(), s.scale, s.spec)
}

/// `(L - 1) / T` for the codec's timestep count.
pub fn compression_ratio(spec: QuantSpec, kind: CodecKind) -> Ratio<u64> {
    Ratio::new(spec.levels() as u64 - 1, spec.timesteps(kind) as u64)
}

/// Fraction of `(timestep, element)` slots that carry a spike.
pub fn firing_rate(s: &SpikeTrain) -> f64 {
    s.firing_stats().rate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(values: Vec<i32>, spec: QuantSpec) -> QuantizedTensor {
        QuantizedTensor::from_values(values, 1.0, spec).unwrap()
    }

    fn bits_of(s: &SpikeTrain, i: usize) -> Vec<u8> {
        (0..s.timesteps()).map(|t| s.spike(t, i) as u8).collect()
    }

    #[test]
    fn standard_fires_first_k_steps() {
        let spec = QuantSpec::nonpolar(3).unwrap();
        let s = encode_standard(&tensor(vec![3, 0], spec)).unwrap();
        assert_eq!(s.timesteps(), 7);
        assert_eq!(bits_of(&s, 0), vec![1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(bits_of(&s, 1), vec![0; 7]);
        assert!(s.timestep_weights().iter().all(|&w| w == 1));
    }

    #[test]
    fn standard_spike_count_equals_value() {
        let spec = QuantSpec::nonpolar(4).unwrap();
        let s = encode_standard(&tensor((0..16).collect(), spec)).unwrap();
        for k in 0..16 {
            let count: usize = (0..s.timesteps()).filter(|&t| s.spike(t, k)).count();
            assert_eq!(count, k);
        }
    }

    #[test]
    fn standard_rejects_polar_and_out_of_range() {
        let polar = QuantSpec::polar(4).unwrap();
        assert!(encode_standard(&tensor(vec![1], polar)).is_err());
        let spec = QuantSpec::nonpolar(2).unwrap();
        let bad = QuantizedTensor::new_unchecked(vec![0, 9], vec![2], 1.0, spec);
        let err = encode_standard(&bad).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { index: 1, .. }));
        assert!(matches!(
            encode_tclif(&bad).unwrap_err(),
            Error::OutOfRange { index: 1, .. }
        ));
    }

    #[test]
    fn tclif_examples() {
        let polar = QuantSpec::polar(4).unwrap();
        let s = encode_tclif(&tensor(vec![-5, 7, 0], polar)).unwrap();
        assert_eq!(s.timesteps(), 3);
        assert_eq!(s.timestep_weights(), &[1, 2, 4]);
        assert_eq!(s.polarity(), &[-1, 1, 1]);
        assert_eq!(bits_of(&s, 0), vec![1, 0, 1]);
        assert_eq!(bits_of(&s, 1), vec![1, 1, 1]);
        assert_eq!(bits_of(&s, 2), vec![0, 0, 0]);

        let nonpolar = QuantSpec::nonpolar(4).unwrap();
        let s = encode_tclif(&tensor(vec![13], nonpolar)).unwrap();
        assert_eq!(s.timesteps(), 4);
        assert_eq!(s.timestep_weights(), &[1, 2, 4, 8]);
        assert_eq!(bits_of(&s, 0), vec![1, 0, 1, 1]);
    }

    #[test]
    fn decode_zero_train() {
        let spec = QuantSpec::polar(5).unwrap();
        let s = encode_tclif(&tensor(vec![0; 9], spec)).unwrap();
        assert_eq!(decode(&s).values(), &[0; 9]);
        assert_eq!(firing_rate(&s), 0.0);
    }

    #[test]
    fn exhaustive_roundtrip_small_widths() {
        for a in 2..=8 {
            let polar = QuantSpec::polar(a).unwrap();
            let (lo, hi) = polar.range();
            let q = tensor((lo..=hi).collect(), polar);
            assert_eq!(decode(&encode_tclif(&q).unwrap()), q);

            let nonpolar = QuantSpec::nonpolar(a).unwrap();
            let q = tensor((0..=nonpolar.range().1).collect(), nonpolar);
            assert_eq!(decode(&encode_tclif(&q).unwrap()), q);
            assert_eq!(decode(&encode_standard(&q).unwrap()), q);
        }
    }

    #[test]
    fn compression_ratios() {
        let a4 = QuantSpec::polar(4).unwrap();
        assert_eq!(
            compression_ratio(a4, CodecKind::Tclif),
            Ratio::from_integer(5)
        );
        let a2 = QuantSpec::nonpolar(2).unwrap();
        assert_eq!(
            compression_ratio(a2, CodecKind::Standard),
            Ratio::from_integer(1)
        );
        let a8 = QuantSpec::polar(8).unwrap();
        let r = compression_ratio(a8, CodecKind::Tclif);
        assert_eq!(r, Ratio::new(255, 7));
        assert!((*r.numer() as f64 / *r.denom() as f64 - 36.428_571).abs() < 1e-5);
    }

    #[test]
    fn firing_rate_all_bits_set() {
        let spec = QuantSpec::polar(4).unwrap();
        let s = encode_tclif(&tensor(vec![7], spec)).unwrap();
        assert_eq!(firing_rate(&s), 1.0);
    }

    #[test]
    fn events_view_matches_planes() {
        let spec = QuantSpec::polar(4).unwrap();
        let s = encode_tclif(&tensor(vec![3, -4, 0, 6], spec)).unwrap();
        let events: Vec<(usize, usize)> = s.events().map(|e| (e.timestep, e.element)).collect();
        assert_eq!(events, vec![(0, 0), (1, 0), (1, 3), (2, 1), (2, 3)]);
        assert_eq!(events.len() as u64, s.firing_stats().fired);
    }

    #[test]
    fn codec_spec_for_timesteps() {
        assert_eq!(
            Codec::TclifPolar.spec_for_timesteps(3).unwrap().bit_width(),
            4
        );
        assert_eq!(
            Codec::TclifNonpolar
                .spec_for_timesteps(3)
                .unwrap()
                .bit_width(),
            3
        );
        assert_eq!(
            Codec::Standard.spec_for_timesteps(7).unwrap().bit_width(),
            3
        );
        assert!(Codec::Standard.spec_for_timesteps(4).is_err());
        assert!(Codec::TclifNonpolar.spec_for_timesteps(1).is_err());
    }

    #[test]
    fn validate_catches_gap_in_standard_train() {
        let spec = QuantSpec::nonpolar(2).unwrap();
        let mut s = encode_standard(&tensor(vec![1, 0], spec)).unwrap();
        s.flip(2, 0);
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("element 0"));
    }

    #[test]
    fn wire_format_roundtrip_and_layout() {
        let spec = QuantSpec::polar(4).unwrap();
        let q = QuantizedTensor::new(vec![3, -5, 0, 7, -1, 2], vec![2, 3], 0.25, spec).unwrap();
        let s = encode_tclif(&q).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..header_end]).unwrap(),
            "spikekit-spikes/1 T=3 N=6 dims=2x3 codec=tclif mode=polar A=4 scale=0.25"
        );
        // plane 0 holds elements 0 (3), 1 (5), 3 (7), 4 (1): bits 0,1,3,4
        assert_eq!(buf[header_end + 1], 0b0001_1011);
        assert_eq!(&buf[buf.len() - 6..], &[1, 0xFF, 1, 1, 0xFF, 1]);
        let back = SpikeTrain::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn wire_format_rejects_inconsistent_header() {
        let text = b"spikekit-spikes/1 T=4 N=1 dims=1 codec=tclif mode=polar A=4 scale=1.0\n";
        assert!(SpikeTrain::read_from(&text[..]).is_err());
        assert!(SpikeTrain::read_from(&b"garbage\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_random_wide(
            a in 2u32..=12,
            seeds in proptest::collection::vec(any::<u32>(), 1..128),
            polar in any::<bool>(),
        ) {
            let spec = if polar { QuantSpec::polar(a) } else { QuantSpec::nonpolar(a) }.unwrap();
            let (lo, hi) = spec.range();
            let span = (hi - lo + 1) as u32;
            let values: Vec<i32> = seeds.iter().map(|s| lo + (s % span) as i32).collect();
            let q = tensor(values, spec);
            let s = encode_tclif(&q).unwrap();
            prop_assert_eq!(s.timesteps(), spec.timesteps(CodecKind::Tclif));
            prop_assert!(s.validate().is_ok());
            prop_assert_eq!(decode(&s), q.clone());
            if !polar && a <= 10 {
                let s = encode_standard(&q).unwrap();
                prop_assert!(s.validate().is_ok());
                prop_assert_eq!(decode(&s), q);
            }
        }

        #[test]
        fn zero_elements_never_fire(
            values in proptest::collection::vec(-7i32..=7, 1..64),
        ) {
            let spec = QuantSpec::polar(4).unwrap();
            let s = encode_tclif(&tensor(values.clone(), spec)).unwrap();
            for (i, &v) in values.iter().enumerate() {
                if v == 0 {
                    prop_assert!((0..s.timesteps()).all(|t| !s.spike(t, i)));
                    prop_assert_eq!(s.polarity()[i], 1);
                }
            }
        }
    }
}
