//! Bit-level, cycle-level model of a spike-driven dot-product PE array.
//!
//! A PE takes `k` signed activations as sign-magnitude bit-planes plus `k`
//! integer weights. For each magnitude level the PE gates every weight by
//! its level bit, flips its sign by the polarity bit, sums the lanes in an
//! adder tree and shifts the level sum into the accumulator.
//!
//! The array is a `rows × cols` grid fed by broadcast. Each cycle one input
//! group is broadcast along PE rows and one weight group along PE columns,
//! and every active PE consumes one `k`-lane chunk of the reduction
//! dimension. All magnitude levels are evaluated within the cycle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign-magnitude form of a signed integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignMagnitude {
    pub negative: bool,
    pub magnitude: u64,
    /// Magnitude bits (`width - 1`).
    pub bits: u32,
}

impl SignMagnitude {
    /// Magnitude bits, most significant first.
    pub fn magnitude_bits(&self) -> Vec<u8> {
        (0..self.bits)
            .rev()
            .map(|b| ((self.magnitude >> b) & 1) as u8)
            .collect()
    }

    pub fn value(&self) -> i64 {
        if self.negative {
            -(self.magnitude as i64)
        } else {
            self.magnitude as i64
        }
    }
}

/// Split a `width`-bit two's-complement value into sign and magnitude.
///
/// `-2^(width-1)` has no sign-magnitude form and is rejected.
pub fn smc(v: i64, width: u32) -> Result<SignMagnitude> {
    if !(2..=63).contains(&width) {
        return Err(Error::InvalidSpec(format!(
            "SMC width {width} outside [2, 63]"
        )));
    }
    let max = (1i64 << (width - 1)) - 1;
    if v.abs() > max || v == i64::MIN {
        return Err(Error::OutOfRange {
            index: 0,
            value: v,
            lo: -max,
            hi: max,
        });
    }
    Ok(SignMagnitude {
        negative: v < 0,
        magnitude: v.unsigned_abs(),
        bits: width - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PEConfig {
    /// Magnitude bit-planes per activation.
    pub levels: u32,
    /// Weight lanes per evaluation.
    pub lanes: usize,
    pub weight_bits: u32,
}

impl Default for PEConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            lanes: 32,
            weight_bits: 8,
        }
    }
}

impl PEConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=62).contains(&self.levels) {
            return Err(Error::InvalidSpec(format!(
                "PE levels {} outside [1, 62]",
                self.levels
            )));
        }
        if self.lanes == 0 || !self.lanes.is_power_of_two() {
            return Err(Error::InvalidSpec(format!(
                "PE lanes must be a positive power of two, got {}",
                self.lanes
            )));
        }
        if !(2..=32).contains(&self.weight_bits) {
            return Err(Error::InvalidSpec(format!(
                "weight bits {} outside [2, 32]",
                self.weight_bits
            )));
        }
        Ok(())
    }

    pub fn max_activation(&self) -> i64 {
        (1i64 << self.levels) - 1
    }

    fn weight_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.weight_bits - 1);
        (-half, half - 1)
    }
}

/// Spike components of `k` activations: one bit-vector per magnitude level
/// (level 0 is the least significant) and a polarity vector (`true` = negative).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeInput {
    pub levels: Vec<Vec<bool>>,
    pub polarity: Vec<bool>,
}

impl PeInput {
    /// Sign-magnitude decomposition of `values` into `levels` planes.
    pub fn from_ints(values: &[i64], levels: u32) -> Result<Self> {
        let mut planes = vec![vec![false; values.len()]; levels as usize];
        let mut polarity = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            let sm = smc(v, levels + 1).map_err(|e| match e {
                Error::OutOfRange { value, lo, hi, .. } => Error::OutOfRange {
                    index: i,
                    value,
                    lo,
                    hi,
                },
                other => other,
            })?;
            for (t, plane) in planes.iter_mut().enumerate() {
                plane[i] = (sm.magnitude >> t) & 1 == 1;
            }
            polarity.push(sm.negative);
        }
        Ok(Self {
            levels: planes,
            polarity,
        })
    }

    pub fn lanes(&self) -> usize {
        self.polarity.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeOutput {
    pub value: i64,
    /// Lanes whose spike bit let the weight through, summed over levels.
    pub gated_additions: u64,
}

fn adder_tree(mut terms: Vec<i64>) -> i64 {
    while terms.len() > 1 {
        if terms.len() % 2 == 1 {
            terms.push(0);
        }
        terms = terms.chunks_exact(2).map(|p| p[0] + p[1]).collect();
    }
    terms.first().copied().unwrap_or(0)
}

/// One PE evaluation. Fewer than `lanes` inputs are zero-padded.
pub fn pe_dot(input: &PeInput, weights: &[i64], config: &PEConfig) -> Result<PeOutput> {
    let k = input.lanes();
    if weights.len() != k {
        return Err(Error::DimensionMismatch {
            what: "PE weight lanes",
            expected: k,
            found: weights.len(),
        });
    }
    if k > config.lanes {
        return Err(Error::DimensionMismatch {
            what: "PE lanes",
            expected: config.lanes,
            found: k,
        });
    }
    if input.levels.len() != config.levels as usize {
        return Err(Error::DimensionMismatch {
            what: "PE magnitude levels",
            expected: config.levels as usize,
            found: input.levels.len(),
        });
    }
    if let Some(bad) = input.levels.iter().find(|p| p.len() != k) {
        return Err(Error::DimensionMismatch {
            what: "PE level plane",
            expected: k,
            found: bad.len(),
        });
    }
    let (lo, hi) = config.weight_range();
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| w < lo || w > hi) {
        return Err(Error::OutOfRange {
            index,
            value,
            lo,
            hi,
        });
    }
    let mut acc = 0i64;
    let mut gated = 0u64;
    for (t, plane) in input.levels.iter().enumerate() {
        let mut terms = vec![0i64; config.lanes];
        for i in 0..k {
            if plane[i] {
                terms[i] = if input.polarity[i] {
                    -weights[i]
                } else {
                    weights[i]
                };
                gated += 1;
            }
        }
        acc += adder_tree(terms) << t;
    }
    Ok(PeOutput {
        value: acc,
        gated_additions: gated,
    })
}

/// Order in which output tiles are visited.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TileOrder {
    #[default]
    RowMajor,
    ColMajor,
}

fn default_depth() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub pe: PEConfig,
    pub frequency_hz: f64,
    #[serde(default)]
    pub power_w: Option<f64>,
    #[serde(default)]
    pub area_mm2: Option<f64>,
    /// Extra latency of `depth - 1` cycles is added once per matmul.
    #[serde(default = "default_depth")]
    pub pipeline_depth: u64,
    #[serde(default)]
    pub order: TileOrder,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            pe: PEConfig::default(),
            frequency_hz: 333e6,
            power_w: Some(0.484),
            area_mm2: Some(76.27),
            pipeline_depth: 1,
            order: TileOrder::RowMajor,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        self.pe.validate()?;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidSpec(
                "array dimensions must be positive".into(),
            ));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::NonPositive {
                name: "frequency",
                value: self.frequency_hz,
            });
        }
        for (name, v) in [("power", self.power_w), ("area", self.area_mm2)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositive { name, value: v });
                }
            }
        }
        if self.pipeline_depth == 0 {
            return Err(Error::InvalidSpec(
                "pipeline depth must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Lane-MACs the array can retire per cycle.
    pub fn peak_macs_per_cycle(&self) -> u64 {
        (self.rows * self.cols * self.pe.lanes) as u64
    }

    /// `ceil(M/rows)·ceil(N/cols)·ceil(K/k) + depth - 1`.
    pub fn cycles_for(&self, m: usize, k: usize, n: usize) -> u64 {
        (m.div_ceil(self.rows) * n.div_ceil(self.cols) * k.div_ceil(self.pe.lanes)) as u64
            + self.pipeline_depth
            - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub cycles: u64,
    pub pe_evaluations: u64,
    /// Operand vectors supplied: active rows + active columns per cycle.
    pub operand_fetches: u64,
    /// Largest number of broadcast groups driven in any cycle.
    pub max_broadcast_groups: u64,
    pub gated_additions: u64,
    pub utilization: f64,
    /// Useful lane-MACs per cycle.
    pub achieved_macs_per_cycle: f64,
    pub peak_macs_per_cycle: u64,
}

/// `S (M×K) · W (K×N)`, both row-major, on the simulated array.
pub fn array_matmul(
    s: &[i64],
    w: &[i64],
    m: usize,
    k: usize,
    n: usize,
    array: &ArrayConfig,
) -> Result<(Vec<i64>, CycleReport)> {
    array.validate()?;
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::Contract("matrix dimensions must be positive".into()));
    }
    if s.len() != m * k {
        return Err(Error::DimensionMismatch {
            what: "activation matrix",
            expected: m * k,
            found: s.len(),
        });
    }
    if w.len() != k * n {
        return Err(Error::DimensionMismatch {
            what: "weight matrix",
            expected: k * n,
            found: w.len(),
        });
    }
    let pe = &array.pe;
    let lanes = pe.lanes;
    let lim = pe.max_activation();
    if let Some((index, &value)) = s.iter().enumerate().find(|(_, v)| v.abs() > lim) {
        return Err(Error::OutOfRange {
            index,
            value,
            lo: -lim,
            hi: lim,
        });
    }
    // decompose every input chunk once; the array sees them via broadcast
    let chunks = k.div_ceil(lanes);
    let mut inputs = Vec::with_capacity(m * chunks);
    for i in 0..m {
        for c in 0..chunks {
            let lo = c * lanes;
            let hi = (lo + lanes).min(k);
            inputs.push(PeInput::from_ints(&s[i * k + lo..i * k + hi], pe.levels)?);
        }
    }
    let (tiles_m, tiles_n) = (m.div_ceil(array.rows), n.div_ceil(array.cols));
    let tiles: Vec<(usize, usize)> = match array.order {
        TileOrder::RowMajor => (0..tiles_m)
            .flat_map(|a| (0..tiles_n).map(move |b| (a, b)))
            .collect(),
        TileOrder::ColMajor => (0..tiles_n)
            .flat_map(|b| (0..tiles_m).map(move |a| (a, b)))
            .collect(),
    };
    let mut out = vec![0i64; m * n];
    let mut report = CycleReport {
        m,
        k,
        n,
        cycles: array.pipeline_depth - 1,
        pe_evaluations: 0,
        operand_fetches: 0,
        max_broadcast_groups: 0,
        gated_additions: 0,
        utilization: 0.0,
        achieved_macs_per_cycle: 0.0,
        peak_macs_per_cycle: array.peak_macs_per_cycle(),
    };
    let mut column = Vec::with_capacity(lanes);
    for (tm, tn) in tiles {
        let rows = (tm * array.rows)..((tm + 1) * array.rows).min(m);
        let cols = (tn * array.cols)..((tn + 1) * array.cols).min(n);
        for c in 0..chunks {
            let lo = c * lanes;
            let hi = (lo + lanes).min(k);
            report.cycles += 1;
            report.operand_fetches += (rows.len() + cols.len()) as u64;
            // one input group along rows, one weight group along columns
            report.max_broadcast_groups = report.max_broadcast_groups.max(2);
            for j in cols.clone() {
                column.clear();
                column.extend((lo..hi).map(|r| w[r * n + j]));
                for i in rows.clone() {
                    let r = pe_dot(&inputs[i * chunks + c], &column, pe)?;
                    out[i * n + j] += r.value;
                    report.pe_evaluations += 1;
                    report.gated_additions += r.gated_additions;
                }
            }
        }
    }
    let useful = (m * n * k) as f64;
    report.achieved_macs_per_cycle = useful / report.cycles as f64;
    report.utilization = report.achieved_macs_per_cycle / report.peak_macs_per_cycle as f64;
    Ok((out, report))
}

/// Plain integer matmul, row-major.
pub fn reference_matmul(s: &[i64], w: &[i64], m: usize, k: usize, n: usize) -> Vec<i64> {
    let mut out = vec![0i64; m * n];
    for i in 0..m {
        for r in 0..k {
            let a = s[i * k + r];
            if a == 0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += a * w[r * n + j];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakMetrics {
    pub tops: f64,
    pub tops_per_watt: Option<f64>,
    pub tops_per_mm2: Option<f64>,
}

/// Peak throughput counting a MAC as two ops, and its efficiency ratios
/// when power and area are known.
pub fn peak_metrics(array: &ArrayConfig) -> Result<PeakMetrics> {
    array.validate()?;
    let tops = 2.0 * array.peak_macs_per_cycle() as f64 * array.frequency_hz / 1e12;
    Ok(PeakMetrics {
        tops,
        tops_per_watt: array.power_w.map(|p| tops / p),
        tops_per_mm2: array.area_mm2.map(|a| tops / a),
    })
}
