//! Toy multimodal residual model.
//!
//! Each layer computes `h' = h + W_out · Q(W_in · h)`. The product
//! `U = W_in · h` is the membrane potential: it is quantized per modality
//! with that modality's timestep budget, encoded to spikes, and driven
//! through the integer `W_out` by [`spike_matmul`]. The dense-quantized path
//! feeds the same integers to [`dense_reference`] instead and must match
//! exactly. The full-precision path skips quantization altogether.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, FiringStats, SpikeTrain};
use crate::error::{Error, Result};
use crate::msts::{
    allocate_layers, allocate_layers_reverse, allocate_modality, allocate_uniform, med_profile,
    LayerSnapshot, MedProfile, TimestepAllocation,
};
use crate::quant::{quantize_shaped, scale_for, QuantizedTensor};
use crate::spikelinear::{accumulation_count, dense_reference, spike_matmul, WeightMatrix};
use crate::tokens::{Modality, TokenStream};

pub const DEFAULT_WEIGHT_BITS: u32 = 8;

/// Mixed two-level budget for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelBudget {
    pub target: f64,
    pub high: u32,
    pub low: u32,
}

/// How timesteps are assigned to layers and modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AllocationPlan {
    Uniform {
        timesteps: u32,
    },
    Modality {
        visual: u32,
        text: u32,
    },
    Med {
        visual: LevelBudget,
        text: LevelBudget,
    },
    MedReverse {
        visual: LevelBudget,
        text: LevelBudget,
    },
}

impl AllocationPlan {
    pub fn name(&self) -> &'static str {
        match self {
            AllocationPlan::Uniform { .. } => "uniform",
            AllocationPlan::Modality { .. } => "modality",
            AllocationPlan::Med { .. } => "med",
            AllocationPlan::MedReverse { .. } => "med-reverse",
        }
    }

    pub fn needs_profile(&self) -> bool {
        matches!(
            self,
            AllocationPlan::Med { .. } | AllocationPlan::MedReverse { .. }
        )
    }

    /// Resolve to a concrete allocation; MED plans need a profile.
    pub fn resolve(
        &self,
        layers: usize,
        profile: Option<&MedProfile>,
    ) -> Result<TimestepAllocation> {
        let ranked =
            |v: &LevelBudget, t: &LevelBudget, reverse: bool| -> Result<TimestepAllocation> {
                let p = profile.ok_or_else(|| {
                    Error::Contract(format!("{} allocation requires a MED profile", self.name()))
                })?;
                if p.layers() != layers {
                    return Err(Error::DimensionMismatch {
                        what: "MED profile layers",
                        expected: layers,
                        found: p.layers(),
                    });
                }
                let f = if reverse {
                    allocate_layers_reverse
                } else {
                    allocate_layers
                };
                f(p, Modality::Visual, v.target, v.high, v.low)?.merge(f(
                    p,
                    Modality::Text,
                    t.target,
                    t.high,
                    t.low,
                )?)
            };
        match self {
            AllocationPlan::Uniform { timesteps } => allocate_uniform(layers, *timesteps),
            AllocationPlan::Modality { visual, text } => allocate_modality(layers, *visual, *text),
            AllocationPlan::Med { visual, text } => ranked(visual, text, false),
            AllocationPlan::MedReverse { visual, text } => ranked(visual, text, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub width: usize,
    pub seed: u64,
    pub codec: Codec,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
    pub allocation: AllocationPlan,
}

fn default_weight_bits() -> u32 {
    DEFAULT_WEIGHT_BITS
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 {
            return Err(Error::Contract("layers and width must be positive".into()));
        }
        // catches impossible T values before any work is done
        let probe = match self.allocation {
            AllocationPlan::Uniform { timesteps } => vec![timesteps],
            AllocationPlan::Modality { visual, text } => vec![visual, text],
            AllocationPlan::Med { visual, text } | AllocationPlan::MedReverse { visual, text } => {
                vec![visual.high, visual.low, text.high, text.low]
            }
        };
        for t in probe {
            self.codec.spec_for_timesteps(t as usize)?;
        }
        Ok(())
    }
}

/// Weights of one residual layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Real `W_in`, producing the membrane potential.
    pub input: WeightMatrix,
    /// Integer `W_out`, consuming spikes.
    pub output: WeightMatrix,
}

impl LayerWeights {
    /// `W_in` from reals, `W_out` quantized to `weight_bits`.
    pub fn new(width: usize, w_in: Vec<f64>, w_out: &[f64], weight_bits: u32) -> Result<Self> {
        Ok(Self {
            input: WeightMatrix::from_real(width, width, w_in)?,
            output: WeightMatrix::quantized(width, width, w_out, weight_bits)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ToyModelConfig,
    weights: Vec<LayerWeights>,
}

impl ToyModel {
    /// Seeded init: entries uniform in `[-1, 1] / sqrt(width)`.
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.width * config.width;
        let bound = 1.0 / (config.width as f64).sqrt();
        let mut draw =
            || -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..=1.0) * bound).collect() };
        let weights = (0..config.layers)
            .map(|_| {
                let w_in = draw();
                let w_out = draw();
                LayerWeights::new(config.width, w_in, &w_out, config.weight_bits)
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, weights })
    }

    pub fn from_weights(config: ToyModelConfig, weights: Vec<LayerWeights>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.layers {
            return Err(Error::DimensionMismatch {
                what: "layer weights",
                expected: config.layers,
                found: weights.len(),
            });
        }
        if let Some(w) = weights
            .iter()
            .flat_map(|l| [&l.input, &l.output])
            .find(|w| w.rows() != config.width || w.cols() != config.width)
        {
            return Err(Error::DimensionMismatch {
                what: "layer weight side",
                expected: config.width,
                found: if w.rows() != config.width {
                    w.rows()
                } else {
                    w.cols()
                },
            });
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[LayerWeights] {
        &self.weights
    }

    /// Concrete allocation for `input`; MED plans profile it first.
    pub fn allocation(&self, input: &TokenStream) -> Result<TimestepAllocation> {
        let profile = if self.config.allocation.needs_profile() {
            Some(med_profile(&[capture_activations(self, input)?])?)
        } else {
            None
        };
        self.config
            .allocation
            .resolve(self.config.layers, profile.as_ref())
    }
}

/// Which arithmetic runs the `W_out` product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Path {
    Spiking,
    DenseQuantized,
    FullPrecision,
}

/// Per-modality figures for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModalityMetrics {
    pub modality: Modality,
    pub tokens: usize,
    pub timesteps: u32,
    pub bits: u32,
    pub firing: FiringStats,
    pub accumulations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMetrics {
    pub layer: usize,
    pub modalities: Vec<ModalityMetrics>,
}

impl LayerMetrics {
    /// Token-weighted mean of the per-modality firing rates.
    pub fn firing_rate(&self) -> f64 {
        let tokens: usize = self.modalities.iter().map(|m| m.tokens).sum();
        if tokens == 0 {
            return 0.0;
        }
        self.modalities
            .iter()
            .map(|m| m.tokens as f64 * m.firing.rate())
            .sum::<f64>()
            / tokens as f64
    }

    /// Fired slots over all slots of every modality.
    pub fn pooled_firing_rate(&self) -> f64 {
        self.modalities
            .iter()
            .fold(FiringStats::default(), |acc, m| acc + m.firing)
            .rate()
    }

    pub fn accumulations(&self) -> u64 {
        self.modalities.iter().map(|m| m.accumulations).sum()
    }
}

/// Output of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRun {
    pub output: TokenStream,
    pub metrics: LayerMetrics,
    /// Quantized membrane per modality (absent on the full-precision path).
    pub membranes: Vec<(Modality, QuantizedTensor)>,
    /// Spike trains per modality (spiking path only).
    pub trains: Vec<(Modality, SpikeTrain)>,
}

fn linear_rows(w: &WeightMatrix, rows: &[f64]) -> Vec<f64> {
    let (m, k) = (w.rows(), w.cols());
    let v = w.values();
    rows.chunks_exact(k)
        .flat_map(|x| {
            (0..m).map(move |r| {
                v[r * k..(r + 1) * k]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
        })
        .collect()
}

/// One residual layer under `allocation`.
pub fn run_layer(
    h: &TokenStream,
    weights: &LayerWeights,
    codec: Codec,
    allocation: &TimestepAllocation,
    layer: usize,
    path: Path,
) -> Result<LayerRun> {
    let width = h.width();
    if weights.input.cols() != width || weights.output.rows() != width {
        return Err(Error::DimensionMismatch {
            what: "layer width",
            expected: width,
            found: weights.input.cols(),
        });
    }
    let mut out = h.clone();
    let mut modalities = Vec::new();
    let mut membranes = Vec::new();
    let mut trains = Vec::new();
    for m in Modality::ALL {
        let timesteps = allocation.timesteps(layer, m)?;
        let rows = h.gather(m);
        let tokens = rows.len() / width;
        let u = linear_rows(&weights.input, &rows);
        let mut metrics = ModalityMetrics {
            modality: m,
            tokens,
            timesteps,
            bits: 0,
            firing: FiringStats::default(),
            accumulations: 0,
        };
        let delta = match path {
            Path::FullPrecision => linear_rows(&weights.output, &u),
            Path::Spiking | Path::DenseQuantized => {
                let spec = codec.spec_for_timesteps(timesteps as usize)?;
                metrics.bits = spec.bit_width();
                let scale = scale_for(&u, spec)?;
                let q = quantize_shaped(&u, vec![tokens, width], scale, spec)?;
                let y = if path == Path::Spiking {
                    let s = codec.encode(&q)?;
                    let y = spike_matmul(&weights.output, &s)?;
                    metrics.firing = s.firing_stats();
                    metrics.accumulations = accumulation_count(&weights.output, &s)?;
                    trains.push((m, s));
                    y
                } else {
                    dense_reference(&weights.output, &q)?
                };
                membranes.push((m, q));
                y.values
            }
        };
        let updated: Vec<f64> = rows.iter().zip(&delta).map(|(a, d)| a + d).collect();
        out.scatter(m, &updated)?;
        modalities.push(metrics);
    }
    Ok(LayerRun {
        output: out,
        metrics: LayerMetrics { layer, modalities },
        membranes,
        trains,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub output: TokenStream,
    pub allocation: TimestepAllocation,
    pub layers: Vec<LayerMetrics>,
    /// Per-layer spike trains, kept only on the spiking path.
    pub trains: Vec<Vec<(Modality, SpikeTrain)>>,
}

impl ModelRun {
    pub fn firing_rates(&self) -> Vec<f64> {
        self.layers.iter().map(LayerMetrics::firing_rate).collect()
    }

    pub fn accumulations(&self) -> u64 {
        self.layers.iter().map(LayerMetrics::accumulations).sum()
    }
}

/// Run every layer; the allocation is resolved once from `input`.
pub fn run_model(model: &ToyModel, input: &TokenStream, path: Path) -> Result<ModelRun> {
    let allocation = model.allocation(input)?;
    run_model_with(model, input, &allocation, path)
}

/// [`run_model`] with a caller-supplied allocation.
pub fn run_model_with(
    model: &ToyModel,
    input: &TokenStream,
    allocation: &TimestepAllocation,
    path: Path,
) -> Result<ModelRun> {
    check_input(model, input)?;
    let mut h = input.clone();
    let mut layers = Vec::with_capacity(model.weights.len());
    let mut trains = Vec::new();
    for (l, w) in model.weights.iter().enumerate() {
        let run = run_layer(&h, w, model.config.codec, allocation, l, path)?;
        h = run.output;
        layers.push(run.metrics);
        if path == Path::Spiking {
            trains.push(run.trains);
        }
    }
    Ok(ModelRun {
        output: h,
        allocation: allocation.clone(),
        layers,
        trains,
    })
}

fn check_input(model: &ToyModel, input: &TokenStream) -> Result<()> {
    if input.width() != model.config.width {
        return Err(Error::DimensionMismatch {
            what: "input width",
            expected: model.config.width,
            found: input.width(),
        });
    }
    Ok(())
}

/// Full-precision residual states before and after each layer.
pub fn capture_activations(model: &ToyModel, input: &TokenStream) -> Result<Vec<LayerSnapshot>> {
    check_input(model, input)?;
    // the full-precision path ignores timesteps
    let allocation = allocate_uniform(model.config.layers, 1)?;
    let mut h = input.clone();
    let mut snaps = Vec::with_capacity(model.weights.len());
    for (l, w) in model.weights.iter().enumerate() {
        let next = run_layer(
            &h,
            w,
            model.config.codec,
            &allocation,
            l,
            Path::FullPrecision,
        )?
        .output;
        snaps.push(LayerSnapshot {
            before: h,
            after: next.clone(),
        });
        h = next;
    }
    Ok(snaps)
}

/// Seeded input: `visual` tokens then `text` tokens, entries uniform in
/// `[-1, 1]`.
pub fn synthetic_input(width: usize, visual: usize, text: usize, seed: u64) -> Result<TokenStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = visual + text;
    let values = (0..tokens * width)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    let mut tags = vec![Modality::Visual; visual];
    tags.extend(std::iter::repeat_n(Modality::Text, text));
    TokenStream::new(width, values, tags)
}

/// `||a - b|| / ||b||`; zero when both are zero.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}
