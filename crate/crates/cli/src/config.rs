//! Run configuration, read from TOML. Every section is optional and falls
//! back to the defaults below; unknown keys are rejected.

use serde::Deserialize;
use std::path::Path;

use spikekit::costmodel::ScenarioSet;
use spikekit::pesim::ArrayConfig;
use spikekit::pipeline::{AllocationPlan, LevelBudget, ToyModelConfig, DEFAULT_WEIGHT_BITS};
use spikekit::Codec;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub verify: VerifyConfig,
    pub encode: EncodeConfig,
    pub matmul: MatmulConfig,
    pub model: ModelConfig,
    pub cost: CostConfig,
    pub pesim: PesimConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(2..=12).contains(&self.verify.max_bits) {
            return bad(format!(
                "verify.max_bits {} outside [2, 12]",
                self.verify.max_bits
            ));
        }
        if let Some(f) = &self.verify.inject_fault {
            if f.timestep == 0 {
                return bad("verify.inject_fault.timestep is 1-based".into());
            }
        }
        self.encode.codec.spec(self.encode.bits).map_err(cfg_err)?;
        self.matmul.codec.spec(self.matmul.bits).map_err(cfg_err)?;
        if self.matmul.rows == 0 || self.matmul.cols == 0 || self.matmul.batch == 0 {
            return bad("matmul dimensions must be positive".into());
        }
        self.model.toy(DEFAULT_SEED).validate().map_err(cfg_err)?;
        if self.model.visual_tokens + self.model.text_tokens == 0 {
            return bad("model needs at least one token".into());
        }
        self.pesim.array.validate().map_err(cfg_err)?;
        if self.pesim.shapes.iter().any(|s| s.contains(&0)) {
            return bad("pesim shapes must be positive".into());
        }
        if self.cost.custom.is_none()
            && spikekit::costmodel::builtin_scenarios(&self.cost.set).is_none()
        {
            return bad(format!(
                "unknown cost set `{}` (known: {})",
                self.cost.set,
                spikekit::costmodel::BUILTIN_SETS.join(", ")
            ));
        }
        Ok(())
    }
}

pub fn cfg_err(e: spikekit::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub codec: Codec,
    pub element: usize,
    /// 1-based timestep whose bit is flipped.
    pub timestep: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Largest bit width checked exhaustively.
    pub max_bits: u32,
    /// Random weight/activation pairs per bit width.
    pub random_cases: usize,
    pub inject_fault: Option<FaultSpec>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            max_bits: 8,
            random_cases: 200,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeConfig {
    pub codec: Codec,
    pub bits: u32,
    /// Used when no `--input` is given.
    pub values: Vec<f64>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            codec: Codec::TclifPolar,
            bits: 4,
            values: vec![-1.0, -0.5, -0.1, 0.0, 0.2, 0.55, 0.9, 1.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatmulConfig {
    pub codec: Codec,
    pub bits: u32,
    pub rows: usize,
    pub cols: usize,
    pub batch: usize,
    pub cases: usize,
    pub weight_bits: u32,
}

impl Default for MatmulConfig {
    fn default() -> Self {
        Self {
            codec: Codec::TclifPolar,
            bits: 4,
            rows: 32,
            cols: 64,
            batch: 8,
            cases: 100,
            weight_bits: 8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub codec: Codec,
    pub weight_bits: u32,
    pub visual_tokens: usize,
    pub text_tokens: usize,
    pub allocation: AllocationPlan,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            width: 16,
            codec: Codec::TclifPolar,
            weight_bits: DEFAULT_WEIGHT_BITS,
            visual_tokens: 8,
            text_tokens: 4,
            allocation: AllocationPlan::Med {
                visual: LevelBudget {
                    target: 2.5,
                    high: 3,
                    low: 2,
                },
                text: LevelBudget {
                    target: 3.5,
                    high: 4,
                    low: 3,
                },
            },
        }
    }
}

impl ModelConfig {
    pub fn toy(&self, seed: u64) -> ToyModelConfig {
        ToyModelConfig {
            layers: self.layers,
            width: self.width,
            seed,
            codec: self.codec,
            weight_bits: self.weight_bits,
            allocation: self.allocation,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    /// Built-in scenario set name.
    pub set: String,
    /// Inline set; takes precedence over `set`.
    pub custom: Option<ScenarioSet>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            set: "qwen2vl-7b".into(),
            custom: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PesimConfig {
    pub array: ArrayConfig,
    /// `[M, K, N]` matmul shapes, filled with seeded random operands.
    pub shapes: Vec<[usize; 3]>,
}

impl Default for PesimConfig {
    fn default() -> Self {
        Self {
            array: ArrayConfig::default(),
            shapes: vec![[16, 32, 16], [64, 256, 64], [50, 100, 30]],
        }
    }
}
