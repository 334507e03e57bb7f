//! Firing-rate and FLOPs accounting for spiking inference.
//!
//! Spike cost is `base × T_eff × R × c`, where `base` is the dense FP16
//! MAC count, `T_eff` the token-weighted timestep count, `R` the firing rate
//! and `c` the relative cost of one spike-gated accumulate. Defaults for `c`
//! are 1/64 for binary spikes and 1/32 for polar (two-bit) spikes, the
//! values that reproduce published efficiency tables against an FP16 base.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::msts::TimestepAllocation;
use crate::quant::Mode;
use crate::tokens::Modality;

pub const BINARY_SPIKE_FACTOR: f64 = 1.0 / 64.0;
pub const POLAR_SPIKE_FACTOR: f64 = 1.0 / 32.0;
pub const W4A4_FACTOR: f64 = 1.0 / 16.0;

/// Tokens per modality in one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenMix {
    pub visual: u64,
    pub text: u64,
}

impl TokenMix {
    /// 1024×1024 image (4096 visual tokens) with 50 text tokens.
    pub const HIGH_RES_PROMPT: TokenMix = TokenMix {
        visual: 4096,
        text: 50,
    };
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::NonPositive { name, value });
    }
    Ok(())
}

/// `base × t_eff × rate × factor`; every input positive, `rate <= 1`.
pub fn spike_flops(base: f64, t_eff: f64, rate: f64, factor: f64) -> Result<f64> {
    positive("base FLOPs", base)?;
    positive("effective timesteps", t_eff)?;
    positive("firing rate", rate)?;
    positive("bit factor", factor)?;
    if rate > 1.0 {
        return Err(Error::Contract(format!("firing rate {rate} exceeds 1")));
    }
    Ok(base * t_eff * rate * factor)
}

/// `(N_v·T_v + N_t·T_t) / (N_v + N_t)`.
pub fn mixed_timestep(t_visual: f64, t_text: f64, mix: TokenMix) -> Result<f64> {
    let total = mix.visual + mix.text;
    if total == 0 {
        return Err(Error::Contract("token mix has no tokens".into()));
    }
    Ok((mix.visual as f64 * t_visual + mix.text as f64 * t_text) / total as f64)
}

/// Token-weighted timestep of an allocation, each modality taking its mean
/// over layers.
pub fn effective_timestep(allocation: &TimestepAllocation, mix: TokenMix) -> Result<f64> {
    let mean = |m: Modality, n: u64| -> Result<f64> {
        match allocation.mean(m) {
            Some(t) => Ok(t),
            None if n == 0 => Ok(0.0),
            None => Err(Error::MissingAllocation {
                layer: 0,
                modality: m,
            }),
        }
    };
    mixed_timestep(
        mean(Modality::Visual, mix.visual)?,
        mean(Modality::Text, mix.text)?,
        mix,
    )
}

/// Cost bucket of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    Fp16,
    W4a4,
    Standard,
    TclifPolar,
    TclifNonpolar,
}

impl CostKind {
    pub fn codec(self) -> Option<Codec> {
        match self {
            CostKind::Standard => Some(Codec::Standard),
            CostKind::TclifPolar => Some(Codec::TclifPolar),
            CostKind::TclifNonpolar => Some(Codec::TclifNonpolar),
            CostKind::Fp16 | CostKind::W4a4 => None,
        }
    }
}

/// Default bit factor: binary spikes 1/64, polar spikes 1/32.
pub fn bit_factor(codec: Codec) -> f64 {
    match codec.mode() {
        Mode::Nonpolar => BINARY_SPIKE_FACTOR,
        Mode::Polar => POLAR_SPIKE_FACTOR,
    }
}

/// Timesteps of a spiking row: one count, or a visual/text pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Timesteps {
    Single(u32),
    Split { visual: f64, text: f64 },
}

impl Timesteps {
    pub fn label(&self) -> String {
        match *self {
            Timesteps::Single(t) => t.to_string(),
            Timesteps::Split { visual, text } => format!("{visual}/{text}"),
        }
    }

    pub fn effective(&self, mix: TokenMix) -> Result<f64> {
        match *self {
            Timesteps::Single(t) => Ok(t as f64),
            Timesteps::Split { visual, text } => mixed_timestep(visual, text, mix),
        }
    }
}

/// One row of a cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub method: String,
    pub kind: CostKind,
    #[serde(default)]
    pub timesteps: Option<Timesteps>,
    #[serde(default)]
    pub firing_rate: Option<f64>,
    /// Overrides the default bit factor.
    #[serde(default)]
    pub bit_factor: Option<f64>,
    /// Published figure in T-FLOPs, for comparison only.
    #[serde(default)]
    pub reported: Option<f64>,
}

/// A model's dense base cost, token mix and rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSet {
    pub name: String,
    /// Dense FP16 MAC FLOPs.
    pub base_flops: f64,
    pub mix: TokenMix,
    pub rows: Vec<Scenario>,
}

/// Costed row; `spike_flops` always equals the product of its factors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    method: String,
    kind: CostKind,
    timestep_label: String,
    base_flops: f64,
    effective_t: f64,
    firing_rate: f64,
    bit_factor: f64,
    spike_flops: f64,
    mix: TokenMix,
    reported: Option<f64>,
}

impl CostReport {
    pub fn method(&self) -> &str {
        &self.method
    }
    pub fn kind(&self) -> CostKind {
        self.kind
    }
    pub fn timestep_label(&self) -> &str {
        &self.timestep_label
    }
    pub fn base_flops(&self) -> f64 {
        self.base_flops
    }
    pub fn effective_t(&self) -> f64 {
        self.effective_t
    }
    pub fn firing_rate(&self) -> f64 {
        self.firing_rate
    }
    pub fn bit_factor(&self) -> f64 {
        self.bit_factor
    }
    pub fn spike_flops(&self) -> f64 {
        self.spike_flops
    }
    pub fn mix(&self) -> TokenMix {
        self.mix
    }
    pub fn reported(&self) -> Option<f64> {
        self.reported
    }

    /// `|computed - reported| / reported`, both in T-FLOPs.
    pub fn relative_error(&self) -> Option<f64> {
        self.reported
            .map(|r| (self.spike_flops / 1e12 - r).abs() / r)
    }

    pub fn holds_identity(&self) -> bool {
        self.spike_flops == self.base_flops * self.effective_t * self.firing_rate * self.bit_factor
    }
}

/// Cost one scenario row.
pub fn cost_row(base: f64, mix: TokenMix, row: &Scenario) -> Result<CostReport> {
    let need = |what: &str| Error::Contract(format!("row `{}` needs {what}", row.method));
    let (label, t_eff, rate, factor) = match row.kind {
        CostKind::Fp16 => ("N/A".to_string(), 1.0, 1.0, 1.0),
        CostKind::W4a4 => ("N/A".to_string(), 1.0, 1.0, W4A4_FACTOR),
        kind => {
            let codec = kind.codec().expect("spiking kinds carry a codec");
            let ts = row.timesteps.ok_or_else(|| need("timesteps"))?;
            let rate = row.firing_rate.ok_or_else(|| need("a firing rate"))?;
            (
                ts.label(),
                ts.effective(mix)?,
                rate,
                row.bit_factor.unwrap_or_else(|| bit_factor(codec)),
            )
        }
    };
    let spike_flops = spike_flops(base, t_eff, rate, factor)?;
    Ok(CostReport {
        method: row.method.clone(),
        kind: row.kind,
        timestep_label: label,
        base_flops: base,
        effective_t: t_eff,
        firing_rate: rate,
        bit_factor: factor,
        spike_flops,
        mix,
        reported: row.reported,
    })
}

/// Cost every row of a scenario set.
pub fn cost_report(set: &ScenarioSet) -> Result<Vec<CostReport>> {
    set.rows
        .iter()
        .map(|r| cost_row(set.base_flops, set.mix, r))
        .collect()
}

fn spike_row(method: &str, kind: CostKind, ts: Timesteps, rate: f64, reported: f64) -> Scenario {
    Scenario {
        method: method.into(),
        kind,
        timesteps: Some(ts),
        firing_rate: Some(rate),
        bit_factor: None,
        reported: Some(reported),
    }
}

fn dense_row(method: &str, kind: CostKind, reported: f64) -> Scenario {
    Scenario {
        method: method.into(),
        kind,
        timesteps: None,
        firing_rate: None,
        bit_factor: None,
        reported: Some(reported),
    }
}

/// Names accepted by [`builtin_scenarios`].
pub const BUILTIN_SETS: [&str; 2] = ["qwen2vl-7b", "internvl2-8b"];

/// Published efficiency tables for two 7–8B vision-language models.
pub fn builtin_scenarios(name: &str) -> Option<ScenarioSet> {
    use CostKind::*;
    use Timesteps::*;
    let (base, r34, reported) = match name {
        "qwen2vl-7b" => (8.78, 0.31, [8.78, 17.57, 0.55, 0.17, 0.55, 1.10, 0.25]),
        "internvl2-8b" => (9.28, 0.30, [9.28, 18.57, 0.58, 0.17, 0.58, 1.16, 0.27]),
        _ => return None,
    };
    let split = |v, t| Split { visual: v, text: t };
    Some(ScenarioSet {
        name: name.into(),
        base_flops: base * 1e12,
        mix: TokenMix::HIGH_RES_PROMPT,
        rows: vec![
            dense_row("FP16", Fp16, reported[0]),
            spike_row("RTN", Standard, Single(255), 0.50, reported[1]),
            spike_row("GPTQ", Standard, Single(255), 0.50, reported[1]),
            spike_row("QuaRot", Standard, Single(7), 0.57, reported[2]),
            spike_row(
                "QuaRot+MSTS+TC-LIF",
                TclifPolar,
                split(2.0, 3.0),
                0.30,
                reported[3],
            ),
            dense_row("W4A4", W4a4, reported[4]),
            spike_row("QuaRot", Standard, Single(15), 0.53, reported[5]),
            spike_row(
                "QuaRot+MSTS+TC-LIF",
                TclifPolar,
                split(3.0, 4.0),
                r34,
                reported[6],
            ),
        ],
    })
}

fn tflops(v: f64) -> String {
    format!("{:.4}", v / 1e12)
}

/// CSV: `method,timestep,firing_rate,flops_t,reported_t,rel_error,effective_t,bit_factor`.
pub fn write_csv<W: Write>(reports: &[CostReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "timestep",
        "firing_rate",
        "flops_t",
        "reported_t",
        "rel_error",
        "effective_t",
        "bit_factor",
    ])?;
    for r in reports {
        let dense = matches!(r.kind, CostKind::Fp16 | CostKind::W4a4);
        w.write_record([
            r.method.clone(),
            r.timestep_label.clone(),
            if dense {
                "N/A".into()
            } else {
                format!("{:.2}", r.firing_rate)
            },
            tflops(r.spike_flops),
            r.reported.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.relative_error()
                .map(|e| format!("{e:.4}"))
                .unwrap_or_default(),
            format!("{:.4}", r.effective_t),
            format!("{:.6}", r.bit_factor),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msts::{allocate_modality, allocate_uniform};
    use proptest::prelude::*;

    const BASE: f64 = 8.78e12;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b
    }

    #[test]
    fn single_row_examples() {
        let quarot = spike_flops(BASE, 15.0, 0.53, 1.0 / 64.0).unwrap();
        assert!(rel(quarot / 1e12, 1.10) < 0.01);
        let rtn = spike_flops(BASE, 255.0, 0.50, 1.0 / 64.0).unwrap();
        assert!((rtn / 1e12 - 17.49).abs() < 0.005);
        assert!(rel(rtn / 1e12, 17.57) < 0.005);
        assert_eq!(spike_flops(BASE, 1.0, 1.0, 1.0).unwrap(), BASE);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(spike_flops(0.0, 1.0, 0.5, 1.0).is_err());
        assert!(spike_flops(BASE, -1.0, 0.5, 1.0).is_err());
        assert!(spike_flops(BASE, 1.0, 0.0, 1.0).is_err());
        assert!(spike_flops(BASE, 1.0, 1.5, 1.0).is_err());
        assert!(spike_flops(BASE, 1.0, 0.5, f64::NAN).is_err());
    }

    #[test]
    fn token_weighted_timestep() {
        let mix = TokenMix::HIGH_RES_PROMPT;
        let t = mixed_timestep(3.0, 4.0, mix).unwrap();
        assert!((t - 3.0120).abs() < 1e-4);
        let text_only = TokenMix { visual: 0, text: 7 };
        assert_eq!(mixed_timestep(3.0, 4.0, text_only).unwrap(), 4.0);
        assert!(mixed_timestep(3.0, 4.0, TokenMix { visual: 0, text: 0 }).is_err());
        for v in [1, 10, 4096] {
            let m = TokenMix {
                visual: v,
                text: 50,
            };
            assert_eq!(
                effective_timestep(&allocate_uniform(4, 5).unwrap(), m).unwrap(),
                5.0
            );
        }
        let a = allocate_modality(4, 3, 4).unwrap();
        assert_eq!(effective_timestep(&a, mix).unwrap(), t);
    }

    #[test]
    fn reproduces_both_builtin_tables() {
        for name in BUILTIN_SETS {
            let set = builtin_scenarios(name).unwrap();
            let reports = cost_report(&set).unwrap();
            assert_eq!(reports.len(), 8);
            for r in &reports {
                assert!(r.holds_identity());
                let e = r.relative_error().unwrap();
                assert!(
                    e < 0.05,
                    "{name} {} {}: {e}",
                    r.method(),
                    r.timestep_label()
                );
            }
        }
        assert!(builtin_scenarios("unknown").is_none());
    }

    #[test]
    fn w4a4_and_fp16_rows() {
        let set = builtin_scenarios("qwen2vl-7b").unwrap();
        let reports = cost_report(&set).unwrap();
        assert_eq!(reports[0].spike_flops(), set.base_flops);
        assert!((reports[5].spike_flops() / 1e12 - 0.54875).abs() < 1e-9);
    }

    #[test]
    fn back_solved_factors_generalize() {
        // fit c from one row per codec, predict the others
        let mix = TokenMix::HIGH_RES_PROMPT;
        let c_binary = 1.10 / (8.78 * 15.0 * 0.53);
        let t34 = (4096.0 * 3.0 + 50.0 * 4.0) / 4146.0;
        let c_polar = 0.25 / (8.78 * t34 * 0.31);
        assert!(rel(c_binary, 1.0 / 64.0) < 0.02);
        assert!(rel(c_polar, 1.0 / 32.0) < 0.03);
        let t23 = mixed_timestep(2.0, 3.0, mix).unwrap();
        let predictions = [
            (8.78 * 255.0 * 0.50 * c_binary, 17.57),
            (8.78 * 7.0 * 0.57 * c_binary, 0.55),
            (8.78 * t23 * 0.30 * c_polar, 0.17),
        ];
        for (p, r) in predictions {
            assert!(rel(p, r) < 0.05, "{p} vs {r}");
        }
    }

    #[test]
    fn missing_fields_rejected() {
        let row = Scenario {
            method: "x".into(),
            kind: CostKind::TclifPolar,
            timesteps: None,
            firing_rate: Some(0.3),
            bit_factor: None,
            reported: None,
        };
        assert!(cost_row(BASE, TokenMix::HIGH_RES_PROMPT, &row).is_err());
    }

    #[test]
    fn csv_columns() {
        let set = builtin_scenarios("qwen2vl-7b").unwrap();
        let mut buf = Vec::new();
        write_csv(&cost_report(&set).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("method,timestep,firing_rate,flops_t"));
        assert_eq!(
            lines.next().unwrap().split(',').take(4).collect::<Vec<_>>(),
            ["FP16", "N/A", "N/A", "8.7800"]
        );
        assert!(text.contains("QuaRot+MSTS+TC-LIF,3/4,0.31,0.2562"));
    }

    proptest! {
        #[test]
        fn strictly_monotone_in_each_factor(
            base in 1.0f64..1e13,
            t in 0.5f64..300.0,
            r in 0.01f64..0.99,
            c in 0.001f64..1.0,
            bump in 1.001f64..1.01,
        ) {
            let f = spike_flops(base, t, r, c).unwrap();
            prop_assert!(spike_flops(base * bump, t, r, c).unwrap() > f);
            prop_assert!(spike_flops(base, t * bump, r, c).unwrap() > f);
            prop_assert!(spike_flops(base, t, r * bump, c).unwrap() > f);
            prop_assert!(spike_flops(base, t, r, c * bump).unwrap() > f);
        }

        #[test]
        fn every_report_holds_identity(
            t in 1u32..300,
            r in 0.01f64..=1.0,
            v in 0u64..5000,
            x in 1u64..500,
        ) {
            let row = Scenario {
                method: "p".into(),
                kind: CostKind::TclifNonpolar,
                timesteps: Some(Timesteps::Split { visual: t as f64, text: t as f64 + 1.0 }),
                firing_rate: Some(r),
                bit_factor: None,
                reported: None,
            };
            let rep = cost_row(BASE, TokenMix { visual: v, text: x }, &row).unwrap();
            prop_assert!(rep.holds_identity());
            prop_assert_eq!(rep.bit_factor(), BINARY_SPIKE_FACTOR);
        }
    }
}
