//! Modality evolution discrepancy (MED) profiling and MED-guided timestep
//! allocation.
//!
//! MED at layer `l` for modality `m` is one minus the mean cosine similarity
//! between each token's residual state before and after the layer. Layers
//! whose tokens move more get the higher of two adjacent timestep levels
//! under a fixed average budget.

use serde::Serialize;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tokens::{Modality, TokenStream};

/// Residual state entering and leaving one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSnapshot {
    pub before: TokenStream,
    pub after: TokenStream,
}

/// MED for one (layer, modality) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MedEntry {
    Value {
        med: f64,
        samples: usize,
    },
    /// No token of this modality had a non-zero state at this layer.
    NoTokens,
}

impl MedEntry {
    pub fn med(&self) -> Option<f64> {
        match *self {
            MedEntry::Value { med, .. } => Some(med),
            MedEntry::NoTokens => None,
        }
    }
}

/// MED values for every profiled layer and both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct MedProfile {
    entries: Vec<[MedEntry; 2]>,
}

impl MedProfile {
    /// Build directly from per-layer values (`None` marks "no tokens").
    pub fn from_values(visual: &[Option<f64>], text: &[Option<f64>]) -> Result<Self> {
        if visual.len() != text.len() {
            return Err(Error::DimensionMismatch {
                what: "profile layer count",
                expected: visual.len(),
                found: text.len(),
            });
        }
        let cell = |v: Option<f64>| -> Result<MedEntry> {
            match v {
                None => Ok(MedEntry::NoTokens),
                Some(med) if (0.0..=2.0).contains(&med) => Ok(MedEntry::Value { med, samples: 1 }),
                Some(med) => Err(Error::Contract(format!("MED {med} outside [0, 2]"))),
            }
        };
        let entries = visual
            .iter()
            .zip(text)
            .map(|(&v, &t)| Ok([cell(v)?, cell(t)?]))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn layers(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, layer: usize, m: Modality) -> MedEntry {
        self.entries[layer][m.index()]
    }

    pub fn med(&self, layer: usize, m: Modality) -> Option<f64> {
        self.entry(layer, m).med()
    }

    /// Per-layer MED series for one modality.
    pub fn series(&self, m: Modality) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e[m.index()].med()).collect()
    }

    /// Reorder layers: new layer `i` is old layer `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            entries: order.iter().map(|&i| self.entries[i]).collect(),
        }
    }

    /// CSV with header `layer,modality,med,samples`; missing cells are
    /// written as `none` with zero samples.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "modality", "med", "samples"])?;
        for (layer, cells) in self.entries.iter().enumerate() {
            for m in Modality::ALL {
                let (med, samples) = match cells[m.index()] {
                    MedEntry::Value { med, samples } => (format!("{med:?}"), samples),
                    MedEntry::NoTokens => ("none".to_string(), 0),
                };
                w.write_record([layer.to_string(), m.to_string(), med, samples.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut cells: Vec<[Option<MedEntry>; 2]> = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != 4 {
                return Err(Error::format("MED csv", "expected 4 columns"));
            }
            let layer: usize = record[0]
                .parse()
                .map_err(|_| Error::format("MED csv", format!("bad layer `{}`", &record[0])))?;
            let m: Modality = record[1].parse()?;
            let samples: usize = record[3]
                .parse()
                .map_err(|_| Error::format("MED csv", format!("bad samples `{}`", &record[3])))?;
            let entry = if &record[2] == "none" {
                MedEntry::NoTokens
            } else {
                let med: f64 = record[2]
                    .parse()
                    .map_err(|_| Error::format("MED csv", format!("bad MED `{}`", &record[2])))?;
                if !(0.0..=2.0).contains(&med) {
                    return Err(Error::format(
                        "MED csv",
                        format!("MED {med} outside [0, 2]"),
                    ));
                }
                MedEntry::Value { med, samples }
            };
            if cells.len() <= layer {
                cells.resize(layer + 1, [None, None]);
            }
            if cells[layer][m.index()].replace(entry).is_some() {
                return Err(Error::format(
                    "MED csv",
                    format!("duplicate row for layer {layer} {m}"),
                ));
            }
        }
        let entries = cells
            .into_iter()
            .enumerate()
            .map(|(layer, c)| match c {
                [Some(v), Some(t)] => Ok([v, t]),
                _ => Err(Error::format(
                    "MED csv",
                    format!("layer {layer} missing a modality"),
                )),
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Streaming MED accumulator over calibration samples.
///
/// Each sample contributes its per-layer mean cosine similarity; the final
/// MED is one minus the arithmetic mean over the samples that had tokens.
#[derive(Debug, Clone)]
pub struct MedAccumulator {
    sim_sums: Vec<[f64; 2]>,
    samples: Vec<[usize; 2]>,
}

impl MedAccumulator {
    pub fn new(layers: usize) -> Self {
        Self {
            sim_sums: vec![[0.0; 2]; layers],
            samples: vec![[0; 2]; layers],
        }
    }

    pub fn add_sample(&mut self, snapshots: &[LayerSnapshot]) -> Result<()> {
        if snapshots.len() != self.sim_sums.len() {
            return Err(Error::DimensionMismatch {
                what: "snapshot layer count",
                expected: self.sim_sums.len(),
                found: snapshots.len(),
            });
        }
        if let Some(l) = snapshots
            .iter()
            .position(|s| !s.before.same_layout(&s.after))
        {
            return Err(Error::Contract(format!(
                "layer {l}: states before and after differ in width or token tags"
            )));
        }
        for (layer, snap) in snapshots.iter().enumerate() {
            for m in Modality::ALL {
                let mut sum = 0.0;
                let mut counted = 0usize;
                for i in snap.before.indices(m) {
                    if let Some(c) = cosine(snap.before.token(i), snap.after.token(i)) {
                        sum += c;
                        counted += 1;
                    }
                }
                if counted > 0 {
                    self.sim_sums[layer][m.index()] += sum / counted as f64;
                    self.samples[layer][m.index()] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> MedProfile {
        let entries = self
            .sim_sums
            .iter()
            .zip(&self.samples)
            .map(|(sums, counts)| {
                let cell = |k: usize| {
                    if counts[k] == 0 {
                        MedEntry::NoTokens
                    } else {
                        let sim = sums[k] / counts[k] as f64;
                        MedEntry::Value {
                            med: (1.0 - sim).clamp(0.0, 2.0),
                            samples: counts[k],
                        }
                    }
                };
                [cell(0), cell(1)]
            })
            .collect();
        MedProfile { entries }
    }
}

/// Profile MED over one or more calibration samples, each a list of
/// per-layer snapshots.
pub fn med_profile(samples: &[Vec<LayerSnapshot>]) -> Result<MedProfile> {
    let layers = samples
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Contract("MED profiling needs at least one sample".into()))?;
    let mut acc = MedAccumulator::new(layers);
    for sample in samples {
        acc.add_sample(sample)?;
    }
    Ok(acc.finish())
}

/// Layer ordering used to hand out the higher timestep level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    /// Largest MED first.
    Descending,
    /// Smallest MED first (the reverse ablation).
    Ascending,
}

/// Mixed-level budget used for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerBudget {
    pub modality: Modality,
    pub target: f64,
    pub high: u32,
    pub low: u32,
    /// Layers receiving `high`.
    pub k: usize,
    pub layer_count: usize,
    pub ranking: Ranking,
}

impl LayerBudget {
    /// Mean timestep actually assigned: `(k·high + (L-k)·low) / L`.
    pub fn achieved(&self) -> f64 {
        (self.k as f64 * self.high as f64 + (self.layer_count - self.k) as f64 * self.low as f64)
            / self.layer_count as f64
    }
}

/// Per-layer, per-modality timestep assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimestepAllocation {
    layers: usize,
    visual: Option<Vec<u32>>,
    text: Option<Vec<u32>>,
    base: Option<(u32, u32)>,
    budgets: Vec<LayerBudget>,
}

impl TimestepAllocation {
    fn empty(layers: usize) -> Self {
        Self {
            layers,
            visual: None,
            text: None,
            base: None,
            budgets: Vec::new(),
        }
    }

    fn slot(&mut self, m: Modality) -> &mut Option<Vec<u32>> {
        match m {
            Modality::Visual => &mut self.visual,
            Modality::Text => &mut self.text,
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Per-layer assignment for `m`, if this allocation covers it.
    pub fn series(&self, m: Modality) -> Option<&[u32]> {
        match m {
            Modality::Visual => self.visual.as_deref(),
            Modality::Text => self.text.as_deref(),
        }
    }

    pub fn timesteps(&self, layer: usize, m: Modality) -> Result<u32> {
        self.series(m)
            .and_then(|s| s.get(layer).copied())
            .ok_or(Error::MissingAllocation { layer, modality: m })
    }

    /// Mean timestep over the layers of `m`.
    pub fn mean(&self, m: Modality) -> Option<f64> {
        self.series(m)
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().map(|&t| t as f64).sum::<f64>() / s.len() as f64)
    }

    /// Modality base levels `(T_v, T_t)` when built from them.
    pub fn base(&self) -> Option<(u32, u32)> {
        self.base
    }

    pub fn budgets(&self) -> &[LayerBudget] {
        &self.budgets
    }

    /// Layers of `m` assigned strictly more than the minimum level.
    pub fn high_layers(&self, m: Modality) -> Vec<usize> {
        let Some(s) = self.series(m) else {
            return Vec::new();
        };
        let lo = s.iter().copied().min().unwrap_or(0);
        (0..s.len()).filter(|&l| s[l] > lo).collect()
    }

    /// Combine two allocations that cover different modalities.
    pub fn merge(mut self, other: TimestepAllocation) -> Result<Self> {
        if self.layers != other.layers {
            return Err(Error::DimensionMismatch {
                what: "allocation layer count",
                expected: self.layers,
                found: other.layers,
            });
        }
        for m in Modality::ALL {
            if let Some(s) = other.series(m) {
                let slot = self.slot(m);
                if slot.is_some() {
                    return Err(Error::Contract(format!("both allocations assign {m}")));
                }
                *slot = Some(s.to_vec());
            }
        }
        self.budgets.extend(other.budgets);
        self.base = self.base.or(other.base);
        Ok(self)
    }

    /// Rows `layer,modality,timesteps`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "modality", "timesteps"])?;
        for layer in 0..self.layers {
            for m in Modality::ALL {
                if let Some(s) = self.series(m) {
                    w.write_record([layer.to_string(), m.to_string(), s[layer].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_positive(name: &str, t: u32) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Same timestep count for every layer and modality.
pub fn allocate_uniform(layers: usize, timesteps: u32) -> Result<TimestepAllocation> {
    check_positive("T", timesteps)?;
    let mut a = TimestepAllocation::empty(layers);
    a.visual = Some(vec![timesteps; layers]);
    a.text = Some(vec![timesteps; layers]);
    a.base = Some((timesteps, timesteps));
    Ok(a)
}

/// Visual layers get `t_visual`, text layers `t_text`; `t_text >= t_visual`.
pub fn allocate_modality(layers: usize, t_visual: u32, t_text: u32) -> Result<TimestepAllocation> {
    check_positive("T_v", t_visual)?;
    check_positive("T_t", t_text)?;
    if t_text < t_visual {
        return Err(Error::Contract(format!(
            "text timesteps ({t_text}) must not be below visual timesteps ({t_visual})"
        )));
    }
    let mut a = TimestepAllocation::empty(layers);
    a.visual = Some(vec![t_visual; layers]);
    a.text = Some(vec![t_text; layers]);
    a.base = Some((t_visual, t_text));
    Ok(a)
}

/// Number of layers that receive the high level, rounded half up.
pub fn high_layer_count(target: f64, high: u32, low: u32, layer_count: usize) -> Result<usize> {
    check_positive("T_lo", low)?;
    if low >= high {
        return Err(Error::Contract(format!(
            "need T_lo < T_hi, got {low} >= {high}"
        )));
    }
    if !(low as f64..=high as f64).contains(&target) {
        return Err(Error::Contract(format!(
            "target {target} outside [T_lo, T_hi] = [{low}, {high}]"
        )));
    }
    let exact = (target - low as f64) / (high - low) as f64 * layer_count as f64;
    // half up, with slack for representation error at exact halves
    let k = (exact + 0.5 + 1e-9).floor() as usize;
    Ok(k.min(layer_count))
}

fn rank_layers(profile: &MedProfile, m: Modality, ranking: Ranking) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profile.layers()).collect();
    order.sort_by(|&a, &b| {
        let key = |l: usize| profile.med(l, m);
        match (key(a), key(b)) {
            (Some(x), Some(y)) => {
                let primary = match ranking {
                    Ranking::Descending => y.total_cmp(&x),
                    Ranking::Ascending => x.total_cmp(&y),
                };
                primary.then(a.cmp(&b))
            }
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.cmp(&b),
        }
    });
    order
}

fn allocate_ranked(
    profile: &MedProfile,
    m: Modality,
    target: f64,
    high: u32,
    low: u32,
    ranking: Ranking,
) -> Result<TimestepAllocation> {
    let layer_count = profile.layers();
    let k = high_layer_count(target, high, low, layer_count)?;
    let mut series = vec![low; layer_count];
    for &l in rank_layers(profile, m, ranking).iter().take(k) {
        series[l] = high;
    }
    let mut a = TimestepAllocation::empty(layer_count);
    *a.slot(m) = Some(series);
    a.budgets.push(LayerBudget {
        modality: m,
        target,
        high,
        low,
        k,
        layer_count,
        ranking,
    });
    Ok(a)
}

/// The `k_m` highest-MED layers of `m` get `high`, the rest `low`.
/// Ties go to the lower layer index.
pub fn allocate_layers(
    profile: &MedProfile,
    m: Modality,
    target: f64,
    high: u32,
    low: u32,
) -> Result<TimestepAllocation> {
    allocate_ranked(profile, m, target, high, low, Ranking::Descending)
}

/// Like [`allocate_layers`] but the lowest-MED layers get `high`.
pub fn allocate_layers_reverse(
    profile: &MedProfile,
    m: Modality,
    target: f64,
    high: u32,
    low: u32,
) -> Result<TimestepAllocation> {
    allocate_ranked(profile, m, target, high, low, Ranking::Ascending)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(
        tokens: usize,
        width: usize,
        tags: Vec<Modality>,
        rng: &mut ChaCha8Rng,
    ) -> TokenStream {
        let values = (0..tokens * width)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        TokenStream::new(width, values, tags).unwrap()
    }

    fn tags6() -> Vec<Modality> {
        use Modality::*;
        vec![Visual, Text, Visual, Visual, Text, Visual]
    }

    #[test]
    fn identity_and_negation_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = stream(6, 8, tags6(), &mut rng);
        let neg = TokenStream::new(8, h.values().iter().map(|v| -v).collect(), tags6()).unwrap();
        let p = med_profile(&[vec![
            LayerSnapshot {
                before: h.clone(),
                after: h.clone(),
            },
            LayerSnapshot {
                before: h.clone(),
                after: neg,
            },
        ]])
        .unwrap();
        for m in Modality::ALL {
            assert!(p.med(0, m).unwrap().abs() < 1e-12);
            assert!((p.med(1, m).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let states: Vec<TokenStream> = (0..5).map(|_| stream(6, 8, tags6(), &mut rng)).collect();
        let snaps: Vec<LayerSnapshot> = states
            .windows(2)
            .map(|w| LayerSnapshot {
                before: w[0].clone(),
                after: w[1].clone(),
            })
            .collect();
        let p = med_profile(&[snaps]).unwrap();
        for l in 0..4 {
            for m in Modality::ALL {
                let (a, b) = (&states[l], &states[l + 1]);
                let mut total = 0.0;
                let mut n = 0.0;
                for i in 0..6 {
                    if a.tags()[i] != m {
                        continue;
                    }
                    let mut dot = 0.0;
                    let mut na = 0.0;
                    let mut nb = 0.0;
                    for j in 0..8 {
                        dot += a.token(i)[j] * b.token(i)[j];
                        na += a.token(i)[j] * a.token(i)[j];
                        nb += b.token(i)[j] * b.token(i)[j];
                    }
                    total += dot / (na.sqrt() * nb.sqrt());
                    n += 1.0;
                }
                let oracle = 1.0 - total / n;
                assert!((p.med(l, m).unwrap() - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_modality_and_zero_tokens() {
        let tags = vec![Modality::Visual; 3];
        let mut values = vec![1.0; 6];
        values[0] = 0.0;
        values[1] = 0.0;
        let h = TokenStream::new(2, values, tags).unwrap();
        let p = med_profile(&[vec![LayerSnapshot {
            before: h.clone(),
            after: h,
        }]])
        .unwrap();
        assert_eq!(p.entry(0, Modality::Text), MedEntry::NoTokens);
        assert_eq!(
            p.entry(0, Modality::Visual),
            MedEntry::Value {
                med: 0.0,
                samples: 1
            }
        );
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = stream(6, 8, tags6(), &mut rng);
        let b = stream(
            6,
            4,
            {
                let mut t = tags6();
                t.truncate(6);
                t
            },
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        assert!(med_profile(&[vec![LayerSnapshot {
            before: a,
            after: b
        }]])
        .is_err());
        assert!(med_profile(&[]).is_err());
    }

    #[test]
    fn samples_average_similarity() {
        use Modality::Visual;
        let x = TokenStream::new(2, vec![1.0, 0.0], vec![Visual]).unwrap();
        let y = TokenStream::new(2, vec![0.0, 1.0], vec![Visual]).unwrap();
        let same = vec![LayerSnapshot {
            before: x.clone(),
            after: x.clone(),
        }];
        let orth = vec![LayerSnapshot {
            before: x,
            after: y,
        }];
        let p = med_profile(&[same, orth]).unwrap();
        assert_eq!(
            p.entry(0, Visual),
            MedEntry::Value {
                med: 0.5,
                samples: 2
            }
        );
    }

    #[test]
    fn modality_allocation_examples() {
        let a = allocate_modality(6, 3, 4).unwrap();
        assert_eq!(a.series(Modality::Visual).unwrap(), &[3; 6]);
        assert_eq!(a.series(Modality::Text).unwrap(), &[4; 6]);
        let a = allocate_modality(6, 3, 3).unwrap();
        assert_eq!(a.series(Modality::Visual), a.series(Modality::Text));
        let a = allocate_modality(2, 2, 3).unwrap();
        assert_eq!(a.timesteps(1, Modality::Visual).unwrap(), 2);
        assert_eq!(a.timesteps(1, Modality::Text).unwrap(), 3);
        assert!(matches!(
            a.timesteps(5, Modality::Text),
            Err(Error::MissingAllocation { layer: 5, .. })
        ));
        assert!(allocate_modality(2, 4, 3).is_err());
        assert!(allocate_modality(2, 0, 3).is_err());
    }

    fn descending_profile() -> MedProfile {
        // layer l has MED 0.1 * (l+1), shuffled
        let meds = [0.3, 0.9, 0.1, 0.5, 1.0, 0.2, 0.7, 0.4, 0.8, 0.6];
        let v: Vec<Option<f64>> = meds.iter().map(|&m| Some(m)).collect();
        MedProfile::from_values(&v, &v).unwrap()
    }

    #[test]
    fn layer_allocation_example() {
        let p = descending_profile();
        let a = allocate_layers(&p, Modality::Text, 3.3, 4, 3).unwrap();
        assert_eq!(a.budgets()[0].k, 3);
        assert_eq!(a.high_layers(Modality::Text), vec![1, 4, 8]);
        assert!(a.series(Modality::Visual).is_none());
        let r = allocate_layers_reverse(&p, Modality::Text, 3.3, 4, 3).unwrap();
        assert_eq!(r.high_layers(Modality::Text), vec![0, 2, 5]);
    }

    #[test]
    fn layer_allocation_boundaries() {
        let p = descending_profile();
        let lo = allocate_layers(&p, Modality::Visual, 3.0, 4, 3).unwrap();
        assert_eq!(lo.series(Modality::Visual).unwrap(), &[3; 10]);
        let hi = allocate_layers(&p, Modality::Visual, 4.0, 4, 3).unwrap();
        assert_eq!(hi.series(Modality::Visual).unwrap(), &[4; 10]);
        assert!(allocate_layers(&p, Modality::Visual, 4.5, 4, 3).is_err());
        assert!(allocate_layers(&p, Modality::Visual, 3.5, 3, 3).is_err());
    }

    #[test]
    fn uniform_profile_ties_by_index() {
        let v = vec![Some(0.5); 6];
        let p = MedProfile::from_values(&v, &v).unwrap();
        let f = allocate_layers(&p, Modality::Text, 3.5, 4, 3).unwrap();
        let r = allocate_layers_reverse(&p, Modality::Text, 3.5, 4, 3).unwrap();
        assert_eq!(f.series(Modality::Text), r.series(Modality::Text));
        assert_eq!(f.high_layers(Modality::Text), vec![0, 1, 2]);
    }

    #[test]
    fn no_token_layers_rank_last() {
        let v = vec![None, Some(0.1), Some(0.2)];
        let p = MedProfile::from_values(&v, &v).unwrap();
        let f = allocate_layers(&p, Modality::Text, 3.0 + 2.0 / 3.0, 4, 3).unwrap();
        let r = allocate_layers_reverse(&p, Modality::Text, 3.0 + 2.0 / 3.0, 4, 3).unwrap();
        assert_eq!(f.high_layers(Modality::Text), vec![1, 2]);
        assert_eq!(r.high_layers(Modality::Text), vec![1, 2]);
    }

    #[test]
    fn merge_combines_modalities() {
        let p = descending_profile();
        let v = allocate_layers(&p, Modality::Visual, 2.3, 3, 2).unwrap();
        let t = allocate_layers(&p, Modality::Text, 3.3, 4, 3).unwrap();
        let both = v.clone().merge(t).unwrap();
        assert_eq!(both.budgets().len(), 2);
        assert!((both.mean(Modality::Visual).unwrap() - 2.3).abs() < 1e-12);
        assert!((both.mean(Modality::Text).unwrap() - 3.3).abs() < 1e-12);
        assert!(v.clone().merge(v).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let p = MedProfile::from_values(&[Some(0.25), None], &[Some(1.5), Some(0.0)]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("layer,modality,med,samples\n0,visual,0.25,1\n"));
        assert!(text.contains("1,visual,none,0"));
        assert_eq!(MedProfile::read_csv(&buf[..]).unwrap(), p);
    }

    // The literal `1/(2·L)` bound only holds with adjacent levels; in
    // general the rounding error scales with `T_hi - T_lo`.
    fn achieved_error(target: f64, high: u32, low: u32, layers: usize) -> f64 {
        let k = high_layer_count(target, high, low, layers).unwrap();
        let b = LayerBudget {
            modality: Modality::Text,
            target,
            high,
            low,
            k,
            layer_count: layers,
            ranking: Ranking::Descending,
        };
        (b.achieved() - target).abs()
    }

    proptest! {
        #[test]
        fn budget_error_bounded_by_half_layer(
            low in 1u32..8,
            gap in 1u32..8,
            frac in 0.0f64..=1.0,
            layers in 1usize..64,
        ) {
            let high = low + gap;
            let target = low as f64 + frac * gap as f64;
            let err = achieved_error(target, high, low, layers);
            prop_assert!(err <= gap as f64 / (2.0 * layers as f64) + 1e-9);
            if gap == 1 {
                prop_assert!(err <= 1.0 / (2.0 * layers as f64) + 1e-9);
            }
        }

        #[test]
        fn forward_and_reverse_spend_same_budget(
            meds in proptest::collection::vec(0.0f64..2.0, 1..32),
            frac in 0.0f64..=1.0,
        ) {
            let v: Vec<Option<f64>> = meds.iter().map(|&m| Some(m)).collect();
            let p = MedProfile::from_values(&v, &v).unwrap();
            let target = 2.0 + frac;
            let f = allocate_layers(&p, Modality::Visual, target, 3, 2).unwrap();
            let r = allocate_layers_reverse(&p, Modality::Visual, target, 3, 2).unwrap();
            let total = |a: &TimestepAllocation| a.series(Modality::Visual).unwrap().iter().sum::<u32>();
            prop_assert_eq!(total(&f), total(&r));
            // high sets overlap in exactly max(0, 2k - L) layers for distinct MEDs
            let k = f.budgets()[0].k;
            let fh = f.high_layers(Modality::Visual);
            let rh = r.high_layers(Modality::Visual);
            let overlap = fh.iter().filter(|l| rh.contains(l)).count();
            let mut sorted = meds.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == meds.len() && k > 0 && k < meds.len() {
                prop_assert_eq!(overlap, (2 * k).saturating_sub(meds.len()));
            }
        }

        #[test]
        fn allocation_is_permutation_equivariant(
            meds in proptest::collection::vec(0.0f64..2.0, 2..24),
            frac in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let mut order: Vec<usize> = (0..meds.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let v: Vec<Option<f64>> = meds.iter().map(|&m| Some(m)).collect();
            let p = MedProfile::from_values(&v, &v).unwrap();
            let mut distinct = meds.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assume!(distinct.len() == meds.len());
            let target = 3.0 + frac;
            let a = allocate_layers(&p, Modality::Text, target, 4, 3).unwrap();
            let b = allocate_layers(&p.permuted(&order), Modality::Text, target, 4, 3).unwrap();
            let sa = a.series(Modality::Text).unwrap();
            let sb = b.series(Modality::Text).unwrap();
            for (new, &old) in order.iter().enumerate() {
                prop_assert_eq!(sb[new], sa[old]);
            }
        }

        #[test]
        fn med_is_scale_invariant(
            seed in any::<u64>(),
            alpha in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = stream(6, 8, tags6(), &mut rng);
            let b = stream(6, 8, tags6(), &mut rng);
            let scaled = |s: &TokenStream| {
                TokenStream::new(8, s.values().iter().map(|v| v * alpha).collect(), tags6()).unwrap()
            };
            let p = med_profile(&[vec![LayerSnapshot { before: a.clone(), after: b.clone() }]]).unwrap();
            let q = med_profile(&[vec![LayerSnapshot { before: scaled(&a), after: scaled(&b) }]]).unwrap();
            for m in Modality::ALL {
                let (x, y) = (p.med(0, m).unwrap(), q.med(0, m).unwrap());
                prop_assert!((0.0..=2.0).contains(&x));
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
