use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use spikekit::codec::{compression_ratio, firing_rate};
use spikekit::costmodel::{
    builtin_scenarios, cost_report, effective_timestep, CostReport, ScenarioSet, TokenMix,
    BUILTIN_SETS,
};
use spikekit::msts::{med_profile, MedEntry, MedProfile, TimestepAllocation};
use spikekit::pesim::{array_matmul, peak_metrics, reference_matmul};
use spikekit::pipeline::{
    capture_activations, relative_deviation, run_model_with, synthetic_input, Path, ToyModel,
};
use spikekit::quant::quantize_auto;
use spikekit::spikelinear::{dense_reference, spike_matmul, WeightMatrix};
use spikekit::tensor_io::Tensor;
use spikekit::Modality;

use crate::config::RunConfig;
use crate::output::{Output, Table};
use crate::CliError;

fn input_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn read_tensor(path: &FsPath) -> Result<Vec<f64>, CliError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let tensor = if bytes.starts_with(b"spikekit-tensor/") {
        Tensor::read_from(&bytes[..])
    } else {
        Tensor::read_csv(&bytes[..])
    }
    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(tensor.data.to_real())
}

pub fn encode(cfg: &RunConfig, input: Option<&FsPath>, out: &Output) -> Result<(), CliError> {
    let values = match input {
        Some(p) => read_tensor(p)?,
        None => cfg.encode.values.clone(),
    };
    let codec = cfg.encode.codec;
    let spec = codec.spec(cfg.encode.bits)?;
    let q = quantize_auto(&values, spec)?;
    let train = codec.encode(&q)?;
    let stats = train.firing_stats();
    let mut table = Table::new(&[
        "codec",
        "bits",
        "timesteps",
        "elements",
        "fired",
        "firing_rate",
        "compression",
        "scale",
    ]);
    table.push(vec![
        json!(codec.to_string()),
        json!(spec.bit_width()),
        json!(train.timesteps()),
        json!(train.len()),
        json!(stats.fired),
        json!(firing_rate(&train)),
        json!(compression_ratio(spec, codec.kind()).to_string()),
        json!(q.scale()),
    ]);
    let mut bytes = Vec::new();
    train.write_to(&mut bytes)?;
    out.raw("spikes.spk", &bytes)?;
    out.table("encode", &table)
}

pub fn matmul_check(cfg: &RunConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let m = &cfg.matmul;
    let spec = m.codec.spec(m.bits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Table::new(&[
        "case",
        "equal",
        "spike_additions",
        "dense_macs",
        "firing_rate",
    ]);
    let mut mismatch = None;
    for case in 0..m.cases {
        let wv: Vec<f64> = (0..m.rows * m.cols)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let w = WeightMatrix::quantized(m.rows, m.cols, &wv, m.weight_bits)?;
        let uv: Vec<f64> = (0..m.batch * m.cols)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let q = quantize_auto(&uv, spec)?.with_dims(vec![m.batch, m.cols])?;
        let s = m.codec.encode(&q)?;
        let a = spike_matmul(&w, &s)?;
        let b = dense_reference(&w, &q)?;
        let equal = a.values == b.values && a.integer == b.integer;
        if !equal && mismatch.is_none() {
            mismatch = Some(format!("case {case} ({}, {} bits)", m.codec, m.bits));
        }
        table.push(vec![
            json!(case),
            json!(equal),
            json!(a.operations),
            json!(b.operations),
            json!(firing_rate(&s)),
        ]);
    }
    out.table("matmul_check", &table)?;
    match mismatch {
        None => Ok(()),
        Some(m) => Err(CliError::Verification(m)),
    }
}

fn model_and_input(
    cfg: &RunConfig,
    seed: u64,
) -> Result<(ToyModel, spikekit::TokenStream), CliError> {
    let model = ToyModel::new(cfg.model.toy(seed))?;
    let input = synthetic_input(
        cfg.model.width,
        cfg.model.visual_tokens,
        cfg.model.text_tokens,
        input_seed(seed),
    )?;
    Ok((model, input))
}

fn profile_table(p: &MedProfile) -> Table {
    let mut table = Table::new(&["layer", "modality", "med", "samples"]);
    for layer in 0..p.layers() {
        for m in Modality::ALL {
            let (med, samples) = match p.entry(layer, m) {
                MedEntry::Value { med, samples } => (json!(med), samples),
                MedEntry::NoTokens => (json!("none"), 0),
            };
            table.push(vec![
                json!(layer),
                json!(m.to_string()),
                med,
                json!(samples),
            ]);
        }
    }
    table
}

fn profile_model(cfg: &RunConfig, seed: u64) -> Result<MedProfile, CliError> {
    let (model, input) = model_and_input(cfg, seed)?;
    Ok(med_profile(&[capture_activations(&model, &input)?])?)
}

pub fn med(cfg: &RunConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    out.table("med", &profile_table(&profile_model(cfg, seed)?))
}

fn allocation_table(a: &TimestepAllocation) -> Table {
    let mut table = Table::new(&["layer", "modality", "timesteps"]);
    for layer in 0..a.layers() {
        for m in Modality::ALL {
            if let Ok(t) = a.timesteps(layer, m) {
                table.push(vec![json!(layer), json!(m.to_string()), json!(t)]);
            }
        }
    }
    table
}

pub fn allocate(
    cfg: &RunConfig,
    seed: u64,
    input: Option<&FsPath>,
    out: &Output,
) -> Result<(), CliError> {
    let profile = match input {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            MedProfile::read_csv(BufReader::new(f))
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => profile_model(cfg, seed)?,
    };
    let plan = cfg.model.allocation;
    let alloc = plan.resolve(profile.layers(), Some(&profile))?;
    out.table("allocation", &allocation_table(&alloc))?;
    let mix = TokenMix {
        visual: cfg.model.visual_tokens as u64,
        text: cfg.model.text_tokens as u64,
    };
    out.json(
        "allocation_summary",
        &json!({
            "mode": plan.name(),
            "layers": alloc.layers(),
            "mean_visual": alloc.mean(Modality::Visual),
            "mean_text": alloc.mean(Modality::Text),
            "effective_timestep": effective_timestep(&alloc, mix)?,
            "budgets": serde_json::to_value(alloc.budgets()).map_err(|e| CliError::Config(e.to_string()))?,
        }),
    )
}

fn cost_table(reports: &[CostReport]) -> Table {
    let mut table = Table::new(&[
        "method",
        "timestep",
        "firing_rate",
        "flops_t",
        "reported_t",
        "rel_error",
        "effective_t",
        "bit_factor",
    ]);
    for r in reports {
        let dense = r.kind().codec().is_none();
        table.push(vec![
            json!(r.method()),
            json!(r.timestep_label()),
            if dense {
                json!("N/A")
            } else {
                json!(r.firing_rate())
            },
            json!(r.spike_flops() / 1e12),
            json!(r.reported()),
            json!(r.relative_error()),
            json!(r.effective_t()),
            json!(r.bit_factor()),
        ]);
    }
    table
}

fn scenario_set(cfg: &RunConfig) -> ScenarioSet {
    cfg.cost
        .custom
        .clone()
        .or_else(|| builtin_scenarios(&cfg.cost.set))
        .expect("validated scenario set")
}

pub fn cost(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let set = scenario_set(cfg);
    out.table(
        &format!("cost_{}", set.name),
        &cost_table(&cost_report(&set)?),
    )
}

fn peak_table(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = peak_metrics(&cfg.pesim.array)?;
    let mut table = Table::new(&["tops", "tops_per_watt", "tops_per_mm2"]);
    table.push(vec![
        json!(p.tops),
        json!(p.tops_per_watt),
        json!(p.tops_per_mm2),
    ]);
    Ok(table)
}

pub fn pesim(cfg: &RunConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let array = &cfg.pesim.array;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = array.pe.max_activation();
    let whalf = 1i64 << (array.pe.weight_bits - 1);
    let mut reports = Vec::new();
    for &[m, k, n] in &cfg.pesim.shapes {
        let s: Vec<i64> = (0..m * k).map(|_| rng.gen_range(-lim..=lim)).collect();
        let w: Vec<i64> = (0..k * n).map(|_| rng.gen_range(-whalf..whalf)).collect();
        let (x, rep) = array_matmul(&s, &w, m, k, n, array)?;
        if x != reference_matmul(&s, &w, m, k, n) {
            return Err(CliError::Verification(format!(
                "array output differs for {m}x{k}x{n}"
            )));
        }
        reports.push(rep);
    }
    out.json(
        "pesim",
        &json!({
            "array": serde_json::to_value(array).map_err(|e| CliError::Config(e.to_string()))?,
            "reports": serde_json::to_value(&reports).map_err(|e| CliError::Config(e.to_string()))?,
        }),
    )?;
    out.table("peak", &peak_table(cfg)?)
}

struct PipelineRun {
    layers: Table,
    summary: Value,
    equal: bool,
}

fn pipeline_run(cfg: &RunConfig, seed: u64) -> Result<PipelineRun, CliError> {
    let (model, input) = model_and_input(cfg, seed)?;
    let alloc = model.allocation(&input)?;
    let spiking = run_model_with(&model, &input, &alloc, Path::Spiking)?;
    let dense = run_model_with(&model, &input, &alloc, Path::DenseQuantized)?;
    let fp = run_model_with(&model, &input, &alloc, Path::FullPrecision)?;
    let mut layers = Table::new(&[
        "layer",
        "visual_timesteps",
        "text_timesteps",
        "visual_firing_rate",
        "text_firing_rate",
        "firing_rate",
        "accumulations",
    ]);
    for l in &spiking.layers {
        let by = |m: Modality| {
            l.modalities
                .iter()
                .find(|x| x.modality == m)
                .expect("both modalities run")
        };
        let (v, t) = (by(Modality::Visual), by(Modality::Text));
        layers.push(vec![
            json!(l.layer),
            json!(v.timesteps),
            json!(t.timesteps),
            json!(v.firing.rate()),
            json!(t.firing.rate()),
            json!(l.firing_rate()),
            json!(l.accumulations()),
        ]);
    }
    let equal = spiking.output == dense.output;
    let summary = json!({
        "codec": cfg.model.codec.to_string(),
        "allocation": cfg.model.allocation.name(),
        "spiking_equals_dense": equal,
        "deviation_from_full_precision": relative_deviation(spiking.output.values(), fp.output.values()),
        "mean_firing_rate": spiking.firing_rates().iter().sum::<f64>() / spiking.layers.len() as f64,
        "accumulations": spiking.accumulations(),
    });
    Ok(PipelineRun {
        layers,
        summary,
        equal,
    })
}

pub fn pipeline(cfg: &RunConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let run = pipeline_run(cfg, seed)?;
    out.table("pipeline_layers", &run.layers)?;
    out.json("pipeline_summary", &run.summary)?;
    if run.equal {
        Ok(())
    } else {
        Err(CliError::Verification(
            "spiking and dense-quantized outputs differ".into(),
        ))
    }
}

pub fn report(cfg: &RunConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    for name in BUILTIN_SETS {
        let set = builtin_scenarios(name).expect("built-in set");
        out.table(&format!("cost_{name}"), &cost_table(&cost_report(&set)?))?;
    }
    if let Some(set) = &cfg.cost.custom {
        out.table(
            &format!("cost_{}", set.name),
            &cost_table(&cost_report(set)?),
        )?;
    }
    out.table("peak", &peak_table(cfg)?)?;
    out.table("med", &profile_table(&profile_model(cfg, seed)?))?;
    let run = pipeline_run(cfg, seed)?;
    out.table("pipeline_layers", &run.layers)?;
    out.json("pipeline_summary", &run.summary)
}
