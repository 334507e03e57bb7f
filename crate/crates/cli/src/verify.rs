//! Exact-equivalence suites behind `spikekit verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use spikekit::codec::decode;
use spikekit::pesim::{array_matmul, pe_dot, reference_matmul, ArrayConfig, PEConfig, PeInput};
use spikekit::pipeline::{run_model, synthetic_input, AllocationPlan, Path, ToyModel};
use spikekit::spikelinear::{dense_reference, spike_matmul, WeightMatrix};
use spikekit::{Codec, QuantSpec, QuantizedTensor};

use crate::config::{FaultSpec, RunConfig};
use crate::output::{Output, Table};
use crate::CliError;

/// First failing case of a suite, serialized.
type SuiteResult = Result<usize, Value>;

fn weights(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> WeightMatrix {
    let ints = (0..rows * cols)
        .map(|_| rng.gen_range(-127..=127))
        .collect();
    WeightMatrix::from_integers(rows, cols, ints, 0.01).expect("valid shape")
}

fn check_pair(
    codec: Codec,
    w: &WeightMatrix,
    q: &QuantizedTensor,
    fault: Option<(usize, usize)>,
) -> SuiteResult {
    let mut s = codec
        .encode(q)
        .map_err(|e| json!({ "codec": codec.to_string(), "error": e.to_string() }))?;
    if let Some((t, i)) = fault {
        s.flip(t, i);
    }
    let back = decode(&s);
    if let Some(i) = (0..q.len()).find(|&i| back.values()[i] != q.values()[i]) {
        return Err(json!({
            "codec": codec.to_string(),
            "bits": q.spec().bit_width(),
            "element": i,
            "expected": q.values()[i],
            "decoded": back.values()[i],
        }));
    }
    let a = spike_matmul(w, &s).map_err(|e| json!({ "error": e.to_string() }))?;
    let b = dense_reference(w, q).map_err(|e| json!({ "error": e.to_string() }))?;
    if a.integer != b.integer || a.values != b.values {
        let j = (0..a.values.len())
            .find(|&j| a.values[j] != b.values[j])
            .unwrap_or(0);
        return Err(json!({
            "codec": codec.to_string(),
            "bits": q.spec().bit_width(),
            "output": j,
            "spike": a.values.get(j),
            "dense": b.values.get(j),
        }));
    }
    Ok(1)
}

fn codec_suite(codec: Codec, cfg: &RunConfig, seed: u64, fault: Option<&FaultSpec>) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    for bits in 2..=cfg.verify.max_bits {
        let spec: QuantSpec = codec.spec(bits).expect("validated bit range");
        let (lo, hi) = spec.range();
        let grid: Vec<i32> = (lo..=hi).collect();
        let n = grid.len();
        let q =
            QuantizedTensor::new(grid, vec![1, n], 0.5, spec).expect("grid values are in range");
        let flip = fault
            .filter(|f| f.codec == codec && bits == 4.min(cfg.verify.max_bits))
            .map(|f| (f.timestep - 1, f.element));
        cases += check_pair(codec, &weights(&mut rng, 7, n), &q, flip)?;
        for _ in 0..cfg.verify.random_cases {
            let (m, k, b) = (
                rng.gen_range(1..16),
                rng.gen_range(1..32),
                rng.gen_range(1..4),
            );
            let values = (0..b * k).map(|_| rng.gen_range(lo..=hi)).collect();
            let q = QuantizedTensor::new(values, vec![b, k], rng.gen_range(0.01..1.0), spec)
                .expect("values drawn from the grid");
            cases += check_pair(codec, &weights(&mut rng, m, k), &q, None)?;
        }
    }
    Ok(cases)
}

fn pe_suite(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PEConfig {
        levels: 3,
        lanes: 2,
        weight_bits: 8,
    };
    let w = [rng.gen_range(-128..=127), rng.gen_range(-128..=127)];
    let mut cases = 0;
    for a in -7..=7i64 {
        for b in -7..=7i64 {
            let x = PeInput::from_ints(&[a, b], 3).expect("in range");
            let got = pe_dot(&x, &w, &cfg).expect("lanes match").value;
            if got != a * w[0] + b * w[1] {
                return Err(json!({ "inputs": [a, b], "weights": w, "pe": got }));
            }
            cases += 1;
        }
    }
    let array = ArrayConfig::default();
    for _ in 0..10 {
        let (m, k, n) = (
            rng.gen_range(1..40),
            rng.gen_range(1..100),
            rng.gen_range(1..40),
        );
        let s: Vec<i64> = (0..m * k).map(|_| rng.gen_range(-7..=7)).collect();
        let w: Vec<i64> = (0..k * n).map(|_| rng.gen_range(-128..=127)).collect();
        let (x, rep) =
            array_matmul(&s, &w, m, k, n, &array).map_err(|e| json!({ "error": e.to_string() }))?;
        if x != reference_matmul(&s, &w, m, k, n) || rep.cycles != array.cycles_for(m, k, n) {
            return Err(json!({ "shape": [m, k, n], "cycles": rep.cycles }));
        }
        cases += 1;
    }
    Ok(cases)
}

fn pipeline_suite(cfg: &RunConfig, seed: u64) -> SuiteResult {
    let input = synthetic_input(
        cfg.model.width,
        cfg.model.visual_tokens,
        cfg.model.text_tokens,
        seed.wrapping_add(1),
    )
    .map_err(|e| json!({ "error": e.to_string() }))?;
    let mut configs = vec![cfg.model.toy(seed)];
    for codec in Codec::ALL {
        let mut c = cfg.model.toy(seed);
        c.codec = codec;
        c.allocation = AllocationPlan::Uniform { timesteps: 3 };
        configs.push(c);
    }
    for c in &configs {
        let model = ToyModel::new(c.clone()).map_err(|e| json!({ "error": e.to_string() }))?;
        let s = run_model(&model, &input, Path::Spiking)
            .map_err(|e| json!({ "error": e.to_string() }))?;
        let d = run_model(&model, &input, Path::DenseQuantized)
            .map_err(|e| json!({ "error": e.to_string() }))?;
        if s.output != d.output {
            return Err(json!({ "codec": c.codec.to_string(), "allocation": c.allocation.name() }));
        }
    }
    Ok(configs.len())
}

pub fn run(cfg: &RunConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let fault = cfg.verify.inject_fault.as_ref();
    if let Some(f) = fault {
        let bits = 4.min(cfg.verify.max_bits);
        let spec = f.codec.spec(bits)?;
        let timesteps = spec.timesteps(f.codec.kind());
        let (lo, hi) = spec.range();
        if f.timestep > timesteps || f.element > (hi - lo) as usize {
            return Err(CliError::Config(format!(
                "inject_fault out of range for {} at {bits} bits (T = {timesteps})",
                f.codec
            )));
        }
    }
    let suites: Vec<(String, SuiteResult)> = vec![
        (
            "standard".into(),
            codec_suite(Codec::Standard, cfg, seed, fault),
        ),
        (
            "tclif-polar".into(),
            codec_suite(Codec::TclifPolar, cfg, seed, fault),
        ),
        (
            "tclif-nonpolar".into(),
            codec_suite(Codec::TclifNonpolar, cfg, seed, fault),
        ),
        ("pe-array".into(), pe_suite(seed)),
        ("pipeline".into(), pipeline_suite(cfg, seed)),
    ];
    let mut table = Table::new(&["suite", "status", "cases", "failure"]);
    let mut first_failure = None;
    for (name, result) in &suites {
        match result {
            Ok(cases) => {
                eprintln!("PASS {name} ({cases} cases)");
                table.push(vec![json!(name), json!("pass"), json!(cases), Value::Null]);
            }
            Err(case) => {
                eprintln!("FAIL {name}: {case}");
                table.push(vec![
                    json!(name),
                    json!("fail"),
                    Value::Null,
                    json!(case.to_string()),
                ]);
                first_failure.get_or_insert_with(|| format!("{name}: {case}"));
            }
        }
    }
    out.table("verify", &table)?;
    match first_failure {
        None => Ok(()),
        Some(f) => Err(CliError::Verification(f)),
    }
}
