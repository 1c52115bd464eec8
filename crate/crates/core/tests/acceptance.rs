//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use apmm_core::bench::{demo_quant_layer, naive_int32};
use apmm_core::bipolar::{
    bipolar_to_signed, bipolar_value, flip_msb, rewrite_quant_params, signed_code,
    signed_to_bipolar, twos_complement_value,
};
use apmm_core::bitplane::{decompose_pack, unpack};
use apmm_core::engine::{default_workers, Engine, GemmProblem, PackedOperands};
use apmm_core::oracle::{oracle_matmul, oracle_planes, recompose_planes};
use apmm_core::tuner::{median_time, problem_operands, random_config, throughput, tune, Limits};
use apmm_core::{Encoding, IntMatrix, KernelConfig, ProblemKey, QuantParams, TuningTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: apmm_core::Error) -> String {
    e.to_string()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let limits = Limits::default();
    let engine = Engine::new(default_workers().max(2));
    for case in 0..1000 {
        let key = ProblemKey {
            m: rng.gen_range(1..=300),
            n: rng.gen_range(1..=300),
            k: rng.gen_range(1..=300),
            p: rng.gen_range(1..=8),
            q: rng.gen_range(1..=8),
        };
        let (x, w) = problem_operands(&key, rng.gen()).map_err(err)?;
        let cfg = random_config(&mut rng, &key, &limits).map_err(err)?;
        let problem = GemmProblem::new(&x, &w, cfg).map_err(err)?;
        let got = engine.gemm_wide(&problem).map_err(err)?;
        ensure(got == oracle_matmul(&x, &w).map_err(err)?, || {
            format!("case {case}: {key} with {cfg} differs from the oracle")
        })?;
    }
    Ok("1000 random products match the oracle exactly".into())
}

fn bijection_and_affine_law() -> Outcome {
    let mut patterns = 0;
    for bits in 1..=8u32 {
        for code in 0..(1u32 << bits) {
            let code = code as u8;
            let value = twos_complement_value(code, bits);
            let converted = flip_msb(code, bits);
            ensure(bipolar_value(converted, bits) == 2 * value + 1, || {
                format!("bits={bits} code={code:#b}: affine law fails")
            })?;
            ensure(flip_msb(converted, bits) == code, || {
                format!("bits={bits} code={code:#b}: no round trip")
            })?;
            ensure(signed_code(value, bits) == code, || format!("bits={bits} code={code:#b}"))?;
            patterns += 1;
        }
        let (lo, hi) = Encoding::SignedInt.range(bits);
        let len = (hi - lo + 1) as usize;
        let m = IntMatrix::from_fn(1, len, bits, Encoding::SignedInt, |_, c| (lo + c as i32) as i16)
            .map_err(err)?;
        let b = signed_to_bipolar(&m).map_err(err)?;
        ensure(bipolar_to_signed(&b).map_err(err)? == m, || {
            format!("bits={bits}: matrix round trip fails")
        })?;
    }
    ensure(patterns == 510, || format!("covered {patterns} patterns"))?;
    Ok("510 patterns satisfy value' = 2*value + 1 and round-trip".into())
}

fn dequantization_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checks = 0u64;
    for _ in 0..10_000 {
        let scale = 10f64.powf(rng.gen_range(-6.0..3.0));
        let zero = rng.gen_range(-100.0..100.0) * 10f64.powf(rng.gen_range(-4.0..1.0));
        let signed = QuantParams::per_tensor(scale, zero).map_err(err)?;
        let bipolar = rewrite_quant_params(&signed);
        for bits in 1..=8 {
            let (lo, hi) = Encoding::SignedInt.range(bits);
            for x in lo..=hi {
                let a = signed.dequantize(x as i64, 0);
                let b = bipolar.dequantize(2 * x as i64 + 1, 0);
                ensure(a.to_bits() == b.to_bits(), || {
                    format!("s={scale:e} z={zero:e} x={x}: {a:e} != {b:e}")
                })?;
                checks += 1;
            }
        }
    }
    for (p, q, seed) in [(8, 8, 1), (1, 1, 2), (4, 2, 3), (3, 7, 4)] {
        let report = demo_quant_layer(16, 300, p, q, seed).map_err(err)?;
        ensure(report.paths_identical(), || format!("demo p={p} q={q}: paths differ"))?;
    }
    Ok(format!(
        "{checks} (s, z, code) triples identical; demo signed and bipolar outputs bit-identical"
    ))
}

fn recovery_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let (m, n, k) = (rng.gen_range(1..=24), rng.gen_range(1..=24), rng.gen_range(1..=80));
        let (p, q) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = IntMatrix::random(&mut rng, m, k, p, Encoding::BipolarInt).map_err(err)?;
        let w = IntMatrix::random(&mut rng, n, k, q, Encoding::BipolarInt).map_err(err)?;
        let planes = oracle_planes(&x, &w).map_err(err)?;
        ensure(recompose_planes(&planes) == oracle_matmul(&x, &w).map_err(err)?, || {
            format!("case {case}: recomposed planes differ")
        })?;
    }
    Ok("200 plane-pair recompositions equal the direct product".into())
}

fn config_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let limits = Limits::default();
    let engine = Engine::new(default_workers().max(2));
    for case in 0..50 {
        let key = ProblemKey {
            m: rng.gen_range(1..=200),
            n: rng.gen_range(1..=200),
            k: rng.gen_range(1..=600),
            p: rng.gen_range(1..=8),
            q: rng.gen_range(1..=8),
        };
        let (x, w) = problem_operands(&key, rng.gen()).map_err(err)?;
        let a = random_config(&mut rng, &key, &limits).map_err(err)?;
        let b = random_config(&mut rng, &key, &limits).map_err(err)?;
        let ya = engine.gemm_wide(&GemmProblem::new(&x, &w, a).map_err(err)?).map_err(err)?;
        let yb = engine.gemm_wide(&GemmProblem::new(&x, &w, b).map_err(err)?).map_err(err)?;
        ensure(ya == yb, || format!("case {case}: {key} differs between {a} and {b}"))?;
    }
    Ok("50 problems give identical outputs under two random configs".into())
}

struct Tuned {
    key: ProblemKey,
    config: KernelConfig,
    workers: usize,
}

fn tuner_soundness(limits: &Limits) -> (Outcome, Option<Tuned>) {
    let run = || -> Result<(String, Tuned), String> {
        let key = ProblemKey { m: 64, n: 1024, k: 1024, p: 2, q: 1 };
        let mut table = TuningTable::new();
        let start = Instant::now();
        let outcome = tune(key, 3, limits, &mut table).map_err(err)?;
        for entry in &outcome.measured {
            entry.config.validate(key.p, key.q).map_err(err)?;
            ensure(entry.config.scratch_bytes(key.p, key.q) <= limits.scratch_budget, || {
                format!("{} exceeds the scratch budget", entry.config)
            })?;
        }
        let stored = table.get(&key).ok_or("tuned key missing from the table")?;
        ensure(stored.config == outcome.best.config, || "table holds a different config".into())?;
        ensure(outcome.best.throughput >= outcome.default.throughput, || {
            format!(
                "tuned {:.3e} ops/s below default {:.3e} ops/s",
                outcome.best.throughput, outcome.default.throughput
            )
        })?;
        // a second, small key with different widths
        let small = ProblemKey { m: 8, n: 96, k: 300, p: 3, q: 5 };
        let second = tune(small, 3, limits, &mut table).map_err(err)?;
        second.best.config.validate(3, 5).map_err(err)?;
        ensure(second.best.throughput >= second.default.throughput, || "second key".into())?;
        let msg = format!(
            "{} configs timed in {:.1}s; tuned {:.2} Gops/s >= default {:.2} Gops/s",
            outcome.measured.len(),
            start.elapsed().as_secs_f64(),
            outcome.best.throughput / 1e9,
            outcome.default.throughput / 1e9
        );
        Ok((
            msg,
            Tuned {
                key,
                config: outcome.best.config,
                workers: limits.max_workers,
            },
        ))
    };
    match run() {
        Ok((msg, tuned)) => (Ok(msg), Some(tuned)),
        Err(e) => (Err(e), None),
    }
}

fn desk_speedup(tuned: Option<&Tuned>) -> Outcome {
    let tuned = tuned.ok_or("tuning did not complete")?;
    let key = tuned.key;
    let (x, w) = problem_operands(&key, 77).map_err(err)?;
    let engine = Engine::new(tuned.workers);
    let packed_w = decompose_pack(&w, false).map_err(err)?;
    let result = engine
        .gemm_packed(
            &PackedOperands {
                x: &decompose_pack(&x, false).map_err(err)?,
                w: &packed_w,
            },
            &tuned.config,
        )
        .map_err(err)?;
    ensure(result == oracle_matmul(&x, &w).map_err(err)?, || "tuned output wrong".into())?;
    let engine_time = median_time(5, true, || {
        let px = decompose_pack(&x, false)?;
        let y = engine.gemm_packed(&PackedOperands { x: &px, w: &packed_w }, &tuned.config)?;
        std::hint::black_box(y);
        Ok(())
    })
    .map_err(err)?;
    let xs: Vec<i32> = x.data().iter().map(|&v| v as i32).collect();
    let ws: Vec<i32> = w.data().iter().map(|&v| v as i32).collect();
    let naive_time = median_time(5, true, || {
        std::hint::black_box(naive_int32(
            std::hint::black_box(&xs),
            std::hint::black_box(&ws),
            key.m,
            key.n,
            key.k,
        ));
        Ok(())
    })
    .map_err(err)?;
    let engine_ops = throughput(key.m, key.n, key.k, engine_time);
    let naive_ops = throughput(key.m, key.n, key.k, naive_time);
    let ratio = engine_ops / naive_ops;
    let detail = format!(
        "{key}: engine {:.1} us ({:.2} Gops/s), naive {:.1} us ({:.2} Gops/s), {ratio:.2}x with {} workers on {} CPUs",
        engine_time.as_secs_f64() * 1e6,
        engine_ops / 1e9,
        naive_time.as_secs_f64() * 1e6,
        naive_ops / 1e9,
        tuned.workers,
        default_workers()
    );
    ensure(ratio >= 2.0, || detail.clone())?;
    Ok(detail)
}

fn gemv_cost() -> Outcome {
    let (p, q) = (2, 2);
    let cfg = KernelConfig::default_for(p, q, apmm_core::tuner::DEFAULT_SCRATCH_BUDGET);
    let engine = Engine::new(default_workers());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = IntMatrix::random(&mut rng, 1024, 4096, q, Encoding::BipolarInt).map_err(err)?;
    let x1 = IntMatrix::random(&mut rng, 1, 4096, p, Encoding::BipolarInt).map_err(err)?;
    let x8 = IntMatrix::random(&mut rng, 8, 4096, p, Encoding::BipolarInt).map_err(err)?;
    let gemv = GemmProblem::new(&x1, &w, cfg).map_err(err)?;
    let y = apmm_core::engine::gemv_ap(&gemv).map_err(err)?;
    let expect = oracle_matmul(&x1, &w).map_err(err)?;
    ensure(y.data.iter().zip(&expect.data).all(|(a, b)| *a as i64 == *b), || {
        "GEMV differs from the oracle".into()
    })?;
    let packed_w = decompose_pack(&w, false).map_err(err)?;
    let time = |x: &IntMatrix| {
        median_time(5, true, || {
            let px = decompose_pack(x, false)?;
            let y = engine.gemm_packed(&PackedOperands { x: &px, w: &packed_w }, &cfg)?;
            std::hint::black_box(y);
            Ok(())
        })
    };
    let t1 = time(&x1).map_err(err)?;
    let t8 = time(&x8).map_err(err)?;
    let detail = format!(
        "1/1024/4096 matches the oracle; {:.1} us vs 8/1024/4096 {:.1} us",
        t1.as_secs_f64() * 1e6,
        t8.as_secs_f64() * 1e6
    );
    ensure(t1 <= t8, || detail.clone())?;
    Ok(detail)
}

fn packing_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..500 {
        let (rows, cols, bits) = (rng.gen_range(1..=40), rng.gen_range(1..=400), rng.gen_range(1..=8));
        let m = IntMatrix::random(&mut rng, rows, cols, bits, Encoding::BipolarInt).map_err(err)?;
        let packed = decompose_pack(&m, false).map_err(err)?;
        ensure(unpack(&packed) == m, || format!("case {case}: {rows}x{cols}x{bits} round trip"))?;
        let mask = packed.pad_mask();
        for plane in 0..bits as usize {
            for r in 0..rows {
                let last = *packed.row(plane, r).last().expect("nonempty row");
                ensure(last & mask == 0, || format!("case {case}: dirty pad bits"))?;
            }
        }
    }
    Ok("500 random shapes round-trip with zeroed pad bits".into())
}

fn main() -> ExitCode {
    let limits = Limits {
        max_workers: default_workers().max(4),
        ..Limits::default()
    };
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        eprintln!("  criterion {id} finished in {:.1}s", start.elapsed().as_secs_f64());
        results.push((id, name, outcome));
    };
    run(1, "oracle equivalence", &mut oracle_equivalence);
    run(2, "bipolar bijection and affine law", &mut bijection_and_affine_law);
    run(3, "dequantization invariance", &mut dequantization_invariance);
    run(4, "recovery identity", &mut recovery_identity);
    run(5, "config invariance", &mut config_invariance);
    let mut tuned = None;
    run(6, "tuner soundness and dominance", &mut || {
        let (outcome, t) = tuner_soundness(&limits);
        tuned = t;
        outcome
    });
    run(7, "desk-scale speedup", &mut || desk_speedup(tuned.as_ref()));
    run(8, "GEMV correctness and cost", &mut gemv_cost);
    run(9, "packing round trip and pad hygiene", &mut packing_roundtrip);

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
