//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod oracles;

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rvqmotion::checks::standard_suite;
use rvqmotion::data::{synth_generate, write_synthetic, Clip, SyntheticTask, TEMPLATES};
use rvqmotion::gpt::{GptConfig, GptModel};
use rvqmotion::io::{decode_tensor, encode_tensor, read_tensor, write_tensor, Config, Container, Manifest};
use rvqmotion::pipeline::{
    bench_attention, default_sweep, encode_dataset, eval_model, fit_gpt, fit_vae, gpt_config_for, gpt_examples,
    read_code_archive, write_code_archive,
};
use rvqmotion::rvq::{decode_codebook, decode_codes, encode_codebook, encode_codes, quantize_residual, CodeMatrix, Codebook};
use rvqmotion::sampling::{cfg_mix, corrupt_codes, generate, CorruptionMode, GenerationConfig, GptTrainConfig, StopPolicy};
use rvqmotion::tensor::{Tape, Tensor};
use rvqmotion::vae::{VaeConfig, VaeModel, VaeTrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", budget: Duration::from_secs(120), run: gradient_correctness },
        Criterion { id: 2, name: "rvq greedy optimality", budget: Duration::from_secs(60), run: greedy_optimality },
        Criterion { id: 3, name: "ema convergence", budget: Duration::from_secs(30), run: ema_convergence },
        Criterion { id: 4, name: "probability normalization", budget: Duration::from_secs(120), run: normalization },
        Criterion { id: 5, name: "guidance identities", budget: Duration::from_secs(60), run: guidance_identities },
        Criterion { id: 6, name: "corruption semantics", budget: Duration::from_secs(60), run: corruption_semantics },
        Criterion { id: 7, name: "causality and cache", budget: Duration::from_secs(60), run: causality_and_cache },
        Criterion { id: 8, name: "end-to-end overfit", budget: Duration::from_secs(30 * 60), run: overfit },
        Criterion { id: 9, name: "complexity accounting", budget: Duration::from_secs(120), run: complexity },
        Criterion { id: 10, name: "determinism and round-trips", budget: Duration::from_secs(300), run: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.budget => Err(format!("{d}; over budget {:.0} s", c.budget.as_secs_f64())),
            other => other,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        println!("{status} {:>2} {}: {detail} [{:.1} s]", c.id, c.name, took.as_secs_f64());
        failed += outcome.is_err() as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_codes(rows: usize, depth: usize, k: usize, rng: &mut ChaCha8Rng) -> CodeMatrix {
    CodeMatrix::new(rows, depth, (0..rows * depth).map(|_| rng.random_range(0..k)).collect()).unwrap()
}

/// Weights redrawn at `±scale` (gains kept) so the model is far from uniform.
fn sharpened_model(cfg: GptConfig, scale: f64, seed: u64) -> (GptModel<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cb = random_tensor(&[cfg.codebook_size, cfg.code_dim], 1.0, &mut rng);
    let mut model = GptModel::new(cfg, cb, &mut rng).unwrap();
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names.iter().filter(|n| !n.ends_with(".g")) {
        let shape = model.params.get(model.params.find(name).unwrap()).shape().to_vec();
        model.params.set(name, random_tensor(&shape, scale, &mut rng)).unwrap();
    }
    (model, rng)
}

fn tiny_gpt(n_max: usize) -> GptConfig {
    GptConfig {
        layers_temporal: 1,
        layers_residual: 1,
        d_model: 8,
        heads: 2,
        codebook_size: 3,
        depth: 2,
        code_dim: 4,
        cond_dim: 5,
        n_max,
        dropout: 0.0,
        beta_stop: 1.0,
    }
}

fn gradient_correctness() -> Outcome {
    let outcomes = standard_suite(0).map_err(err)?;
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| format!("{} {} rel {:.2e}", o.name, o.precision, o.report.max_rel_err()))
        .collect();
    ensure!(failed.is_empty(), "{} of {} checks failed: {}", failed.len(), outcomes.len(), failed.join("; "));
    let worst = |p: &str| {
        outcomes
            .iter()
            .filter(|o| o.precision == p)
            .map(|o| o.report.max_rel_err())
            .fold(0.0, f64::max)
    };
    Ok(format!(
        "{} checks, worst rel err {:.1e} (f64), {:.1e} (f32)",
        outcomes.len(),
        worst("f64"),
        worst("f32")
    ))
}

fn greedy_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 1000;
    for i in 0..instances {
        let k = rng.random_range(2..=16);
        let d = rng.random_range(1..=4);
        let r = rng.random_range(1..=6);
        let n = rng.random_range(1..=5);
        let mut entries: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zt: Tensor<f64> = Tensor::from_f64(&[n, d], &z).map_err(err)?;

        let cb = Codebook::from_entries(Tensor::from_f64(&[k, d], &entries).map_err(err)?, 0.99, 1e-5).map_err(err)?;
        let res = quantize_residual(&zt, &cb, r).map_err(err)?;
        for t in 0..n {
            let mismatch = oracles::check_greedy_choices(&z[t * d..(t + 1) * d], &entries, d, res.codes.row(t));
            ensure!(mismatch.is_none(), "instance {i} row {t}: {mismatch:?}");
        }

        let slot = rng.random_range(0..k);
        entries[slot * d..(slot + 1) * d].fill(0.0);
        let cb = Codebook::from_entries(Tensor::from_f64(&[k, d], &entries).map_err(err)?, 0.99, 1e-5).map_err(err)?;
        let res = quantize_residual(&zt, &cb, r).map_err(err)?;
        for t in 0..n {
            let norms: Vec<f64> = (0..r).map(|w| res.residual_norm(t, w)).collect();
            ensure!(norms.windows(2).all(|w| w[1] <= w[0]), "instance {i} row {t}: residual norms {norms:?}");
        }
    }
    Ok(format!("{instances} instances, every choice is the brute-force argmin"))
}

fn ema_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let means = [[-2.0, -2.0], [3.0, 1.0]];
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut cb: Codebook<f64> = Codebook::from_entries(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 1.0, 1.0]).map_err(err)?, 0.99, 1e-5).map_err(err)?;
    let (mut samples, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let mut batch = Vec::with_capacity(256);
        for i in 0..128 {
            let label = i % 2;
            batch.extend(means[label].iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(label);
        }
        samples.extend_from_slice(&batch);
        let res = quantize_residual(&Tensor::from_f64(&[128, 2], &batch).map_err(err)?, &cb, 1).map_err(err)?;
        cb.ema_update(&[&res]).map_err(err)?;
    }
    let oracle = oracles::centroids(&samples, &labels, 2, 2);
    let worst = (0..2)
        .flat_map(|k| (0..2).map(move |j| (k, j)))
        .map(|(k, j)| (cb.entry(k)[j] - oracle[k][j]).abs())
        .fold(0.0, f64::max);
    ensure!(worst < 0.05, "entry off its centroid by {worst:.4}");
    Ok(format!("max deviation from centroid oracle {worst:.4} after 200 updates"))
}

fn normalization() -> Outcome {
    let (model, mut rng) = sharpened_model(tiny_gpt(2), 0.6, 4);
    let cond = random_tensor(&[5], 1.0, &mut rng);
    let grids = oracles::all_code_grids(3, 2, 2);
    ensure!(grids.len() == 81, "expected 81 grids, got {}", grids.len());
    let probs: Vec<f64> = grids
        .iter()
        .map(|g| {
            let codes = CodeMatrix::new(2, 2, g.clone()).map_err(err)?;
            Ok((-model.sequence_nll(&cond, &codes).map_err(err)?).exp())
        })
        .collect::<Result<_, String>>()?;
    let total: f64 = probs.iter().sum();
    ensure!((total - 1.0).abs() < 1e-5, "probabilities sum to {total}");

    let draws = 100_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for seed in 0..draws {
        let gen = GenerationConfig {
            guidance: 1.0,
            temperature: 1.0,
            seed: seed as u64,
            n_max: 2,
            n_min: 2,
            greedy: false,
            stop_policy: StopPolicy::default(),
        };
        let out = generate(&model, &cond, &gen).map_err(err)?;
        *counts.entry(out.codes.indices().to_vec()).or_default() += 1;
    }
    for (g, p) in grids.iter().zip(&probs) {
        let seen = counts.get(g).copied().unwrap_or(0);
        ensure!(
            oracles::within_sigma(seen, *p, draws, 3.0),
            "grid {g:?}: {seen} draws, expected {:.1}",
            p * draws as f64
        );
    }
    Ok(format!("sum = 1 {:+.1e}; all 81 frequencies within 3 sigma over {draws} draws", total - 1.0))
}

fn guidance_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 2000;
    for _ in 0..trials {
        let len = rng.random_range(1..64);
        let cond: Vec<f64> = (0..len).map(|_| rng.random_range(-80.0..80.0)).collect();
        let uncond: Vec<f64> = (0..len).map(|_| rng.random_range(-80.0..80.0)).collect();
        ensure!(cfg_mix(&cond, &uncond, 1.0).map_err(err)? == cond, "f64 mix at gamma 1 differs from cond");
        ensure!(cfg_mix(&cond, &uncond, 0.0).map_err(err)? == uncond, "f64 mix at gamma 0 differs from uncond");
        let c32: Vec<f32> = cond.iter().map(|&v| v as f32).collect();
        let u32_: Vec<f32> = uncond.iter().map(|&v| v as f32).collect();
        ensure!(cfg_mix(&c32, &u32_, 1.0).map_err(err)? == c32, "f32 mix at gamma 1 differs from cond");
        ensure!(cfg_mix(&c32, &u32_, 0.0).map_err(err)? == u32_, "f32 mix at gamma 0 differs from uncond");
    }

    // stop logits: gamma 0 is the NULL-condition model bit for bit, and the
    // first step's guided stop logit is the mix of the two unguided ones
    let (model, mut rng) = sharpened_model(tiny_gpt(3), 0.6, 6);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    for s in 0..20 {
        let cond = random_tensor(&[5], 1.0, &mut rng);
        let base = GenerationConfig {
            guidance: 1.0,
            n_max: 3,
            n_min: 1,
            greedy: true,
            seed: s,
            ..Default::default()
        };
        let plain = generate(&model, &cond, &base).map_err(err)?;
        let uncond = generate(&model, &cond, &GenerationConfig { guidance: 0.0, ..base.clone() }).map_err(err)?;
        let null = generate(&model, &Tensor::zeros(&[5]), &base).map_err(err)?;
        ensure!(uncond == null, "gamma 0 generation differs from the NULL condition");
        let gamma = 2.5;
        let guided = generate(&model, &cond, &GenerationConfig { guidance: gamma, ..base.clone() }).map_err(err)?;
        let (zc, zu) = (logit(plain.stop_probs[0]), logit(uncond.stop_probs[0]));
        let want = zu + gamma * (zc - zu);
        ensure!((logit(guided.stop_probs[0]) - want).abs() < 1e-7, "guided stop logit {} vs mix {want}", logit(guided.stop_probs[0]));
    }
    Ok(format!("{trials} randomized logit vectors bit-exact at gamma 0 and 1; stop logits guided"))
}

fn corruption_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = 1 << 30;
    let s = CodeMatrix::new(4, 3, (0..12).collect()).map_err(err)?;
    for mode in [CorruptionMode::None, CorruptionMode::PerCode, CorruptionMode::PerTime] {
        let (c, mask) = corrupt_codes(&s, 0.0, mode, k, &mut rng).map_err(err)?;
        ensure!(c == s && mask.iter().all(|&m| !m), "tau 0 is not the identity in {mode:?}");
    }
    let (c, mask) = corrupt_codes(&s, 0.5, CorruptionMode::None, k, &mut rng).map_err(err)?;
    ensure!(c == s && mask.iter().all(|&m| !m), "mode none changed codes");

    let trials = 10_000;
    let mut hits = [0usize; 4];
    for _ in 0..trials {
        let (c, mask) = corrupt_codes(&s, 0.5, CorruptionMode::PerTime, k, &mut rng).map_err(err)?;
        ensure!(mask.iter().filter(|&&m| m).count() == 2, "per-time touched {mask:?}");
        for t in 0..4 {
            if mask[t] {
                hits[t] += 1;
                ensure!(c.row(t).iter().zip(s.row(t)).all(|(a, b)| a != b), "row {t} not fully replaced");
            } else {
                ensure!(c.row(t) == s.row(t), "untouched row {t} changed");
            }
        }
    }
    let freqs: Vec<f64> = hits.iter().map(|&h| h as f64 / trials as f64).collect();
    ensure!(freqs.iter().all(|f| (f - 0.5).abs() < 0.02), "row frequencies {freqs:?}");

    // per-code: floor(tau n R) individual cells
    let (c, _) = corrupt_codes(&s, 0.5, CorruptionMode::PerCode, k, &mut rng).map_err(err)?;
    let changed = c.indices().iter().zip(s.indices()).filter(|(a, b)| a != b).count();
    ensure!(changed == 6, "per-code changed {changed} cells, want 6");
    let modes: Vec<&str> = ["none", "per-code", "per-time"]
        .iter()
        .map(|m| CorruptionMode::parse(m).map(|p| p.name()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    Ok(format!(
        "2 of 4 rows replaced; row frequencies {:.3}..{:.3}; modes {}",
        freqs.iter().copied().fold(1.0, f64::min),
        freqs.iter().copied().fold(0.0, f64::max),
        modes.join("/")
    ))
}

fn mid_gpt() -> GptConfig {
    GptConfig {
        layers_temporal: 2,
        layers_residual: 2,
        d_model: 16,
        heads: 4,
        codebook_size: 6,
        depth: 3,
        code_dim: 16,
        cond_dim: 7,
        n_max: 6,
        dropout: 0.0,
        beta_stop: 1.0,
    }
}

fn causality_and_cache() -> Outcome {
    let dm = 16;
    let mut worst_cache = 0.0f64;
    for seed in 0..16 {
        let (model, mut rng) = sharpened_model(mid_gpt(), 0.5, seed);
        let cond = random_tensor(&[7], 1.0, &mut rng);
        let codes = random_codes(6, 3, 6, &mut rng);

        // temporal tier: perturbing row `row` leaves F_1..F_{row+1} untouched
        let row = rng.random_range(0..5);
        let mut perturbed = codes.clone();
        perturbed.set(row, 0, (codes.get(row, 0) + 1) % 6);
        let a = model.contexts(&cond, &codes, 5).map_err(err)?;
        let b = model.contexts(&cond, &perturbed, 5).map_err(err)?;
        let keep = (row + 1) * dm;
        ensure!(a.data()[..keep] == b.data()[..keep], "seed {seed}: contexts before row {row} moved");

        // residual tier: the teacher-forced pass sees every depth of the row,
        // yet its logits at depth w equal the prefix-only ones
        let ctx = random_tensor(&[dm], 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, false);
        let table = model.code_table(&mut tape, &p).map_err(err)?;
        let c = tape.constant(ctx.reshape(&[1, dm]).map_err(err)?);
        for w in 0..3 {
            let prefix: Vec<usize> = (0..w).map(|_| rng.random_range(0..6)).collect();
            let want = model.depth_logits(&ctx, &prefix).map_err(err)?;
            for fill in 0..6 {
                let mut row = prefix.clone();
                row.resize(3, fill);
                let codes = CodeMatrix::new(1, 3, row).map_err(err)?;
                let logits = model.residual_forward(&mut tape, &p, table, c, &codes, 3, None).map_err(err)?;
                let got = &tape.value(logits).data()[w * 6..(w + 1) * 6];
                ensure!(got == &want[..], "seed {seed}: depth {w} logits depend on later codes");
            }
        }

        // cached incremental decoding against full recomputation
        let (mut state, mut f) = model.start(&cond).map_err(err)?;
        for t in 0..6 {
            let want = &a.data()[t * dm..(t + 1) * dm];
            let e = f.data().iter().zip(want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst_cache = worst_cache.max(e);
            for w in 0..3 {
                let cached = model.depth_logits_with(&state, &f, &codes.row(t)[..w]).map_err(err)?;
                let fresh = model.depth_logits(&Tensor::new(vec![dm], want.to_vec()).map_err(err)?, &codes.row(t)[..w]).map_err(err)?;
                let e = cached.iter().zip(&fresh).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                worst_cache = worst_cache.max(e);
            }
            if t < 5 {
                f = model.advance(&mut state, codes.row(t)).map_err(err)?;
            }
        }
    }
    ensure!(worst_cache < 1e-5, "cached decoding deviates by {worst_cache:.2e}");
    Ok(format!("both tiers invariant to future perturbation; cache max deviation {worst_cache:.1e}"))
}

fn desk_config() -> Result<Config, String> {
    Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.cfg")).map_err(err)
}

/// The eight training pairs: clip `i` is template `i` with seed `i`.
fn overfit_clips() -> Result<Vec<Clip>, String> {
    TEMPLATES
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = synth_generate(&SyntheticTask::new(t.id, i as u64)).map_err(err)?;
            Ok(Clip {
                motion: s.motion,
                embedding: s.embedding,
                caption: s.caption,
            })
        })
        .collect()
}

/// Trains both stages on the desk config; `steps` overrides both step counts.
fn train_desk(clips: &[Clip], steps: Option<(usize, usize)>) -> Result<(VaeModel<f32>, GptModel<f32>), String> {
    let mut c = desk_config()?;
    if let Some((vae_steps, gpt_steps)) = steps {
        c.set("vae.steps", vae_steps);
        c.set("vae.hold_steps", vae_steps / 2);
        c.set("gpt.steps", gpt_steps);
        c.set("gpt.hold_steps", gpt_steps / 2);
    }
    let seed = 1;
    let motions: Vec<Tensor<f32>> = clips.iter().map(|c| c.motion.clone()).collect();
    let vae = fit_vae(
        &motions,
        VaeConfig::from_config(&c).map_err(err)?,
        VaeTrainConfig::from_config(&c, seed).map_err(err)?,
        |_| {},
    )
    .map_err(err)?;
    let gcfg = gpt_config_for(&vae, GptConfig::from_config(&c).map_err(err)?, clips[0].embedding.len());
    let examples = gpt_examples(&vae, clips, gcfg.n_max, 2).map_err(err)?;
    let gpt = fit_gpt(&vae, &examples, gcfg, GptTrainConfig::from_config(&c, seed).map_err(err)?, |_| {}).map_err(err)?;
    Ok((vae, gpt))
}

fn overfit() -> Outcome {
    let c = desk_config()?;
    let vcfg = VaeConfig::from_config(&c).map_err(err)?;
    let gcfg = GptConfig::from_config(&c).map_err(err)?;
    let shape = (
        vcfg.channels,
        gcfg.layers_temporal,
        gcfg.layers_residual,
        gcfg.d_model,
        vcfg.codebook_size,
        vcfg.code_dim,
        vcfg.depth,
        vcfg.downsample(),
    );
    ensure!(shape == (64, 4, 4, 128, 64, 64, 8, 8), "desk config is not the required scale: {shape:?}");

    let clips = overfit_clips()?;
    ensure!(clips.len() == 8, "expected 8 clips");
    let (vae, gpt) = train_desk(&clips, None)?;
    let gen = GenerationConfig {
        guidance: 1.0,
        greedy: true,
        n_min: GenerationConfig::n_min_for(&vae.skeleton.name),
        n_max: gpt.config.n_max,
        seed: 0,
        ..Default::default()
    };
    let report = eval_model(&vae, Some(&gpt), &clips, &gen, 2).map_err(err)?;
    let g = report.generation.as_ref().ok_or("no generation metrics")?;
    let detail = format!(
        "recon {:.2e}, nll/token {:.2e}, exact match {:.3}, stop accuracy {:.3}",
        report.recon_smooth_l1, g.per_token_nll, g.exact_match, g.stop_accuracy
    );
    ensure!(report.recon_smooth_l1 < 1e-2, "(a) recon too high: {detail}");
    ensure!(g.per_token_nll < 0.05, "(b) nll too high: {detail}");
    ensure!(g.exact_match == 1.0 && g.stop_accuracy == 1.0, "(c) generation mismatch: {detail}");
    Ok(detail)
}

fn complexity() -> Outcome {
    let rows = bench_attention(&default_sweep(), 9).map_err(err)?;
    let mut depth_one_not_cheaper = 0;
    for r in &rows {
        let p = r.point;
        let (h, n, depth) = (p.layers as u64, p.n as u64, p.depth as u64);
        let closed = oracles::double_tier_pairs_closed_form(h, n, depth);
        ensure!(r.double_counted == closed, "{p:?}: counted {} vs closed form {closed}", r.double_counted);
        ensure!(r.double_closed_form == closed, "{p:?}: library closed form {}", r.double_closed_form);
        let flat = oracles::flattened_pairs_closed_form(h, n, depth);
        ensure!(r.flat_counted == flat, "{p:?}: flat counted {} vs {flat}", r.flat_counted);
        if p.n >= 2 && p.depth >= 2 {
            ensure!(r.double_counted < flat, "{p:?}: {} pairs is not below {flat}", r.double_counted);
        }
        if p.depth == 1 {
            // no residual hierarchy: H/2·n² + 2H·n < H·n² only for n > 4
            ensure!((r.double_counted < flat) == (p.n > 4), "{p:?}: R = 1 ordering contradicts the closed form");
            depth_one_not_cheaper += (p.n >= 2 && r.double_counted >= flat) as usize;
        }
    }
    let reference = rows
        .iter()
        .find(|r| (r.point.layers, r.point.n, r.point.depth) == (18, 24, 8))
        .ok_or("reference point missing from sweep")?;
    ensure!(reference.ratio > 25.0, "ratio at 18/24/8 is {:.2}", reference.ratio);
    Ok(format!(
        "{} points match the closed form; below H(nR)^2 at every n >= 2, R >= 2; \
         {depth_one_not_cheaper} R = 1 points with n >= 2 not below it, as the closed form predicts; \
         18/24/8 ratio {:.2} ({:.1} ms vs {:.1} ms)",
        rows.len(),
        reference.ratio,
        reference.double_ms,
        reference.flat_ms
    ))
}

fn directory_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).map_err(err)?.display().to_string();
                out.push((rel, fs::read(&path).map_err(err)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // MTNF at both precisions, in memory and on disk
    let t64 = random_tensor(&[3, 5, 2], 4.0, &mut rng);
    ensure!(decode_tensor::<f64>(&encode_tensor(&t64)).map_err(err)?.bit_eq(&t64), "f64 MTNF round trip");
    let t32: Tensor<f32> = t64.cast();
    let path = tmp.path().join("t.mtnf");
    write_tensor(&path, &t32).map_err(err)?;
    ensure!(read_tensor::<f32>(&path).map_err(err)?.bit_eq(&t32), "f32 MTNF file round trip");

    // RVQS, RVQC and the code archive
    let codes = random_codes(7, 4, 64, &mut rng);
    ensure!(decode_codes(&encode_codes(&codes).map_err(err)?).map_err(err)? == codes, "RVQS round trip");
    let cb = Codebook::from_entries(random_tensor(&[6, 3], 1.0, &mut rng), 0.99, 1e-5).map_err(err)?;
    let bytes = encode_codebook(&cb);
    let back: Codebook<f64> = decode_codebook(&bytes).map_err(err)?;
    ensure!(back.entries().bit_eq(cb.entries()) && encode_codebook(&back) == bytes, "RVQC round trip");
    let archive = tmp.path().join("codes.ckpt");
    let set = vec![codes.clone(), random_codes(3, 4, 64, &mut rng)];
    write_code_archive(&archive, &set).map_err(err)?;
    ensure!(read_code_archive(&archive).map_err(err)? == set, "code archive round trip");

    // text formats
    let cfg = desk_config()?;
    ensure!(Config::parse(&cfg.to_text()).map_err(err)? == cfg, "config round trip");

    // synthetic data and its manifest, generated twice
    let task = SyntheticTask::new(TEMPLATES[0].id, 0);
    let ids: Vec<&str> = TEMPLATES.iter().map(|t| t.id).collect();
    let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
    let manifest = write_synthetic(&da, &ids, 8, 0, &task).map_err(err)?;
    write_synthetic(&db, &ids, 8, 0, &task).map_err(err)?;
    ensure!(directory_bytes(&da)? == directory_bytes(&db)?, "synthetic data differs between runs");
    let text = fs::read_to_string(da.join("manifest.tsv")).map_err(err)?;
    ensure!(Manifest::parse(&text).map_err(err)?.to_text() == text, "manifest round trip");
    ensure!(manifest.len() == 8, "manifest has {} records", manifest.len());

    // reduced-step training run, twice, down to checkpoint and generation bytes
    let clips = overfit_clips()?;
    let run = || -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
        let (vae, gpt) = train_desk(&clips, Some((40, 20)))?;
        let gen = GenerationConfig {
            guidance: 2.0,
            seed: 3,
            n_min: 4,
            n_max: gpt.config.n_max,
            ..Default::default()
        };
        let g = generate(&gpt, &clips[0].embedding, &gen).map_err(err)?;
        let motion = vae.reconstruct(&g.codes).map_err(err)?;
        let mut out = encode_codes(&g.codes).map_err(err)?;
        out.extend(encode_tensor(&motion));
        Ok((vae.to_container().map_err(err)?.to_bytes(), gpt.to_container().map_err(err)?.to_bytes(), out))
    };
    let (va, ga, oa) = run()?;
    let (vb, gb, ob) = run()?;
    ensure!(va == vb, "autoencoder checkpoints differ");
    ensure!(ga == gb, "GPT checkpoints differ");
    ensure!(oa == ob, "generated artifacts differ");

    // checkpoints re-serialize to the same bytes and encoding ignores worker count
    let vae = VaeModel::<f32>::from_container(&Container::from_bytes(&va).map_err(err)?).map_err(err)?;
    ensure!(vae.to_container().map_err(err)?.to_bytes() == va, "autoencoder checkpoint round trip");
    let gpt = GptModel::<f32>::from_container(&Container::from_bytes(&ga).map_err(err)?).map_err(err)?;
    ensure!(gpt.to_container().map_err(err)?.to_bytes() == ga, "GPT checkpoint round trip");
    let motions: Vec<Tensor<f32>> = clips.iter().map(|c| c.motion.clone()).collect();
    let one: Vec<_> = encode_dataset(&vae, &motions, 1).map_err(err)?.into_iter().map(|r| r.codes).collect();
    let four: Vec<_> = encode_dataset(&vae, &motions, 4).map_err(err)?.into_iter().map(|r| r.codes).collect();
    ensure!(one == four, "encoding depends on worker count");
    Ok(format!(
        "all formats round-trip; two seeded runs byte-identical ({} + {} checkpoint bytes)",
        va.len(),
        ga.len()
    ))
}
