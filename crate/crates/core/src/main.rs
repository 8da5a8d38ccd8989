use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rvqmotion::checks::standard_suite;
use rvqmotion::data::{embed_caption, load_clips, write_synthetic, SyntheticTask, TEMPLATES};
use rvqmotion::gpt::{cost, GptConfig, GptModel};
use rvqmotion::io::{read_tensor, write_tensor, Config, Container, Manifest};
use rvqmotion::pipeline::{
    bench_attention, bench_csv, default_sweep, encode_dataset, eval_model, fit_gpt, fit_vae, gpt_config_for, gpt_examples,
    write_code_archive, BenchPoint,
};
use rvqmotion::rvq::{decode_codes, encode_codes};
use rvqmotion::sampling::{generate, GenerationConfig, GptTrainConfig};
use rvqmotion::tensor::Tensor;
use rvqmotion::vae::{SkeletonSpec, VaeConfig, VaeModel, VaeTrainConfig};
use rvqmotion::{Error, Result};

#[derive(Parser)]
#[command(name = "rvqmotion", version, about = "Residual-quantized motion tokenizer and double-tier code generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. The config file is read first,
/// then `--set` pairs, then the dedicated flags of the subcommand.
#[derive(Args, Clone)]
struct Common {
    /// key=value config file (`#` comments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random stream; falls back to $T2M_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for dataset encoding (output does not depend on it)
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic caption-motion pairs and a manifest
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Comma-separated template ids; default is the full set
        #[arg(long)]
        templates: Option<String>,
    },
    /// Train the motion tokenizer
    RvqTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Tokenize every clip of a manifest into a code archive
    RvqEncode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one RVQS code matrix to a motion tensor
    RvqDecode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the double-tier code generator on tokenized clips
    GptTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Corruption mode: none, per-code or per-time
        #[arg(long)]
        corruption: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        p_drop: Option<f64>,
    },
    /// Generate a motion for a caption or an embedding file
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gen: GenFlags,
        /// Tokenizer checkpoint; defaults to vae.ckpt beside the GPT checkpoint
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long, default_value = "gpt.ckpt")]
        gpt: PathBuf,
        #[arg(long, conflicts_with = "embedding")]
        caption: Option<String>,
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction, code and generation metrics over a manifest
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gen: GenFlags,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        gpt: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the metrics here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every primitive and both losses
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Attention-pair counts and timings, two tiers vs one flattened stack
    BenchAttn {
        #[command(flatten)]
        common: Common,
        /// Comma-separated HxNxR points, e.g. 18x24x8,4x8x4
        #[arg(long)]
        points: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and cost summary of the configured models
    ModelSummary {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct GenFlags {
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    /// most-likely-length or max-probability
    #[arg(long)]
    stop_policy: Option<String>,
}

impl GenFlags {
    fn apply(&self, c: &mut Config) {
        set_opt(c, "gen.guidance", self.guidance);
        set_opt(c, "gen.temperature", self.temperature);
        if self.greedy {
            c.set("gen.greedy", true);
        }
        set_opt(c, "gen.n_min", self.n_min);
        set_opt(c, "gen.n_max", self.n_max);
        set_opt(c, "gen.stop_policy", self.stop_policy.as_ref());
    }
}

fn set_opt<V: std::fmt::Display>(c: &mut Config, key: &str, v: Option<V>) {
    if let Some(v) = v {
        c.set(key, v);
    }
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::new(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            c.set(k.trim(), v.trim());
        }
        Ok(c)
    }

    fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("T2M_SEED") {
            Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("T2M_SEED: cannot parse `{v}`"))),
            Err(_) => Ok(0),
        }
    }
}

fn load_vae(path: &Path) -> Result<VaeModel<f32>> {
    VaeModel::from_container(&Container::read(path)?)
}

fn load_gpt(path: &Path) -> Result<GptModel<f32>> {
    GptModel::from_container(&Container::read(path)?)
}

fn load_manifest_clips(path: &Path, skeleton: &SkeletonSpec, width: usize) -> Result<Vec<rvqmotion::data::Clip>> {
    load_clips(&Manifest::load(path)?, skeleton, width)
}

/// Embedding width stored beside a manifest: the first record's vector.
fn manifest_embed_width(path: &Path) -> Result<usize> {
    let m = Manifest::load(path)?;
    let first = m.records.first().ok_or_else(|| Error::InvalidArgument("empty manifest".into()))?;
    Ok(read_tensor::<f32>(&first.embedding_path)?.len())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            common,
            out,
            count,
            templates,
        } => {
            let c = common.load()?;
            let seed = common.seed()?;
            let base = SyntheticTask::new(TEMPLATES[0].id, seed);
            let task = SyntheticTask {
                min_frames: c.get_or("data.min_frames", base.min_frames)?,
                max_frames: c.get_or("data.max_frames", base.max_frames)?,
                frame_multiple: c.get_or("data.frame_multiple", base.frame_multiple)?,
                noise: c.get_or("data.noise", base.noise)?,
                ..base
            };
            let list = templates.or_else(|| c.get_str("data.templates").map(str::to_string));
            let ids: Vec<String> = match list {
                Some(s) => s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect(),
                None => TEMPLATES.iter().map(|t| t.id.to_string()).collect(),
            };
            let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
            let count = count.map_or_else(|| c.get_or("data.count", ids.len()), Ok)?;
            let m = write_synthetic(&out, &ids, count, seed, &task)?;
            println!("wrote {} clips to {}", m.len(), out.join("manifest.tsv").display());
        }
        Command::RvqTrain {
            common,
            manifest,
            out,
            steps,
            lr,
            batch_size,
        } => {
            let mut c = common.load()?;
            set_opt(&mut c, "vae.steps", steps);
            set_opt(&mut c, "vae.lr", lr);
            set_opt(&mut c, "vae.batch_size", batch_size);
            let cfg = VaeConfig::from_config(&c)?;
            let train = VaeTrainConfig::from_config(&c, common.seed()?)?;
            let skeleton = SkeletonSpec::preset(&cfg.skeleton)?;
            let clips = load_manifest_clips(&manifest, &skeleton, manifest_embed_width(&manifest)?)?;
            let motions: Vec<Tensor<f32>> = clips.into_iter().map(|c| c.motion).collect();
            let every = (train.steps / 20).max(1);
            let model = fit_vae(&motions, cfg, train, |r| {
                if r.step % every == 0 {
                    eprintln!("step {:>7} lr {:.2e} recon {:.6} commit {:.6}", r.step, r.lr, r.recon_loss, r.commit_loss);
                }
            })?;
            model.to_container()?.write(&out)?;
            println!("wrote {}", out.display());
        }
        Command::RvqEncode {
            common,
            checkpoint,
            manifest,
            out,
        } => {
            let vae = load_vae(&checkpoint)?;
            let clips = load_manifest_clips(&manifest, &vae.skeleton, manifest_embed_width(&manifest)?)?;
            let motions: Vec<Tensor<f32>> = clips.into_iter().map(|c| c.motion).collect();
            let results = encode_dataset(&vae, &motions, common.workers)?;
            let codes: Vec<_> = results.into_iter().map(|r| r.codes).collect();
            write_code_archive(&out, &codes)?;
            println!("wrote {} code matrices to {}", codes.len(), out.display());
        }
        Command::RvqDecode { checkpoint, codes, out, .. } => {
            let vae = load_vae(&checkpoint)?;
            let codes = decode_codes(&fs::read(&codes)?)?;
            write_tensor(&out, &vae.reconstruct(&codes)?)?;
            println!("wrote {}", out.display());
        }
        Command::GptTrain {
            common,
            vae,
            manifest,
            out,
            steps,
            lr,
            batch_size,
            corruption,
            tau,
            p_drop,
        } => {
            let mut c = common.load()?;
            set_opt(&mut c, "gpt.steps", steps);
            set_opt(&mut c, "gpt.lr", lr);
            set_opt(&mut c, "gpt.batch_size", batch_size);
            set_opt(&mut c, "aug.corruption", corruption);
            set_opt(&mut c, "aug.tau", tau);
            set_opt(&mut c, "aug.p_drop", p_drop);
            let vae = load_vae(&vae)?;
            let width = manifest_embed_width(&manifest)?;
            let cfg = gpt_config_for(&vae, GptConfig::from_config(&c)?, width);
            let train = GptTrainConfig::from_config(&c, common.seed()?)?;
            let clips = load_manifest_clips(&manifest, &vae.skeleton, width)?;
            let examples = gpt_examples(&vae, &clips, cfg.n_max, common.workers)?;
            let every = (train.steps / 20).max(1);
            let model = fit_gpt(&vae, &examples, cfg, train, |r| {
                if r.step % every == 0 {
                    eprintln!("step {:>7} lr {:.2e} nll/token {:.6} stop {:.6}", r.step, r.lr, r.per_token_nll, r.stop);
                }
            })?;
            model.to_container()?.write(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Generate {
            common,
            gen,
            vae,
            gpt,
            caption,
            embedding,
            out,
        } => {
            let mut c = common.load()?;
            gen.apply(&mut c);
            let gpt_model = load_gpt(&gpt)?;
            let vae_path = vae.unwrap_or_else(|| gpt.with_file_name("vae.ckpt"));
            let vae = load_vae(&vae_path)?;
            let cond: Tensor<f32> = match (&caption, &embedding) {
                (_, Some(p)) => read_tensor(p)?,
                (Some(text), None) => embed_caption(text, gpt_model.config.cond_dim),
                (None, None) => return Err(Error::InvalidArgument("give --caption or --embedding".into())),
            };
            let mut gcfg = GenerationConfig::from_config(&c, common.seed()?, gpt_model.config.n_max)?;
            if !c.contains("gen.n_min") {
                gcfg.n_min = GenerationConfig::n_min_for(&vae.skeleton.name).min(gcfg.n_max);
            }
            let g = generate(&gpt_model, &cond, &gcfg)?;
            let motion = vae.reconstruct(&g.codes)?;
            let nll = gpt_model.sequence_nll(&cond, &g.codes)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("codes.rvqs"), encode_codes(&g.codes)?)?;
            write_tensor(out.join("motion.mtnf"), &motion)?;
            let probs: Vec<String> = g.stop_probs.iter().map(|p| format!("{p:.8}")).collect();
            let metrics = format!(
                "caption={}\nguidance={}\ntemperature={}\ngreedy={}\nseed={}\nstop_policy={}\nstop_position={}\nframes={}\nstop_probs={}\nper_token_nll={:.8}\n",
                caption.as_deref().unwrap_or(""),
                gcfg.guidance,
                gcfg.temperature,
                gcfg.greedy,
                gcfg.seed,
                gcfg.stop_policy.name(),
                g.stop_position,
                motion.shape()[0],
                probs.join(","),
                nll / g.codes.indices().len() as f64,
            );
            fs::write(out.join("metrics.txt"), &metrics)?;
            print!("{metrics}");
        }
        Command::Eval {
            common,
            gen,
            vae,
            gpt,
            manifest,
            out,
        } => {
            let mut c = common.load()?;
            gen.apply(&mut c);
            let vae = load_vae(&vae)?;
            let gpt = gpt.as_deref().map(load_gpt).transpose()?;
            let width = match &gpt {
                Some(g) => g.config.cond_dim,
                None => manifest_embed_width(&manifest)?,
            };
            let clips = load_manifest_clips(&manifest, &vae.skeleton, width)?;
            let n_max = gpt.as_ref().map_or(1, |g| g.config.n_max);
            let mut gcfg = GenerationConfig::from_config(&c, common.seed()?, n_max)?;
            if !c.contains("gen.n_min") {
                gcfg.n_min = GenerationConfig::n_min_for(&vae.skeleton.name).min(gcfg.n_max);
            }
            let report = eval_model(&vae, gpt.as_ref(), &clips, &gcfg, common.workers)?;
            let text = report.to_text();
            if let Some(p) = out {
                fs::write(p, &text)?;
            }
            print!("{text}");
        }
        Command::Gradcheck { common } => {
            let outcomes = standard_suite(common.seed()?)?;
            let mut failed = 0;
            for o in &outcomes {
                let status = if o.passed() { "ok" } else { "FAIL" };
                println!("{status:<4} {:<24} {} rel {:.3e} (tol {:.0e})", o.name, o.precision, o.report.max_rel_err(), o.report.tolerance);
                failed += !o.passed() as usize;
            }
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} gradient checks failed")));
            }
            println!("all {} checks passed", outcomes.len());
        }
        Command::BenchAttn { common, points, out } => {
            let points = match points {
                None => default_sweep(),
                Some(s) => s.split(',').map(parse_point).collect::<Result<_>>()?,
            };
            let csv = bench_csv(&bench_attention(&points, common.seed()?)?);
            if let Some(p) = out {
                fs::write(p, &csv)?;
            }
            print!("{csv}");
        }
        Command::ModelSummary { common } => {
            let c = common.load()?;
            let vae_cfg = VaeConfig::from_config(&c)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            let vae = VaeModel::<f32>::new(vae_cfg.clone(), &mut rng)?;
            let base = GptConfig::from_config(&c)?;
            let gcfg = gpt_config_for(&vae, base.clone(), base.cond_dim);
            let layers = gcfg.layers_temporal + gcfg.layers_residual;
            println!("vae.skeleton={}", vae_cfg.skeleton);
            println!("vae.downsample={}", vae_cfg.downsample());
            println!("vae.params={}", vae.params.num_scalars());
            println!("vae.codebook={}x{}", vae_cfg.codebook_size, vae_cfg.code_dim);
            println!("gpt.params={}", cost::double_tier_params(&gcfg));
            println!("gpt.single_tier_params={}", cost::single_tier_params(&gcfg));
            println!("gpt.pairs_at_n_max={}", cost::double_tier_pairs(gcfg.layers_temporal, gcfg.layers_residual, gcfg.n_max, gcfg.depth));
            println!("gpt.flattened_pairs_at_n_max={}", cost::flattened_pairs(layers, gcfg.n_max, gcfg.depth));
        }
    }
    Ok(())
}

fn parse_point(s: &str) -> Result<BenchPoint> {
    let parts: Vec<usize> = s
        .trim()
        .split('x')
        .map(|p| p.parse().map_err(|_| Error::InvalidArgument(format!("bad bench point `{s}` (want HxNxR)"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [layers, n, depth] => Ok(BenchPoint { layers, n, depth }),
        _ => Err(Error::InvalidArgument(format!("bad bench point `{s}` (want HxNxR)"))),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
