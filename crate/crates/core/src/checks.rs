//! Gradient checks of every tape primitive and of the full training
//! objectives on toy models, shared by the `gradcheck` subcommand and the
//! test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gpt::{GptConfig, GptModel};
use crate::rvq::{quantize_residual, CodeMatrix, CommitmentMode, QuantizationResult};
use crate::tensor::{grad_check, grad_check_against, Bound, GradCheckReport, Real, ScalarFn, Tape, Tensor, Var};
use crate::vae::{VaeConfig, VaeModel};

/// Autoencoder objective as a function of the weights, with the
/// quantization frozen at the base point: the decoder sees `z + (q₀ − z₀)`
/// and the commitment targets are those of `q₀`. This is the function whose
/// gradient the straight-through estimator reports, so finite differences
/// of it are a fair oracle.
pub struct VaeObjective {
    model: VaeModel<f64>,
    clip: Tensor<f64>,
    offset: Vec<f64>,
    frozen: QuantizationResult<f64>,
}

impl VaeObjective {
    /// `clip` is a normalized `T×D` motion.
    pub fn new(model: VaeModel<f64>, clip: Tensor<f64>) -> Result<Self> {
        let z = model.encode_normalized(&clip)?;
        let frozen = quantize_residual(&z, &model.codebook, model.config.depth)?;
        let offset = frozen.quantized.data().iter().zip(z.data()).map(|(q, z)| q - z).collect();
        Ok(VaeObjective {
            model,
            clip,
            offset,
            frozen,
        })
    }

    pub fn params(&self) -> Vec<(String, Tensor<f64>)> {
        self.model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }
}

impl ScalarFn for VaeObjective {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var> {
        let model = self.model.cast::<T>();
        let bound = Bound::from_vars(params.to_vec());
        let frozen = self.frozen.cast::<T>();
        let mut quantize = |z: &Tensor<T>| {
            let shifted = z
                .data()
                .iter()
                .zip(&self.offset)
                .map(|(&z, &o)| T::from_f64(z.as_f64() + o))
                .collect();
            Ok((Tensor::new(z.shape().to_vec(), shifted)?, frozen.clone()))
        };
        let out = model.forward_with(tape, &bound, &self.clip.cast(), &mut quantize)?;
        Ok(out.loss)
    }
}

/// Full two-tier objective `nll + β·stop` as a function of the weights,
/// with condition and (possibly corrupted) inputs held fixed.
pub struct GptObjective {
    model: GptModel<f64>,
    cond: Tensor<f64>,
    inputs: CodeMatrix,
    targets: CodeMatrix,
}

impl GptObjective {
    pub fn new(model: GptModel<f64>, cond: Tensor<f64>, inputs: CodeMatrix, targets: CodeMatrix) -> Self {
        GptObjective {
            model,
            cond,
            inputs,
            targets,
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor<f64>)> {
        self.model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }
}

impl ScalarFn for GptObjective {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var> {
        let model = self.model.cast::<T>();
        let bound = Bound::from_vars(params.to_vec());
        let loss = model.loss(tape, &bound, &self.cond.cast(), &self.inputs, &self.targets, None)?;
        Ok(loss.total)
    }
}

/// Finite-difference step and tolerance per precision.
pub const F64_STEP: f64 = 1e-5;
pub const F64_TOL: f64 = 1e-6;
pub const F32_STEP: f64 = 1e-4;
pub const F32_TOL: f64 = 1e-4;

pub fn check_f64<F: ScalarFn>(f: &F, params: &[(String, Tensor<f64>)]) -> Result<GradCheckReport> {
    grad_check(f, params, F64_STEP, F64_TOL)
}

pub fn check_f32<F: ScalarFn>(f: &F, params: &[(String, Tensor<f64>)]) -> Result<GradCheckReport> {
    grad_check_against::<f32, F>(f, params, F32_STEP, F32_TOL)
}

/// A tape primitive reduced to a scalar by a fixed non-uniform weighting.
#[derive(Clone, Debug)]
enum Primitive {
    MatMul,
    Bmm,
    BmmNt,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    Relu,
    Gelu,
    LayerNorm,
    Softmax,
    CausalSoftmax,
    Embedding(Vec<usize>),
    Concat,
    Slice,
    Permute,
    Transpose,
    Reshape,
    /// Fixed mask: the RNG is re-seeded on every evaluation.
    Dropout,
    /// Forward value `z + offset` with the offset frozen.
    StraightThrough(Vec<f64>),
    Mean,
    SmoothL1,
    Mse,
    CrossEntropy(Vec<usize>),
    Bce(Vec<f64>),
    Conv1d { stride: usize, dilation: usize, padding: usize },
    Upsample(usize),
}

impl ScalarFn for Primitive {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, p: &[Var]) -> Result<Var> {
        let y = match self {
            Primitive::MatMul => tape.matmul(p[0], p[1])?,
            Primitive::Bmm => tape.bmm(p[0], p[1])?,
            Primitive::BmmNt => tape.bmm_nt(p[0], p[1])?,
            Primitive::Add => tape.add(p[0], p[1])?,
            Primitive::Sub => tape.sub(p[0], p[1])?,
            Primitive::Mul => tape.mul(p[0], p[1])?,
            Primitive::Scale => tape.scale(p[0], -1.7)?,
            Primitive::AddBias => tape.add_bias(p[0], p[1])?,
            Primitive::Relu => tape.relu(p[0])?,
            Primitive::Gelu => tape.gelu(p[0])?,
            Primitive::LayerNorm => tape.layer_norm(p[0], p[1], p[2], 1e-5)?,
            Primitive::Softmax => tape.softmax(p[0])?,
            Primitive::CausalSoftmax => tape.causal_softmax(p[0])?,
            Primitive::Embedding(idx) => tape.embedding(p[0], idx)?,
            Primitive::Concat => tape.concat(&[p[0], p[1]], 1)?,
            Primitive::Slice => tape.slice(p[0], 1, 1, 2)?,
            Primitive::Permute => tape.permute(p[0], &[2, 0, 1])?,
            Primitive::Transpose => tape.transpose(p[0])?,
            Primitive::Reshape => tape.reshape(p[0], &[2, 6])?,
            Primitive::Dropout => tape.dropout(p[0], 0.3, &mut ChaCha8Rng::seed_from_u64(5))?,
            Primitive::StraightThrough(offset) => {
                let z = tape.value(p[0]);
                let q = z.data().iter().zip(offset).map(|(&v, &o)| T::from_f64(v.as_f64() + o)).collect();
                let q = Tensor::new(z.shape().to_vec(), q)?;
                tape.straight_through(p[0], &q)?
            }
            Primitive::Mean => return tape.mean(p[0]),
            Primitive::SmoothL1 => return tape.smooth_l1(p[0], p[1]),
            Primitive::Mse => return tape.mse(p[0], p[1]),
            Primitive::CrossEntropy(t) => return tape.cross_entropy(p[0], t),
            Primitive::Bce(y) => return tape.bce_with_logits(p[0], y),
            Primitive::Conv1d { stride, dilation, padding } => tape.conv1d(p[0], p[1], Some(p[2]), *stride, *dilation, *padding)?,
            Primitive::Upsample(f) => tape.upsample_nearest(p[0], *f)?,
        };
        let shape = tape.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
        let weighted = tape.mul_const(y, Tensor::from_f64(&shape, &w)?)?;
        tape.sum(weighted)
    }
}

/// Outcome of one named check at one precision.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub precision: &'static str,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

// keeps entries at least 0.05 from the relu kink
fn off_kink(t: Tensor<f64>) -> Tensor<f64> {
    let v = t.data().iter().map(|&x| if x >= 0.0 { x + 0.05 } else { x - 0.05 }).collect();
    Tensor::from_parts(t.shape().to_vec(), v)
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Primitive, Vec<Tensor<f64>>)> {
    let mut u = |shape: &[usize]| uniform(shape, 2.0, rng);
    let smooth_a = u(&[3, 4]);
    // differences well inside both smooth-L1 branches
    let smooth_b = Tensor::from_parts(
        vec![3, 4],
        smooth_a.data().iter().enumerate().map(|(i, a)| a + if i % 2 == 0 { 0.4 } else { -2.5 }).collect(),
    );
    vec![
        ("matmul", Primitive::MatMul, vec![u(&[3, 4]), u(&[4, 2])]),
        ("bmm", Primitive::Bmm, vec![u(&[2, 3, 4]), u(&[2, 4, 2])]),
        ("bmm_nt", Primitive::BmmNt, vec![u(&[2, 3, 4]), u(&[2, 2, 4])]),
        ("add", Primitive::Add, vec![u(&[3, 4]), u(&[3, 4])]),
        ("sub", Primitive::Sub, vec![u(&[3, 4]), u(&[3, 4])]),
        ("mul", Primitive::Mul, vec![u(&[3, 4]), u(&[3, 4])]),
        ("scale", Primitive::Scale, vec![u(&[3, 4])]),
        ("add_bias", Primitive::AddBias, vec![u(&[3, 4]), u(&[4])]),
        ("relu", Primitive::Relu, vec![off_kink(u(&[3, 4]))]),
        ("gelu", Primitive::Gelu, vec![u(&[3, 4])]),
        ("layer_norm", Primitive::LayerNorm, vec![u(&[3, 5]), u(&[5]), u(&[5])]),
        ("softmax", Primitive::Softmax, vec![u(&[3, 5])]),
        ("causal_softmax", Primitive::CausalSoftmax, vec![u(&[2, 3, 4])]),
        ("embedding", Primitive::Embedding(vec![2, 0, 2, 4]), vec![u(&[5, 3])]),
        ("concat", Primitive::Concat, vec![u(&[2, 1, 3]), u(&[2, 2, 3])]),
        ("slice", Primitive::Slice, vec![u(&[2, 4, 3])]),
        ("permute", Primitive::Permute, vec![u(&[2, 3, 4])]),
        ("transpose", Primitive::Transpose, vec![u(&[3, 4])]),
        ("reshape", Primitive::Reshape, vec![u(&[3, 4])]),
        ("dropout", Primitive::Dropout, vec![u(&[3, 4])]),
        ("straight_through", Primitive::StraightThrough(vec![0.3, -0.1, 0.7, 0.0, -0.4, 0.2]), vec![u(&[2, 3])]),
        ("mean", Primitive::Mean, vec![u(&[3, 4])]),
        ("smooth_l1", Primitive::SmoothL1, vec![smooth_a, smooth_b]),
        ("mse", Primitive::Mse, vec![u(&[3, 4]), u(&[3, 4])]),
        ("cross_entropy", Primitive::CrossEntropy(vec![4, 0, 2]), vec![u(&[3, 5])]),
        ("bce_with_logits", Primitive::Bce(vec![1.0, 0.0, 0.3, 1.0]), vec![u(&[4])]),
        (
            "conv1d",
            Primitive::Conv1d { stride: 2, dilation: 3, padding: 3 },
            vec![u(&[2, 11]), u(&[3, 2, 3]), u(&[3])],
        ),
        ("upsample_nearest", Primitive::Upsample(2), vec![u(&[2, 3])]),
    ]
}

fn named(ts: Vec<Tensor<f64>>) -> Vec<(String, Tensor<f64>)> {
    ts.into_iter().enumerate().map(|(i, t)| (format!("p{i}"), t)).collect()
}

/// Toy autoencoder: two levels, four channels, undilated.
pub fn toy_vae(commitment: CommitmentMode, seed: u64) -> Result<VaeObjective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VaeConfig {
        levels: 2,
        channels: 4,
        dilation: 1,
        codebook_size: 4,
        code_dim: 3,
        depth: 2,
        beta_commit: 0.5,
        commitment,
        reset_every: 0,
        ..VaeConfig::desk()
    };
    let model = VaeModel::new(cfg, &mut rng)?;
    let clip = uniform(&[4, model.skeleton.feature_width], 1.0, &mut rng);
    VaeObjective::new(model, clip)
}

/// Toy two-tier model (`K = 3, R = 2`, one layer per tier) with weights
/// drawn in `±0.5` so every parameter moves the loss visibly, and corrupted
/// inputs distinct from the targets.
pub fn toy_gpt(seed: u64) -> Result<GptObjective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GptConfig {
        layers_temporal: 1,
        layers_residual: 1,
        d_model: 8,
        heads: 2,
        codebook_size: 3,
        depth: 2,
        code_dim: 4,
        cond_dim: 5,
        n_max: 3,
        dropout: 0.0,
        beta_stop: 1.0,
    };
    let cb = uniform(&[3, 4], 1.0, &mut rng);
    let mut model = GptModel::new(cfg, cb, &mut rng)?;
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names.iter().filter(|n| !n.ends_with(".g")) {
        let shape = model.params.get(model.params.find(name).expect("listed name")).shape().to_vec();
        model.params.set(name, uniform(&shape, 0.5, &mut rng))?;
    }
    let cond = uniform(&[5], 1.0, &mut rng);
    let mut codes = || CodeMatrix::new(3, 2, (0..6).map(|_| rng.random_range(0..3)).collect());
    let targets = codes()?;
    let inputs = codes()?;
    Ok(GptObjective::new(model, cond, inputs, targets))
}

/// Every primitive, the autoencoder loss in both commitment modes and the
/// two-tier loss, each at 64-bit and at 32-bit against 64-bit differences.
pub fn standard_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: String, p64: GradCheckReport, p32: GradCheckReport| {
        out.push(CheckOutcome { name: name.clone(), precision: "f64", report: p64 });
        out.push(CheckOutcome { name, precision: "f32", report: p32 });
    };
    for (name, prim, params) in primitive_cases(&mut rng) {
        let params = named(params);
        push(name.to_string(), check_f64(&prim, &params)?, check_f32(&prim, &params)?);
    }
    for (label, mode) in [("vae_loss.cumulative", CommitmentMode::Cumulative), ("vae_loss.per_code", CommitmentMode::PerCode)] {
        let f = toy_vae(mode, seed.wrapping_add(1))?;
        let params = f.params();
        push(label.to_string(), check_f64(&f, &params)?, check_f32(&f, &params)?);
    }
    let f = toy_gpt(seed.wrapping_add(2))?;
    let params = f.params();
    push("gpt_loss".to_string(), check_f64(&f, &params)?, check_f32(&f, &params)?);
    Ok(out)
}
