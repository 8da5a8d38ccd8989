use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{recon_loss, LossWeights, ReconTerms, SkeletonSpec, VaeConfig};
use crate::error::{invalid, shape_err, Result};
use crate::rvq::{commitment_loss, dequantize, quantize_residual, CodeMatrix, Codebook, QuantizationResult};
use crate::tensor::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Per-dimension affine normalization fitted on training frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Normalizer {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Mean and population standard deviation over every frame of every
    /// clip. Dimensions with spread below `1e-6` keep unit scale.
    pub fn fit<T: Real>(clips: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = clips.first() else {
            return invalid("cannot fit normalization on zero clips");
        };
        let width = first.dims2()?.1;
        let mut sum = vec![0.0; width];
        let mut count = 0usize;
        for c in clips {
            if c.dims2()?.1 != width {
                return shape_err("Normalizer::fit", "clips differ in feature width");
            }
            for row in c.data().chunks(width) {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v.as_f64();
                }
            }
            count += c.shape()[0];
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; width];
        for c in clips {
            for row in c.data().chunks(width) {
                for j in 0..width {
                    var[j] += (row[j].as_f64() - mean[j]).powi(2);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt())
            .map(|s| if s < 1e-6 { 1.0 } else { s })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn invert<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.map(x, |v, m, s| v * s + m)
    }

    fn map<T: Real>(&self, x: &Tensor<T>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<T>> {
        let (t, d) = x.dims2()?;
        if d != self.mean.len() {
            return shape_err("Normalizer", format!("{d} features, normalizer has {}", self.mean.len()));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::from_f64(f(v.as_f64(), self.mean[i % d], self.std[i % d])))
            .collect();
        Tensor::new(vec![t, d], data)
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    dilation: usize,
    padding: usize,
}

#[derive(Clone, Copy, Debug)]
struct ResBlock {
    a: Conv,
    b: Conv,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_in: Conv,
    enc_stages: Vec<(Conv, ResBlock)>,
    enc_out: Conv,
    dec_in: Conv,
    dec_stages: Vec<(ResBlock, Conv)>,
    dec_post: Conv,
    dec_out: Conv,
}

/// Encoder, decoder, codebook and normalization of the motion tokenizer.
#[derive(Clone, Debug)]
pub struct VaeModel<T> {
    pub config: VaeConfig,
    pub skeleton: SkeletonSpec,
    pub params: ParamStore<T>,
    pub codebook: Codebook<T>,
    pub normalizer: Normalizer,
    layout: Layout,
}

/// Values from one autoencoding pass on the tape.
pub struct VaeOutput<T> {
    pub loss: Var,
    pub latents: Var,
    pub reconstruction: Var,
    pub quantization: QuantizationResult<T>,
    pub recon: ReconTerms,
    pub recon_loss: f64,
    pub commit_loss: f64,
}

impl<T: Real> VaeModel<T> {
    /// Fresh weights. Convolutions use the `±1/√fan_in` uniform rule; the
    /// codebook starts uniform in `±1` and is normally replaced by
    /// [`super::VaeTrainer`] with encoder latents before the first step.
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let skeleton = SkeletonSpec::preset(&config.skeleton)?;
        let mut params = ParamStore::new();
        let (d_in, ch, dil) = (skeleton.feature_width, config.channels, config.dilation);
        let enc_in = make_conv(&mut params, rng, "enc.in", d_in, ch, 3, 1, 1, 1);
        let mut enc_stages = Vec::new();
        for i in 0..config.levels {
            let down = make_conv(&mut params, rng, &format!("enc.{i}.down"), ch, ch, 4, 2, 1, 1);
            let rb = make_res(&mut params, rng, &format!("enc.{i}.res"), ch, dil);
            enc_stages.push((down, rb));
        }
        let enc_out = make_conv(&mut params, rng, "enc.out", ch, config.code_dim, 3, 1, 1, 1);
        let dec_in = make_conv(&mut params, rng, "dec.in", config.code_dim, ch, 3, 1, 1, 1);
        let mut dec_stages = Vec::new();
        for i in 0..config.levels {
            let rb = make_res(&mut params, rng, &format!("dec.{i}.res"), ch, dil);
            let up = make_conv(&mut params, rng, &format!("dec.{i}.up"), ch, ch, 3, 1, 1, 1);
            dec_stages.push((rb, up));
        }
        let dec_post = make_conv(&mut params, rng, "dec.post", ch, ch, 3, 1, 1, 1);
        let dec_out = make_conv(&mut params, rng, "dec.out", ch, d_in, 3, 1, 1, 1);
        let layout = Layout {
            enc_in,
            enc_stages,
            enc_out,
            dec_in,
            dec_stages,
            dec_post,
            dec_out,
        };
        let entries: Vec<T> = (0..config.codebook_size * config.code_dim)
            .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
            .collect();
        let codebook = Codebook::from_entries(
            Tensor::new(vec![config.codebook_size, config.code_dim], entries)?,
            config.ema_decay,
            config.ema_epsilon,
        )?;
        Ok(VaeModel {
            normalizer: Normalizer::identity(skeleton.feature_width),
            config,
            skeleton,
            params,
            codebook,
            layout,
        })
    }

    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        VaeModel {
            config: self.config.clone(),
            skeleton: self.skeleton.clone(),
            params: self.params.cast(),
            codebook: self.codebook.cast(),
            normalizer: self.normalizer.clone(),
            layout: self.layout.clone(),
        }
    }

    pub fn downsample(&self) -> usize {
        self.config.downsample()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            vel: self.config.alpha_vel,
            acc: self.config.alpha_acc,
            bone: self.config.alpha_bone,
        }
    }

    fn conv(&self, tape: &mut Tape<T>, p: &Bound, c: Conv, x: Var) -> Result<Var> {
        tape.conv1d(x, p.var(c.w), Some(p.var(c.b)), c.stride, c.dilation, c.padding)
    }

    fn res_block(&self, tape: &mut Tape<T>, p: &Bound, r: ResBlock, x: Var) -> Result<Var> {
        let h = tape.relu(x)?;
        let h = self.conv(tape, p, r.a, h)?;
        let h = tape.relu(h)?;
        let h = self.conv(tape, p, r.b, h)?;
        tape.add(x, h)
    }

    /// Normalized `x[T×D]` to latents `[⌊T/l⌋ × d]`.
    pub fn encode_var(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let (t, d) = tape.value(x).dims2()?;
        let l = self.downsample();
        if t < l {
            return invalid(format!("clip of {t} frames is shorter than the downsampling rate {l}"));
        }
        if d != self.skeleton.feature_width {
            return shape_err("encode", format!("{d} features, skeleton expects {}", self.skeleton.feature_width));
        }
        let lo = &self.layout;
        let h = tape.transpose(x)?;
        let h = self.conv(tape, p, lo.enc_in, h)?;
        let mut h = tape.relu(h)?;
        for &(down, rb) in &lo.enc_stages {
            h = self.conv(tape, p, down, h)?;
            h = self.res_block(tape, p, rb, h)?;
            h = tape.relu(h)?;
        }
        let h = self.conv(tape, p, lo.enc_out, h)?;
        tape.transpose(h)
    }

    /// Latents `[n×d]` to normalized frames `[n·l × D]`.
    pub fn decode_var(&self, tape: &mut Tape<T>, p: &Bound, z: Var) -> Result<Var> {
        let lo = &self.layout;
        let h = tape.transpose(z)?;
        let h = self.conv(tape, p, lo.dec_in, h)?;
        let mut h = tape.relu(h)?;
        for &(rb, up) in &lo.dec_stages {
            h = self.res_block(tape, p, rb, h)?;
            h = tape.upsample_nearest(h, 2)?;
            h = self.conv(tape, p, up, h)?;
            h = tape.relu(h)?;
        }
        let h = self.conv(tape, p, lo.dec_post, h)?;
        let h = tape.relu(h)?;
        let h = self.conv(tape, p, lo.dec_out, h)?;
        tape.transpose(h)
    }

    /// Full autoencoding pass on normalized `x[T×D]`. `quantize` maps the
    /// encoder latents to the decoder input and the quantization record;
    /// [`VaeModel::live_quantizer`] is the training behaviour.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: &Tensor<T>,
        quantize: &mut dyn FnMut(&Tensor<T>) -> Result<(Tensor<T>, QuantizationResult<T>)>,
    ) -> Result<VaeOutput<T>> {
        let xv = tape.constant(x.clone());
        let z = self.encode_var(tape, p, xv)?;
        let (decoder_input, res) = quantize(tape.value(z))?;
        let zq = tape.straight_through(z, &decoder_input)?;
        let x_re = self.decode_var(tape, p, zq)?;
        let (recon, terms) = recon_loss(tape, xv, x_re, &self.skeleton, self.loss_weights())?;
        let commit = commitment_loss(tape, z, &res, &self.codebook, self.config.commitment)?;
        let recon_value = tape.value(recon).item().as_f64();
        let commit_value = tape.value(commit).item().as_f64();
        let loss = if self.config.beta_commit != 0.0 {
            let scaled = tape.scale(commit, self.config.beta_commit)?;
            tape.add(recon, scaled)?
        } else {
            recon
        };
        Ok(VaeOutput {
            loss,
            latents: z,
            reconstruction: x_re,
            quantization: res,
            recon: terms,
            recon_loss: recon_value,
            commit_loss: commit_value,
        })
    }

    pub fn live_quantizer(&self) -> impl FnMut(&Tensor<T>) -> Result<(Tensor<T>, QuantizationResult<T>)> + '_ {
        move |z| {
            let res = quantize_residual(z, &self.codebook, self.config.depth)?;
            Ok((res.quantized.clone(), res))
        }
    }

    /// Encoder latents of a normalized clip.
    pub fn encode_normalized(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let z = self.encode_var(&mut tape, &p, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Raw motion `[T×D]` to its code matrix.
    pub fn tokenize(&self, motion: &Tensor<T>) -> Result<QuantizationResult<T>> {
        let z = self.encode_normalized(&self.normalizer.apply(motion)?)?;
        quantize_residual(&z, &self.codebook, self.config.depth)
    }

    /// Code matrix back to raw motion `[n·l × D]`.
    pub fn reconstruct(&self, codes: &CodeMatrix) -> Result<Tensor<T>> {
        let zq = dequantize(codes, &self.codebook)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let zv = tape.constant(zq);
        let x = self.decode_var(&mut tape, &p, zv)?;
        self.normalizer.invert(tape.value(x))
    }

    pub(crate) fn from_parts(config: VaeConfig, params: ParamStore<T>, codebook: Codebook<T>, normalizer: Normalizer) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        for (name, t) in params.iter() {
            model.params.set(name, t.clone())?;
        }
        if model.params.len() != params.len() {
            return invalid("parameter count does not match the architecture");
        }
        if codebook.size() != model.config.codebook_size || codebook.dim() != model.config.code_dim {
            return invalid("codebook shape does not match the configuration");
        }
        model.codebook = codebook;
        model.normalizer = normalizer;
        Ok(model)
    }
}

#[allow(clippy::too_many_arguments)]
fn make_conv<T: Real, R: Rng + ?Sized>(
    p: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Conv {
    let fan_in = cin * k;
    let w = p.uniform(format!("{name}.w"), &[cout, cin, k], fan_in, rng);
    let b = p.uniform(format!("{name}.b"), &[cout], fan_in, rng);
    Conv {
        w,
        b,
        stride,
        dilation,
        padding,
    }
}

fn make_res<T: Real, R: Rng + ?Sized>(p: &mut ParamStore<T>, rng: &mut R, name: &str, ch: usize, dilation: usize) -> ResBlock {
    ResBlock {
        a: make_conv(p, rng, &format!("{name}.a"), ch, ch, 3, 1, dilation, dilation),
        b: make_conv(p, rng, &format!("{name}.b"), ch, ch, 3, 1, dilation, dilation),
    }
}
