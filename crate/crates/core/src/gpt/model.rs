use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GptConfig;
use crate::error::{invalid, shape_err, Error, Result};
use crate::rvq::CodeMatrix;
use crate::tensor::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    text_proj: Linear,
    code_proj: Option<Linear>,
    pet: ParamId,
    per: ParamId,
    temporal: Vec<Block>,
    residual: Vec<Block>,
    res_ln: Norm,
    head: Linear,
    stop_ln: Norm,
    stop: Linear,
}

/// Training-time dropout: rate plus the stream that draws the masks.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, drop: Option<&mut Dropout>) -> Result<Var> {
    match drop {
        Some(d) => tape.dropout(x, d.rate, &mut d.rng),
        None => Ok(x),
    }
}

/// Cached attention keys and values `[H × positions × d_head]` of one layer.
#[derive(Clone, Debug, Default)]
struct LayerCache<T> {
    keys: Option<Tensor<T>>,
    values: Option<Tensor<T>>,
}

/// Incremental decoding state of the temporal tier for one generation
/// stream. Every layer caches exactly `len()` positions.
#[derive(Clone, Debug)]
pub struct TemporalState<T> {
    layers: Vec<LayerCache<T>>,
    position: usize,
    table: Tensor<T>,
}

impl<T> TemporalState<T> {
    /// Positions consumed so far (the condition token counts as one).
    pub fn len(&self) -> usize {
        self.position
    }

    pub fn is_empty(&self) -> bool {
        self.position == 0
    }
}

/// Loss terms of one teacher-forced pass.
pub struct GptLoss {
    pub total: Var,
    pub nll: Var,
    pub stop: Var,
    pub nll_value: f64,
    pub stop_value: f64,
    /// Number of predicted code tokens, `n·R`.
    pub tokens: usize,
}

/// Two-tier transformer over code matrices. The codebook entries are a
/// frozen copy of the tokenizer's.
#[derive(Clone, Debug)]
pub struct GptModel<T> {
    pub config: GptConfig,
    pub params: ParamStore<T>,
    codebook: Tensor<T>,
    layout: Layout,
}

impl<T: Real> GptModel<T> {
    /// Weights `N(0, 0.02)`, biases zero, layer norms identity.
    pub fn new<R: Rng + ?Sized>(config: GptConfig, codebook: Tensor<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if codebook.shape() != [config.codebook_size, config.code_dim] {
            return shape_err(
                "GptModel::new",
                format!("codebook {:?}, config wants [{}, {}]", codebook.shape(), config.codebook_size, config.code_dim),
            );
        }
        let dm = config.d_model;
        let mut p = ParamStore::new();
        let text_proj = linear(&mut p, rng, "text_proj", config.cond_dim, dm, true);
        let code_proj = (config.code_dim != dm).then(|| linear(&mut p, rng, "code_proj", config.code_dim, dm, false));
        let pet = p.normal("pet", &[config.n_max + 1, dm], INIT_STD, rng);
        let per = p.normal("per", &[config.depth + 1, dm], INIT_STD, rng);
        let temporal = (0..config.layers_temporal)
            .map(|i| block(&mut p, rng, &format!("temporal.{i}"), dm))
            .collect();
        let residual = (0..config.layers_residual)
            .map(|i| block(&mut p, rng, &format!("residual.{i}"), dm))
            .collect();
        let res_ln = norm(&mut p, "residual.ln", dm);
        let head = linear(&mut p, rng, "head", dm, config.codebook_size, true);
        let stop_ln = norm(&mut p, "stop.ln", dm);
        let stop = linear(&mut p, rng, "stop", dm, 1, true);
        Ok(GptModel {
            config,
            params: p,
            codebook,
            layout: Layout {
                text_proj,
                code_proj,
                pet,
                per,
                temporal,
                residual,
                res_ln,
                head,
                stop_ln,
                stop,
            },
        })
    }

    pub fn codebook(&self) -> &Tensor<T> {
        &self.codebook
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Real>(&self) -> GptModel<U> {
        GptModel {
            config: self.config.clone(),
            params: self.params.cast(),
            codebook: self.codebook.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Id of the stop head's output layer, exposed for tests that pin it.
    pub fn stop_head_ids(&self) -> (ParamId, Option<ParamId>) {
        (self.layout.stop.w, self.layout.stop.b)
    }

    /// `x[.., d_in] · W + b` over any leading shape.
    fn linear(&self, tape: &mut Tape<T>, p: &Bound, l: Linear, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let d_in = *shape.last().expect("rank >= 1");
        let rows = shape.iter().product::<usize>() / d_in;
        let flat = if shape.len() == 2 { x } else { tape.reshape(x, &[rows, d_in])? };
        let mut y = tape.matmul(flat, p.var(l.w))?;
        if let Some(b) = l.b {
            y = tape.add_bias(y, p.var(b))?;
        }
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out = shape;
        *out.last_mut().expect("rank >= 1") = tape.shape(y)[1];
        tape.reshape(y, &out)
    }

    fn norm(&self, tape: &mut Tape<T>, p: &Bound, n: Norm, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(n.g), p.var(n.b), LN_EPS)
    }

    /// Causal multi-head self-attention on `x[B×L×d_model]`. With a cache
    /// (only for `B = 1`) the new keys/values are appended to the cached
    /// ones and queries attend the whole prefix.
    fn attention(&self, tape: &mut Tape<T>, p: &Bound, blk: &Block, x: Var, cache: Option<&mut LayerCache<T>>) -> Result<Var> {
        let (b, l, dm) = tape.value(x).dims3()?;
        let (h, dh) = (self.config.heads, self.config.head_dim());
        let split = |tape: &mut Tape<T>, v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[b, l, h, dh])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;
            tape.reshape(v, &[b * h, l, dh])
        };
        let q = self.linear(tape, p, blk.q, x)?;
        let q = split(tape, q)?;
        let k = self.linear(tape, p, blk.k, x)?;
        let mut k = split(tape, k)?;
        let v = self.linear(tape, p, blk.v, x)?;
        let mut v = split(tape, v)?;
        if let Some(c) = cache {
            if b != 1 {
                return invalid("cached attention runs one sequence at a time");
            }
            if let (Some(pk), Some(pv)) = (&c.keys, &c.values) {
                let pk = tape.constant(pk.clone());
                let pv = tape.constant(pv.clone());
                k = tape.concat(&[pk, k], 1)?;
                v = tape.concat(&[pv, v], 1)?;
            }
            c.keys = Some(tape.value(k).clone());
            c.values = Some(tape.value(v).clone());
        }
        let lk = tape.shape(k)[1];
        let scores = tape.bmm_nt(q, k)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = tape.causal_softmax(scores)?;
        tape.note_attention_pairs((b * l * lk) as u64);
        let o = tape.bmm(probs, v)?;
        let o = tape.reshape(o, &[b, h, l, dh])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b, l, dm])?;
        self.linear(tape, p, blk.o, o)
    }

    /// Pre-norm block: `x + attn(LN(x))`, then `x + W₂·gelu(W₁·LN(x))`.
    fn block(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        blk: &Block,
        x: Var,
        cache: Option<&mut LayerCache<T>>,
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let h = self.norm(tape, p, blk.ln1, x)?;
        let a = self.attention(tape, p, blk, h, cache)?;
        let a = dropout(tape, a, drop.as_deref_mut())?;
        let x = tape.add(x, a)?;
        let h = self.norm(tape, p, blk.ln2, x)?;
        let h = self.linear(tape, p, blk.fc1, h)?;
        let h = tape.gelu(h)?;
        let h = self.linear(tape, p, blk.fc2, h)?;
        let h = dropout(tape, h, drop)?;
        tape.add(x, h)
    }

    /// Codebook entries mapped to model width, `[K × d_model]`.
    pub fn code_table(&self, tape: &mut Tape<T>, p: &Bound) -> Result<Var> {
        let c = tape.constant(self.codebook.clone());
        match self.layout.code_proj {
            Some(l) => self.linear(tape, p, l, c),
            None => Ok(c),
        }
    }

    /// Position-0 token: projected condition plus `PET(0)`.
    fn condition_token(&self, tape: &mut Tape<T>, p: &Bound, cond: &Tensor<T>) -> Result<Var> {
        if cond.shape() != [self.config.cond_dim] {
            return shape_err("condition", format!("{:?}, expected [{}]", cond.shape(), self.config.cond_dim));
        }
        let e = tape.constant(cond.reshape(&[1, self.config.cond_dim])?);
        let e = self.linear(tape, p, self.layout.text_proj, e)?;
        let pos = tape.embedding(p.var(self.layout.pet), &[0])?;
        tape.add(e, pos)
    }

    /// `u_k = PET(k) + Σ_w C(S_kw)` for the given rows, placed at positions
    /// `first_position..`. The depth sum is a count-matrix product with
    /// the code table, so each output row only reads its own codes.
    fn row_tokens(&self, tape: &mut Tape<T>, p: &Bound, table: Var, rows: &[&[usize]], first_position: usize) -> Result<Var> {
        let k = self.config.codebook_size;
        let mut counts = vec![T::zero(); rows.len() * k];
        for (i, row) in rows.iter().enumerate() {
            for &c in row.iter() {
                if c >= k {
                    return Err(Error::IndexOutOfRange { index: c, size: k });
                }
                counts[i * k + c] += T::one();
            }
        }
        let m = tape.constant(Tensor::new(vec![rows.len(), k], counts)?);
        let u = tape.matmul(m, table)?;
        let positions: Vec<usize> = (first_position..first_position + rows.len()).collect();
        let pos = tape.embedding(p.var(self.layout.pet), &positions)?;
        tape.add(u, pos)
    }

    /// Teacher-forced temporal tier over the condition and the first
    /// `prefix_rows` rows of `codes`; returns contexts `F_1..F_{prefix_rows+1}`
    /// as `[(prefix_rows+1) × d_model]`. `F_t` is the output at position
    /// `t−1`, so it has seen the condition and rows before `t` only.
    #[allow(clippy::too_many_arguments)]
    pub fn temporal_forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        table: Var,
        cond: &Tensor<T>,
        codes: &CodeMatrix,
        prefix_rows: usize,
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        if prefix_rows > codes.rows() || prefix_rows > self.config.n_max {
            return invalid(format!(
                "prefix of {prefix_rows} rows (matrix has {}, n_max {})",
                codes.rows(),
                self.config.n_max
            ));
        }
        let mut x = self.condition_token(tape, p, cond)?;
        if prefix_rows > 0 {
            let rows: Vec<&[usize]> = (0..prefix_rows).map(|t| codes.row(t)).collect();
            let u = self.row_tokens(tape, p, table, &rows, 1)?;
            x = tape.concat(&[x, u], 0)?;
        }
        let len = prefix_rows + 1;
        let mut h = tape.reshape(x, &[1, len, self.config.d_model])?;
        for blk in &self.layout.temporal {
            h = self.block(tape, p, blk, h, None, drop.as_deref_mut())?;
        }
        tape.reshape(h, &[len, self.config.d_model])
    }

    /// Residual tier for every row at once. Row `t` reads
    /// `[F_t + PER(0), PER(w) + C(S_tw) for w < m]` and the result is
    /// logits `[n × (m+1) × K]`; position `w` scores depth `w+1`.
    #[allow(clippy::too_many_arguments)]
    pub fn residual_forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        table: Var,
        contexts: Var,
        codes: &CodeMatrix,
        m: usize,
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let (n, dm) = tape.value(contexts).dims2()?;
        if n != codes.rows() || m > codes.depth() || m > self.config.depth {
            return invalid(format!("residual input: {n} contexts, {}×{} codes, prefix {m}", codes.rows(), codes.depth()));
        }
        let len = m + 1;
        let mut x = tape.reshape(contexts, &[n, 1, dm])?;
        if m > 0 {
            let idx: Vec<usize> = (0..n).flat_map(|t| codes.row(t)[..m].iter().copied()).collect();
            let emb = tape.embedding(table, &idx)?;
            let emb = tape.reshape(emb, &[n, m, dm])?;
            x = tape.concat(&[x, emb], 1)?;
        }
        let positions: Vec<usize> = (0..n).flat_map(|_| 0..len).collect();
        let pos = tape.embedding(p.var(self.layout.per), &positions)?;
        let pos = tape.reshape(pos, &[n, len, dm])?;
        let mut h = tape.add(x, pos)?;
        for blk in &self.layout.residual {
            h = self.block(tape, p, blk, h, None, drop.as_deref_mut())?;
        }
        let h = self.norm(tape, p, self.layout.res_ln, h)?;
        self.linear(tape, p, self.layout.head, h)
    }

    /// Stop logits `[n × 1]`: `linear(LN(F_t))`.
    pub fn stop_logits(&self, tape: &mut Tape<T>, p: &Bound, contexts: Var) -> Result<Var> {
        let h = self.norm(tape, p, self.layout.stop_ln, contexts)?;
        self.linear(tape, p, self.layout.stop, h)
    }

    /// Teacher-forced losses. `inputs` feed both tiers (possibly corrupted);
    /// `targets` are the codes being scored. The residual tier reads all `R`
    /// codes of a row; the output after the last one is unused.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        cond: &Tensor<T>,
        inputs: &CodeMatrix,
        targets: &CodeMatrix,
        mut drop: Option<&mut Dropout>,
    ) -> Result<GptLoss> {
        let (n, r) = (targets.rows(), self.config.depth);
        if inputs.rows() != n || inputs.depth() != r || targets.depth() != r {
            return shape_err(
                "GptModel::loss",
                format!("inputs {}×{}, targets {}×{}, depth {r}", inputs.rows(), inputs.depth(), n, targets.depth()),
            );
        }
        if n > self.config.n_max {
            return invalid(format!("{n} rows exceed n_max {}", self.config.n_max));
        }
        targets.validate(self.config.codebook_size)?;
        inputs.validate(self.config.codebook_size)?;
        let table = self.code_table(tape, p)?;
        let contexts = self.temporal_forward(tape, p, table, cond, inputs, n - 1, drop.as_deref_mut())?;
        let logits = self.residual_forward(tape, p, table, contexts, inputs, r, drop)?;
        let logits = tape.slice(logits, 1, 0, r)?;
        let logits = tape.reshape(logits, &[n * r, self.config.codebook_size])?;
        let nll = tape.cross_entropy(logits, targets.indices())?;
        let stop_logits = self.stop_logits(tape, p, contexts)?;
        let stop = stop_loss(tape, stop_logits, &stop_labels(n))?;
        let total = if self.config.beta_stop == 0.0 {
            nll
        } else {
            let weighted = tape.scale(stop, self.config.beta_stop)?;
            tape.add(nll, weighted)?
        };
        Ok(GptLoss {
            total,
            nll,
            stop,
            nll_value: tape.value(nll).item().as_f64(),
            stop_value: tape.value(stop).item().as_f64(),
            tokens: n * r,
        })
    }

    /// `−log P(S | e)` summed over all `n·R` codes (stop term excluded).
    pub fn sequence_nll(&self, cond: &Tensor<T>, codes: &CodeMatrix) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        Ok(self.loss(&mut tape, &p, cond, codes, codes, None)?.nll_value)
    }

    /// Teacher-forced stop probabilities for every row of `codes`.
    pub fn stop_probabilities(&self, cond: &Tensor<T>, codes: &CodeMatrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let table = self.code_table(&mut tape, &p)?;
        let ctx = self.temporal_forward(&mut tape, &p, table, cond, codes, codes.rows() - 1, None)?;
        let logits = self.stop_logits(&mut tape, &p, ctx)?;
        Ok(tape.value(logits).data().iter().map(|&z| sigmoid(z.as_f64())).collect())
    }

    /// Contexts `F_1..F_{rows+1}` recomputed from scratch, `[(rows+1) × d_model]`.
    pub fn contexts(&self, cond: &Tensor<T>, codes: &CodeMatrix, rows: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let table = self.code_table(&mut tape, &p)?;
        let ctx = self.temporal_forward(&mut tape, &p, table, cond, codes, rows, None)?;
        Ok(tape.value(ctx).clone())
    }

    /// Runs the condition token through the temporal tier and returns the
    /// fresh state together with `F_1`.
    pub fn start(&self, cond: &Tensor<T>) -> Result<(TemporalState<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let table = self.code_table(&mut tape, &p)?;
        let mut state = TemporalState {
            layers: vec![LayerCache::default(); self.layout.temporal.len()],
            position: 0,
            table: tape.value(table).clone(),
        };
        let x = self.condition_token(&mut tape, &p, cond)?;
        let f = self.cached_step(&mut tape, &p, &mut state, x)?;
        Ok((state, f))
    }

    /// Feeds a completed row and returns the next context.
    pub fn advance(&self, state: &mut TemporalState<T>, row: &[usize]) -> Result<Tensor<T>> {
        if row.len() != self.config.depth {
            return shape_err("advance", format!("row of {} codes, depth {}", row.len(), self.config.depth));
        }
        if state.position > self.config.n_max {
            return invalid(format!("temporal tier is full at n_max {}", self.config.n_max));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let table = tape.constant(state.table.clone());
        let x = self.row_tokens(&mut tape, &p, table, &[row], state.position)?;
        self.cached_step(&mut tape, &p, state, x)
    }

    fn cached_step(&self, tape: &mut Tape<T>, p: &Bound, state: &mut TemporalState<T>, x: Var) -> Result<Tensor<T>> {
        let dm = self.config.d_model;
        let mut h = tape.reshape(x, &[1, 1, dm])?;
        for (blk, cache) in self.layout.temporal.iter().zip(state.layers.iter_mut()) {
            h = self.block(tape, p, blk, h, Some(cache), None)?;
        }
        state.position += 1;
        tape.value(h).reshape(&[dm])
    }

    /// Logits over `K` for depth `prefix.len() + 1` given context `F_t`.
    pub fn depth_logits(&self, context: &Tensor<T>, prefix: &[usize]) -> Result<Vec<T>> {
        self.depth_logits_from(self.table_value()?, context, prefix)
    }

    /// As [`GptModel::depth_logits`], reusing the code table cached in `state`.
    pub fn depth_logits_with(&self, state: &TemporalState<T>, context: &Tensor<T>, prefix: &[usize]) -> Result<Vec<T>> {
        self.depth_logits_from(state.table.clone(), context, prefix)
    }

    fn depth_logits_from(&self, table: Tensor<T>, context: &Tensor<T>, prefix: &[usize]) -> Result<Vec<T>> {
        let (dm, r, k) = (self.config.d_model, self.config.depth, self.config.codebook_size);
        if prefix.len() >= r {
            return invalid(format!("prefix of {} codes leaves no depth to predict (R = {r})", prefix.len()));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let table = tape.constant(table);
        let ctx = tape.constant(context.reshape(&[1, dm])?);
        // padded to full depth so the matrix stays rectangular; only `prefix` is read
        let mut row = prefix.to_vec();
        row.resize(r, 0);
        let codes = CodeMatrix::new(1, r, row)?;
        let logits = self.residual_forward(&mut tape, &p, table, ctx, &codes, prefix.len(), None)?;
        Ok(tape.value(logits).data()[prefix.len() * k..(prefix.len() + 1) * k].to_vec())
    }

    /// Stop logit for one context.
    pub fn stop_logit(&self, context: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let ctx = tape.constant(context.reshape(&[1, self.config.d_model])?);
        let z = self.stop_logits(&mut tape, &p, ctx)?;
        Ok(tape.value(z).item().as_f64())
    }

    fn table_value(&self) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let t = self.code_table(&mut tape, &p)?;
        Ok(tape.value(t).clone())
    }

    pub(crate) fn from_parts(config: GptConfig, params: ParamStore<T>, codebook: Tensor<T>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, codebook, &mut rng)?;
        if model.params.len() != params.len() {
            return invalid("parameter count does not match the architecture");
        }
        for (name, t) in params.iter() {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }
}

/// One positive label, at the final timestep.
pub fn stop_labels(n: usize) -> Vec<f64> {
    (0..n).map(|t| if t + 1 == n { 1.0 } else { 0.0 }).collect()
}

/// Summed binary cross-entropy of the stop logits. `labels` must mark the
/// final timestep and nothing else.
pub fn stop_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[f64]) -> Result<Var> {
    let positives: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y != 0.0).map(|(i, _)| i).collect();
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return invalid("stop labels must be 0 or 1");
    }
    if positives.len() != 1 || positives[0] + 1 != labels.len() {
        return invalid(format!("stop labels need exactly one positive at the end, got positives at {positives:?}"));
    }
    tape.bce_with_logits(logits, labels)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn linear<T: Real, R: Rng + ?Sized>(p: &mut ParamStore<T>, rng: &mut R, name: &str, d_in: usize, d_out: usize, bias: bool) -> Linear {
    let w = p.normal(format!("{name}.w"), &[d_in, d_out], INIT_STD, rng);
    let b = bias.then(|| p.zeros(format!("{name}.b"), &[d_out]));
    Linear { w, b }
}

fn norm<T: Real>(p: &mut ParamStore<T>, name: &str, width: usize) -> Norm {
    Norm {
        g: p.ones(format!("{name}.g"), &[width]),
        b: p.zeros(format!("{name}.b"), &[width]),
    }
}

fn block<T: Real, R: Rng + ?Sized>(p: &mut ParamStore<T>, rng: &mut R, name: &str, dm: usize) -> Block {
    Block {
        ln1: norm(p, &format!("{name}.ln1"), dm),
        q: linear(p, rng, &format!("{name}.attn.q"), dm, dm, true),
        // a key bias only shifts each score row by a constant, which softmax ignores
        k: linear(p, rng, &format!("{name}.attn.k"), dm, dm, false),
        v: linear(p, rng, &format!("{name}.attn.v"), dm, dm, true),
        o: linear(p, rng, &format!("{name}.attn.o"), dm, dm, true),
        ln2: norm(p, &format!("{name}.ln2"), dm),
        fc1: linear(p, rng, &format!("{name}.mlp.fc1"), dm, 4 * dm, true),
        fc2: linear(p, rng, &format!("{name}.mlp.fc2"), 4 * dm, dm, true),
    }
}

impl<T: Real> GptModel<T> {
    /// Forward of a single causal stack over `len` tokens through every
    /// block of both tiers, the cost baseline for flattened decoding.
    /// Returns the attention pairs counted on the tape.
    pub fn flattened_forward(&self, len: usize) -> Result<u64> {
        let dm = self.config.d_model;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let data = (0..len * dm).map(|i| T::from_f64(((i * 7919) % 101) as f64 / 101.0 - 0.5)).collect();
        let mut h = tape.constant(Tensor::new(vec![1, len, dm], data)?);
        for blk in self.layout.temporal.iter().chain(&self.layout.residual) {
            h = self.block(&mut tape, &p, blk, h, None, None)?;
        }
        Ok(tape.attention_pairs())
    }

    /// Attention pairs counted during one teacher-forced loss evaluation.
    pub fn teacher_forced_pairs(&self, cond: &Tensor<T>, codes: &CodeMatrix) -> Result<u64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        self.loss(&mut tape, &p, cond, codes, codes, None)?;
        Ok(tape.attention_pairs())
    }
}
