//! Toy autoregressive grapheme decoder: a character-level vocabulary, one
//! causal self-attention block with a rectified MLP, residual connections and
//! an output projection tied to the embedding table.
//!
//! Conditioning is either a token prompt (the phoneme pathway) or a matrix of
//! continuous prefix rows placed ahead of the target embeddings (the
//! projector pathway). Low-rank adapters on the attention and MLP matrices
//! start as exact no-ops and are the only trainable part in the adaptation
//! stages.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_update, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const PAD: usize = 3;
pub const NUM_SPECIALS: usize = 4;

/// Character-level tokenizer. Specials hold the reserved indices 0-3 and are
/// never produced by `tokenize`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> CharVocab {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        CharVocab { chars }
    }

    pub fn size(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn token_of(&self, c: char) -> Result<usize> {
        self.chars
            .binary_search(&c)
            .map(|i| NUM_SPECIALS + i)
            .map_err(|_| Error::UncoveredChar(c))
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.token_of(c)).collect()
    }

    pub fn detokenize(&self, tokens: &[usize]) -> Result<String> {
        let mut out = String::with_capacity(tokens.len());
        for &t in tokens {
            if t < NUM_SPECIALS || t >= self.size() {
                return Err(Error::InvalidTokenIndex(t));
            }
            out.push(self.chars[t - NUM_SPECIALS]);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_ctx: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            dim: 64,
            heads: 2,
            d_ff: 128,
            max_ctx: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub vocab: CharVocab,
    pub config: DecoderConfig,
    /// vocab x dim; also the (transposed) output projection.
    pub embed: Matrix,
    /// max_ctx x dim learned position table.
    pub pos: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl PartialEq for DecoderConfig {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.heads == other.heads
            && self.d_ff == other.d_ff
            && self.max_ctx == other.max_ctx
    }
}

impl DecoderParams {
    pub fn init(vocab: CharVocab, config: DecoderConfig, seed: u64) -> DecoderParams {
        assert_eq!(config.dim % config.heads, 0, "dim must split across heads");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        DecoderParams {
            embed: Matrix::randn(vocab.size(), d, 0.1, &mut rng),
            pos: Matrix::randn(config.max_ctx, d, 0.05, &mut rng),
            wq: Matrix::randn(d, d, 1.0 / (d as f64).sqrt(), &mut rng),
            wk: Matrix::randn(d, d, 1.0 / (d as f64).sqrt(), &mut rng),
            wv: Matrix::randn(d, d, 1.0 / (d as f64).sqrt(), &mut rng),
            wo: Matrix::randn(d, d, 1.0 / (d as f64).sqrt(), &mut rng),
            w1: Matrix::randn(d, config.d_ff, (2.0 / d as f64).sqrt(), &mut rng),
            b1: Matrix::zeros(1, config.d_ff),
            w2: Matrix::randn(config.d_ff, d, (2.0 / config.d_ff as f64).sqrt(), &mut rng),
            b2: Matrix::zeros(1, d),
            vocab,
            config,
        }
    }

    /// All-zero weights. Logits are exactly zero everywhere, so the output
    /// distribution is exactly uniform; used by the init-loss check.
    pub fn zero_init(vocab: CharVocab, config: DecoderConfig) -> DecoderParams {
        let d = config.dim;
        DecoderParams {
            embed: Matrix::zeros(vocab.size(), d),
            pos: Matrix::zeros(config.max_ctx, d),
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, config.d_ff),
            b1: Matrix::zeros(1, config.d_ff),
            w2: Matrix::zeros(config.d_ff, d),
            b2: Matrix::zeros(1, d),
            vocab,
            config,
        }
    }

    pub fn tensors(&self, trainable: bool) -> DecoderTensors {
        let wrap = |m: &Matrix| {
            if trainable {
                Tensor::param(m.clone())
            } else {
                Tensor::constant(m.clone())
            }
        };
        DecoderTensors {
            vocab: self.vocab.clone(),
            config: self.config,
            embed: wrap(&self.embed),
            pos: wrap(&self.pos),
            wq: wrap(&self.wq),
            wk: wrap(&self.wk),
            wv: wrap(&self.wv),
            wo: wrap(&self.wo),
            w1: wrap(&self.w1),
            b1: wrap(&self.b1),
            w2: wrap(&self.w2),
            b2: wrap(&self.b2),
        }
    }

    fn apply_grads(&mut self, t: &DecoderTensors, lr: f64) {
        sgd_update(&t.embed, &mut self.embed, lr);
        sgd_update(&t.pos, &mut self.pos, lr);
        sgd_update(&t.wq, &mut self.wq, lr);
        sgd_update(&t.wk, &mut self.wk, lr);
        sgd_update(&t.wv, &mut self.wv, lr);
        sgd_update(&t.wo, &mut self.wo, lr);
        sgd_update(&t.w1, &mut self.w1, lr);
        sgd_update(&t.b1, &mut self.b1, lr);
        sgd_update(&t.w2, &mut self.w2, lr);
        sgd_update(&t.b2, &mut self.b2, lr);
    }
}

/// One adapted matrix: effective weight = base + (alpha/r) * down @ up.
/// `up` starts at zero so a fresh adapter is an exact no-op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterEntry {
    pub down: Matrix, // in x r
    pub up: Matrix,   // r x out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    pub q: AdapterEntry,
    pub k: AdapterEntry,
    pub v: AdapterEntry,
    pub o: AdapterEntry,
    pub mlp1: AdapterEntry,
    pub mlp2: AdapterEntry,
}

pub const DEFAULT_LORA_RANK: usize = 4;
pub const DEFAULT_LORA_ALPHA: f64 = 8.0;

impl LoraAdapter {
    pub fn init(config: &DecoderConfig, rank: usize, alpha: f64, seed: u64) -> LoraAdapter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entry = |inn: usize, out: usize| AdapterEntry {
            down: Matrix::randn(inn, rank, 1.0 / (inn as f64).sqrt(), &mut rng),
            up: Matrix::zeros(rank, out),
        };
        let d = config.dim;
        LoraAdapter {
            q: entry(d, d),
            k: entry(d, d),
            v: entry(d, d),
            o: entry(d, d),
            mlp1: entry(d, config.d_ff),
            mlp2: entry(config.d_ff, d),
            rank,
            alpha,
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn tensors(&self, trainable: bool) -> AdapterTensors {
        let wrap = |m: &Matrix| {
            if trainable {
                Tensor::param(m.clone())
            } else {
                Tensor::constant(m.clone())
            }
        };
        let pair = |e: &AdapterEntry| (wrap(&e.down), wrap(&e.up));
        AdapterTensors {
            q: pair(&self.q),
            k: pair(&self.k),
            v: pair(&self.v),
            o: pair(&self.o),
            mlp1: pair(&self.mlp1),
            mlp2: pair(&self.mlp2),
            scaling: self.scaling(),
        }
    }

    pub fn apply_grads(&mut self, t: &AdapterTensors, lr: f64) {
        let step = |pair: &(Tensor, Tensor), e: &mut AdapterEntry| {
            sgd_update(&pair.0, &mut e.down, lr);
            sgd_update(&pair.1, &mut e.up, lr);
        };
        step(&t.q, &mut self.q);
        step(&t.k, &mut self.k);
        step(&t.v, &mut self.v);
        step(&t.o, &mut self.o);
        step(&t.mlp1, &mut self.mlp1);
        step(&t.mlp2, &mut self.mlp2);
    }
}

/// base + (alpha/r) * down @ up, with shape checks.
pub fn lora_effective(
    base: &Matrix,
    entry: &AdapterEntry,
    alpha: f64,
    rank: usize,
) -> Result<Matrix> {
    if entry.down.rows() != base.rows()
        || entry.up.cols() != base.cols()
        || entry.down.cols() != rank
        || entry.up.rows() != rank
    {
        return Err(Error::ShapeMismatch {
            op: "lora_effective".to_string(),
            lhs: base.shape_str(),
            rhs: format!(
                "down {} up {} rank {rank}",
                entry.down.shape_str(),
                entry.up.shape_str()
            ),
        });
    }
    let mut delta = entry.down.matmul(&entry.up);
    delta.scale_assign(alpha / rank as f64);
    let mut out = base.clone();
    out.add_assign_scaled(&delta, 1.0);
    Ok(out)
}

/// Fold an adapter into a standalone parameter set (for inference).
pub fn merge_adapter(params: &DecoderParams, adapter: &LoraAdapter) -> Result<DecoderParams> {
    let mut merged = params.clone();
    merged.wq = lora_effective(&params.wq, &adapter.q, adapter.alpha, adapter.rank)?;
    merged.wk = lora_effective(&params.wk, &adapter.k, adapter.alpha, adapter.rank)?;
    merged.wv = lora_effective(&params.wv, &adapter.v, adapter.alpha, adapter.rank)?;
    merged.wo = lora_effective(&params.wo, &adapter.o, adapter.alpha, adapter.rank)?;
    merged.w1 = lora_effective(&params.w1, &adapter.mlp1, adapter.alpha, adapter.rank)?;
    merged.w2 = lora_effective(&params.w2, &adapter.mlp2, adapter.alpha, adapter.rank)?;
    Ok(merged)
}

pub struct DecoderTensors {
    pub vocab: CharVocab,
    pub config: DecoderConfig,
    pub embed: Tensor,
    pub pos: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub struct AdapterTensors {
    pub q: (Tensor, Tensor),
    pub k: (Tensor, Tensor),
    pub v: (Tensor, Tensor),
    pub o: (Tensor, Tensor),
    pub mlp1: (Tensor, Tensor),
    pub mlp2: (Tensor, Tensor),
    pub scaling: f64,
}

/// What the decoder is conditioned on, ahead of the SEP token.
pub enum Conditioning {
    /// Plain-text token ids (never specials).
    Tokens(Vec<usize>),
    /// N x dim rows placed directly in embedding space. Gradients flow into
    /// the tensor, which is how the projector is trained through a frozen
    /// decoder.
    Prefix(Tensor),
}

impl Conditioning {
    pub fn from_text(text: &str, vocab: &CharVocab) -> Result<Conditioning> {
        Ok(Conditioning::Tokens(vocab.tokenize(text)?))
    }

    pub fn prefix(rows: Matrix) -> Conditioning {
        Conditioning::Prefix(Tensor::constant(rows))
    }

    fn len(&self) -> usize {
        match self {
            Conditioning::Tokens(t) => t.len(),
            Conditioning::Prefix(p) => p.shape().0,
        }
    }
}

struct EffectiveWeights {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    o: Tensor,
    w1: Tensor,
    w2: Tensor,
}

fn effective_weights(dt: &DecoderTensors, at: Option<&AdapterTensors>) -> Result<EffectiveWeights> {
    let eff = |base: &Tensor, pair: Option<(&(Tensor, Tensor), f64)>| -> Result<Tensor> {
        match pair {
            None => Ok(base.clone()),
            Some(((down, up), scaling)) => {
                let delta = down.matmul(up)?.scalar_mul(scaling);
                base.add(&delta)
            }
        }
    };
    Ok(EffectiveWeights {
        q: eff(&dt.wq, at.map(|a| (&a.q, a.scaling)))?,
        k: eff(&dt.wk, at.map(|a| (&a.k, a.scaling)))?,
        v: eff(&dt.wv, at.map(|a| (&a.v, a.scaling)))?,
        o: eff(&dt.wo, at.map(|a| (&a.o, a.scaling)))?,
        w1: eff(&dt.w1, at.map(|a| (&a.mlp1, a.scaling)))?,
        w2: eff(&dt.w2, at.map(|a| (&a.mlp2, a.scaling)))?,
    })
}

fn causal_mask(len: usize) -> Matrix {
    let mut m = Matrix::zeros(len, len);
    for r in 0..len {
        for c in r + 1..len {
            m.set(r, c, -1e30);
        }
    }
    m
}

/// One pre-activation block: causal attention + rectified MLP, both residual.
fn forward_hidden(
    dt: &DecoderTensors,
    eff: &EffectiveWeights,
    rows: &Tensor,
) -> Result<Tensor> {
    let len = rows.shape().0;
    let d = dt.config.dim;
    let heads = dt.config.heads;
    let dh = d / heads;

    let pos = dt.pos.slice(0..len, 0..d)?;
    let x = rows.add(&pos)?;

    let q = x.matmul(&eff.q)?;
    let k = x.matmul(&eff.k)?;
    let v = x.matmul(&eff.v)?;
    let mask = Tensor::constant(causal_mask(len));
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(0..len, cols.clone())?;
        let kh = k.slice(0..len, cols.clone())?;
        let vh = v.slice(0..len, cols)?;
        let scores = qh
            .matmul(&kh.transpose())?
            .scalar_mul(1.0 / (dh as f64).sqrt());
        let attn = scores.add(&mask)?.softmax_rows();
        head_outs.push(attn.matmul(&vh)?);
    }
    let concat = Tensor::concat_cols(&head_outs)?;
    let x = x.add(&concat.matmul(&eff.o)?)?;

    let m = x.matmul(&eff.w1)?.add(&dt.b1)?.relu();
    let m = m.matmul(&eff.w2)?.add(&dt.b2)?;
    x.add(&m)
}

/// Input rows `[conditioning] SEP BOS target EOS` plus the index of the first
/// predicting position (the BOS row).
fn assemble_rows(
    dt: &DecoderTensors,
    cond: &Conditioning,
    target_ids: &[usize],
) -> Result<(Tensor, usize)> {
    let total = cond.len() + 3 + target_ids.len();
    if total > dt.config.max_ctx {
        return Err(Error::ContextOverflow {
            needed: total,
            max: dt.config.max_ctx,
        });
    }
    let mut parts: Vec<Tensor> = Vec::new();
    match cond {
        Conditioning::Tokens(ids) => {
            if !ids.is_empty() {
                parts.push(dt.embed.gather_rows(ids)?);
            }
        }
        Conditioning::Prefix(rows) => {
            if rows.shape().1 != dt.config.dim {
                return Err(Error::ShapeMismatch {
                    op: "prefix".to_string(),
                    lhs: format!("{}x{}", rows.shape().0, rows.shape().1),
                    rhs: format!("n x {}", dt.config.dim),
                });
            }
            if rows.shape().0 > 0 {
                parts.push(rows.clone());
            }
        }
    }
    let mut tail = vec![SEP, BOS];
    tail.extend_from_slice(target_ids);
    tail.push(EOS);
    parts.push(dt.embed.gather_rows(&tail)?);
    let rows = if parts.len() == 1 {
        parts.pop().expect("one part")
    } else {
        Tensor::concat_rows(&parts)?
    };
    Ok((rows, cond.len() + 1))
}

/// Total negative log-likelihood (nats) of `target` plus the closing EOS,
/// teacher-forced. Cross-entropy is summed over the target and EOS positions
/// only.
pub fn nll_graph(
    dt: &DecoderTensors,
    at: Option<&AdapterTensors>,
    cond: &Conditioning,
    target: &str,
) -> Result<Tensor> {
    let target_ids = dt.vocab.tokenize(target)?;
    let (rows, bos_at) = assemble_rows(dt, cond, &target_ids)?;
    let eff = effective_weights(dt, at)?;
    let hidden = forward_hidden(dt, &eff, &rows)?;
    let logits = hidden.matmul(&dt.embed.transpose())?;
    let logp = logits.log_softmax_rows();

    let len = rows.shape().0;
    let vocab = dt.vocab.size();
    let mut labels = target_ids;
    labels.push(EOS);
    let mut mask = Matrix::zeros(len, vocab);
    for (i, &label) in labels.iter().enumerate() {
        mask.set(bos_at + i, label, 1.0);
    }
    Ok(logp.mul(&Tensor::constant(mask))?.sum().scalar_mul(-1.0))
}

/// Value-only NLL with frozen weights.
pub fn nll(
    params: &DecoderParams,
    adapter: Option<&LoraAdapter>,
    cond: &Conditioning,
    target: &str,
) -> Result<f64> {
    let dt = params.tensors(false);
    let at = adapter.map(|a| a.tensors(false));
    Ok(nll_graph(&dt, at.as_ref(), cond, target)?.scalar_value())
}

/// Sampled-marginalization loss over K prompt hypotheses:
/// `log K - logsumexp_k(-nll_k)`. Prompts are constants; gradient reaches the
/// decoder and adapter tensors only.
pub fn sskm_graph(
    dt: &DecoderTensors,
    at: Option<&AdapterTensors>,
    prompts: &[String],
    target: &str,
) -> Result<Tensor> {
    assert!(!prompts.is_empty(), "need at least one prompt sample");
    let mut scores = Vec::with_capacity(prompts.len());
    for p in prompts {
        let cond = Conditioning::from_text(p, &dt.vocab)?;
        let nll = nll_graph(dt, at, &cond, target)?;
        scores.push(nll.scalar_mul(-1.0));
    }
    let v = Tensor::concat_cols(&scores)?;
    // logsumexp(v) recovered from the log-softmax identity lse = v_0 - ls_0.
    let ls = v.log_softmax_rows();
    let lse = v
        .slice(0..1, 0..1)?
        .add(&ls.slice(0..1, 0..1)?.scalar_mul(-1.0))?;
    let logk = Tensor::scalar_const((prompts.len() as f64).ln());
    logk.add(&lse.scalar_mul(-1.0))
}

pub fn sskm_loss(
    params: &DecoderParams,
    adapter: Option<&LoraAdapter>,
    prompts: &[String],
    target: &str,
) -> Result<f64> {
    let dt = params.tensors(false);
    let at = adapter.map(|a| a.tensors(false));
    Ok(sskm_graph(&dt, at.as_ref(), prompts, target)?.scalar_value())
}

/// Teacher-forced logits (values only), for oracles and equivalence tests.
pub fn forward_logits(
    params: &DecoderParams,
    adapter: Option<&LoraAdapter>,
    cond: &Conditioning,
    target: &str,
) -> Result<Matrix> {
    let dt = params.tensors(false);
    let at = adapter.map(|a| a.tensors(false));
    let target_ids = dt.vocab.tokenize(target)?;
    let (rows, _) = assemble_rows(&dt, cond, &target_ids)?;
    let eff = effective_weights(&dt, at.as_ref())?;
    let hidden = forward_hidden(&dt, &eff, &rows)?;
    Ok(hidden.matmul(&dt.embed.transpose())?.value().clone())
}

/// Greedy decoding from BOS until EOS (or any special) or `max_len` tokens;
/// ties break toward the lower index. Returns only the generated text.
pub fn generate(
    params: &DecoderParams,
    adapter: Option<&LoraAdapter>,
    cond: &Conditioning,
    max_len: usize,
) -> Result<String> {
    let merged;
    let params = match adapter {
        Some(a) => {
            merged = merge_adapter(params, a)?;
            &merged
        }
        None => params,
    };
    let dt = params.tensors(false);
    let base = cond.len() + 2; // cond SEP BOS
    if base + 1 > dt.config.max_ctx {
        return Err(Error::ContextOverflow {
            needed: base + 1,
            max: dt.config.max_ctx,
        });
    }
    let budget = max_len.min(dt.config.max_ctx - base);
    let eff = effective_weights(&dt, None)?;
    let mut generated: Vec<usize> = Vec::new();
    for _ in 0..budget {
        let rows = assemble_gen_rows(&dt, cond, &generated)?;
        let hidden = forward_hidden(&dt, &eff, &rows)?;
        let len = rows.shape().0;
        let last = hidden.slice(len - 1..len, 0..dt.config.dim)?;
        let logits = last.matmul(&dt.embed.transpose())?;
        let row = logits.value().row(0);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        if best < NUM_SPECIALS {
            break;
        }
        generated.push(best);
    }
    dt.vocab.detokenize(&generated)
}

fn assemble_gen_rows(
    dt: &DecoderTensors,
    cond: &Conditioning,
    generated: &[usize],
) -> Result<Tensor> {
    let mut parts: Vec<Tensor> = Vec::new();
    match cond {
        Conditioning::Tokens(ids) => {
            if !ids.is_empty() {
                parts.push(dt.embed.gather_rows(ids)?);
            }
        }
        Conditioning::Prefix(rows) => {
            if rows.shape().0 > 0 {
                parts.push(rows.clone());
            }
        }
    }
    let mut tail = vec![SEP, BOS];
    tail.extend_from_slice(generated);
    parts.push(dt.embed.gather_rows(&tail)?);
    if parts.len() == 1 {
        Ok(parts.pop().expect("one part"))
    } else {
        Tensor::concat_rows(&parts)
    }
}

/// Plain language-model training on raw texts (empty prompt), full
/// parameters. This is the "pretrained LLM" warm-up: the decoder learns the
/// character statistics of the transcripts before any adaptation stage.
/// Returns the per-epoch mean loss.
pub fn train_lm(
    params: &mut DecoderParams,
    texts: &[String],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..texts.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size.max(1)) {
            let dt = params.tensors(true);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let cond = Conditioning::Tokens(Vec::new());
                let loss = nll_graph(&dt, None, &cond, &texts[i])?;
                epoch_loss += loss.scalar_value();
                loss.scalar_mul(scale).backward()?;
            }
            params.apply_grads(&dt, lr);
        }
        curve.push(epoch_loss / texts.len().max(1) as f64);
    }
    Ok(curve)
}

/// Checkpoint: JSON with a `p2g v1 d=<dim>` header and the parameter arrays.
pub fn save_decoder(params: &DecoderParams, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        header: String,
        params: &'a DecoderParams,
    }
    let file = File {
        header: format!("p2g v1 d={}", params.config.dim),
        params,
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_decoder(path: &Path) -> Result<DecoderParams> {
    #[derive(Deserialize)]
    struct File {
        header: String,
        params: DecoderParams,
    }
    let file: File = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let expect = format!("p2g v1 d={}", file.params.config.dim);
    if file.header != expect {
        return Err(Error::Checkpoint(format!(
            "header '{}' does not match '{expect}'",
            file.header
        )));
    }
    Ok(file.params)
}

/// Adapter checkpoint with a `lora v1 r=<r> alpha=<a>` header.
pub fn save_adapter(adapter: &LoraAdapter, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        header: String,
        adapter: &'a LoraAdapter,
    }
    let file = File {
        header: format!("lora v1 r={} alpha={}", adapter.rank, adapter.alpha),
        adapter,
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_adapter(path: &Path) -> Result<LoraAdapter> {
    #[derive(Deserialize)]
    struct File {
        header: String,
        adapter: LoraAdapter,
    }
    let file: File = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let expect = format!("lora v1 r={} alpha={}", file.adapter.rank, file.adapter.alpha);
    if file.header != expect {
        return Err(Error::Checkpoint(format!(
            "header '{}' does not match '{expect}'",
            file.header
        )));
    }
    Ok(file.adapter)
}
