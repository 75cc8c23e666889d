//! Speech-to-phoneme modeling: a frame-windowed feedforward encoder, a CTC
//! classifier head, the CTC training loop (mono-phoneme or BPE-phoneme
//! targets) and the self-supervised reconstruction pretraining used by the
//! vanilla projector baseline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_update, Tensor};
use crate::bpe::BpeModel;
use crate::corpus::Utterance;
use crate::ctc::{ctc_loss_from_log_probs, greedy_decode, FramePosteriors};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::ErrorRateAccum;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Frames of context on each side of the center frame.
    pub context: usize,
    pub d_in: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            context: 2,
            d_in: 16,
            hidden: 64,
        }
    }
}

/// Two rectified affine layers over a per-frame context window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub w1: Matrix, // (2c+1)*d_in x hidden
    pub b1: Matrix,
    pub w2: Matrix, // hidden x hidden
    pub b2: Matrix,
}

impl PartialEq for EncoderConfig {
    fn eq(&self, other: &Self) -> bool {
        self.context == other.context && self.d_in == other.d_in && self.hidden == other.hidden
    }
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let win = (2 * config.context + 1) * config.d_in;
        EncoderParams {
            w1: Matrix::randn(win, config.hidden, (2.0 / win as f64).sqrt(), &mut rng),
            b1: Matrix::zeros(1, config.hidden),
            w2: Matrix::randn(
                config.hidden,
                config.hidden,
                (2.0 / config.hidden as f64).sqrt(),
                &mut rng,
            ),
            b2: Matrix::zeros(1, config.hidden),
            config,
        }
    }

    /// Zero-padded context windows: row t is frames t-c..=t+c concatenated.
    pub fn window(features: &Matrix, context: usize) -> Matrix {
        let t_len = features.rows();
        let d = features.cols();
        let mut out = Matrix::zeros(t_len, (2 * context + 1) * d);
        for t in 0..t_len {
            for (slot, offset) in (-(context as isize)..=context as isize).enumerate() {
                let src = t as isize + offset;
                if src >= 0 && (src as usize) < t_len {
                    let dst = &mut out.row_mut(t)[slot * d..(slot + 1) * d];
                    dst.copy_from_slice(features.row(src as usize));
                }
            }
        }
        out
    }

    /// Plain forward pass to frame states (T x hidden).
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.config.d_in {
            return Err(Error::ShapeMismatch {
                op: "encode_features".to_string(),
                lhs: features.shape_str(),
                rhs: format!("t x {}", self.config.d_in),
            });
        }
        let x = Self::window(features, self.config.context);
        let mut h = x.matmul(&self.w1);
        add_bias_relu(&mut h, &self.b1);
        let mut h = h.matmul(&self.w2);
        add_bias_relu(&mut h, &self.b2);
        Ok(h)
    }

    pub fn tensors(&self, trainable: bool) -> EncoderTensors {
        let wrap = |m: &Matrix| {
            if trainable {
                Tensor::param(m.clone())
            } else {
                Tensor::constant(m.clone())
            }
        };
        EncoderTensors {
            config: self.config,
            w1: wrap(&self.w1),
            b1: wrap(&self.b1),
            w2: wrap(&self.w2),
            b2: wrap(&self.b2),
        }
    }

    fn apply_grads(&mut self, t: &EncoderTensors, lr: f64) {
        sgd_update(&t.w1, &mut self.w1, lr);
        sgd_update(&t.b1, &mut self.b1, lr);
        sgd_update(&t.w2, &mut self.w2, lr);
        sgd_update(&t.b2, &mut self.b2, lr);
    }
}

fn add_bias_relu(m: &mut Matrix, bias: &Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = (*v + b).max(0.0);
        }
    }
}

pub struct EncoderTensors {
    pub config: EncoderConfig,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl EncoderTensors {
    /// Graph forward from a windowed-input constant.
    pub fn forward(&self, windowed: &Tensor) -> Result<Tensor> {
        let h = windowed.matmul(&self.w1)?.add(&self.b1)?.relu();
        Ok(h.matmul(&self.w2)?.add(&self.b2)?.relu())
    }
}

/// Frame states -> per-frame class logits, blank last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtcHead {
    pub w: Matrix, // hidden x (V+1)
    pub b: Matrix,
}

impl CtcHead {
    pub fn init(hidden: usize, vocab: usize, seed: u64) -> CtcHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CtcHead {
            w: Matrix::randn(hidden, vocab + 1, (1.0 / hidden as f64).sqrt(), &mut rng),
            b: Matrix::zeros(1, vocab + 1),
        }
    }

    /// Label vocabulary size, blank excluded.
    pub fn vocab(&self) -> usize {
        self.w.cols() - 1
    }

    pub fn forward(&self, states: &Matrix) -> Matrix {
        let mut logits = states.matmul(&self.w);
        for r in 0..logits.rows() {
            let row = logits.row_mut(r);
            for (v, &b) in row.iter_mut().zip(self.b.data()) {
                *v += b;
            }
        }
        logits
    }
}

/// A trained speech-to-unit model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S2pModel {
    pub encoder: EncoderParams,
    pub head: CtcHead,
}

impl S2pModel {
    pub fn posteriors(&self, features: &Matrix) -> Result<FramePosteriors> {
        let states = self.encoder.forward(features)?;
        FramePosteriors::from_logits(&self.head.forward(&states))
    }
}

/// Which unit vocabulary the CTC targets use.
#[derive(Clone)]
pub enum TargetMode {
    Mono { inventory: Vec<String> },
    Bpe { model: BpeModel },
}

impl TargetMode {
    pub fn num_classes(&self) -> usize {
        match self {
            TargetMode::Mono { inventory } => inventory.len(),
            TargetMode::Bpe { model } => model.num_tokens(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetMode::Mono { .. } => "mono",
            TargetMode::Bpe { .. } => "bpe",
        }
    }

    pub fn target_ids(&self, utt: &Utterance) -> Result<Vec<usize>> {
        match self {
            TargetMode::Mono { inventory } => utt
                .phoneme_words
                .flatten()
                .iter()
                .map(|s| {
                    inventory
                        .iter()
                        .position(|x| x == s)
                        .ok_or_else(|| Error::UnknownSymbol(s.clone()))
                })
                .collect(),
            TargetMode::Bpe { model } => model.encode_token_ids(&utt.phoneme_words),
        }
    }

    /// Map a decoded class sequence back to base phoneme symbols. BPE units
    /// are split so mono and BPE systems are scored in the same space.
    pub fn hyp_to_phonemes(&self, ids: &[usize]) -> Result<Vec<String>> {
        match self {
            TargetMode::Mono { inventory } => ids
                .iter()
                .map(|&i| {
                    inventory
                        .get(i)
                        .cloned()
                        .ok_or(Error::LabelOutOfRange { label: i, vocab: inventory.len() })
                })
                .collect(),
            TargetMode::Bpe { model } => Ok(model.decode_token_ids(ids)?.words.flatten()),
        }
    }

    /// Hypothesis phoneme words (with boundaries where the mode carries them).
    pub fn hyp_to_words(&self, ids: &[usize]) -> Result<crate::text::PhonemeWords> {
        match self {
            TargetMode::Mono { .. } => {
                Ok(crate::text::PhonemeWords(vec![self.hyp_to_phonemes(ids)?]))
            }
            TargetMode::Bpe { model } => Ok(model.decode_token_ids(ids)?.words),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

pub struct S2pTraining {
    pub model: S2pModel,
    /// Dev PER after each epoch, in base-phoneme space.
    pub dev_per: Vec<f64>,
    /// Mean training CTC loss per epoch (measured before each update).
    pub train_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Utterances dropped for violating CTC feasibility.
    pub dropped: usize,
}

/// Ph-Stage1: minimize mean CTC loss with plain SGD, keep the best-dev-PER
/// checkpoint. Infeasible utterances (target longer than the lattice allows)
/// are dropped and counted.
pub fn train_ctc(
    init: Option<EncoderParams>,
    train: &[Utterance],
    dev: &[Utterance],
    mode: &TargetMode,
    hyper: &TrainHyper,
    freeze_encoder: bool,
) -> Result<S2pTraining> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let config = init.as_ref().map_or_else(EncoderConfig::default, |e| e.config);
    let mut encoder = init.unwrap_or_else(|| EncoderParams::init(config, hyper.seed));
    let mut head = CtcHead::init(config.hidden, mode.num_classes(), hyper.seed ^ 0x0c7c);

    // Precompute targets and windowed inputs; drop infeasible utterances.
    let mut items: Vec<(Matrix, Vec<usize>)> = Vec::with_capacity(train.len());
    let mut dropped = 0;
    for utt in train {
        let target = mode.target_ids(utt)?;
        let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
        if target.is_empty() || utt.frames() < target.len() + repeats {
            dropped += 1;
            continue;
        }
        let windowed = EncoderParams::window(&utt.features, config.context);
        items.push((windowed, target));
    }
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut dev_per = Vec::with_capacity(hyper.epochs);
    let mut train_loss = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, S2pModel)> = None;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let enc_t = encoder.tensors(!freeze_encoder);
            let head_w = Tensor::param(head.w.clone());
            let head_b = Tensor::param(head.b.clone());
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (windowed, target) = &items[i];
                let states = enc_t.forward(&Tensor::constant(windowed.clone()))?;
                let logits = states.matmul(&head_w)?.add(&head_b)?;
                let logp = logits.log_softmax_rows();
                let (loss, mut grad) = ctc_loss_from_log_probs(logp.value(), target)?;
                epoch_loss += loss;
                grad.scale_assign(scale);
                logp.backward_seeded(&grad)?;
            }
            if !freeze_encoder {
                encoder.apply_grads(&enc_t, hyper.lr);
            }
            sgd_update(&head_w, &mut head.w, hyper.lr);
            sgd_update(&head_b, &mut head.b, hyper.lr);
        }
        train_loss.push(epoch_loss / items.len() as f64);

        let model = S2pModel {
            encoder: encoder.clone(),
            head: head.clone(),
        };
        let per = eval_per(&model, dev, mode)?;
        dev_per.push(per);
        if best.as_ref().is_none_or(|(b, _, _)| per < *b) {
            best = Some((per, epoch, model));
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(S2pTraining {
        model,
        dev_per,
        train_loss,
        best_epoch,
        dropped,
    })
}

/// Greedy-decode every utterance and micro-average the phoneme error rate in
/// base-phoneme space (BPE hypotheses are decoded back to phonemes first).
pub fn eval_per(model: &S2pModel, corpus: &[Utterance], mode: &TargetMode) -> Result<f64> {
    let mut acc = ErrorRateAccum::default();
    for utt in corpus {
        let post = model.posteriors(&utt.features)?;
        let hyp = mode.hyp_to_phonemes(&greedy_decode(&post))?;
        let reference = utt.phoneme_words.flatten();
        acc.observe(&hyp, &reference);
    }
    Ok(acc.rate())
}

/// Error rate in the raw unit-class space (no BPE splitting); used for the
/// vocabulary-size ablation where targets live in different unit spaces.
pub fn eval_unit_error_rate(
    model: &S2pModel,
    corpus: &[Utterance],
    mode: &TargetMode,
) -> Result<f64> {
    let mut acc = ErrorRateAccum::default();
    for utt in corpus {
        let post = model.posteriors(&utt.features)?;
        let hyp = greedy_decode(&post);
        let reference = mode.target_ids(utt)?;
        acc.observe(&hyp, &reference);
    }
    Ok(acc.rate())
}

/// Self-supervised pretraining analog: reconstruct the center frame from its
/// context window via a temporary linear head, mean-squared error. The head
/// is discarded. Returns the encoder and the per-epoch mean loss curve.
pub fn pretrain_reconstruction(
    corpus: &[Utterance],
    config: EncoderConfig,
    hyper: &TrainHyper,
) -> Result<(EncoderParams, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut encoder = EncoderParams::init(config, hyper.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5e1f);
    let mut head_w = Matrix::randn(
        config.hidden,
        config.d_in,
        (1.0 / config.hidden as f64).sqrt(),
        &mut rng,
    );
    let mut head_b = Matrix::zeros(1, config.d_in);

    let items: Vec<Matrix> = corpus
        .iter()
        .map(|u| EncoderParams::window(&u.features, config.context))
        .collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let enc_t = encoder.tensors(true);
            let hw = Tensor::param(head_w.clone());
            let hb = Tensor::param(head_b.clone());
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let windowed = &items[i];
                let states = enc_t.forward(&Tensor::constant(windowed.clone()))?;
                let pred = states.matmul(&hw)?.add(&hb)?;
                let center = Tensor::constant(corpus[i].features.clone());
                let diff = pred.add(&center.scalar_mul(-1.0))?;
                let n = (windowed.rows() * config.d_in) as f64;
                let loss = diff.mul(&diff)?.sum().scalar_mul(1.0 / n);
                epoch_loss += loss.scalar_value();
                loss.scalar_mul(scale).backward()?;
            }
            encoder.apply_grads(&enc_t, hyper.lr);
            sgd_update(&hw, &mut head_w, hyper.lr);
            sgd_update(&hb, &mut head_b, hyper.lr);
        }
        curve.push(epoch_loss / items.len() as f64);
    }
    Ok((encoder, curve))
}

/// `encode_features` as a free function over a parameter set (frame states
/// H = Enc(x), T preserved).
pub fn encode_features(encoder: &EncoderParams, features: &Matrix) -> Result<Matrix> {
    encoder.forward(features)
}

/// Checkpoint with a `s2p v1 mode=<mono|bpe> vocab=<n>` header.
pub fn save_s2p(model: &S2pModel, mode_name: &str, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        header: String,
        model: &'a S2pModel,
    }
    let file = File {
        header: format!("s2p v1 mode={} vocab={}", mode_name, model.head.vocab()),
        model,
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_s2p(path: &Path) -> Result<(S2pModel, String)> {
    #[derive(Deserialize)]
    struct File {
        header: String,
        model: S2pModel,
    }
    let file: File = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let fields: Vec<&str> = file.header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "s2p" || fields[1] != "v1" {
        return Err(Error::Checkpoint(format!("bad header '{}'", file.header)));
    }
    let mode = fields[2]
        .strip_prefix("mode=")
        .ok_or_else(|| Error::Checkpoint(format!("bad mode field '{}'", fields[2])))?
        .to_string();
    let vocab: usize = fields[3]
        .strip_prefix("vocab=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad vocab field '{}'", fields[3])))?;
    if vocab != file.model.head.vocab() {
        return Err(Error::Checkpoint(format!(
            "header vocab {vocab} does not match head width {}",
            file.model.head.vocab()
        )));
    }
    Ok((file.model, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SynthSpec};

    fn spec(noise: f64, seed: u64) -> SynthSpec {
        let mut s = SynthSpec::with_defaults(seed).unwrap();
        s.noise_sigma = noise;
        s.sentence_len_min = 2;
        s.sentence_len_max = 4;
        s
    }

    fn mono_mode(s: &SynthSpec) -> TargetMode {
        TargetMode::Mono {
            inventory: s.inventory().unwrap(),
        }
    }

    #[test]
    fn windowing_zero_pads_edges() {
        let f = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        let w = EncoderParams::window(&f, 1);
        assert_eq!(w.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(w.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(w.row(2), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut enc = EncoderParams::init(EncoderConfig::default(), 1);
        enc.w1.fill(0.0);
        enc.w2.fill(0.0);
        let f = Matrix::zeros(4, 16);
        let h = enc.forward(&f).unwrap();
        assert_eq!(h.shape(), (4, 64));
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_keeps_single_row() {
        let enc = EncoderParams::init(EncoderConfig::default(), 2);
        let f = Matrix::zeros(1, 16);
        assert_eq!(enc.forward(&f).unwrap().shape(), (1, 64));
        assert!(enc.forward(&Matrix::zeros(1, 7)).is_err());
    }

    #[test]
    fn full_batch_descent_strictly_decreases_loss() {
        let s = spec(0.2, 51);
        let corpus = generate_corpus(&s, 12).unwrap();
        let mode = mono_mode(&s);
        let hyper = TrainHyper {
            epochs: 6,
            batch_size: usize::MAX,
            lr: 0.05,
            seed: 3,
        };
        let out = train_ctc(None, &corpus, &corpus[..2], &mode, &hyper, false).unwrap();
        for w in out.train_loss.windows(2) {
            assert!(w[1] < w[0], "loss curve {:?}", out.train_loss);
        }
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn zero_noise_reaches_zero_per_quickly() {
        let s = spec(0.0, 77);
        let corpus = generate_corpus(&s, 60).unwrap();
        let (train, dev) = corpus.split_at(50);
        let mode = mono_mode(&s);
        let hyper = TrainHyper {
            epochs: 20,
            batch_size: 8,
            lr: 0.35,
            seed: 9,
        };
        let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
        let best = out.dev_per.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best, 0.0, "dev per curve {:?}", out.dev_per);
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn eval_per_identity_and_deletions() {
        let s = spec(0.0, 5);
        let corpus = generate_corpus(&s, 6).unwrap();
        let mode = mono_mode(&s);
        let hyper = TrainHyper {
            epochs: 15,
            batch_size: 4,
            lr: 0.35,
            seed: 2,
        };
        let out = train_ctc(None, &corpus, &corpus, &mode, &hyper, false).unwrap();
        // Perfectly trained on separable data: identity -> PER 0.
        assert_eq!(eval_per(&out.model, &corpus, &mode).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_loss_decreases_and_vanishes_without_noise() {
        let s = spec(0.0, 31);
        let corpus = generate_corpus(&s, 30).unwrap();
        let hyper = TrainHyper {
            epochs: 8,
            batch_size: 4,
            lr: 0.15,
            seed: 4,
        };
        let (_enc, curve) = pretrain_reconstruction(&corpus, EncoderConfig::default(), &hyper).unwrap();
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "curve {curve:?}");
        }
        assert!(
            *curve.last().unwrap() < 0.05,
            "final reconstruction loss {curve:?}"
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = EncoderParams::init(EncoderConfig::default(), 8);
        let head = CtcHead::init(64, 20, 9);
        let model = S2pModel { encoder: enc, head };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s2p.json");
        save_s2p(&model, "mono", &path).unwrap();
        let (loaded, mode) = load_s2p(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(mode, "mono");
    }
}
