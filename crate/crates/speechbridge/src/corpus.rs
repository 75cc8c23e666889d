//! Deterministic synthetic speech-like corpus with known word, phoneme and
//! frame-level ground truth.
//!
//! Each phoneme owns a fixed unit-norm prototype vector; an utterance samples
//! words from the lexicon, expands them to phonemes, repeats each prototype
//! for a sampled duration and adds Gaussian noise. Grapheme transcripts are
//! the word strings themselves, so characters serve as graphemes and every
//! level of the pipeline can be checked by hand.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::text::{Lexicon, PhonemeWords};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub inventory_size: usize,
    pub feature_dim: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub noise_sigma: f64,
    pub lexicon: Lexicon,
    pub sentence_len_min: usize,
    pub sentence_len_max: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Defaults: 20 phonemes, 16-dim features, 2-5 frames per phoneme, noise
    /// 0.3, a generated 50-word lexicon of 2-5 phonemes, 3-8 words per
    /// utterance.
    pub fn with_defaults(seed: u64) -> Result<SynthSpec> {
        let inventory = default_inventory(20)?;
        let lexicon = generate_lexicon(&inventory, 50, 2, 5, seed ^ 0x5eed_1e1c)?;
        let spec = SynthSpec {
            inventory_size: 20,
            feature_dim: 16,
            duration_min: 2,
            duration_max: 5,
            noise_sigma: 0.3,
            lexicon,
            sentence_len_min: 3,
            sentence_len_max: 8,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_min < 1 || self.duration_max < self.duration_min {
            return Err(Error::InvalidSpec(format!(
                "bad duration range {}..{}",
                self.duration_min, self.duration_max
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec("negative noise_sigma".to_string()));
        }
        if self.sentence_len_min < 1 || self.sentence_len_max < self.sentence_len_min {
            return Err(Error::InvalidSpec(format!(
                "bad sentence length range {}..{}",
                self.sentence_len_min, self.sentence_len_max
            )));
        }
        if self.lexicon.is_empty() {
            return Err(Error::InvalidSpec("empty lexicon".to_string()));
        }
        if self.lexicon.inventory().len() > self.inventory_size {
            return Err(Error::InvalidSpec(format!(
                "lexicon uses {} symbols, spec allows {}",
                self.lexicon.inventory().len(),
                self.inventory_size
            )));
        }
        Ok(())
    }

    /// The ordered symbol set the frame labels index into.
    pub fn inventory(&self) -> Result<Vec<String>> {
        default_inventory(self.inventory_size)
    }
}

/// Single ASCII letters starting at 'a'; hand-checkable and equal to the
/// graphemes of the synthetic words.
pub fn default_inventory(n: usize) -> Result<Vec<String>> {
    if n == 0 || n > 26 {
        return Err(Error::InvalidSpec(format!(
            "inventory size {n} not in 1..=26"
        )));
    }
    Ok((0..n).map(|i| char::from(b'a' + i as u8).to_string()).collect())
}

/// Random unique words over the inventory; each word's string is the
/// concatenation of its phoneme letters.
///
/// Words are structured so that CTC targets never contain adjacent equal
/// labels: no within-word adjacent repeats, word-initial symbols come from
/// the first half of the inventory and word-final symbols from the second
/// half. Adjacent repeats are acoustically invisible on constant-prototype
/// frames (identical windows on both sides of the boundary), so allowing
/// them would put a hard floor under the phoneme error rate.
pub fn generate_lexicon(
    inventory: &[String],
    n_words: usize,
    len_min: usize,
    len_max: usize,
    seed: u64,
) -> Result<Lexicon> {
    if inventory.len() < 2 {
        return Err(Error::InvalidSpec("need at least 2 symbols".to_string()));
    }
    if len_min < 2 {
        return Err(Error::InvalidSpec("words need at least 2 symbols".to_string()));
    }
    let half = inventory.len() / 2;
    let (starts, ends) = inventory.split_at(half);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut pairs = Vec::with_capacity(n_words);
    let mut attempts = 0;
    while pairs.len() < n_words {
        attempts += 1;
        if attempts > n_words * 1000 {
            return Err(Error::InvalidSpec(format!(
                "cannot draw {n_words} unique words of {len_min}..={len_max} symbols"
            )));
        }
        let len = rng.gen_range(len_min..=len_max);
        let mut phonemes: Vec<String> = Vec::with_capacity(len);
        phonemes.push(starts[rng.gen_range(0..starts.len())].clone());
        for _ in 1..len - 1 {
            loop {
                let s = &inventory[rng.gen_range(0..inventory.len())];
                if s != phonemes.last().expect("non-empty") {
                    phonemes.push(s.clone());
                    break;
                }
            }
        }
        loop {
            let s = &ends[rng.gen_range(0..ends.len())];
            if s != phonemes.last().expect("non-empty") {
                phonemes.push(s.clone());
                break;
            }
        }
        let word = phonemes.concat();
        if seen.insert(word.clone()) {
            pairs.push((word, phonemes));
        }
    }
    Lexicon::from_entries(pairs)
}

#[derive(Clone, Debug)]
pub struct Utterance {
    /// T x d_s feature frames.
    pub features: Matrix,
    pub transcript: Vec<String>,
    pub phoneme_words: PhonemeWords,
    /// Reference phoneme index per frame (into the spec inventory).
    pub frame_labels: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn transcript_text(&self) -> String {
        self.transcript.join(" ")
    }
}

/// Unit-norm Gaussian prototype per phoneme, drawn from the spec seed.
pub fn phoneme_prototypes(spec: &SynthSpec) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    prototypes_from(&mut rng, spec.inventory_size, spec.feature_dim)
}

fn prototypes_from<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Matrix {
    let mut protos = Matrix::randn(n, dim, 1.0, rng);
    for r in 0..n {
        let row = protos.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in row {
            *v /= norm;
        }
    }
    protos
}

/// Fully deterministic in (spec, n_utts).
pub fn generate_corpus(spec: &SynthSpec, n_utts: usize) -> Result<Vec<Utterance>> {
    spec.validate()?;
    if n_utts == 0 {
        return Err(Error::InvalidSpec("n_utts must be at least 1".to_string()));
    }
    let inventory = spec.inventory()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes = prototypes_from(&mut rng, spec.inventory_size, spec.feature_dim);
    let words: Vec<&String> = spec.lexicon.words().collect();

    let mut corpus = Vec::with_capacity(n_utts);
    for _ in 0..n_utts {
        let n_words = rng.gen_range(spec.sentence_len_min..=spec.sentence_len_max);
        let mut transcript = Vec::with_capacity(n_words);
        let mut phoneme_words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let w = words[rng.gen_range(0..words.len())];
            let prons = spec
                .lexicon
                .lookup(w)
                .expect("word drawn from the lexicon")
                .to_vec();
            transcript.push(w.clone());
            phoneme_words.push(prons);
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut frame_labels = Vec::new();
        for word in &phoneme_words {
            for sym in word {
                let label = inventory
                    .iter()
                    .position(|s| s == sym)
                    .ok_or_else(|| Error::UnknownSymbol(sym.clone()))?;
                let duration = rng.gen_range(spec.duration_min..=spec.duration_max);
                for _ in 0..duration {
                    let mut frame = prototypes.row(label).to_vec();
                    for v in &mut frame {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += spec.noise_sigma * z;
                    }
                    rows.push(frame);
                    frame_labels.push(label);
                }
            }
        }
        corpus.push(Utterance {
            features: Matrix::from_rows(&rows),
            transcript,
            phoneme_words: PhonemeWords(phoneme_words),
            frame_labels,
        });
    }
    Ok(corpus)
}

/// Deterministic shuffled partition into train/dev/test.
pub fn split(
    corpus: Vec<Utterance>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Utterance>, Vec<Utterance>, Vec<Utterance>)> {
    if ratios.iter().any(|&r| r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplitRatios(ratios));
    }
    let n = corpus.len();
    let n_train = (n as f64 * ratios[0]).floor() as usize;
    let n_dev = (n as f64 * ratios[1]).floor() as usize;
    let n_test = n - n_train - n_dev;
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(Error::EmptySplit([n_train, n_dev, n_test]));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<Utterance>> = corpus.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<Utterance>>, idxs: &[usize]| -> Vec<Utterance> {
        idxs.iter()
            .map(|&i| slots[i].take().expect("index used once"))
            .collect()
    };
    let train = take(&mut slots, &order[..n_train]);
    let dev = take(&mut slots, &order[n_train..n_train + n_dev]);
    let test = take(&mut slots, &order[n_train + n_dev..]);
    Ok((train, dev, test))
}

/// Sorted unique phoneme symbols appearing in a corpus.
pub fn infer_inventory(corpus: &[Utterance]) -> Vec<String> {
    let mut syms: Vec<String> = corpus
        .iter()
        .flat_map(|u| u.phoneme_words.words().iter().flatten().cloned())
        .collect();
    syms.sort();
    syms.dedup();
    syms
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    transcript: String,
    phoneme_words: Vec<Vec<String>>,
    features: Vec<Vec<f64>>,
    frame_labels: Vec<usize>,
}

/// One JSON object per line.
pub fn save_corpus(corpus: &[Utterance], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for utt in corpus {
        let rec = UtteranceRecord {
            transcript: utt.transcript_text(),
            phoneme_words: utt.phoneme_words.0.clone(),
            features: (0..utt.features.rows())
                .map(|r| utt.features.row(r).to_vec())
                .collect(),
            frame_labels: utt.frame_labels.clone(),
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut corpus = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line)?;
        let features = Matrix::from_rows(&rec.features);
        if rec.frame_labels.len() != features.rows() {
            return Err(Error::InvalidSpec(format!(
                "record {}: {} frame labels for {} frames",
                i + 1,
                rec.frame_labels.len(),
                features.rows()
            )));
        }
        corpus.push(Utterance {
            features,
            transcript: rec
                .transcript
                .split_whitespace()
                .map(str::to_string)
                .collect(),
            phoneme_words: PhonemeWords(rec.phoneme_words),
            frame_labels: rec.frame_labels,
        });
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(noise: f64, seed: u64) -> SynthSpec {
        let mut spec = SynthSpec::with_defaults(seed).unwrap();
        spec.noise_sigma = noise;
        spec
    }

    #[test]
    fn zero_noise_frames_equal_prototypes() {
        let spec = tiny_spec(0.0, 9);
        let corpus = generate_corpus(&spec, 3).unwrap();
        let protos = phoneme_prototypes(&spec);
        for utt in &corpus {
            for (t, &label) in utt.frame_labels.iter().enumerate() {
                assert_eq!(utt.features.row(t), protos.row(label));
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = tiny_spec(0.3, 4);
        let a = generate_corpus(&spec, 5).unwrap();
        let b = generate_corpus(&spec, 5).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.transcript, y.transcript);
            assert_eq!(x.frame_labels, y.frame_labels);
        }
    }

    #[test]
    fn phoneme_words_match_lexicon_lookup() {
        let spec = tiny_spec(0.3, 12);
        for utt in generate_corpus(&spec, 4).unwrap() {
            for (w, p) in utt.transcript.iter().zip(utt.phoneme_words.words()) {
                assert_eq!(spec.lexicon.lookup(w).unwrap(), p.as_slice());
            }
            assert_eq!(utt.frame_labels.len(), utt.frames());
        }
    }

    #[test]
    fn nearest_prototype_classifier_is_perfect_without_noise() {
        let spec = tiny_spec(0.0, 21);
        let protos = phoneme_prototypes(&spec);
        let corpus = generate_corpus(&spec, 5).unwrap();
        for utt in &corpus {
            for (t, &label) in utt.frame_labels.iter().enumerate() {
                let frame = utt.features.row(t);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for k in 0..protos.rows() {
                    let d: f64 = protos
                        .row(k)
                        .iter()
                        .zip(frame)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                assert_eq!(best, label);
            }
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let spec = tiny_spec(0.1, 30);
        let corpus = generate_corpus(&spec, 10).unwrap();
        let texts: Vec<String> = corpus.iter().map(Utterance::transcript_text).collect();
        let (tr, dv, te) = split(corpus, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (8, 1, 1));
        let mut seen: Vec<String> = tr
            .iter()
            .chain(&dv)
            .chain(&te)
            .map(Utterance::transcript_text)
            .collect();
        let mut expect = texts;
        seen.sort();
        expect.sort();
        assert_eq!(seen, expect);
    }

    #[test]
    fn degenerate_ratios_error() {
        let spec = tiny_spec(0.1, 30);
        let corpus = generate_corpus(&spec, 10).unwrap();
        assert!(matches!(
            split(corpus, [1.0, 0.0, 0.0], 7),
            Err(Error::BadSplitRatios(_))
        ));
        let spec = tiny_spec(0.1, 31);
        let corpus = generate_corpus(&spec, 2).unwrap();
        assert!(matches!(
            split(corpus, [0.8, 0.1, 0.1], 7),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn corpus_file_round_trip() {
        let spec = tiny_spec(0.2, 40);
        let corpus = generate_corpus(&spec, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&loaded) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.phoneme_words, b.phoneme_words);
            assert_eq!(a.frame_labels, b.frame_labels);
        }
    }
}
