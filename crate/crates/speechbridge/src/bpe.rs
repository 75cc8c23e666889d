//! Byte-pair encoding over phoneme sequences, with merges confined to words.
//!
//! Merges are learned on within-word symbol sequences, so no rule can join
//! symbols across a word boundary. At encode time the first unit of every
//! word carries a reserved boundary marker prefix; decoding splits units back
//! into base symbols and reopens a word at each marker. Word-initial and
//! word-internal forms of a unit are distinct CTC token classes (see
//! [`BpeModel::token_id`]) so that boundary information survives the
//! speech-to-unit model.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::decoder::CharVocab;
use crate::error::{Error, Result};
use crate::text::PhonemeWords;

pub const DEFAULT_MARKER: &str = "\u{25B8}"; // '▸'

#[derive(Clone, Debug)]
struct Unit {
    display: String,
    /// Decomposition into base inventory symbols.
    parts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct BpeModel {
    /// Ordered merge rules over unit display strings.
    merges: Vec<(String, String)>,
    /// Base inventory first, then one unit per merge in training order.
    units: Vec<Unit>,
    index: HashMap<String, usize>,
    inventory_len: usize,
    boundary_marker: String,
}

impl BpeModel {
    /// Number of units (base symbols + merges).
    pub fn vocab_size(&self) -> usize {
        self.units.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn boundary_marker(&self) -> &str {
        &self.boundary_marker
    }

    pub fn inventory(&self) -> impl Iterator<Item = &str> {
        self.units[..self.inventory_len].iter().map(|u| u.display.as_str())
    }

    /// Distinct CTC token classes: every unit in its word-internal form plus
    /// every unit in its marker-carrying word-initial form.
    pub fn num_tokens(&self) -> usize {
        2 * self.units.len()
    }

    /// Token class for a (possibly marker-prefixed) unit string.
    pub fn token_id(&self, token: &str) -> Result<usize> {
        if let Some(rest) = token.strip_prefix(self.boundary_marker.as_str()) {
            let id = self
                .index
                .get(rest)
                .ok_or_else(|| Error::UnknownUnit(token.to_string()))?;
            Ok(self.units.len() + id)
        } else {
            let id = self
                .index
                .get(token)
                .ok_or_else(|| Error::UnknownUnit(token.to_string()))?;
            Ok(*id)
        }
    }

    pub fn token_display(&self, id: usize) -> String {
        if id < self.units.len() {
            self.units[id].display.clone()
        } else {
            format!(
                "{}{}",
                self.boundary_marker,
                self.units[id - self.units.len()].display
            )
        }
    }

    fn unit_for(&self, symbol: &str) -> Result<usize> {
        self.index
            .get(symbol)
            .copied()
            .filter(|&i| i < self.inventory_len)
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    fn apply_merges(&self, word: &[String]) -> Result<Vec<usize>> {
        let mut seg: Vec<usize> = word
            .iter()
            .map(|s| self.unit_for(s))
            .collect::<Result<_>>()?;
        for (mi, (left, right)) in self.merges.iter().enumerate() {
            let l = self.index[left];
            let r = self.index[right];
            let merged = self.inventory_len + mi;
            merge_in_place(&mut seg, l, r, merged);
        }
        Ok(seg)
    }

    /// Encode each word independently; the first unit of every word carries
    /// the boundary marker.
    pub fn encode(&self, words: &PhonemeWords) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for word in words.words() {
            let seg = self.apply_merges(word)?;
            for (i, unit) in seg.iter().enumerate() {
                let d = &self.units[*unit].display;
                if i == 0 {
                    out.push(format!("{}{}", self.boundary_marker, d));
                } else {
                    out.push(d.clone());
                }
            }
        }
        Ok(out)
    }

    /// Encode straight to CTC token ids (see [`BpeModel::token_id`]).
    pub fn encode_token_ids(&self, words: &PhonemeWords) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in words.words() {
            let seg = self.apply_merges(word)?;
            for (i, unit) in seg.iter().enumerate() {
                out.push(if i == 0 { self.units.len() + unit } else { *unit });
            }
        }
        Ok(out)
    }

    /// Split units back into base symbols; a boundary marker opens a new
    /// word. A sequence that does not start with a marked unit still decodes
    /// (the leading units form a first word) but sets the `lenient` flag.
    pub fn decode(&self, tokens: &[String]) -> Result<DecodeOutcome> {
        let mut words: Vec<Vec<String>> = Vec::new();
        let mut lenient = false;
        for (i, token) in tokens.iter().enumerate() {
            let (initial, rest) = match token.strip_prefix(self.boundary_marker.as_str()) {
                Some(rest) => (true, rest),
                None => (false, token.as_str()),
            };
            let id = self
                .index
                .get(rest)
                .ok_or_else(|| Error::UnknownUnit(token.clone()))?;
            if initial || words.is_empty() {
                if !initial && i == 0 {
                    lenient = true;
                }
                words.push(Vec::new());
            }
            words
                .last_mut()
                .expect("word opened above")
                .extend(self.units[*id].parts.iter().cloned());
        }
        Ok(DecodeOutcome {
            words: PhonemeWords(words),
            lenient,
        })
    }

    pub fn decode_token_ids(&self, ids: &[usize]) -> Result<DecodeOutcome> {
        let tokens: Vec<String> = ids.iter().map(|&i| self.token_display(i)).collect();
        self.decode(&tokens)
    }

    /// Replay training on `corpus` and confirm every merge rule was backed by
    /// at least [`MIN_PAIR_FREQ`] within-word occurrences at its turn. Since
    /// pair counting never crosses a word edge, this audits that no rule
    /// joins symbols from different words.
    pub fn audit_merges(&self, corpus: &[PhonemeWords]) -> Result<()> {
        let mut bag = WordBag::from_corpus(self, corpus)?;
        for (mi, (left, right)) in self.merges.iter().enumerate() {
            let pair = (self.index[left], self.index[right]);
            let count = bag.pair_counts().get(&pair).copied().unwrap_or(0);
            if count < MIN_PAIR_FREQ {
                return Err(Error::BpeModelParse(format!(
                    "merge {mi} ({left}, {right}) has within-word frequency {count}"
                )));
            }
            bag.apply(pair.0, pair.1, self.inventory_len + mi);
        }
        Ok(())
    }

    /// Model file: `bpe-phoneme v1 vocab=<n> marker=<m>` then one
    /// `left<TAB>right` merge per line in training order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(
            out,
            "bpe-phoneme v1 vocab={} marker={}",
            self.units.len(),
            self.boundary_marker
        )
        .expect("write to string");
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push('\t');
            out.push_str(r);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load a model file against a known base inventory.
    pub fn load(path: &Path, inventory: &[String]) -> Result<BpeModel> {
        let contents = std::fs::read_to_string(path)?;
        Self::parse(&contents, inventory)
    }

    pub fn parse(contents: &str, inventory: &[String]) -> Result<BpeModel> {
        let mut lines = contents.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::BpeModelParse("empty file".to_string()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "bpe-phoneme" || fields[1] != "v1" {
            return Err(Error::BpeModelParse(format!("bad header '{header}'")));
        }
        let vocab: usize = fields[2]
            .strip_prefix("vocab=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::BpeModelParse(format!("bad vocab field '{}'", fields[2])))?;
        let marker = fields[3]
            .strip_prefix("marker=")
            .ok_or_else(|| Error::BpeModelParse(format!("bad marker field '{}'", fields[3])))?
            .to_string();

        let mut model = BpeModel::base(inventory, &marker)?;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let left = parts.next().unwrap_or_default().to_string();
            let right = parts
                .next()
                .ok_or_else(|| Error::BpeModelParse(format!("merge line '{line}' lacks a tab")))?
                .to_string();
            let (li, ri) = match (model.index.get(&left), model.index.get(&right)) {
                (Some(&l), Some(&r)) => (l, r),
                _ => {
                    return Err(Error::BpeModelParse(format!(
                        "merge ({left}, {right}) references unknown units"
                    )))
                }
            };
            model.push_merge(li, ri)?;
        }
        if model.units.len() != vocab {
            return Err(Error::BpeModelParse(format!(
                "header says vocab={vocab}, file reconstructs {}",
                model.units.len()
            )));
        }
        Ok(model)
    }

    fn base(inventory: &[String], marker: &str) -> Result<BpeModel> {
        let mut units = Vec::new();
        let mut index = HashMap::new();
        for sym in inventory {
            if sym.contains(marker) {
                return Err(Error::InvalidConfig(format!(
                    "symbol '{sym}' contains the boundary marker '{marker}'"
                )));
            }
            if index.insert(sym.clone(), units.len()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate symbol '{sym}'")));
            }
            units.push(Unit {
                display: sym.clone(),
                parts: vec![sym.clone()],
            });
        }
        Ok(BpeModel {
            merges: Vec::new(),
            inventory_len: units.len(),
            units,
            index,
            boundary_marker: marker.to_string(),
        })
    }

    fn push_merge(&mut self, left: usize, right: usize) -> Result<()> {
        let display = format!("{}{}", self.units[left].display, self.units[right].display);
        if self.index.contains_key(&display) {
            return Err(Error::BpeModelParse(format!(
                "merged unit '{display}' collides with an existing unit"
            )));
        }
        let mut parts = self.units[left].parts.clone();
        parts.extend(self.units[right].parts.iter().cloned());
        self.index.insert(display.clone(), self.units.len());
        self.merges.push((
            self.units[left].display.clone(),
            self.units[right].display.clone(),
        ));
        self.units.push(Unit { display, parts });
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    pub words: PhonemeWords,
    pub lenient: bool,
}

/// Merging a pair that occurs fewer than this many times adds vocabulary
/// without generalization, so training stops instead.
pub const MIN_PAIR_FREQ: usize = 2;

/// Distinct words with multiplicities, kept as current segmentations.
struct WordBag {
    words: Vec<(Vec<usize>, usize)>,
}

impl WordBag {
    fn from_corpus(model: &BpeModel, corpus: &[PhonemeWords]) -> Result<WordBag> {
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for utt in corpus {
            for word in utt.words() {
                let seg: Vec<usize> =
                    word.iter().map(|s| model.unit_for(s)).collect::<Result<_>>()?;
                *counts.entry(seg).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<usize>, usize)> = counts.into_iter().collect();
        words.sort(); // deterministic iteration order
        Ok(WordBag { words })
    }

    fn pair_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for (seg, mult) in &self.words {
            for w in seg.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += mult;
            }
        }
        counts
    }

    fn apply(&mut self, left: usize, right: usize, merged: usize) {
        for (seg, _) in &mut self.words {
            merge_in_place(seg, left, right, merged);
        }
    }
}

/// Replace non-overlapping (left, right) unit pairs left to right.
fn merge_in_place(seg: &mut Vec<usize>, left: usize, right: usize, merged: usize) {
    let mut i = 0;
    while i + 1 < seg.len() {
        if seg[i] == left && seg[i + 1] == right {
            seg[i] = merged;
            seg.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Learn merges by greedy most-frequent within-word pair counting. Ties break
/// lexicographically on the (left, right) display pair; training stops when
/// the vocabulary reaches `target_vocab_size` or no pair occurs at least
/// [`MIN_PAIR_FREQ`] times.
pub fn train_bpe(corpus: &[PhonemeWords], target_vocab_size: usize) -> Result<BpeModel> {
    train_bpe_with_marker(corpus, target_vocab_size, DEFAULT_MARKER)
}

pub fn train_bpe_with_marker(
    corpus: &[PhonemeWords],
    target_vocab_size: usize,
    marker: &str,
) -> Result<BpeModel> {
    if corpus.iter().all(PhonemeWords::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let mut inventory: Vec<String> = corpus
        .iter()
        .flat_map(|u| u.words().iter().flatten().cloned())
        .collect();
    inventory.sort();
    inventory.dedup();
    if target_vocab_size < inventory.len() + 1 {
        return Err(Error::BpeTargetTooSmall {
            target: target_vocab_size,
            inventory: inventory.len(),
        });
    }

    let mut model = BpeModel::base(&inventory, marker)?;
    let mut bag = WordBag::from_corpus(&model, corpus)?;
    while model.units.len() < target_vocab_size {
        let counts = bag.pair_counts();
        let mut best: Option<((usize, usize), usize)> = None;
        for (&pair, &count) in &counts {
            if count < MIN_PAIR_FREQ {
                continue;
            }
            let better = match best {
                None => true,
                Some((bpair, bcount)) => {
                    count > bcount
                        || (count == bcount && {
                            let key = (&model.units[pair.0].display, &model.units[pair.1].display);
                            let bkey =
                                (&model.units[bpair.0].display, &model.units[bpair.1].display);
                            key < bkey
                        })
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let merged = model.units.len();
        if model.push_merge(l, r).is_err() {
            // Concatenated display collides with an existing unit (only
            // possible with multi-character base symbols); stop here rather
            // than produce an ambiguous model file.
            break;
        }
        bag.apply(l, r, merged);
    }
    Ok(model)
}

/// Concatenate all symbols of all words with no separators (the prompt the
/// decoder sees in mono-phoneme mode has its whitespace removed).
pub fn format_mono_prompt(words: &PhonemeWords) -> String {
    let mut out = String::new();
    for word in words.words() {
        for sym in word {
            out.push_str(sym);
        }
    }
    out
}

/// Concatenate symbols within a word and join words with single spaces,
/// keeping the explicit boundaries.
pub fn format_bpe_prompt(words: &PhonemeWords) -> String {
    let rendered: Vec<String> = words.words().iter().map(|w| w.concat()).collect();
    rendered.join(" ")
}

/// Number of decoder tokens for a prompt under the character-level decoder
/// vocabulary.
pub fn count_decoder_tokens(prompt: &str, vocab: &CharVocab) -> Result<usize> {
    Ok(vocab.tokenize(prompt)?.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pw(words: &[&[&str]]) -> PhonemeWords {
        PhonemeWords(
            words
                .iter()
                .map(|w| w.iter().map(|s| s.to_string()).collect())
                .collect(),
        )
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // {[a,b] x2, [a,c] x1} over inventory {a,b,c}: pair (a,b) wins.
        let corpus = vec![pw(&[&["a", "b"], &["a", "b"], &["a", "c"]])];
        let model = train_bpe(&corpus, 4).unwrap();
        assert_eq!(model.merges(), &[("a".to_string(), "b".to_string())]);
        assert_eq!(model.vocab_size(), 4);
    }

    #[test]
    fn target_equal_to_inventory_is_an_error() {
        let corpus = vec![pw(&[&["a", "b"], &["a", "b"]])];
        let err = train_bpe(&corpus, 2).unwrap_err();
        assert!(matches!(err, Error::BpeTargetTooSmall { .. }));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(train_bpe(&[], 10), Err(Error::EmptyCorpus)));
        let corpus = vec![PhonemeWords::default()];
        assert!(matches!(train_bpe(&corpus, 10), Err(Error::EmptyCorpus)));
    }

    fn random_corpus(seed: u64, n_words: usize, inv: usize) -> Vec<PhonemeWords> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols: Vec<String> = (0..inv)
            .map(|i| char::from(b'a' + i as u8).to_string())
            .collect();
        let mut utts = Vec::new();
        for _ in 0..n_words {
            let len = rng.gen_range(2..=5);
            let word: Vec<String> = (0..len)
                .map(|_| symbols[rng.gen_range(0..symbols.len())].clone())
                .collect();
            utts.push(PhonemeWords(vec![word]));
        }
        utts
    }

    #[test]
    fn vocab_stays_at_or_below_target() {
        let corpus = random_corpus(3, 400, 20);
        let model = train_bpe(&corpus, 100).unwrap();
        assert!(model.vocab_size() <= 100);
        assert!(model.vocab_size() > 20);
    }

    #[test]
    fn vocab_is_monotone_in_target() {
        let corpus = random_corpus(5, 300, 12);
        let mut prev = 0;
        for target in [13, 20, 40, 80, 200, 1000] {
            let model = train_bpe(&corpus, target).unwrap();
            assert!(model.vocab_size() >= prev, "target {target}");
            prev = model.vocab_size();
        }
    }

    #[test]
    fn encode_examples() {
        let corpus = vec![pw(&[&["a", "b"], &["a", "b"], &["a", "c"]])];
        let model = train_bpe(&corpus, 4).unwrap();
        assert_eq!(model.encode(&pw(&[&["a", "b"]])).unwrap(), ["\u{25B8}ab"]);
        assert_eq!(
            model.encode(&pw(&[&["a", "c"]])).unwrap(),
            ["\u{25B8}a", "c"]
        );
        let err = model.encode(&pw(&[&["z"]])).unwrap_err();
        assert!(matches!(err, Error::UnknownSymbol(s) if s == "z"));
    }

    #[test]
    fn decode_examples() {
        let corpus = vec![pw(&[&["a", "b"], &["a", "b"], &["d", "c"]])];
        let model = train_bpe(&corpus, 5).unwrap();
        let out = model
            .decode(&[
                "\u{25B8}ab".to_string(),
                "c".to_string(),
                "\u{25B8}d".to_string(),
            ])
            .unwrap();
        assert_eq!(out.words, pw(&[&["a", "b", "c"], &["d"]]));
        assert!(!out.lenient);

        let out = model.decode(&["ab".to_string()]).unwrap();
        assert_eq!(out.words, pw(&[&["a", "b"]]));
        assert!(out.lenient);

        let out = model.decode(&[]).unwrap();
        assert!(out.words.is_empty());
        assert!(!out.lenient);

        assert!(matches!(
            model.decode(&["zq".to_string()]),
            Err(Error::UnknownUnit(_))
        ));
    }

    #[test]
    fn round_trip_on_training_and_held_out_words() {
        let corpus = random_corpus(11, 500, 10);
        let model = train_bpe(&corpus, 60).unwrap();
        let held_out = random_corpus(999, 1000, 10);
        for words in corpus.iter().chain(&held_out) {
            let units = model.encode(words).unwrap();
            let back = model.decode(&units).unwrap();
            assert_eq!(&back.words, words);
            assert!(!back.lenient);
            let ids = model.encode_token_ids(words).unwrap();
            let back = model.decode_token_ids(&ids).unwrap();
            assert_eq!(&back.words, words);
        }
    }

    #[test]
    fn merges_are_audited_within_words() {
        let corpus = random_corpus(7, 300, 8);
        let model = train_bpe(&corpus, 40).unwrap();
        model.audit_merges(&corpus).unwrap();
    }

    #[test]
    fn token_ids_distinguish_word_initial_units() {
        let corpus = vec![pw(&[&["a", "b"], &["a", "b"]])];
        let model = train_bpe(&corpus, 4).unwrap();
        let plain = model.token_id("ab").unwrap();
        let marked = model.token_id("\u{25B8}ab").unwrap();
        assert_ne!(plain, marked);
        assert_eq!(model.token_display(plain), "ab");
        assert_eq!(model.token_display(marked), "\u{25B8}ab");
        // inventory {a, b} plus one merge = 3 units, marked and unmarked
        assert_eq!(model.num_tokens(), 6);
    }

    #[test]
    fn model_file_round_trip() {
        let corpus = random_corpus(13, 300, 10);
        let model = train_bpe(&corpus, 40).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bpe");
        model.save(&path).unwrap();
        let inventory: Vec<String> = model.inventory().map(str::to_string).collect();
        let loaded = BpeModel::load(&path, &inventory).unwrap();
        assert_eq!(loaded.merges(), model.merges());
        assert_eq!(loaded.vocab_size(), model.vocab_size());
        let words = pw(&[&["a", "b", "c"], &["d"]]);
        assert_eq!(loaded.encode(&words).unwrap(), model.encode(&words).unwrap());
    }

    #[test]
    fn prompt_formatting() {
        let words = pw(&[&["k", "a", "t"], &["s", "a", "t"]]);
        assert_eq!(format_mono_prompt(&words), "katsat");
        assert_eq!(format_bpe_prompt(&words), "kat sat");
        assert_eq!(format_mono_prompt(&pw(&[&["a"]])), "a");
        assert_eq!(format_bpe_prompt(&pw(&[&["a"]])), "a");
        assert_eq!(format_mono_prompt(&pw(&[])), "");
        assert_eq!(format_bpe_prompt(&pw(&[])), "");
        assert!(format_bpe_prompt(&words).len() >= format_mono_prompt(&words).len());
    }
}
