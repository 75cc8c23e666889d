//! Text normalization and the static pronunciation lexicon.
//!
//! The lexicon file format is UTF-8 TSV, one entry per line:
//! `word<TAB>sym1 sym2 ...`, with an optional first line
//! `#inventory sym1 sym2 ...` declaring the closed phoneme inventory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One phoneme-symbol sequence per surface word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PhonemeWords(pub Vec<Vec<String>>);

impl PhonemeWords {
    pub fn words(&self) -> &[Vec<String>] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All symbols of all words, in order, without boundaries.
    pub fn flatten(&self) -> Vec<String> {
        self.0.iter().flatten().cloned().collect()
    }
}

/// Lowercase, strip everything outside letters/digits/apostrophe/space,
/// collapse whitespace and split into words. Empty input gives an empty list.
pub fn normalize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.to_lowercase().chars() {
        if c.is_alphabetic() || c.is_ascii_digit() || c == '\'' {
            cleaned.push(c);
        } else if c.is_whitespace() {
            cleaned.push(' ');
        }
        // anything else is pronunciation-irrelevant punctuation: dropped
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// How to handle words missing from the lexicon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    /// Error out on the first unknown word.
    Strict,
    /// Tell the caller to drop the whole utterance.
    SkipUtterance,
    /// Spell the word through single-character lexicon entries.
    SpellLetters,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lexicon {
    /// word -> pronunciation. A BTreeMap keeps serialization deterministic.
    entries: BTreeMap<String, Vec<String>>,
    /// Ordered closed inventory of phoneme symbols.
    inventory: Vec<String>,
}

impl Lexicon {
    /// Build from (word, pronunciation) pairs; the inventory is the sorted
    /// union of all symbols. Invariants are enforced here.
    pub fn from_entries(pairs: Vec<(String, Vec<String>)>) -> Result<Lexicon> {
        let mut entries = BTreeMap::new();
        let mut inventory: Vec<String> = Vec::new();
        for (word, prons) in pairs {
            validate_entry(&word, &prons, None, 0)?;
            for s in &prons {
                if !inventory.contains(s) {
                    inventory.push(s.clone());
                }
            }
            entries.insert(word, prons);
        }
        inventory.sort();
        Ok(Lexicon { entries, inventory })
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inventory(&self) -> &[String] {
        &self.inventory
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.inventory.iter().position(|s| s == symbol)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("#inventory");
        for s in &self.inventory {
            out.push(' ');
            out.push_str(s);
        }
        out.push('\n');
        for (word, prons) in &self.entries {
            out.push_str(word);
            out.push('\t');
            out.push_str(&prons.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn validate_entry(
    word: &str,
    prons: &[String],
    inventory: Option<&[String]>,
    line: usize,
) -> Result<()> {
    let bad = |msg: String| Error::LexiconParse { line, msg };
    if word.is_empty() {
        return Err(bad("empty word".to_string()));
    }
    if word.chars().any(char::is_whitespace) {
        return Err(bad(format!("word '{word}' contains whitespace")));
    }
    if word.chars().any(char::is_uppercase) {
        return Err(bad(format!("word '{word}' is not lowercase")));
    }
    if prons.is_empty() {
        return Err(bad(format!("word '{word}' has an empty pronunciation")));
    }
    if let Some(inv) = inventory {
        for s in prons {
            if !inv.contains(s) {
                return Err(bad(format!("symbol '{s}' not in the declared inventory")));
            }
        }
    }
    Ok(())
}

/// Parsed lexicon plus the number of duplicate-word lines that were
/// overridden (the last occurrence wins).
#[derive(Debug)]
pub struct LoadedLexicon {
    pub lexicon: Lexicon,
    pub duplicate_warnings: usize,
}

pub fn load_lexicon(path: &Path) -> Result<LoadedLexicon> {
    let contents = std::fs::read_to_string(path)?;
    parse_lexicon(&contents)
}

pub fn parse_lexicon(contents: &str) -> Result<LoadedLexicon> {
    let mut declared: Option<Vec<String>> = None;
    let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut observed: Vec<String> = Vec::new();
    let mut duplicate_warnings = 0;

    for (i, raw) in contents.lines().enumerate() {
        let lineno = i + 1;
        if i == 0 && raw.starts_with("#inventory") {
            let syms: Vec<String> = raw["#inventory".len()..]
                .split_whitespace()
                .map(str::to_string)
                .collect();
            if syms.is_empty() {
                return Err(Error::LexiconParse {
                    line: lineno,
                    msg: "empty inventory declaration".to_string(),
                });
            }
            declared = Some(syms);
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.splitn(2, '\t');
        let word = fields.next().unwrap_or("").to_string();
        let pron_field = fields.next().ok_or_else(|| Error::LexiconParse {
            line: lineno,
            msg: format!("expected 'word<TAB>symbols', got '{raw}'"),
        })?;
        let prons: Vec<String> = pron_field.split_whitespace().map(str::to_string).collect();
        validate_entry(&word, &prons, declared.as_deref(), lineno)?;
        for s in &prons {
            if !observed.contains(s) {
                observed.push(s.clone());
            }
        }
        if entries.insert(word, prons).is_some() {
            duplicate_warnings += 1;
        }
    }

    let inventory = match declared {
        Some(inv) => inv,
        None => {
            observed.sort();
            observed
        }
    };
    Ok(LoadedLexicon {
        lexicon: Lexicon { entries, inventory },
        duplicate_warnings,
    })
}

/// Look every word up in the lexicon. `Ok(None)` means the utterance should
/// be dropped (skip-utterance policy hit an unknown word).
pub fn to_phoneme_words(
    words: &[String],
    lexicon: &Lexicon,
    policy: OovPolicy,
) -> Result<Option<PhonemeWords>> {
    let mut out = Vec::with_capacity(words.len());
    for word in words {
        match lexicon.lookup(word) {
            Some(prons) => out.push(prons.to_vec()),
            None => match policy {
                OovPolicy::Strict => return Err(Error::OovWord(word.clone())),
                OovPolicy::SkipUtterance => return Ok(None),
                OovPolicy::SpellLetters => {
                    let mut spelled = Vec::new();
                    for c in word.chars() {
                        let key = c.to_string();
                        let prons = lexicon.lookup(&key).ok_or(Error::OovCharacter(c))?;
                        spelled.extend(prons.iter().cloned());
                    }
                    out.push(spelled);
                }
            },
        }
    }
    Ok(Some(PhonemeWords(out)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(pairs: &[(&str, &[&str])]) -> Lexicon {
        Lexicon::from_entries(
            pairs
                .iter()
                .map(|(w, p)| (w.to_string(), p.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Hello, World!"), vec!["hello", "world"]);
        assert_eq!(normalize("it's  FINE."), vec!["it's", "fine"]);
        assert_eq!(normalize(""), Vec::<String>::new());
    }

    #[test]
    fn parse_simple_entry() {
        let loaded = parse_lexicon("cat\tk a t\n").unwrap();
        assert_eq!(loaded.lexicon.lookup("cat").unwrap(), ["k", "a", "t"]);
        assert_eq!(loaded.duplicate_warnings, 0);
        assert_eq!(loaded.lexicon.inventory(), ["a", "k", "t"]);
    }

    #[test]
    fn duplicate_word_last_wins_with_warning() {
        let loaded = parse_lexicon("cat\tk a t\ncat\tk a\n").unwrap();
        assert_eq!(loaded.lexicon.lookup("cat").unwrap(), ["k", "a"]);
        assert_eq!(loaded.duplicate_warnings, 1);
    }

    #[test]
    fn missing_tab_errors_with_line_number() {
        let err = parse_lexicon("cat\tk a t\ncat\n").unwrap_err();
        match err {
            Error::LexiconParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn symbol_outside_declared_inventory_errors() {
        let err = parse_lexicon("#inventory k a\ncat\tk a t\n").unwrap_err();
        assert!(matches!(err, Error::LexiconParse { line: 2, .. }));
    }

    #[test]
    fn strict_lookup_and_error() {
        let l = lex(&[("cat", &["k", "a", "t"])]);
        let got = to_phoneme_words(&["cat".into()], &l, OovPolicy::Strict)
            .unwrap()
            .unwrap();
        assert_eq!(got.0, vec![vec!["k", "a", "t"]]);
        let err = to_phoneme_words(&["dog".into()], &l, OovPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::OovWord(w) if w == "dog"));
    }

    #[test]
    fn skip_utterance_returns_none() {
        let l = lex(&[("cat", &["k", "a", "t"])]);
        let got = to_phoneme_words(&["dog".into()], &l, OovPolicy::SkipUtterance).unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn spell_letters_uses_single_char_entries() {
        let l = lex(&[("t", &["t"]), ("a", &["a"])]);
        let got = to_phoneme_words(&["ta".into()], &l, OovPolicy::SpellLetters)
            .unwrap()
            .unwrap();
        assert_eq!(got.0, vec![vec!["t", "a"]]);
        let err = to_phoneme_words(&["tx".into()], &l, OovPolicy::SpellLetters).unwrap_err();
        assert!(matches!(err, Error::OovCharacter('x')));
    }

    #[test]
    fn word_count_preserved_by_lookup() {
        let l = lex(&[("cat", &["k", "a", "t"]), ("a", &["a"]), ("t", &["t"])]);
        for words in [vec!["cat", "cat"], vec!["cat", "at", "cat"]] {
            let words: Vec<String> = words.into_iter().map(String::from).collect();
            let got = to_phoneme_words(&words, &l, OovPolicy::SpellLetters)
                .unwrap()
                .unwrap();
            assert_eq!(got.0.len(), words.len());
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            let again = normalize(&once.join(" "));
            prop_assert_eq!(once, again);
        }
    }
}
