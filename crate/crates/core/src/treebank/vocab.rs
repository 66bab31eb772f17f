use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::TreebankError;

pub const EOS: &str = "<eos>";

/// Unknown-word classes, tried in this order: digit, initial capital,
/// suffix (longest first), fallback.
pub const UNK_CLASSES: [&str; 7] = ["UNK-num", "UNK-cap", "UNK-ing", "UNK-ed", "UNK-ly", "UNK-s", "UNK"];

/// Orthographic class of a rare or unseen word.
pub fn unk_class(word: &str) -> &'static str {
    if word.chars().any(|c| c.is_ascii_digit()) {
        "UNK-num"
    } else if word.chars().next().map_or(false, char::is_uppercase) {
        "UNK-cap"
    } else if word.ends_with("ing") {
        "UNK-ing"
    } else if word.ends_with("ed") {
        "UNK-ed"
    } else if word.ends_with("ly") {
        "UNK-ly"
    } else if word.ends_with('s') {
        "UNK-s"
    } else {
        "UNK"
    }
}

/// Token vocabulary. Id 0 is EOS, ids 1..=7 are the unknown classes, then
/// known words by descending frequency (ties broken lexicographically).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile")]
pub struct Vocab {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, usize>,
    /// Training-corpus counts of every surface form.
    pub frequencies: BTreeMap<String, usize>,
    pub min_count: usize,
}

#[derive(Deserialize)]
struct VocabFile {
    id_to_token: Vec<String>,
    frequencies: BTreeMap<String, usize>,
    min_count: usize,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Vocab {
        let mut v = Vocab {
            id_to_token: f.id_to_token,
            token_to_id: HashMap::new(),
            frequencies: f.frequencies,
            min_count: f.min_count,
        };
        v.reindex();
        v
    }
}

impl Vocab {
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocab, TreebankError> {
        if min_count < 1 {
            return Err(TreebankError::Vocab("min_count must be at least 1".into()));
        }
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for sent in corpus {
            for w in sent {
                *freq.entry(w.as_ref().to_string()).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(TreebankError::Vocab("empty corpus".into()));
        }
        Ok(Self::from_frequencies(freq, min_count))
    }

    /// Vocabulary in which every listed word is known, in the given order.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Vocab {
        let mut v = Vocab {
            id_to_token: Self::reserved(),
            token_to_id: HashMap::new(),
            frequencies: BTreeMap::new(),
            min_count: 1,
        };
        for w in words {
            if !v.id_to_token.iter().any(|t| t == w.as_ref()) {
                v.id_to_token.push(w.as_ref().to_string());
            }
        }
        v.reindex();
        v
    }

    fn reserved() -> Vec<String> {
        std::iter::once(EOS).chain(UNK_CLASSES).map(String::from).collect()
    }

    fn from_frequencies(freq: BTreeMap<String, usize>, min_count: usize) -> Vocab {
        let mut known: Vec<(&String, &usize)> = freq.iter().filter(|(_, &c)| c >= min_count).collect();
        known.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let mut id_to_token = Self::reserved();
        for (w, _) in known {
            if !id_to_token.contains(w) {
                id_to_token.push(w.clone());
            }
        }
        let mut v = Vocab { id_to_token, token_to_id: HashMap::new(), frequencies: freq, min_count };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.token_to_id = self.id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn eos(&self) -> usize {
        0
    }

    pub fn id(&self, word: &str) -> usize {
        match self.token_to_id.get(word) {
            Some(&i) => i,
            None => self.token_to_id[unk_class(word)],
        }
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.token_to_id.get(word).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}
