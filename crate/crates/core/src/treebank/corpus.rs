use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tree, TreebankError, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// One line of the corpus JSON-lines format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    pub surface: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<Tree>,
    pub split: Split,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&Sentence> {
        self.sentences.iter().filter(|s| s.split == split).collect()
    }

    pub fn split_owned(&self, split: Split) -> Vec<Sentence> {
        self.sentences.iter().filter(|s| s.split == split).cloned().collect()
    }

    /// Writes `vocab.json` plus `<split>.jsonl` files into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), TreebankError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("vocab.json"), serde_json::to_string_pretty(&self.vocab)?)?;
        for split in [Split::Train, Split::Valid, Split::Test] {
            let sents = self.split(split);
            write_jsonl(&dir.join(format!("{}.jsonl", split.name())), sents)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Corpus, TreebankError> {
        let vocab = read_vocab(&dir.join("vocab.json"))?;
        let mut sentences = Vec::new();
        for split in [Split::Train, Split::Valid, Split::Test] {
            let p = dir.join(format!("{}.jsonl", split.name()));
            if p.exists() {
                sentences.extend(read_jsonl(&p)?);
            }
        }
        Ok(Corpus { vocab, sentences })
    }
}

pub fn read_vocab(path: &Path) -> Result<Vocab, TreebankError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_jsonl<'a, I: IntoIterator<Item = &'a Sentence>>(path: &Path, sents: I) -> Result<(), TreebankError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in sents {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sentence>, TreebankError> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sentence = serde_json::from_str(&line)
            .map_err(|e| TreebankError::Format { line: k + 1, message: e.to_string() })?;
        if let Some(t) = &s.tree {
            t.validate()?;
            if t.num_leaves() != s.len() {
                return Err(TreebankError::Format {
                    line: k + 1,
                    message: format!("tree has {} leaves for {} tokens", t.num_leaves(), s.len()),
                });
            }
        }
        out.push(s);
    }
    Ok(out)
}
