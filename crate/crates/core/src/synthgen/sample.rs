use super::{Pcfg, Sym, SynthError};
use crate::numkernel::{RngStream, StreamKind};
use crate::treebank::{Corpus, Sentence, Split, Tree, Vocab};

/// Samples one derivation and returns its words and tree, or `None` once
/// the yield exceeds `max_len`. Unary chains collapse to their lowest node.
pub fn sample_derivation(g: &Pcfg, max_len: usize, rng: &mut RngStream) -> Option<(Vec<usize>, Tree)> {
    let mut words = Vec::new();
    let tree = expand(g, g.start, max_len, rng, &mut words)?;
    Some((words, tree))
}

fn expand(g: &Pcfg, a: usize, max_len: usize, rng: &mut RngStream, words: &mut Vec<usize>) -> Option<Tree> {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut chosen = None;
    for r in g.rules_for(a) {
        acc += r.prob;
        chosen = Some(r);
        if u < acc {
            break;
        }
    }
    let rule = chosen.expect("every nonterminal has a rule");
    let mut children = Vec::with_capacity(rule.rhs.len());
    for s in &rule.rhs {
        match *s {
            Sym::T(w) => {
                if words.len() == max_len {
                    return None;
                }
                children.push(Tree::Leaf(words.len()));
                words.push(w);
            }
            Sym::N(b) => children.push(expand(g, b, max_len, rng, words)?),
        }
    }
    if children.len() == 1 {
        children.pop()
    } else {
        Some(Tree::Node(children))
    }
}

/// Draws `n` sentences of at most `max_len` words by rejection and splits
/// them 80/10/10 in draw order. Token ids come from a vocabulary over the
/// grammar's terminals.
pub fn sample_corpus(g: &Pcfg, n: usize, max_len: usize, seed: u64) -> Result<Corpus, SynthError> {
    if n == 0 || max_len == 0 {
        return Err(SynthError::Config("need n >= 1 and max_len >= 1".into()));
    }
    let vocab = Vocab::from_words(&g.terminals);
    let ids: Vec<usize> = g.terminals.iter().map(|t| vocab.id(t)).collect();
    let mut rng = RngStream::derive(seed, StreamKind::Sample, &[]);
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let mut sentences = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while sentences.len() < n {
        attempts += 1;
        if attempts >= 1000 && sentences.len() * 100 < attempts {
            return Err(SynthError::LowAcceptance { accepted: sentences.len(), attempts });
        }
        let Some((words, tree)) = sample_derivation(g, max_len, &mut rng) else { continue };
        let k = sentences.len();
        let split = if k < n_train {
            Split::Train
        } else if k < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        sentences.push(Sentence {
            tokens: words.iter().map(|&w| ids[w]).collect(),
            surface: words.iter().map(|&w| g.terminals[w].clone()).collect(),
            tree: Some(tree),
            split,
        });
    }
    Ok(Corpus { vocab, sentences })
}
