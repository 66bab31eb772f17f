use super::{Tree, TreebankError};

/// A dependency analysis with 1-based heads (`0` marks the root).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTree {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    /// Remaining CoNLL-U columns (LEMMA..MISC without HEAD/DEPREL), kept verbatim.
    pub extra: Vec<Vec<String>>,
    pub projective: bool,
}

/// A sentence that failed validation; `line` is the 1-based line of the
/// sentence's first token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConlluDocument {
    pub sentences: Vec<DependencyTree>,
    pub rejected: Vec<Rejected>,
}

impl DependencyTree {
    /// Validates heads: in range, exactly one root, acyclic. Records
    /// projectivity.
    pub fn new(tokens: Vec<String>, heads: Vec<usize>, labels: Vec<String>) -> Result<Self, String> {
        let n = tokens.len();
        if heads.len() != n || labels.len() != n {
            return Err("column length mismatch".into());
        }
        if n == 0 {
            return Err("empty sentence".into());
        }
        if let Some((i, h)) = heads.iter().enumerate().find(|(i, &h)| h > n || h == i + 1) {
            return Err(format!("token {} has invalid head {h}", i + 1));
        }
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for start in 1..=n {
            let mut cur = start;
            for _ in 0..=n {
                cur = heads[cur - 1];
                if cur == 0 {
                    break;
                }
            }
            if cur != 0 {
                return Err(format!("cycle through token {start}"));
            }
        }
        let mut t = DependencyTree { tokens, heads, labels, extra: Vec::new(), projective: true };
        t.projective = t.check_projective();
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).expect("validated") + 1
    }

    /// Dependents of 1-based `head`, in surface order.
    pub fn dependents(&self, head: usize) -> Vec<usize> {
        (1..=self.len()).filter(|&d| self.heads[d - 1] == head).collect()
    }

    /// Projective iff every token's yield is a contiguous interval.
    fn check_projective(&self) -> bool {
        (1..=self.len()).all(|h| {
            let y = self.yield_of(h);
            y.last().unwrap() - y[0] + 1 == y.len()
        })
    }

    /// Sorted 1-based positions dominated by `h` (including itself).
    pub fn yield_of(&self, h: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (1..=self.len())
            .filter(|&d| {
                let mut cur = d;
                loop {
                    if cur == h {
                        return true;
                    }
                    if cur == 0 {
                        return false;
                    }
                    cur = self.heads[cur - 1];
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Reads CoNLL-U. Multiword ranges (`3-4`) and empty nodes (`5.1`) are
/// skipped. Sentences with bad heads are collected in `rejected`; lines that
/// are not 10 tab-separated columns abort the whole read.
pub fn parse_conllu(text: &str) -> Result<ConlluDocument, TreebankError> {
    let mut doc = ConlluDocument::default();
    let mut block: Vec<(usize, Vec<&str>)> = Vec::new();

    let flush = |block: &mut Vec<(usize, Vec<&str>)>, doc: &mut ConlluDocument| {
        if block.is_empty() {
            return;
        }
        let first_line = block[0].0;
        match sentence_from_rows(block) {
            Ok(t) => doc.sentences.push(t),
            Err((line, reason)) => doc.rejected.push(Rejected { line: line.unwrap_or(first_line), reason }),
        }
        block.clear();
    };

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut block, &mut doc);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(TreebankError::Format {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        block.push((line_no, cols));
    }
    flush(&mut block, &mut doc);
    Ok(doc)
}

fn sentence_from_rows(rows: &[(usize, Vec<&str>)]) -> Result<DependencyTree, (Option<usize>, String)> {
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut labels = Vec::new();
    let mut extra = Vec::new();
    for (k, (line, cols)) in rows.iter().enumerate() {
        let id: usize = cols[0].parse().map_err(|_| (Some(*line), format!("bad token id {:?}", cols[0])))?;
        if id != k + 1 {
            return Err((Some(*line), format!("token id {id} out of sequence")));
        }
        let head: usize = cols[6].parse().map_err(|_| (Some(*line), format!("malformed head {:?}", cols[6])))?;
        if head > rows.len() {
            return Err((Some(*line), format!("head {head} beyond sentence length {}", rows.len())));
        }
        tokens.push(cols[1].to_string());
        heads.push(head);
        labels.push(cols[7].to_string());
        extra.push(
            cols.iter()
                .enumerate()
                .filter(|(c, _)| ![0, 1, 6, 7].contains(c))
                .map(|(_, s)| s.to_string())
                .collect(),
        );
    }
    let mut t = DependencyTree::new(tokens, heads, labels).map_err(|e| (None, e))?;
    t.extra = extra;
    Ok(t)
}

/// Merges each head with its dependents into one constituent; the head's own
/// leaf sits at its surface position. Heads without dependents become leaves.
pub fn dep_to_constituency(d: &DependencyTree) -> Result<Tree, TreebankError> {
    if !d.projective {
        return Err(TreebankError::NonProjective);
    }
    let n = d.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for dep in 1..=n {
        children[d.heads[dep - 1]].push(dep);
    }
    fn build(h: usize, children: &[Vec<usize>]) -> Tree {
        if children[h].is_empty() {
            return Tree::Leaf(h - 1);
        }
        let mut parts: Vec<Tree> = children[h].iter().map(|&c| build(c, children)).collect();
        parts.push(Tree::Leaf(h - 1));
        parts.sort_by_key(|t| t.span().0);
        Tree::Node(parts)
    }
    let t = build(d.root(), &children);
    t.validate()?;
    Ok(t)
}
