use super::{Tree, TreebankError};

/// One bracketed sentence: surface words plus unlabeled structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketedTree {
    pub words: Vec<String>,
    pub tree: Tree,
}

#[derive(Debug)]
enum Raw {
    Word(String),
    Node(Option<String>, Vec<Raw>),
}

#[derive(Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

fn tokenize(text: &str) -> Vec<(usize, Tok)> {
    let mut out = Vec::new();
    let mut atom = String::new();
    let mut atom_start = 0;
    let mut pos = 0;
    for c in text.chars() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if !atom.is_empty() {
                out.push((atom_start, Tok::Atom(std::mem::take(&mut atom))));
            }
            match c {
                '(' => out.push((pos, Tok::Open)),
                ')' => out.push((pos, Tok::Close)),
                _ => {}
            }
        } else {
            if atom.is_empty() {
                atom_start = pos;
            }
            atom.push(c);
        }
        pos += 1;
    }
    if !atom.is_empty() {
        out.push((atom_start, Tok::Atom(atom)));
    }
    out
}

fn unescape(w: &str) -> String {
    match w {
        "-LRB-" => "(".into(),
        "-RRB-" => ")".into(),
        _ => w.to_string(),
    }
}

/// Parses one or more bracketed trees. Labels are dropped, `-NONE-` empty
/// elements removed, and unary chains collapsed to their lowest node.
/// `-LRB-`/`-RRB-` leaves are unescaped to parentheses.
pub fn parse_ptb_brackets(text: &str) -> Result<Vec<BracketedTree>, TreebankError> {
    let toks = tokenize(text);
    let end = text.chars().count();
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < toks.len() {
        match &toks[pos].1 {
            Tok::Open => {
                let raw = parse_node(&toks, &mut pos, end)?;
                if let Some(raw) = prune_empty(raw) {
                    let mut words = Vec::new();
                    let tree = to_tree(&raw, &mut words);
                    out.push(BracketedTree { words, tree });
                }
            }
            Tok::Close => {
                return Err(TreebankError::Brackets { offset: toks[pos].0, message: "unmatched ')'".into() })
            }
            Tok::Atom(a) => {
                return Err(TreebankError::Brackets {
                    offset: toks[pos].0,
                    message: format!("word {a:?} outside brackets"),
                })
            }
        }
    }
    Ok(out)
}

fn parse_node(toks: &[(usize, Tok)], pos: &mut usize, end: usize) -> Result<Raw, TreebankError> {
    debug_assert_eq!(toks[*pos].1, Tok::Open);
    *pos += 1;
    let mut label = None;
    if let Some((_, Tok::Atom(a))) = toks.get(*pos) {
        label = Some(a.clone());
        *pos += 1;
    }
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            None => return Err(TreebankError::Brackets { offset: end, message: "unexpected end of input".into() }),
            Some((_, Tok::Close)) => {
                *pos += 1;
                break;
            }
            Some((_, Tok::Open)) => children.push(parse_node(toks, pos, end)?),
            Some((_, Tok::Atom(a))) => {
                children.push(Raw::Word(unescape(a)));
                *pos += 1;
            }
        }
    }
    if children.is_empty() {
        // `(word)`: a bare leaf in brackets.
        return match label {
            Some(l) => Ok(Raw::Word(unescape(&l))),
            None => Ok(Raw::Node(None, children)),
        };
    }
    Ok(Raw::Node(label, children))
}

fn prune_empty(raw: Raw) -> Option<Raw> {
    match raw {
        Raw::Word(w) => Some(Raw::Word(w)),
        Raw::Node(label, ch) => {
            if label.as_deref() == Some("-NONE-") {
                return None;
            }
            let ch: Vec<Raw> = ch.into_iter().filter_map(prune_empty).collect();
            if ch.is_empty() {
                None
            } else {
                Some(Raw::Node(label, ch))
            }
        }
    }
}

fn to_tree(raw: &Raw, words: &mut Vec<String>) -> Tree {
    match raw {
        Raw::Word(w) => {
            words.push(w.clone());
            Tree::Leaf(words.len() - 1)
        }
        Raw::Node(_, ch) if ch.len() == 1 => to_tree(&ch[0], words),
        Raw::Node(_, ch) => Tree::Node(ch.iter().map(|c| to_tree(c, words)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_leaves() {
        let t = parse_ptb_brackets("(S (NP a) (VP b))").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].words, vec!["a", "b"]);
        assert_eq!(t[0].tree, Tree::Node(vec![Tree::Leaf(0), Tree::Leaf(1)]));
    }

    #[test]
    fn unary_collapse() {
        let t = parse_ptb_brackets("(S (NP (NN a)))").unwrap();
        assert_eq!(t[0].tree, Tree::Leaf(0));
    }

    #[test]
    fn unbalanced_reports_end_offset() {
        let text = "(S (NP a (b)";
        match parse_ptb_brackets(text) {
            Err(TreebankError::Brackets { offset, .. }) => assert_eq!(offset, text.chars().count()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_ptb_brackets("(S a))"), Err(TreebankError::Brackets { offset: 5, .. })));
    }

    #[test]
    fn multiple_trees_and_empty_elements() {
        let text = "( (S (NP (-NONE- *T*)) (NP x) (VP y z)) )\n(S p q)";
        let t = parse_ptb_brackets(text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].words, vec!["x", "y", "z"]);
        assert_eq!(
            t[0].tree,
            Tree::Node(vec![Tree::Leaf(0), Tree::Node(vec![Tree::Leaf(1), Tree::Leaf(2)])])
        );
    }

    #[test]
    fn brackets_round_trip() {
        let words: Vec<String> = ["the", "(", "dog", "barked"].iter().map(|s| s.to_string()).collect();
        let tree = Tree::Node(vec![
            Tree::Node(vec![Tree::Leaf(0), Tree::Leaf(1), Tree::Leaf(2)]),
            Tree::Leaf(3),
        ]);
        let text = tree.to_brackets(&words);
        let back = parse_ptb_brackets(&text).unwrap();
        assert_eq!(back[0].tree, tree);
        assert_eq!(back[0].words, words);
    }
}
