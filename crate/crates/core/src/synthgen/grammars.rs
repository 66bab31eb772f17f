use super::{GrammarSpec, Pcfg, RuleSpec};

pub const BUNDLED: [&str; 2] = ["agreement", "center"];

pub(super) const SG_DET: [&str; 4] = ["a", "this", "that", "every"];
pub(super) const PL_DET: [&str; 4] = ["these", "those", "some", "many"];
pub(super) const SG_NOUN: [&str; 8] = ["dog", "cat", "author", "pilot", "farmer", "teacher", "doctor", "senator"];
pub(super) const PL_NOUN: [&str; 8] = ["dogs", "cats", "authors", "pilots", "farmers", "teachers", "doctors", "senators"];
pub(super) const ADJ: [&str; 4] = ["old", "young", "tall", "happy"];
pub(super) const PREP: [&str; 4] = ["near", "behind", "with", "beside"];
pub(super) const SG_VI: [&str; 4] = ["sleeps", "laughs", "waits", "smiles"];
pub(super) const PL_VI: [&str; 4] = ["sleep", "laugh", "wait", "smile"];
const SG_VT: [&str; 4] = ["sees", "likes", "helps", "calls"];
const PL_VT: [&str; 4] = ["see", "like", "help", "call"];
const ADV: [&str; 3] = ["today", "again", "quietly"];

struct Builder {
    rules: Vec<RuleSpec>,
}

impl Builder {
    fn rule(&mut self, lhs: &str, rhs: &[&str], prob: f64) -> &mut Self {
        self.rules.push(RuleSpec { lhs: lhs.into(), rhs: rhs.iter().map(|s| s.to_string()).collect(), prob });
        self
    }

    fn words(&mut self, lhs: &str, words: &[&str]) -> &mut Self {
        let p = 1.0 / words.len() as f64;
        for w in words {
            self.rule(lhs, &[w], p);
        }
        self
    }

    fn build(&mut self, start: &str) -> Pcfg {
        Pcfg::from_spec(&GrammarSpec { start: start.into(), rules: std::mem::take(&mut self.rules) })
            .expect("bundled grammar is valid")
    }
}

/// Subject-verb number agreement with up to two prepositional phrases
/// between subject head and verb (51 words).
pub fn agreement_grammar() -> Pcfg {
    let mut b = Builder { rules: Vec::new() };
    b.rule("S", &["NPs", "VPs"], 0.5).rule("S", &["NPp", "VPp"], 0.5);
    for (np, d, n) in [("NPs", "Ds", "Ns"), ("NPp", "Dp", "Np")] {
        b.rule(np, &[d, n], 0.55).rule(np, &[d, n, "PP"], 0.3).rule(np, &[d, "Adj", n], 0.15);
    }
    b.rule("PP", &["P", "Obj"], 0.7).rule("PP", &["P", "Obj", "PP2"], 0.3);
    b.rule("PP2", &["P", "Obj"], 1.0);
    b.rule("Obj", &["Ds", "Ns"], 0.5).rule("Obj", &["Dp", "Np"], 0.5);
    for (vp, vi, vt) in [("VPs", "Vis", "Vts"), ("VPp", "Vip", "Vtp")] {
        b.rule(vp, &[vi], 0.4).rule(vp, &[vt, "Obj"], 0.4).rule(vp, &[vi, "Adv"], 0.2);
    }
    b.words("Ds", &SG_DET)
        .words("Dp", &PL_DET)
        .words("Ns", &SG_NOUN)
        .words("Np", &PL_NOUN)
        .words("Adj", &ADJ)
        .words("P", &PREP)
        .words("Vis", &SG_VI)
        .words("Vip", &PL_VI)
        .words("Vts", &SG_VT)
        .words("Vtp", &PL_VT)
        .words("Adv", &ADV);
    b.build("S")
}

/// Object relative clauses nested up to two deep (30 words).
pub fn center_embedding_grammar() -> Pcfg {
    let mut b = Builder { rules: Vec::new() };
    b.rule("S", &["NP0", "VP"], 1.0);
    b.rule("NP0", &["D", "N"], 0.6).rule("NP0", &["D", "N", "RC1"], 0.4);
    b.rule("RC1", &["C", "NP1", "Vt"], 1.0);
    b.rule("NP1", &["D", "N"], 0.6).rule("NP1", &["D", "N", "RC2"], 0.4);
    b.rule("RC2", &["C", "NP2", "Vt"], 1.0);
    b.rule("NP2", &["D", "N"], 1.0);
    b.rule("VP", &["Vi"], 0.5).rule("VP", &["Vt", "NP2"], 0.5);
    b.words("D", &["the", "a", "every", "some"])
        .words("N", &["dog", "cat", "mouse", "boy", "girl", "man", "woman", "bird", "horse", "child"])
        .words("Vt", &["chased", "saw", "liked", "bit", "heard", "met", "helped", "found"])
        .words("Vi", &["ran", "slept", "left", "sang", "fell", "smiled"])
        .words("C", &["that", "who"]);
    b.build("S")
}

/// A bundled grammar by name.
pub fn bundled(name: &str) -> Option<Pcfg> {
    match name {
        "agreement" => Some(agreement_grammar()),
        "center" => Some(center_embedding_grammar()),
        _ => None,
    }
}
