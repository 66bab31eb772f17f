use super::grammars::{PL_DET, PL_NOUN, PL_VI, PREP, SG_DET, SG_NOUN, SG_VI};
use super::SynthError;
use crate::evaluator::{SgItem, SgSuite, SgVariant};
use crate::numkernel::{RngStream, StreamKind};

/// Agreement minimal pairs over the agreement grammar's words. Items come
/// in pairs sharing every lexical choice except subject number; attractor
/// nouns in the 0-2 prepositional phrases take the opposite number. The
/// critical region is the final verb.
pub fn agreement_suite(seed: u64, size: usize) -> Result<SgSuite, SynthError> {
    if size < 100 {
        return Err(SynthError::Config(format!("suite size {size} is below 100")));
    }
    let mut items = Vec::with_capacity(size);
    for pair in 0..size.div_ceil(2) {
        let mut rng = RngStream::derive(seed, StreamKind::Sample, &[pair as u64]);
        let distractors = pair % 3;
        let det = rng.below(4);
        let noun = rng.below(8);
        let verb = rng.below(4);
        let pps: Vec<(usize, usize, usize)> = (0..distractors).map(|_| (rng.below(4), rng.below(4), rng.below(8))).collect();
        for plural in [false, true] {
            if items.len() == size {
                break;
            }
            let (d, n) = if plural { (PL_DET, PL_NOUN) } else { (SG_DET, SG_NOUN) };
            let (ad, an) = if plural { (SG_DET, SG_NOUN) } else { (PL_DET, PL_NOUN) };
            let mut prefix = vec![d[det].to_string(), n[noun].to_string()];
            for &(p, dd, nn) in &pps {
                prefix.extend([PREP[p].to_string(), ad[dd].to_string(), an[nn].to_string()]);
            }
            let (good, bad) = if plural { (PL_VI[verb], SG_VI[verb]) } else { (SG_VI[verb], PL_VI[verb]) };
            let k = prefix.len();
            let variant = |v: &str| {
                let mut tokens = prefix.clone();
                tokens.push(v.to_string());
                SgVariant { tokens, region: [k, k + 1] }
            };
            items.push(SgItem {
                id: format!("agr-{:04}-{}", pair, if plural { "pl" } else { "sg" }),
                variants: vec![variant(good), variant(bad)],
                grammatical_index: 0,
                condition: Some(distractors.to_string()),
            });
        }
    }
    let suite = SgSuite { items };
    suite.validate().map_err(|e| SynthError::Config(e.to_string()))?;
    Ok(suite)
}
