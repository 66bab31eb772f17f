use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde_json::{json, Value};
use som::evaluator::{
    evaluate_corpus, evaluate_sentence, parse_greedy, sg_score, summarize, unlabeled_f1, write_sentence_csv, SgSuite,
    TreeSource,
};
use som::oracle::{dynamic_labels, left_branching_labels, static_labels, LabelDump, OracleMode};
use som::parallel::map_ordered;
use som::som::{load_checkpoint, SomModel};
use som::synthgen::{agreement_suite, bundled, sample_corpus, true_perplexity, GrammarSpec, Pcfg};
use som::trainer::{fit, FitOutput};
use som::treebank::{
    dep_to_constituency, parse_conllu, parse_ptb_brackets, read_jsonl, read_vocab, tree_stats, Corpus, Sentence, Split,
    Tree, Vocab,
};

use crate::config::{resolve, SeedSource};
use crate::error::CliError;
use crate::manifest::Recorder;
use crate::{
    DataArgs, EvalParseArgs, EvalPplArgs, EvalSgArgs, LabelsArgs, LabelsFormat, ParseArgs, PreprocessArgs, SynthArgs,
    TrainArgs, TreeFormat,
};

const SPLITS: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

fn env_seed() -> Option<String> {
    std::env::var("SOM_SEED").ok()
}

fn write_json(path: &Path, value: &impl serde::Serialize, rec: &mut Recorder) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    rec.output(path);
    Ok(())
}

/// A closed pipe on standard output (`som ... | head`) is not an error.
fn quiet_pipe(r: std::io::Result<()>) -> Result<(), CliError> {
    match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    quiet_pipe(writeln!(std::io::stdout().lock(), "{text}"))
}

fn check_slots(n: usize) -> Result<(), CliError> {
    if n < 2 {
        return Err(CliError::usage(format!("--slots must be at least 2, got {n}")));
    }
    Ok(())
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    SPLITS.into_iter().find(|s| s.name() == name).ok_or_else(|| CliError::usage(format!("unknown split {name:?}")))
}

/// Model plus the vocabulary stored beside it, if any.
fn load_model(dir: &Path, rec: &mut Recorder) -> Result<(SomModel, Option<Vocab>), CliError> {
    rec.input(dir)?;
    let ckpt = load_checkpoint(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let vocab_path = dir.join("vocab.json");
    let vocab = if vocab_path.is_file() { Some(read_vocab(&vocab_path)?) } else { None };
    if let Some(v) = &vocab {
        if v.len() != ckpt.model.config.vocab_size {
            return Err(CliError::data(format!(
                "{}: vocabulary has {} entries but the model expects {}",
                dir.display(),
                v.len(),
                ckpt.model.config.vocab_size
            )));
        }
    }
    Ok((ckpt.model, vocab))
}

fn require_vocab(vocab: Option<Vocab>, ckpt: &Path) -> Result<Vocab, CliError> {
    vocab.ok_or_else(|| CliError::data(format!("{}: no vocab.json beside the checkpoint", ckpt.display())))
}

/// Reads evaluation sentences. With a vocabulary, token ids are recomputed
/// from the surface words so data and model always agree.
fn load_sentences(args: &DataArgs, vocab: Option<&Vocab>, rec: &mut Recorder) -> Result<Vec<Sentence>, CliError> {
    let mut sents = if args.data.is_dir() {
        let split = parse_split(&args.split)?;
        let path = args.data.join(format!("{}.jsonl", split.name()));
        rec.input(&path)?;
        read_jsonl(&path)?
    } else {
        rec.input(&args.data)?;
        read_jsonl(&args.data)?
    };
    if let Some(v) = vocab {
        for s in &mut sents {
            s.tokens = v.encode(&s.surface);
        }
    }
    Ok(sents)
}

fn read_input(path: &Path, rec: &mut Recorder) -> Result<String, CliError> {
    rec.input(path)?;
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn preprocess(a: PreprocessArgs, rec: &mut Recorder) -> Result<(), CliError> {
    check_slots(a.slots)?;
    rec.out_dir = Some(a.out.clone());
    rec.config = json!({
        "format": format!("{:?}", a.format).to_lowercase(),
        "min_count": a.min_count,
        "slots": a.slots,
    });
    let mut parsed: Vec<(Split, Vec<(Vec<String>, Tree)>)> = Vec::new();
    let mut rejected: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
    for (split, path) in [(Split::Train, &a.train), (Split::Valid, &a.valid), (Split::Test, &a.test)] {
        let text = read_input(path, rec)?;
        let mut items = Vec::new();
        let rej = rejected.entry(split.name()).or_default();
        match a.format {
            TreeFormat::Conllu => {
                let doc = parse_conllu(&text)?;
                for r in doc.rejected {
                    rej.push(json!({"line": r.line, "reason": r.reason}));
                }
                for (i, d) in doc.sentences.into_iter().enumerate() {
                    match dep_to_constituency(&d) {
                        Ok(t) => items.push((d.tokens, t)),
                        Err(e) => rej.push(json!({"sentence": i, "reason": e.to_string()})),
                    }
                }
            }
            TreeFormat::Ptb => {
                for b in parse_ptb_brackets(&text)? {
                    items.push((b.words, b.tree));
                }
            }
        }
        if items.is_empty() {
            return Err(CliError::data(format!("{}: no usable sentences", path.display())));
        }
        parsed.push((split, items));
    }
    let train_words: Vec<Vec<String>> = parsed[0].1.iter().map(|(w, _)| w.clone()).collect();
    let vocab = Vocab::build(&train_words, a.min_count)?;
    let mut sentences = Vec::new();
    for (split, items) in &parsed {
        for (words, tree) in items {
            sentences.push(Sentence { tokens: vocab.encode(words), surface: words.clone(), tree: Some(tree.clone()), split: *split });
        }
    }
    let corpus = Corpus { vocab, sentences };
    corpus.write_dir(&a.out)?;
    for f in ["vocab.json", "train.jsonl", "valid.jsonl", "test.jsonl"] {
        rec.output(&a.out.join(f));
    }
    let mut splits = serde_json::Map::new();
    for (split, items) in &parsed {
        let path = a.out.join(format!("{}.labels.jsonl", split.name()));
        let mut w = BufWriter::new(File::create(&path)?);
        let mut skipped = 0;
        for (i, (_, tree)) in items.iter().enumerate() {
            match static_labels(tree, a.slots) {
                Ok(trace) => {
                    let dump = LabelDump { sentence_id: i, xi: trace.all().to_vec(), mode: OracleMode::Static };
                    writeln!(w, "{}", serde_json::to_string(&dump)?)?;
                }
                Err(e) => {
                    log::warn!("{} sentence {i}: {e}", split.name());
                    skipped += 1;
                }
            }
        }
        w.flush()?;
        rec.output(&path);
        let stats = tree_stats(items.iter().map(|(_, t)| t))?;
        splits.insert(
            split.name().into(),
            json!({
                "sentences": items.len(),
                "tokens": items.iter().map(|(w, _)| w.len()).sum::<usize>(),
                "rejected": rejected[split.name()],
                "labels_skipped": skipped,
                "depth": stats,
            }),
        );
    }
    let summary = json!({"vocab_size": corpus.vocab.len(), "slots": a.slots, "splits": splits});
    write_json(&a.out.join("summary.json"), &summary, rec)?;
    print_json(&summary)
}

fn load_grammar(name: &str, rec: &mut Recorder) -> Result<Pcfg, CliError> {
    if let Some(g) = bundled(name) {
        return Ok(g);
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(CliError::usage(format!("--grammar {name:?} is neither a bundled grammar (agreement, center) nor a file")));
    }
    let spec: GrammarSpec = serde_json::from_str(&read_input(path, rec)?)?;
    Ok(Pcfg::from_spec(&spec)?)
}

pub fn synth(a: SynthArgs, rec: &mut Recorder) -> Result<(), CliError> {
    let seed = match (a.seed, env_seed()) {
        (Some(s), _) => s,
        (None, Some(raw)) => raw.trim().parse().map_err(|_| CliError::usage(format!("SOM_SEED={raw:?} is not an unsigned integer")))?,
        (None, None) => 0,
    };
    rec.seed = Some(seed);
    rec.out_dir = Some(a.out.clone());
    rec.config = json!({"grammar": a.grammar, "n": a.n, "max_len": a.max_len, "seed": seed, "suite_size": a.suite_size});
    let g = load_grammar(&a.grammar, rec)?;
    let corpus = sample_corpus(&g, a.n, a.max_len, seed)?;
    corpus.write_dir(&a.out)?;
    for f in ["vocab.json", "train.jsonl", "valid.jsonl", "test.jsonl"] {
        rec.output(&a.out.join(f));
    }
    write_json(&a.out.join("grammar.json"), &g.to_spec(), rec)?;
    let test: Vec<Vec<String>> = corpus.split(Split::Test).iter().map(|s| s.surface.clone()).collect();
    let truth = true_perplexity(&g, &test, Some(a.max_len));
    let report = json!({
        "split": "test",
        "true_ppl": truth,
        "expected_length": g.expected_length(),
        "vocab_size": corpus.vocab.len(),
    });
    write_json(&a.out.join("true_ppl.json"), &report, rec)?;
    if a.suite_size > 0 {
        if a.grammar == "agreement" {
            let suite = agreement_suite(seed, a.suite_size)?;
            let path = a.out.join("suite.json");
            suite.write(&path)?;
            rec.output(&path);
        } else {
            log::info!("no agreement suite for grammar {}", a.grammar);
        }
    }
    print_json(&report)
}

pub fn train(a: TrainArgs, rec: &mut Recorder) -> Result<(), CliError> {
    let env = env_seed();
    let resolved = resolve(a.config.as_deref(), &a.sets, env.as_deref())?;
    if let Some(p) = &a.config {
        rec.input(p)?;
    }
    let mut cfg = resolved.config;
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    if let Some(w) = a.workers {
        cfg.train.workers = w;
    }
    let data = cfg.data.clone().ok_or_else(|| CliError::usage("no corpus: pass --data or set `data` in the config"))?;
    let out = cfg.out.clone().ok_or_else(|| CliError::usage("no output directory: pass --out or set `out` in the config"))?;
    rec.input(&data)?;
    let corpus = Corpus::read_dir(&data)?;
    cfg.model.vocab_size = corpus.vocab.len();
    cfg.train.validate()?;
    rec.seed = Some(cfg.train.seed);
    rec.config = json!({
        "resolved": cfg,
        "workers": cfg.train.workers,
        "config_file": a.config,
        "overrides": a.sets,
        "seed_source": resolved.seed_source,
    });
    if resolved.seed_source == SeedSource::Default {
        log::info!("no seed given; using {}", cfg.train.seed);
    }
    rec.out_dir = Some(out.clone());
    let model = SomModel::new(cfg.model.clone(), cfg.train.seed)?;
    let train = corpus.split_owned(Split::Train);
    let valid = corpus.split_owned(Split::Valid);
    let output = FitOutput { dir: out.clone(), metadata: BTreeMap::new() };
    let report = fit(model, &train, &valid, &cfg.train, Some(&output))?;
    let vocab_dst = output.best_dir().join("vocab.json");
    fs::copy(data.join("vocab.json"), &vocab_dst)?;
    rec.output(&output.metrics_path());
    rec.output(&output.best_dir());
    let summary = json!({
        "best_epoch": report.best_epoch,
        "best_valid_ppl": report.best_valid_ppl,
        "epochs_run": report.metrics.len(),
        "stopped_early": report.stopped_early,
        "checkpoint": output.best_dir(),
    });
    print_json(&summary)
}

pub fn eval_ppl(a: EvalPplArgs, rec: &mut Recorder) -> Result<(), CliError> {
    let source = TreeSource::from(a.trees);
    rec.config = json!({"trees": source, "split": a.data.split, "workers": a.data.workers});
    let (model, vocab) = load_model(&a.data.ckpt, rec)?;
    let sents = load_sentences(&a.data, vocab.as_ref(), rec)?;
    let evals = evaluate_corpus(&model, &sents, source, a.data.workers)?;
    let report = summarize(&evals, source);
    if report.n_tokens == 0 {
        return Err(CliError::data("no sentences to evaluate"));
    }
    if !report.ppl.is_finite() {
        return Err(CliError::Numeric(format!("perplexity is {} (total nll {})", report.ppl, report.nll)));
    }
    if let Some(p) = &a.out {
        write_json(p, &report, rec)?;
    }
    if let Some(p) = &a.csv {
        write_sentence_csv(&evals, File::create(p)?)?;
        rec.output(p);
    }
    print_json(&report)
}

pub fn eval_parse(a: EvalParseArgs, rec: &mut Recorder) -> Result<(), CliError> {
    rec.config = json!({"split": a.data.split, "workers": a.data.workers});
    let (model, vocab) = load_model(&a.data.ckpt, rec)?;
    let sents = load_sentences(&a.data, vocab.as_ref(), rec)?;
    let mut gold = Vec::with_capacity(sents.len());
    for (i, s) in sents.iter().enumerate() {
        gold.push(s.tree.clone().ok_or_else(|| CliError::data(format!("sentence {i}: no gold tree")))?);
    }
    let predicted: Vec<Tree> = map_ordered(&sents, a.data.workers, |_, s| parse_greedy(&model, &s.tokens))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|b| b.into_tree())
        .collect();
    let report = unlabeled_f1(&predicted, &gold)?;
    if let Some(p) = &a.out {
        write_json(p, &report, rec)?;
    }
    if let Some(p) = &a.trees_out {
        let mut w = BufWriter::new(File::create(p)?);
        for (s, t) in sents.iter().zip(&predicted) {
            writeln!(w, "{}", t.to_brackets(&s.surface))?;
        }
        w.flush()?;
        rec.output(p);
    }
    print_json(&report)
}

pub fn eval_sg(a: EvalSgArgs, rec: &mut Recorder) -> Result<(), CliError> {
    rec.config = json!({"workers": a.workers});
    let (model, vocab) = load_model(&a.ckpt, rec)?;
    let vocab = require_vocab(vocab, &a.ckpt)?;
    rec.input(&a.suite)?;
    let suite = SgSuite::read(&a.suite)?;
    let report = sg_score(&model, &vocab, &suite, a.workers)?;
    if let Some(p) = &a.out {
        write_json(p, &report, rec)?;
    }
    if let Some(p) = &a.csv {
        report.write_csv(File::create(p)?)?;
        rec.output(p);
    }
    let brief = json!({
        "accuracy": report.accuracy,
        "n_items": report.n_items,
        "n_passed": report.n_passed,
        "by_condition": report.by_condition,
    });
    print_json(&brief)
}

pub fn parse(a: ParseArgs, rec: &mut Recorder) -> Result<(), CliError> {
    rec.config = json!({"workers": a.workers});
    let (model, vocab) = load_model(&a.ckpt, rec)?;
    let vocab = require_vocab(vocab, &a.ckpt)?;
    let mut text = String::new();
    match &a.input {
        Some(p) => text = read_input(p, rec)?,
        None => {
            std::io::stdin().lock().read_to_string(&mut text)?;
        }
    }
    let lines: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|w| !w.is_empty())
        .collect();
    let trees = map_ordered(&lines, a.workers, |_, words| parse_greedy(&model, &vocab.encode(words)));
    let mut text = String::new();
    for (words, tree) in lines.iter().zip(trees) {
        text += &tree?.as_tree().to_brackets(words);
        text.push('\n');
    }
    quiet_pipe(std::io::stdout().lock().write_all(text.as_bytes()))
}

fn read_trees(path: &Path, format: Option<LabelsFormat>, rec: &mut Recorder) -> Result<Vec<(Vec<String>, Tree)>, CliError> {
    let format = format.unwrap_or(if path.extension().is_some_and(|e| e == "jsonl") { LabelsFormat::Jsonl } else { LabelsFormat::Ptb });
    match format {
        LabelsFormat::Ptb => Ok(parse_ptb_brackets(&read_input(path, rec)?)?.into_iter().map(|b| (b.words, b.tree)).collect()),
        LabelsFormat::Jsonl => {
            rec.input(path)?;
            read_jsonl(path)?
                .into_iter()
                .enumerate()
                .map(|(i, s)| match s.tree {
                    Some(t) => Ok((s.surface, t)),
                    None => Err(CliError::data(format!("{} sentence {i}: no tree", path.display()))),
                })
                .collect()
        }
    }
}

pub fn labels(a: LabelsArgs, rec: &mut Recorder) -> Result<(), CliError> {
    let mode = OracleMode::from(a.mode);
    let model = match &a.ckpt {
        Some(dir) => Some(load_model(dir, rec)?),
        None if mode == OracleMode::Dynamic => {
            return Err(CliError::usage("--mode dynamic needs --ckpt to supply the parser's decisions"));
        }
        None => None,
    };
    let slots = match (a.slots, &model) {
        (Some(n), Some((m, _))) if n != m.config.n_slots => {
            return Err(CliError::usage(format!("--slots {n} disagrees with the checkpoint's {}", m.config.n_slots)));
        }
        (Some(n), _) => n,
        (None, Some((m, _))) => m.config.n_slots,
        (None, None) => 12,
    };
    check_slots(slots)?;
    rec.config = json!({"mode": mode, "slots": slots});
    let trees = read_trees(&a.trees, a.format, rec)?;
    let mut lines = Vec::with_capacity(trees.len());
    for (i, (words, tree)) in trees.iter().enumerate() {
        let trace = match mode {
            OracleMode::Static => static_labels(tree, slots),
            OracleMode::LeftBranch => left_branching_labels(words.len(), slots),
            OracleMode::Dynamic => {
                let (m, vocab) = model.as_ref().expect("checked above");
                let vocab = vocab.as_ref().ok_or_else(|| CliError::data("checkpoint has no vocab.json"))?;
                let s = Sentence { tokens: vocab.encode(words), surface: words.clone(), tree: Some(tree.clone()), split: Split::Test };
                let e = evaluate_sentence(m, i, &s, TreeSource::Predicted)?;
                dynamic_labels(tree, &e.decisions, slots)
            }
        };
        match trace {
            Ok(t) => lines.push(serde_json::to_string(&LabelDump { sentence_id: i, xi: t.all().to_vec(), mode })?),
            Err(e) => log::warn!("sentence {i}: {e}; skipped"),
        }
    }
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    match &a.out {
        Some(p) => {
            fs::write(p, text)?;
            rec.output(p);
            Ok(())
        }
        None => quiet_pipe(std::io::stdout().lock().write_all(text.as_bytes())),
    }
}
