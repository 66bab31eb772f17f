//! Training configuration: defaults, then the JSON file, then `--set`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use som::som::SomConfig;
use som::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: SomConfig,
    pub train: TrainConfig,
}

/// Where the effective training seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Flag,
    File,
    Env,
    Default,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub seed_source: SeedSource,
}

fn defaults() -> Value {
    let mut m = Map::new();
    m.insert("model".into(), serde_json::to_value(SomConfig::default()).expect("serializable"));
    m.insert("train".into(), serde_json::to_value(TrainConfig::default()).expect("serializable"));
    Value::Object(m)
}

/// Recursively overlays `top` onto `base`; objects merge, anything else
/// replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`. The value is read as JSON when possible and as a
/// bare string otherwise.
pub fn parse_set(spec: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::usage(format!("--set {spec:?}: expected key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("--set {spec:?}: empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("--set {}: {} is not an object", path.join("."), path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        cur = obj.entry(key.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn has_seed(v: &Value) -> bool {
    v.get("train").and_then(|t| t.get("seed")).is_some()
}

/// Merges defaults, the optional file, and overrides. `env_seed` is the
/// value of `SOM_SEED`, used only when neither the file nor a flag sets
/// `train.seed`.
pub fn resolve(file: Option<&Path>, sets: &[String], env_seed: Option<&str>) -> Result<Resolved, CliError> {
    let mut value = defaults();
    let mut seed_source = SeedSource::Default;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(CliError::usage(format!("{}: top level must be an object", path.display())));
        }
        if has_seed(&parsed) {
            seed_source = SeedSource::File;
        }
        merge(&mut value, parsed);
    }
    let mut overrides = Value::Object(Map::new());
    for spec in sets {
        let (path, v) = parse_set(spec)?;
        set_path(&mut overrides, &path, v)?;
    }
    if has_seed(&overrides) {
        seed_source = SeedSource::Flag;
    }
    merge(&mut value, overrides);
    if seed_source == SeedSource::Default {
        if let Some(raw) = env_seed {
            let seed: u64 = raw.trim().parse().map_err(|_| CliError::usage(format!("SOM_SEED={raw:?} is not an unsigned integer")))?;
            set_path(&mut value, &["train".into(), "seed".into()], seed.into())?;
            seed_source = SeedSource::Env;
        }
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| CliError::usage(format!("config: {e}")))?;
    Ok(Resolved { config, seed_source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_alone() {
        let r = resolve(None, &[], None).unwrap();
        assert_eq!(r.config.train, TrainConfig::default());
        assert_eq!(r.config.model, SomConfig::default());
        assert_eq!(r.seed_source, SeedSource::Default);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"train": {"lr": 0.5, "epochs": 3}, "model": {"N": 6}}"#).unwrap();
        let r = resolve(Some(&path), &["train.lr=0.25".into(), "data=corpus".into()], None).unwrap();
        assert_eq!(r.config.train.lr, 0.25);
        assert_eq!(r.config.train.epochs, 3);
        assert_eq!(r.config.train.batch, TrainConfig::default().batch);
        assert_eq!(r.config.model.n_slots, 6);
        assert_eq!(r.config.model.dim, SomConfig::default().dim);
        assert_eq!(r.config.data, Some(PathBuf::from("corpus")));
    }

    #[test]
    fn seed_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"train": {"seed": 5}}"#).unwrap();
        let env = resolve(None, &[], Some("9")).unwrap();
        assert_eq!((env.config.train.seed, env.seed_source), (9, SeedSource::Env));
        let file = resolve(Some(&path), &[], Some("9")).unwrap();
        assert_eq!((file.config.train.seed, file.seed_source), (5, SeedSource::File));
        let flag = resolve(Some(&path), &["train.seed=11".into()], Some("9")).unwrap();
        assert_eq!((flag.config.train.seed, flag.seed_source), (11, SeedSource::Flag));
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        for set in ["train.learning_rate=1", "bogus=1", "train=3"] {
            let e = resolve(None, &[set.into()], None).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{set}");
        }
        assert!(resolve(None, &["novalue".into()], None).is_err());
        assert!(resolve(None, &[], Some("x")).is_err());
    }

    #[test]
    fn set_values_parse_as_json_or_string() {
        assert_eq!(parse_set("a.b=1e-3").unwrap(), (vec!["a".into(), "b".into()], Value::from(1e-3)));
        assert_eq!(parse_set("mode=static").unwrap().1, Value::from("static"));
        assert_eq!(parse_set("x=\"3\"").unwrap().1, Value::from("3"));
    }
}
