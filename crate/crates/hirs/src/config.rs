//! Flat key=value run configuration.
//!
//! A config file is `key = value` lines (comments start with `#`);
//! command-line `--key value` pairs override file entries. Unknown keys are
//! rejected with the full list of valid keys. The config hash is the first
//! 8 bytes of the SHA-256 of the fully resolved key set, so two runs hash
//! equal exactly when every effective setting (including the seed) is
//! equal.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{DataSchema, ImplicitMode};
use crate::edgegen::HardConcreteConfig;
use crate::error::{HirsError, Result};
use crate::trainer::{AblationFlags, TrainConfig};

pub const VALID_KEYS: &[&str] = &[
    // model / training
    "seed",
    "d",
    "k",
    "hidden",
    "lambda1",
    "lambda2",
    "lambda3",
    "dropout",
    "lr",
    "batch_size",
    "epochs",
    "eval_every",
    "ablation",
    "detach_mi",
    "gamma",
    "delta",
    "tau",
    // data files
    "data",
    "ratings",
    "user_features",
    "item_features",
    "separator",
    "feature_sep",
    "user_col",
    "item_col",
    "rating_col",
    "rating_threshold",
    "implicit_mode",
    // synthetic data
    "spec",
    "n_samples",
    // split
    "split_train",
    "split_val",
    "split_test",
    // run control
    "out_dir",
    "checkpoint",
    "threshold",
    "k_list",
    "m_list",
    "seeds",
    "dump_count",
    "gradcheck_seeds",
];

/// Resolved view of one run: training hyperparameters, data schema and
/// sources, output paths, and the subcommand knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub schema: DataSchema,
    /// Dataset cache (`HIRSDATA1`) path.
    pub data: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub user_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
    /// Planted-interaction spec path.
    pub spec: Option<PathBuf>,
    pub n_samples: usize,
    pub split: (f64, f64, f64),
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Gate binarization threshold for order statistics and dumps.
    pub threshold: f64,
    pub k_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub dump_count: usize,
    pub gradcheck_seeds: usize,
    /// Every effective key=value, the hash input.
    resolved: BTreeMap<String, String>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HirsError::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HirsError::Config(format!(
            "bad boolean for {key}: {value:?}"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| HirsError::Config(format!("bad list entry for {key}: {t:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Parse a config file (optional) and apply `--key value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HirsError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    HirsError::Config(format!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                kv.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        for (key, value) in overrides {
            kv.insert(key.clone(), value.clone());
        }
        Self::from_kv(kv)
    }

    pub fn from_kv(kv: BTreeMap<String, String>) -> Result<Self> {
        for key in kv.keys() {
            if !VALID_KEYS.contains(&key.as_str()) {
                return Err(HirsError::Config(format!(
                    "unknown config key {key:?}; valid keys: {}",
                    VALID_KEYS.join(", ")
                )));
            }
        }
        let get = |key: &str| kv.get(key).map(String::as_str);

        let mut train = TrainConfig::default();
        if let Some(v) = get("seed") {
            train.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("d") {
            train.d = parse_num("d", v)?;
        }
        if let Some(v) = get("k") {
            train.k = parse_num("k", v)?;
        }
        if let Some(v) = get("hidden") {
            train.hidden = parse_num("hidden", v)?;
        }
        if let Some(v) = get("lambda1") {
            train.lambda1 = parse_num("lambda1", v)?;
        }
        if let Some(v) = get("lambda2") {
            train.lambda2 = parse_num("lambda2", v)?;
        }
        if let Some(v) = get("lambda3") {
            train.lambda3 = parse_num("lambda3", v)?;
        }
        if let Some(v) = get("dropout") {
            train.dropout = parse_num("dropout", v)?;
        }
        if let Some(v) = get("lr") {
            train.lr = parse_num("lr", v)?;
        }
        if let Some(v) = get("batch_size") {
            train.batch_size = parse_num("batch_size", v)?;
        }
        if let Some(v) = get("epochs") {
            train.epochs = parse_num("epochs", v)?;
        }
        if let Some(v) = get("eval_every") {
            train.eval_every = parse_num("eval_every", v)?;
        }
        if let Some(v) = get("ablation") {
            train.ablation = AblationFlags::parse(v)?;
        }
        if let Some(v) = get("detach_mi") {
            train.detach_mi = parse_bool("detach_mi", v)?;
        }
        let mut gate = HardConcreteConfig::default();
        if let Some(v) = get("gamma") {
            gate.gamma = parse_num("gamma", v)?;
        }
        if let Some(v) = get("delta") {
            gate.delta = parse_num("delta", v)?;
        }
        if let Some(v) = get("tau") {
            gate.tau = parse_num("tau", v)?;
        }
        train.gate = gate;
        train.validate()?;

        let mut schema = DataSchema::default();
        if let Some(v) = get("separator") {
            schema.separator = v.to_string();
        }
        if let Some(v) = get("feature_sep") {
            schema.feature_sep = v.to_string();
        }
        if let Some(v) = get("user_col") {
            schema.user_col = parse_num("user_col", v)?;
        }
        if let Some(v) = get("item_col") {
            schema.item_col = parse_num("item_col", v)?;
        }
        if let Some(v) = get("rating_col") {
            schema.rating_col = parse_num("rating_col", v)?;
        }
        if let Some(v) = get("rating_threshold") {
            schema.rating_threshold = parse_num("rating_threshold", v)?;
        }
        if let Some(v) = get("implicit_mode") {
            schema.implicit_mode = match v {
                "threshold" => ImplicitMode::Threshold,
                "all_rated" => ImplicitMode::AllRated,
                _ => {
                    return Err(HirsError::Config(format!(
                        "implicit_mode must be threshold or all_rated, got {v:?}"
                    )))
                }
            };
        }

        let split: (f64, f64, f64) = (
            get("split_train").map_or(Ok(0.7), |v| parse_num("split_train", v))?,
            get("split_val").map_or(Ok(0.15), |v| parse_num("split_val", v))?,
            get("split_test").map_or(Ok(0.15), |v| parse_num("split_test", v))?,
        );
        if (split.0 + split.1 + split.2 - 1.0).abs() > 1e-9 {
            return Err(HirsError::Config(format!(
                "split ratios must sum to 1, got {:?}",
                split
            )));
        }

        let cfg = RunConfig {
            train,
            schema,
            data: get("data").map(PathBuf::from),
            ratings: get("ratings").map(PathBuf::from),
            user_features: get("user_features").map(PathBuf::from),
            item_features: get("item_features").map(PathBuf::from),
            spec: get("spec").map(PathBuf::from),
            n_samples: get("n_samples").map_or(Ok(20_000), |v| parse_num("n_samples", v))?,
            split,
            out_dir: get("out_dir").map(PathBuf::from),
            checkpoint: get("checkpoint").map(PathBuf::from),
            threshold: get("threshold").map_or(Ok(0.5), |v| parse_num("threshold", v))?,
            k_list: get("k_list").map_or(Ok(vec![5, 10, 20, 40, 60]), |v| {
                parse_list("k_list", v)
            })?,
            m_list: get("m_list").map_or(Ok(vec![10]), |v| parse_list("m_list", v))?,
            seeds: get("seeds").map_or_else(
                || Ok(vec![0, 1, 2]),
                |v| parse_list("seeds", v),
            )?,
            dump_count: get("dump_count").map_or(Ok(5), |v| parse_num("dump_count", v))?,
            gradcheck_seeds: get("gradcheck_seeds")
                .map_or(Ok(20), |v| parse_num("gradcheck_seeds", v))?,
            resolved: kv,
        };
        Ok(cfg)
    }

    /// First 8 bytes of SHA-256 over the sorted effective key=value list.
    pub fn hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for (key, value) in &self.resolved {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    /// Output root: `HIRS_OUT_DIR` env > `out_dir` key > `./runs`.
    pub fn out_root(&self) -> PathBuf {
        if let Ok(dir) = std::env::var("HIRS_OUT_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults_match_published_hyperparameters() {
        let cfg = RunConfig::from_kv(BTreeMap::new()).unwrap();
        assert_eq!(cfg.train.d, 64);
        assert_eq!(cfg.train.k, 40);
        assert_eq!(cfg.train.lambda1, 0.02);
        assert_eq!(cfg.train.lambda2, 1.0);
        assert_eq!(cfg.train.lambda3, 0.1);
        assert_eq!(cfg.train.dropout, 0.1);
        assert_eq!(cfg.train.gate.gamma, -0.1);
        assert_eq!(cfg.train.gate.delta, 1.1);
        assert_eq!(cfg.train.gate.tau, 0.66);
        assert_eq!(cfg.split, (0.7, 0.15, 0.15));
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::from_kv(kv(&[("lambda9", "1.0")])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lambda9") && msg.contains("lambda1"), "{msg}");
    }

    #[test]
    fn hash_depends_on_every_effective_key() {
        let a = RunConfig::from_kv(kv(&[("seed", "1")])).unwrap();
        let b = RunConfig::from_kv(kv(&[("seed", "2")])).unwrap();
        let c = RunConfig::from_kv(kv(&[("seed", "1")])).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn file_plus_overrides_resolve_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nk = 8\nepochs = 3\n").unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &[("k".to_string(), "16".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.train.k, 16);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn bad_split_rejected() {
        let err = RunConfig::from_kv(kv(&[("split_train", "0.9")])).unwrap_err();
        assert!(err.to_string().contains("sum to 1"));
    }

    #[test]
    fn ablation_parse_rejects_unknown_flag() {
        assert!(RunConfig::from_kv(kv(&[("ablation", "no_xx")])).is_err());
        let cfg = RunConfig::from_kv(kv(&[("ablation", "no_mi,no_l0")])).unwrap();
        assert!(cfg.train.ablation.no_mi && cfg.train.ablation.no_l0);
    }
}
