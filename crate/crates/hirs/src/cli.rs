//! Subcommand surface behind the `hirs` binary.
//!
//! Every subcommand takes `--config <path>` plus any number of `--key value`
//! overrides (the key set is validated by [`RunConfig`]). Artifacts land in
//! a fresh run directory named by timestamp and config hash, and every
//! artifact file opens with a header line naming the producing subcommand
//! and the config hash.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{
    load_dataset, load_interactions, sample_negatives, save_dataset, to_implicit, Dataset,
    SplitDataset,
};
use crate::error::{HirsError, Result};
use crate::evalsuite::{
    accuracy, dump_incidence, group_by_user, order_histogram, rank_metrics, scaling_bench,
};
use crate::model::ModelState;
use crate::synthbench::{ablation_suite, default_spec, statistical_interaction_check, PlantedSpec};
use crate::trainer::{
    ablate, checkpoint_from_bytes, checkpoint_to_bytes, eval_gate_values, gradcheck_full_forward,
    logs_to_jsonl, score_samples, train, AblationFlags, ScoreOpts, TrainerState,
};

pub const SUBCOMMANDS: &[&str] = &[
    "train",
    "evaluate",
    "ablate",
    "dump-interactions",
    "synth-gen",
    "synth-bench",
    "gradcheck",
    "bench-scaling",
];

pub struct ParsedArgs {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    /// `--flags` list for the ablate subcommand.
    pub flags: Option<String>,
}

pub fn parse_args(args: &[String]) -> Result<ParsedArgs> {
    let subcommand = args
        .first()
        .ok_or_else(|| usage_error("missing subcommand"))?
        .clone();
    if !SUBCOMMANDS.contains(&subcommand.as_str()) {
        return Err(usage_error(&format!("unknown subcommand {subcommand:?}")));
    }
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut flags = None;
    let mut i = 1;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .ok_or_else(|| usage_error(&format!("expected --key, got {:?}", args[i])))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| usage_error(&format!("--{key} needs a value")))?
            .clone();
        match key {
            "config" => config_path = Some(PathBuf::from(value)),
            "flags" => flags = Some(value),
            _ => overrides.push((key.to_string(), value)),
        }
        i += 2;
    }
    Ok(ParsedArgs {
        subcommand,
        config_path,
        overrides,
        flags,
    })
}

fn usage_error(msg: &str) -> HirsError {
    HirsError::Config(format!(
        "{msg}\nusage: hirs <{}> [--config path] [--key value ...]",
        SUBCOMMANDS.join("|")
    ))
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> Result<i32> {
    let parsed = parse_args(args)?;
    let cfg = RunConfig::load(parsed.config_path.as_deref(), &parsed.overrides)?;
    let run_dir = create_run_dir(&cfg, &parsed.subcommand)?;
    let header = format!("hirs {} config={}", parsed.subcommand, cfg.hash_hex());
    println!("run directory: {}", run_dir.display());

    match parsed.subcommand.as_str() {
        "train" => cmd_train(&cfg, &run_dir, &header),
        "evaluate" => cmd_evaluate(&cfg, &run_dir, &header),
        "ablate" => cmd_ablate(&cfg, &run_dir, &header, parsed.flags.as_deref()),
        "dump-interactions" => cmd_dump(&cfg, &run_dir, &header),
        "synth-gen" => cmd_synth_gen(&cfg, &run_dir, &header),
        "synth-bench" => cmd_synth_bench(&cfg, &run_dir, &header),
        "gradcheck" => cmd_gradcheck(&cfg, &run_dir, &header),
        "bench-scaling" => cmd_bench_scaling(&cfg, &run_dir, &header),
        _ => unreachable!("subcommand validated in parse_args"),
    }
}

fn create_run_dir(cfg: &RunConfig, subcommand: &str) -> Result<PathBuf> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let dir = cfg
        .out_root()
        .join(format!("{subcommand}-{stamp}-{}", &cfg.hash_hex()[..8]));
    std::fs::create_dir_all(&dir)
        .map_err(|e| HirsError::Invalid(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_artifact(path: &Path, header: &str, body: &str) -> Result<()> {
    let content = format!("# {header}\n{body}");
    std::fs::write(path, content)
        .map_err(|e| HirsError::Invalid(format!("cannot write {}: {e}", path.display())))
}

// ── data loading ─────────────────────────────────────────────────────

fn load_spec(cfg: &RunConfig) -> Result<PlantedSpec> {
    match &cfg.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HirsError::Config(format!("cannot read spec {}: {e}", path.display()))
            })?;
            PlantedSpec::parse(&text)
        }
        None => Ok(default_spec()),
    }
}

/// Assemble a dataset from the configured source: a `HIRSDATA1` cache, raw
/// ratings/feature files, or a planted-interaction spec.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(path) = &cfg.data {
        return Ok(load_dataset(path)?);
    }
    if let Some(ratings) = &cfg.ratings {
        let mut raw = load_interactions(
            ratings,
            cfg.user_features.as_deref(),
            cfg.item_features.as_deref(),
            &cfg.schema,
        )?;
        let positives = to_implicit(&mut raw, &cfg.schema);
        let mut neg_rng = data_rng(cfg.train.seed, 1);
        let negatives = sample_negatives(&positives, &mut raw, &mut neg_rng);
        if raw.stats.dropped_missing_join + raw.stats.replacement_fallbacks > 0 {
            eprintln!(
                "ingest warnings: {} records dropped (missing join), {} users fell back to replacement sampling",
                raw.stats.dropped_missing_join, raw.stats.replacement_fallbacks
            );
        }
        let mut samples = positives;
        samples.extend(negatives);
        return Ok(Dataset {
            vocab: raw.vocab,
            samples,
        });
    }
    if cfg.spec.is_some() {
        let spec = load_spec(cfg)?;
        let mut rng = data_rng(cfg.train.seed, 2);
        return crate::synthbench::generate(&spec, cfg.n_samples, &mut rng);
    }
    Err(HirsError::Config(
        "no data source configured: set data=, ratings=, or spec=".to_string(),
    ))
}

fn data_rng(seed: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xDA7A_0000_0000_0000 | role);
    rng
}

fn split_data(cfg: &RunConfig, dataset: &Dataset) -> Result<SplitDataset> {
    let mut rng = data_rng(cfg.train.seed, 3);
    Ok(SplitDataset::from_dataset(dataset, cfg.split, &mut rng)?)
}

fn load_checkpoint(cfg: &RunConfig, vocab_size: usize) -> Result<TrainerState> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| {
        HirsError::Config("this subcommand needs checkpoint=<path>".to_string())
    })?;
    let bytes = std::fs::read(path).map_err(|e| {
        HirsError::Checkpoint(format!("cannot read {}: {e}", path.display()))
    })?;
    let mut template_rng = crate::trainer::init_rng(cfg.train.seed);
    let template = ModelState::init(&cfg.train.model_config(vocab_size), &mut template_rng);
    let (state, _, _) = checkpoint_from_bytes(&bytes, &template, None)?;
    Ok(state)
}

// ── subcommands ──────────────────────────────────────────────────────

fn cmd_train(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let dataset = load_data(cfg)?;
    let data = split_data(cfg, &dataset)?;
    let resume = if cfg.checkpoint.is_some() {
        Some(load_checkpoint(cfg, data.vocab.len())?)
    } else {
        None
    };
    let outcome = train(&data, &cfg.train, resume)?;
    write_artifact(
        &run_dir.join("metrics.jsonl"),
        header,
        &logs_to_jsonl(&outcome.logs),
    )?;
    let ckpt = checkpoint_to_bytes(&outcome.state, cfg.train.seed, cfg.hash());
    std::fs::write(run_dir.join("model.ckpt"), ckpt)
        .map_err(|e| HirsError::Invalid(format!("cannot write checkpoint: {e}")))?;
    if let Some(last) = outcome.logs.last() {
        println!(
            "trained {} epochs: loss {:.4}, val recall@10 {}",
            outcome.logs.len(),
            last.loss_total,
            last.recall10
                .map_or("n/a".to_string(), |r| format!("{r:.4}"))
        );
    }
    if let Some(best) = &outcome.state.best {
        println!("best val recall@10 {:.4} at epoch {}", best.metric, best.epoch);
    }
    Ok(0)
}

fn cmd_evaluate(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let dataset = load_data(cfg)?;
    let data = split_data(cfg, &dataset)?;
    let state = load_checkpoint(cfg, data.vocab.len())?;
    let model = state.best.as_ref().map_or(&state.model, |b| &b.model);
    let opts = ScoreOpts::from_cfg(&cfg.train);
    let scores = score_samples(model, &data.test, &opts)?;
    let table = rank_metrics(&group_by_user(&data.test, &scores), &[10, 20]);
    let acc = accuracy(&data.test, &scores);
    let body = serde_json::json!({
        "test_samples": data.test.len(),
        "accuracy": acc,
        "metrics": table,
    });
    write_artifact(
        &run_dir.join("evaluation.json"),
        header,
        &serde_json::to_string_pretty(&body).unwrap(),
    )?;
    println!(
        "test: accuracy {:.4}, recall@10 {:.4}, ndcg@10 {:.4}",
        acc,
        table.recall_at(10),
        table.ndcg_at(10)
    );
    Ok(0)
}

fn parse_variant_list(flags: Option<&str>) -> Result<Vec<AblationFlags>> {
    let mut variants = vec![AblationFlags::default()];
    if let Some(spec) = flags {
        for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            variants.push(AblationFlags::parse(&tok.replace('+', ","))?);
        }
    }
    Ok(variants)
}

fn cmd_ablate(
    cfg: &RunConfig,
    run_dir: &Path,
    header: &str,
    flags: Option<&str>,
) -> Result<i32> {
    let dataset = load_data(cfg)?;
    let data = split_data(cfg, &dataset)?;
    let variants = parse_variant_list(flags)?;
    let outcome = ablate(&data, &cfg.train, &variants)?;
    write_artifact(
        &run_dir.join("ablation.json"),
        header,
        &serde_json::to_string_pretty(&outcome.report).unwrap(),
    )?;
    for v in &outcome.report.variants {
        println!(
            "{:>14}: accuracy {:.4} recall@10 {:.4} order0 {:.3} mean-order {:.2}",
            v.name, v.test_accuracy, v.recall10, v.order0_fraction, v.mean_edge_order
        );
    }
    Ok(0)
}

fn cmd_dump(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let dataset = load_data(cfg)?;
    let data = split_data(cfg, &dataset)?;
    let state = load_checkpoint(cfg, data.vocab.len())?;
    let model = state.best.as_ref().map_or(&state.model, |b| &b.model);
    let take = cfg.dump_count.min(data.test.len());
    let samples = &data.test[..take];
    let gates = eval_gate_values(model, samples, &ScoreOpts::from_cfg(&cfg.train))?;
    let mut body = String::new();
    for (sample, g) in samples.iter().zip(&gates) {
        body.push_str(&dump_incidence(sample, g, &data.vocab, cfg.threshold));
        body.push('\n');
    }
    let hist = order_histogram(&gates, cfg.threshold);
    body.push_str(&format!(
        "order fractions: {:?}\n",
        hist.fractions
            .iter()
            .map(|f| (f * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    ));
    write_artifact(&run_dir.join("interactions.txt"), header, &body)?;
    println!("dumped {take} samples to interactions.txt");
    Ok(0)
}

fn cmd_synth_gen(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let spec = load_spec(cfg)?;
    let mut rng = data_rng(cfg.train.seed, 2);
    let dataset = crate::synthbench::generate(&spec, cfg.n_samples, &mut rng)?;
    let path = run_dir.join("dataset.hirsdata");
    save_dataset(&dataset, &path, Some(header))?;
    write_artifact(&run_dir.join("spec.txt"), header, &spec.to_text())?;
    println!(
        "generated {} samples over {} features -> {}",
        dataset.samples.len(),
        dataset.vocab.len(),
        path.display()
    );
    Ok(0)
}

fn cmd_synth_bench(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let spec = load_spec(cfg)?;
    let report = ablation_suite(&spec, &cfg.train, &cfg.seeds, cfg.n_samples)?;
    let prop2 = statistical_interaction_check(600, cfg.train.seed)?;
    let body = serde_json::json!({
        "suite": report,
        "statistical_interaction": prop2,
    });
    write_artifact(
        &run_dir.join("suite.json"),
        header,
        &serde_json::to_string_pretty(&body).unwrap(),
    )?;
    let mut failed = false;
    for check in &report.checks {
        let status = if check.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {} ({})", check.name, check.detail);
        failed |= !check.pass;
    }
    println!(
        "[{}] nonlinear edge model fits product target (mse {:.4})",
        if prop2.nonlinear_mse < 0.01 { "PASS" } else { "FAIL" },
        prop2.nonlinear_mse
    );
    println!(
        "[{}] linear edge model cannot (mse {:.4})",
        if prop2.linear_mse > 0.1 { "PASS" } else { "FAIL" },
        prop2.linear_mse
    );
    failed |= prop2.nonlinear_mse >= 0.01 || prop2.linear_mse <= 0.1;
    Ok(i32::from(failed))
}

fn cmd_gradcheck(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let mut body = String::new();
    let mut worst: f64 = 0.0;
    let gc_cfg = crate::trainer::TrainConfig {
        d: 4,
        k: 3,
        hidden: 6,
        ..cfg.train.clone()
    };
    for seed in 0..cfg.gradcheck_seeds as u64 {
        let report = gradcheck_full_forward(&gc_cfg, 6, 4, seed, 1e-4)?;
        worst = worst.max(report.max_rel_err);
        body.push_str(&format!("seed {seed}: {}\n", report.summary()));
    }
    let pass = worst < 1e-4;
    body.push_str(&format!(
        "overall: {} (max rel err {worst:.3e}, tolerance 1e-4)\n",
        if pass { "PASS" } else { "FAIL" }
    ));
    write_artifact(&run_dir.join("gradcheck.txt"), header, &body)?;
    print!("{body}");
    Ok(i32::from(!pass))
}

fn cmd_bench_scaling(cfg: &RunConfig, run_dir: &Path, header: &str) -> Result<i32> {
    let dataset = load_data(cfg)?;
    let table = scaling_bench(&dataset, &cfg.k_list, &cfg.m_list, &cfg.train)?;
    std::fs::write(run_dir.join("scaling.csv"), table.to_csv(Some(header)))
        .map_err(|e| HirsError::Invalid(format!("cannot write scaling.csv: {e}")))?;
    for row in &table.rows {
        println!("k={:<3} m={:<3} {:.3}s per epoch", row.k, row.m, row.seconds);
    }
    println!(
        "slope vs k: {:.4} s/edge, slope vs m: {:.4} s/feature",
        table.slope_k, table.slope_m
    );
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_requires_known_subcommand() {
        let args: Vec<String> = vec!["fit".to_string()];
        assert!(parse_args(&args).is_err());
        assert!(parse_args(&[]).is_err());
    }

    #[test]
    fn parse_collects_overrides_and_flags() {
        let args: Vec<String> = ["ablate", "--config", "run.cfg", "--seed", "7", "--flags", "no_mi,no_l0"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let parsed = parse_args(&args).unwrap();
        assert_eq!(parsed.subcommand, "ablate");
        assert_eq!(parsed.config_path.as_deref(), Some(Path::new("run.cfg")));
        assert_eq!(parsed.overrides, vec![("seed".to_string(), "7".to_string())]);
        assert_eq!(parsed.flags.as_deref(), Some("no_mi,no_l0"));
    }

    #[test]
    fn variant_list_always_includes_full_first() {
        let variants = parse_variant_list(Some("no_mi,no_hp+no_nm")).unwrap();
        assert_eq!(variants.len(), 3);
        assert_eq!(variants[0], AblationFlags::default());
        assert!(variants[1].no_mi);
        assert!(variants[2].no_hp && variants[2].no_nm);
    }
}
