//! Implementations of the CLI commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use lfagcl_core::lfa::LfaTrace;
use lfagcl_core::synthetic::{block_interactions, BlockDatasetConfig};
use lfagcl_core::trainer::{fit, EpochRecord, TrainError, TrainingData};
use lfagcl_core::{
    build_graph, evaluate, group_users_by_degree, split_dataset, train_lfa, AdamState, DatasetSplit,
    EvalOptions, InteractionGraph, LatentFactors, MetricReport, Model, ObservedEntries,
};
use sha2::{Digest, Sha256};

use crate::cli::{Axis, Cli, Command, SplitName};
use crate::config::{hex, RunConfig};
use crate::format::{self, ExpectedShape, ModelCheckpoint};
use crate::io::{load_interactions, sig6};
use crate::report::{self, ReportFile, StatsFile};

/// Defaults, then the config file, then `--set`, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut config = base.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = resolve_config(&cli)?;
    let path_str = |p: &Path| p.display().to_string();
    match cli.command {
        Command::Synth(args) => {
            let cfg = BlockDatasetConfig {
                n_users: args.users,
                n_items: args.items,
                n_blocks: args.blocks,
                density: args.density,
                in_block: args.in_block,
                seed: config.seed,
            };
            let n = cmd_synth(&cfg, &args.out)?;
            println!("wrote {n} interactions to {}", args.out.display());
        }
        Command::Prepare(args) => {
            if let Some(p) = args.input {
                config.input = Some(path_str(&p));
            }
            if let Some(d) = args.delimiter {
                config.delimiter = delimiter_name(&d);
            }
            if let Some(p) = args.out {
                config.bundle = path_str(&p);
            }
            if let Some(p) = args.stats {
                config.stats = path_str(&p);
            }
            config.validate()?;
            let stats = cmd_prepare(&config)?;
            print!("{}", stats.table());
            println!(
                "split {} / {} / {} (train / validation / test)",
                stats.train, stats.validation, stats.test
            );
        }
        Command::PretrainLfa(args) => {
            if let Some(p) = args.bundle {
                config.bundle = path_str(&p);
            }
            if let Some(p) = args.out {
                config.lfa_checkpoint = path_str(&p);
            }
            config.validate()?;
            let (_, trace) = cmd_pretrain_lfa(&config)?;
            let first = trace.objectives.first().copied().unwrap_or(f64::NAN);
            println!(
                "objective {} -> {} after {} iterations ({})",
                sig6(first),
                sig6(trace.final_objective()),
                trace.iterations,
                if trace.converged { "converged" } else { "iteration limit" }
            );
        }
        Command::Train(args) => {
            if let Some(p) = args.bundle {
                config.bundle = path_str(&p);
            }
            if let Some(p) = args.lfa {
                config.lfa_checkpoint = path_str(&p);
            }
            if let Some(p) = args.out {
                config.checkpoint = path_str(&p);
            }
            if let Some(p) = args.log {
                config.log = path_str(&p);
            }
            config.validate()?;
            let summary = cmd_train(&config)?;
            match summary.best_epoch {
                Some(e) => println!(
                    "best validation recall@{} {} at epoch {e} of {}",
                    config.eval_k[0],
                    sig6(summary.best_metric),
                    summary.epochs
                ),
                None => println!("trained {} epochs without validation", summary.epochs),
            }
        }
        Command::Evaluate(args) => {
            if let Some(p) = args.bundle {
                config.bundle = path_str(&p);
            }
            if let Some(p) = args.checkpoint {
                config.checkpoint = path_str(&p);
            }
            if let Some(p) = args.report {
                config.report = path_str(&p);
            }
            if let Some(p) = args.table {
                config.table = path_str(&p);
            }
            if !args.ks.is_empty() {
                config.eval_k = args.ks;
            }
            config.validate()?;
            let report = cmd_evaluate(&config, args.split)?;
            for m in &report.metrics {
                println!("recall@{k} {}  ndcg@{k} {}", sig6(m.recall), sig6(m.ndcg), k = m.k);
            }
        }
        Command::GroupAnalysis(args) => {
            if let Some(p) = args.bundle {
                config.bundle = path_str(&p);
            }
            config.validate()?;
            let k = args.k.unwrap_or(config.eval_k[0]);
            let table = cmd_group_analysis(&config, &args.model, &args.baseline, k)?;
            write_file(&args.out, table.as_bytes())?;
            print!("{}", table.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
        }
        Command::Sweep(args) => {
            if let Some(p) = args.bundle {
                config.bundle = path_str(&p);
            }
            if let Some(p) = args.lfa {
                config.lfa_checkpoint = path_str(&p);
            }
            if let Some(p) = args.out {
                config.sweep_table = path_str(&p);
            }
            config.validate()?;
            let rows = cmd_sweep(&config, args.axis, cli.threads.max(1))?;
            print!("{}", report::sweep_header(args.axis.key(), &config.eval_k));
            for row in rows {
                print!("{row}");
            }
        }
    }
    Ok(())
}

fn delimiter_name(text: &str) -> String {
    match text {
        "tab" | "\\t" => "\t".into(),
        "comma" => ",".into(),
        "space" => " ".into(),
        other => other.into(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {what} {}", path.display()))
}

pub fn cmd_synth(config: &BlockDatasetConfig, out: &Path) -> Result<usize> {
    if config.n_blocks == 0 || config.n_blocks > config.n_users.min(config.n_items) {
        bail!("blocks must be between 1 and min(users, items)");
    }
    let raw = block_interactions(config);
    let mut text = String::new();
    for e in &raw.records {
        text.push_str(&raw.user_ids[e.user as usize]);
        text.push('\t');
        text.push_str(&raw.item_ids[e.item as usize]);
        text.push('\n');
    }
    write_file(out, text.as_bytes())?;
    Ok(raw.len())
}

pub fn cmd_prepare(config: &RunConfig) -> Result<StatsFile> {
    let input = config
        .input
        .as_deref()
        .context("no input file: pass --input or set `input` in the config")?;
    let input = Path::new(input);
    let (raw, load_stats) = load_interactions(input, config.delimiter_char()?)?;
    let split = split_dataset(&raw, config.seed)?;
    build_graph(&split)?;
    let bundle = format::encode_bundle(&split);
    write_file(Path::new(&config.bundle), &bundle)?;

    let interactions = raw.len();
    let stats = StatsFile {
        dataset: input
            .file_stem()
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()),
        users: raw.n_users(),
        items: raw.n_items(),
        interactions,
        density: report::density(interactions, raw.n_users(), raw.n_items()),
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        lines_read: load_stats.lines_read,
        duplicates: load_stats.duplicates,
        malformed: load_stats.malformed,
        bundle_sha256: sha256_hex(&bundle),
        config: config.clone(),
    };
    write_file(
        Path::new(&config.stats),
        toml::to_string(&stats).expect("stats serialize").as_bytes(),
    )?;
    Ok(stats)
}

pub fn load_bundle(config: &RunConfig) -> Result<DatasetSplit> {
    let path = Path::new(&config.bundle);
    let bytes = read_file(path, "dataset bundle").context("run `lfagcl prepare` first")?;
    format::decode_bundle(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn cmd_pretrain_lfa(config: &RunConfig) -> Result<(LatentFactors, LfaTrace)> {
    let split = load_bundle(config)?;
    let entries = ObservedEntries::new(split.n_users, split.n_items, &split.train);
    let (factors, trace) = train_lfa(&entries, &config.lfa_config())?;
    write_file(Path::new(&config.lfa_checkpoint), &format::encode_factors(&factors))?;
    Ok((factors, trace))
}

fn load_factors(config: &RunConfig, split: &DatasetSplit) -> Result<LatentFactors> {
    let path = Path::new(&config.lfa_checkpoint);
    if !path.exists() {
        bail!(
            "LFA checkpoint {} not found; run `lfagcl pretrain-lfa` first",
            path.display()
        );
    }
    let bytes = read_file(path, "LFA checkpoint")?;
    format::decode_factors(&bytes, Some(split.n_users), Some(split.n_items))
        .with_context(|| format!("decoding {}", path.display()))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    pub checkpoint_sha256: String,
}

fn checkpoint_bytes(config: &RunConfig, model: Model, adam: AdamState, best_epoch: Option<usize>) -> Vec<u8> {
    format::encode_model(&ModelCheckpoint {
        model,
        adam,
        config_hash: config.training_hash(),
        config: config.to_toml(),
        best_epoch: best_epoch.map(|e| e as u64),
    })
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    let split = load_bundle(config)?;
    let factors = load_factors(config, &split)?;
    let graph = build_graph(&split)?;
    let data = TrainingData {
        graph: &graph,
        train: &split.train,
        validation: &split.validation,
    };
    let log_path = PathBuf::from(&config.log);
    write_file(&log_path, report::log_header(config).as_bytes())?;
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let start = Instant::now();
    let mut log_error = None;
    let mut observer = |record: &EpochRecord| {
        if log_error.is_none() {
            let line = report::log_line(record, start.elapsed().as_millis());
            if let Err(e) = log.write_all(line.as_bytes()) {
                log_error = Some(e);
            }
        }
    };
    let outcome = fit(&data, Some(factors), &config.train_config(), &mut observer);
    if let Some(e) = log_error {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let ckpt_path = Path::new(&config.checkpoint);
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, cause, last_good }) => {
            let adam = AdamState::for_embeddings(&last_good.embeddings);
            write_file(ckpt_path, &checkpoint_bytes(config, *last_good, adam, None))?;
            bail!(
                "training diverged at epoch {epoch} ({cause}); last finite model saved to {}",
                ckpt_path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    let bytes = checkpoint_bytes(config, outcome.model, outcome.adam, outcome.best_epoch);
    write_file(ckpt_path, &bytes)?;
    Ok(TrainSummary {
        epochs: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        checkpoint_sha256: sha256_hex(&bytes),
    })
}

fn load_model(config: &RunConfig, split: &DatasetSplit, path: &Path) -> Result<(ModelCheckpoint, String)> {
    let bytes = read_file(path, "model checkpoint")?;
    let expected = ExpectedShape {
        n_users: Some(split.n_users),
        n_items: Some(split.n_items),
        embed_dim: Some(config.embed_dim),
        layers: Some(config.layers),
    };
    let ckpt = format::decode_model(&bytes, expected).with_context(|| format!("decoding {}", path.display()))?;
    if ckpt.config_hash != config.training_hash() {
        log::warn!(
            "{} was trained under a different configuration than the current one",
            path.display()
        );
    }
    Ok((ckpt, sha256_hex(&bytes)))
}

fn evaluate_model(
    config: &RunConfig,
    split: &DatasetSplit,
    graph: &InteractionGraph,
    model: &Model,
    which: SplitName,
    ks: &[usize],
) -> Result<MetricReport> {
    let groups = group_users_by_degree(graph, config.n_groups)?;
    let (truth, extra) = match which {
        SplitName::Validation => (&split.validation, None),
        SplitName::Test => (
            &split.test,
            config.mask_validation.then_some(split.validation.as_slice()),
        ),
    };
    let (users, items) = model.final_embeddings(graph);
    let options = EvalOptions {
        ndcg: config.ndcg_variant(),
    };
    Ok(evaluate(&users, &items, graph, truth, ks, Some(&groups), extra, &options)?)
}

pub fn cmd_evaluate(config: &RunConfig, which: SplitName) -> Result<ReportFile> {
    let split = load_bundle(config)?;
    let graph = build_graph(&split)?;
    let (ckpt, digest) = load_model(config, &split, Path::new(&config.checkpoint))?;
    let report = evaluate_model(config, &split, &graph, &ckpt.model, which, &config.eval_k)?;
    let name = match which {
        SplitName::Validation => "validation",
        SplitName::Test => "test",
    };
    let file = ReportFile::new(name, digest, &report, config);
    write_file(Path::new(&config.report), file.to_toml().as_bytes())?;
    write_file(Path::new(&config.table), file.flat_table().as_bytes())?;
    Ok(file)
}

pub fn cmd_group_analysis(config: &RunConfig, model: &Path, baseline: &Path, k: usize) -> Result<String> {
    let split = load_bundle(config)?;
    let graph = build_graph(&split)?;
    let (a, _) = load_model(config, &split, model)?;
    let (b, _) = load_model(config, &split, baseline)?;
    let ra = evaluate_model(config, &split, &graph, &a.model, SplitName::Test, &[k])?;
    let rb = evaluate_model(config, &split, &graph, &b.model, SplitName::Test, &[k])?;
    let mut out = report::config_echo(config);
    out.push_str(&report::group_comparison_table(k, &ra, &rb, ("model", "baseline")));
    Ok(out)
}

fn with_axis(config: &RunConfig, axis: Axis, value: f64) -> RunConfig {
    let mut c = config.clone();
    match axis {
        Axis::Lambda1 => c.lambda1 = value,
        Axis::Tau => c.tau = value,
        Axis::Dropout => c.dropout_rate = value,
    }
    c
}

/// Trains one model per grid value (ascending) from a shared factor
/// checkpoint and seed. Rows are appended to the sweep table as each batch
/// of `threads` points completes.
pub fn cmd_sweep(config: &RunConfig, axis: Axis, threads: usize) -> Result<Vec<String>> {
    let mut grid = match axis {
        Axis::Lambda1 => config.lambda1_grid.clone(),
        Axis::Tau => config.tau_grid.clone(),
        Axis::Dropout => config.dropout_grid.clone(),
    };
    if grid.is_empty() {
        bail!("the {} grid is empty", axis.key());
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    for &v in &grid {
        with_axis(config, axis, v).validate()?;
    }
    let split = load_bundle(config)?;
    let factors = load_factors(config, &split)?;
    let graph = build_graph(&split)?;
    let data = TrainingData {
        graph: &graph,
        train: &split.train,
        validation: &split.validation,
    };

    let table_path = Path::new(&config.sweep_table);
    let mut header = report::config_echo(config);
    header.push_str(&report::sweep_header(axis.key(), &config.eval_k));
    write_file(table_path, header.as_bytes())?;
    let mut table = fs::OpenOptions::new().append(true).open(table_path)?;

    let run_point = |value: f64| -> Result<String> {
        let point = with_axis(config, axis, value);
        let outcome = fit(&data, Some(factors.clone()), &point.train_config(), &mut |_| {})?;
        let report = evaluate_model(&point, &split, &graph, &outcome.model, SplitName::Test, &point.eval_k)?;
        log::info!("{} = {}: done", axis.key(), sig6(value));
        Ok(report::sweep_row(value, &report))
    };

    let mut rows = Vec::with_capacity(grid.len());
    for chunk in grid.chunks(threads) {
        let results: Vec<Result<String>> = if chunk.len() == 1 {
            vec![run_point(chunk[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&v| s.spawn(move || run_point(v))).collect();
                handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
            })
        };
        for row in results {
            let row = row?;
            table.write_all(row.as_bytes())?;
            table.flush()?;
            rows.push(row);
        }
    }
    Ok(rows)
}
