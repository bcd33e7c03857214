//! Command-line surface. Every subcommand reads an experiment config, writes
//! into a run directory and finishes with a manifest listing each output file
//! and its SHA-256.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::al_engine::{run_cycles, CycleRecord};
use crate::comparison_set::{class_budget, ComparisonSet};
use crate::config::{sha256_hex, ExperimentConfig};
use crate::data::DataSuite;
use crate::error::{Error, Result};
use crate::ood_eval::{histograms_to_csv, run_benchmark, BenchmarkResults, Checkpoint, OodBenchmark};
use crate::rng::{LABEL_INIT, LABEL_SHUFFLE};
use crate::scoring::{PreparedScorer, ScoreBundle, ScoreMode};
use crate::steepness_opt::optimize;
use crate::tensor_nn::{format_f64, load_model, model_to_string, MlpModel};

#[derive(Debug, Parser)]
#[command(name = "sisom", version, about = "Feature-space scoring for active learning and OOD detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory (default: runs/<subcommand>).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Dotted-path config override, e.g. `scorer.mode=sisome`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Use a saved model instead of training one (score, ood-eval,
    /// optimize-steepness, subset).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Generate or load every split and write them as CSV.
    GenData,
    /// Train a classifier on the training split.
    Train,
    /// Score the test and OOD splits against the training set.
    Score,
    /// Run the active-learning cycles.
    AlRun,
    /// OOD benchmark of the trained classifier.
    OodEval,
    /// Grid search for the per-layer sigmoid steepness.
    OptimizeSteepness,
    /// Reduced reference set by greedy coverage.
    Subset,
    /// Active learning followed by OOD evaluation of every cycle's model.
    LifeCycle,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Score => "score",
            Command::AlRun => "al-run",
            Command::OodEval => "ood-eval",
            Command::OptimizeSteepness => "optimize-steepness",
            Command::Subset => "subset",
            Command::LifeCycle => "life-cycle",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Entry point; `argv[0]` is the program name.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_CONFIG
                }
            };
        }
    };
    let Some(config_path) = cli.config.clone() else {
        eprintln!("error: --config is required\n\nUsage: sisom <COMMAND> --config <CONFIG> [OPTIONS]");
        return EXIT_CONFIG;
    };
    let cfg = match load_config(&config_path, &cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    match execute(cli.command, &cfg, &out_dir, cli.model.as_deref()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = ExperimentConfig::load(path, &overrides)?;
    if matches!(cli.command, Command::AlRun | Command::LifeCycle) {
        cfg.validate_al(None)?;
    }
    if cli.command == Command::OptimizeSteepness && cfg.steepness.search.is_none() {
        return Err(Error::Config("optimize-steepness needs steepness.search".into()));
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    sha256: String,
    bytes: usize,
}

/// Output directory that remembers every file written through it.
pub struct RunDir {
    root: PathBuf,
    files: Vec<ManifestFile>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "metrics", "curves"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestFile {
            path: rel.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(mut self, command: Command, cfg: &ExperimentConfig, started: Instant) -> Result<()> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = json!({
            "command": command.name(),
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "versions": { "sisom": env!("CARGO_PKG_VERSION"), "model_format": 1 },
            "wall_clock_s": started.elapsed().as_secs_f64(),
            "files": self.files,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn execute(command: Command, cfg: &ExperimentConfig, out_dir: &Path, model_path: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let mut run = RunDir::create(out_dir)?;
    run.write("config.snapshot", cfg.snapshot().as_bytes())?;
    let outcome = cfg.load_data().and_then(|suite| {
        let suite = &suite;
        match command {
            Command::GenData => gen_data(&mut run, suite),
            Command::Train => train(&mut run, cfg, suite),
            Command::Score => score(&mut run, cfg, suite, model_path),
            Command::AlRun => al_run(&mut run, cfg, suite).map(|_| ()),
            Command::OodEval => ood_eval(&mut run, cfg, suite, model_path),
            Command::OptimizeSteepness => optimize_steepness(&mut run, cfg, suite, model_path),
            Command::Subset => subset(&mut run, cfg, suite, model_path),
            Command::LifeCycle => life_cycle(&mut run, cfg, suite),
        }
    });
    // the manifest is written even when a stage fails part-way
    let finished = run.finish(command, cfg, started);
    outcome.and(finished)
}

fn gen_data(run: &mut RunDir, suite: &DataSuite) -> Result<()> {
    run.write("data/train.csv", suite.train.to_csv().as_bytes())?;
    run.write("data/test.csv", suite.test.to_csv().as_bytes())?;
    for split in &suite.ood {
        run.write(&format!("data/ood-{}.csv", split.name), split.data.to_csv().as_bytes())?;
    }
    Ok(())
}

/// Trains on the full training split with the run's `init`/`shuffle` seeds.
pub fn train_model(cfg: &ExperimentConfig, suite: &DataSuite) -> Result<(MlpModel, Vec<f64>)> {
    let seeds = cfg.seeds();
    let classes = suite.train.num_classes();
    let init = cfg.model.spec().init(suite.train.dim(), classes, seeds.seed(LABEL_INIT))?;
    let hyper = cfg.model.train.hyper(seeds.seed(LABEL_SHUFFLE));
    let (model, report) = init.train(suite.train.features(), suite.train.require_labels()?, &hyper)?;
    Ok((model, report.losses))
}

fn obtain_model(cfg: &ExperimentConfig, suite: &DataSuite, path: Option<&Path>) -> Result<MlpModel> {
    match path {
        None => Ok(train_model(cfg, suite)?.0),
        Some(p) => {
            let model = load_model(p)?;
            if model.input_dim() != suite.train.dim() || model.num_classes() != suite.train.num_classes() {
                return Err(Error::Config(format!(
                    "model {} maps {} → {} but the data has {} features and {} classes",
                    p.display(),
                    model.input_dim(),
                    model.num_classes(),
                    suite.train.dim(),
                    suite.train.num_classes()
                )));
            }
            Ok(model)
        }
    }
}

fn train(run: &mut RunDir, cfg: &ExperimentConfig, suite: &DataSuite) -> Result<()> {
    let (model, losses) = train_model(cfg, suite)?;
    run.write("checkpoints/model.txt", model_to_string(&model).as_bytes())?;
    let train_acc = model.accuracy(suite.train.features(), suite.train.require_labels()?)?;
    let test_acc = model.accuracy(suite.test.features(), suite.test.require_labels()?)?;
    run.write_json(
        "metrics/train.json",
        &json!({
            "train_accuracy": train_acc,
            "test_accuracy": test_acc,
            "epochs": cfg.model.train.epochs,
            "losses": losses,
        }),
    )
}

pub fn scores_to_csv(bundles: &[ScoreBundle]) -> String {
    let mut out = String::from("sample_id,pseudo_class,d_in,d_out,r,r_ood,energy,fused\n");
    for b in bundles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            b.sample_id,
            b.pseudo_class,
            format_f64(b.d_in),
            format_f64(b.d_out),
            format_f64(b.r),
            format_f64(b.r_ood),
            format_f64(b.energy),
            format_f64(b.fused)
        );
    }
    out
}

fn score(run: &mut RunDir, cfg: &ExperimentConfig, suite: &DataSuite, model_path: Option<&Path>) -> Result<()> {
    let model = obtain_model(cfg, suite, model_path)?;
    let setup = cfg.scorer_setup();
    let scorer = PreparedScorer::new(&model, &suite.train, &setup)?;
    let mut splits = Vec::new();
    let targets =
        std::iter::once(("test", &suite.test)).chain(suite.ood.iter().map(|s| (s.name.as_str(), &s.data)));
    for (name, data) in targets {
        let bundles = scorer.score(data)?;
        let file = format!("metrics/scores-{name}.csv");
        run.write(&file, scores_to_csv(&bundles).as_bytes())?;
        splits.push(json!({ "split": name, "n": bundles.len(), "file": file }));
    }
    run.write_json(
        "metrics/scores.json",
        &json!({
            "mode": setup.options.mode,
            "ind_score": setup.options.mode.ind_score_rule(),
            "r_avg": scorer.r_avg(),
            "reference_size": scorer.reference().len(),
            "reduced": scorer.reference().is_reduced(),
            "config_hash": cfg.hash(),
            "splits": splits,
        }),
    )
}

#[derive(Serialize)]
struct HistoryEntry<'a> {
    cycle: usize,
    labeled_size: usize,
    test_accuracy: f64,
    r_avg: Option<f64>,
    query_r_mean: Option<f64>,
    pool_r_mean: Option<f64>,
    queried: &'a [String],
}

fn al_run(run: &mut RunDir, cfg: &ExperimentConfig, suite: &DataSuite) -> Result<(Vec<Checkpoint>, Vec<CycleRecord>)> {
    cfg.validate_al(Some(suite))?;
    let al = cfg.al_config();
    let mut records = Vec::new();
    let result = run_cycles(&suite.train, &suite.test, &al, |rec| {
        eprintln!(
            "cycle {}: |L| = {}, test accuracy {:.4}",
            rec.cycle, rec.labeled_size, rec.test_accuracy
        );
        records.push(rec.clone());
    });

    // curve rows are written even for a run that stopped early
    let mut curve = String::from("cycle,labeled_size,strategy,seed,test_accuracy,r_avg,wall_clock_s\n");
    for r in &records {
        let _ = writeln!(
            curve,
            "{},{},{},{},{},{},{:.6}",
            r.cycle,
            r.labeled_size,
            al.strategy,
            cfg.seed,
            format_f64(r.test_accuracy),
            r.r_avg.map(format_f64).unwrap_or_default(),
            r.wall_clock_s
        );
    }
    run.write("curves/learning-curve.csv", curve.as_bytes())?;
    let history: Vec<HistoryEntry> = records
        .iter()
        .map(|r| HistoryEntry {
            cycle: r.cycle,
            labeled_size: r.labeled_size,
            test_accuracy: r.test_accuracy,
            r_avg: r.r_avg,
            query_r_mean: r.query_r_mean,
            pool_r_mean: r.pool_r_mean,
            queried: &r.queried,
        })
        .collect();
    run.write_json(
        "metrics/al-history.json",
        &json!({ "strategy": al.strategy, "seed": cfg.seed, "cycles": history }),
    )?;

    let out = result?;
    run.write("checkpoints/initial.txt", model_to_string(&out.initial_model).as_bytes())?;
    for cp in &out.checkpoints {
        run.write(&format!("checkpoints/{}.txt", cp.label), model_to_string(&cp.model).as_bytes())?;
        let ids = cp.labeled.ids().join("\n") + "\n";
        run.write(&format!("checkpoints/{}.labeled.txt", cp.label), ids.as_bytes())?;
    }
    Ok((out.checkpoints, records))
}

fn write_benchmark(run: &mut RunDir, results: &BenchmarkResults) -> Result<()> {
    run.write_json("metrics/ood-metrics.json", results)?;
    for block in &results.blocks {
        run.write(
            &format!("metrics/histograms-{}.csv", block.checkpoint),
            histograms_to_csv(&block.histograms).as_bytes(),
        )?;
    }
    let failed: Vec<String> = results
        .rows()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("{}/{}/{}: {e}", r.checkpoint, r.scorer, r.set))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::MetricUndefined(failed.join("; ")))
    }
}

fn ood_eval(run: &mut RunDir, cfg: &ExperimentConfig, suite: &DataSuite, model_path: Option<&Path>) -> Result<()> {
    let model = obtain_model(cfg, suite, model_path)?;
    let checkpoint = Checkpoint {
        label: "final".into(),
        model,
        labeled: suite.train.clone(),
    };
    let bench = OodBenchmark {
        ind_eval: suite.test.clone(),
        ood_sets: suite.ood.clone(),
        scorer: cfg.scorer_setup(),
    };
    let results = run_benchmark(&[checkpoint], &bench);
    write_benchmark(run, &results)
}

fn optimize_steepness(
    run: &mut RunDir,
    cfg: &ExperimentConfig,
    suite: &DataSuite,
    model_path: Option<&Path>,
) -> Result<()> {
    let space = cfg
        .steepness
        .search
        .as_ref()
        .ok_or_else(|| Error::Config("optimize-steepness needs steepness.search".into()))?;
    let model = obtain_model(cfg, suite, model_path)?;
    let search = optimize(&model, &suite.train, space, cfg.scorer.class_key)?;
    run.write("metrics/steepness-audit.csv", search.to_csv().as_bytes())?;
    run.write_json(
        "metrics/steepness.json",
        &json!({
            "alpha_opt": search.alpha_opt,
            "best_r_avg": search.best_r_avg,
            "combinations": search.table.len(),
            "monotone": space.monotone,
        }),
    )
}

fn subset(run: &mut RunDir, cfg: &ExperimentConfig, suite: &DataSuite, model_path: Option<&Path>) -> Result<()> {
    let model = obtain_model(cfg, suite, model_path)?;
    let policy = cfg.subset.unwrap_or_default();
    let full = ComparisonSet::build_keyed(&model, &suite.train, &cfg.steepness(), cfg.scorer.class_key)?;
    let reduced = full.reduce(policy.radius, policy.fraction)?;
    run.write("metrics/comparison-set.csv", full.to_csv().as_bytes())?;
    run.write("metrics/subset.csv", reduced.to_csv().as_bytes())?;
    let per_class: Vec<_> = full
        .per_class()
        .iter()
        .map(|(class, members)| {
            json!({
                "class": class,
                "size": members.len(),
                "budget": class_budget(policy.fraction, members.len()),
                "kept": reduced.class_indices(*class).len(),
            })
        })
        .collect();
    run.write_json(
        "metrics/subset.json",
        &json!({
            "policy": policy,
            "full_size": full.len(),
            "reduced_size": reduced.len(),
            "per_class": per_class,
        }),
    )
}

fn life_cycle(run: &mut RunDir, cfg: &ExperimentConfig, suite: &DataSuite) -> Result<()> {
    let (checkpoints, records) = al_run(run, cfg, suite)?;
    let mut setup = cfg.scorer_setup();
    setup.options.mode = ScoreMode::Sisome;
    let bench = OodBenchmark {
        ind_eval: suite.test.clone(),
        ood_sets: suite.ood.clone(),
        scorer: setup,
    };
    let results = run_benchmark(&checkpoints, &bench);

    let mut summary = String::from("cycle,labeled_size,test_accuracy,r_avg,scorer,set,auroc,fpr95\n");
    for block in &results.blocks {
        let cycle: usize = block
            .checkpoint
            .trim_start_matches("cycle_")
            .parse()
            .unwrap_or_default();
        let rec = records.iter().find(|r| r.cycle == cycle);
        for row in block.rows.iter().chain(&block.aggregates) {
            let _ = writeln!(
                summary,
                "{cycle},{},{},{},{},{},{},{}",
                rec.map(|r| r.labeled_size).unwrap_or_default(),
                rec.map(|r| format_f64(r.test_accuracy)).unwrap_or_default(),
                block.r_avg.map(format_f64).unwrap_or_default(),
                row.scorer,
                row.set,
                row.auroc.map(format_f64).unwrap_or_default(),
                row.fpr95.map(format_f64).unwrap_or_default()
            );
        }
    }
    run.write("metrics/life-cycle.csv", summary.as_bytes())?;
    write_benchmark(run, &results)
}
