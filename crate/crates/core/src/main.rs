use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use punnet::config::{RunConfig, Task};
use punnet::data::{self, Example, GoldKind};
use punnet::experiment::{self, Env, Report};
use punnet::heads::{Checkpoint, PunModel};
use punnet::PunError;

#[derive(Parser)]
#[command(
    name = "punnet",
    version,
    about = "Pun detection and location with pronunciation attention"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Config file of `key = value` lines
    #[arg(long, global = true, env = "PUNNET_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// `detection` or `location`
    #[arg(long, global = true)]
    task: Option<String>,
    /// Seed for initialization, shuffling and folds
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset in JSON Lines
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// CMU pronouncing dictionary (built-in mini dictionary if unset)
    #[arg(long, global = true)]
    cmudict: Option<String>,
    /// Pretrained phoneme vectors, one `SYMBOL v1 v2 ...` per line
    #[arg(long, global = true)]
    phoneme_init: Option<String>,
    /// Checkpoint path (default: <out>/model.ckpt)
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// Precomputed contextual embeddings for the `precomputed` encoder
    #[arg(long, global = true)]
    embeddings: Option<String>,
    /// Output directory for reports
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and save a checkpoint
    Train,
    /// Score a checkpoint on a dataset
    Evaluate,
    /// k-fold cross-validation
    Cv,
    /// Classify sentences with a checkpoint
    Predict {
        /// Sentences to classify; the dataset is used when none are given
        sentences: Vec<String>,
        /// Print JSON lines
        #[arg(long)]
        json: bool,
    },
    /// Detect with one checkpoint, then locate with another
    Pipeline {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        locator: PathBuf,
    },
    /// Cross-validate over a grid of phoneme embedding and attention sizes
    Sweep {
        #[arg(long, value_delimiter = ',')]
        d_p: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        d_a: Option<Vec<usize>>,
    },
    /// Print token salience and phoneme attention for a sentence
    InspectAttention {
        sentence: String,
        /// Token index or word whose phoneme weights are shown (default: located pun)
        #[arg(long)]
        word: Option<String>,
    },
    /// Finite-difference gradient check of the full model in 64-bit mode
    GradCheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Print dictionary pronunciations
    G2p { words: Vec<String> },
    /// Convert a benchmark distribution to JSON Lines
    Convert {
        #[command(subcommand)]
        source: ConvertSource,
    },
    /// Write a generated corpus with planted puns as JSON Lines
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum ConvertSource {
    Semeval {
        #[arg(long)]
        xml: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Expected gold kind: detection or location (detected when omitted)
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        output: PathBuf,
    },
    Ptd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn resolve_config(g: &GlobalOpts, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(path) = &g.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("task", g.task.clone()),
        ("seed", g.seed.map(|s| s.to_string())),
        ("dataset", g.dataset.clone()),
        ("cmudict", g.cmudict.clone()),
        ("phoneme_init", g.phoneme_init.clone()),
        ("checkpoint", g.checkpoint.clone()),
        ("embeddings", g.embeddings.clone()),
        ("out", g.out.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &g.set {
        cfg.apply_assignment(kv)?;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(cfg: &RunConfig) -> Result<Vec<Example>> {
    if cfg.dataset.is_empty() {
        return Err(PunError::Usage("no dataset given (--dataset or dataset = ...)".into()).into());
    }
    Ok(experiment::load_dataset(&cfg.dataset)?)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    if cfg.checkpoint.is_empty() {
        Path::new(&cfg.out).join("model.ckpt")
    } else {
        PathBuf::from(&cfg.checkpoint)
    }
}

/// Loads a checkpoint with the dictionary and embeddings its config names;
/// `--cmudict` and `--embeddings` override the stored paths.
fn load_model(path: &Path, g: &GlobalOpts) -> Result<(PunModel<f32>, Env)> {
    let ckpt = Checkpoint::load(path)?;
    let (mut mcfg, _) = ckpt.config_and_vocab()?;
    if let Some(c) = &g.cmudict {
        mcfg.cmudict = c.clone();
    }
    if let Some(e) = &g.embeddings {
        mcfg.embeddings = e.clone();
    }
    let env = Env::from_config(&mcfg)?;
    let model = PunModel::from_checkpoint(&ckpt, env.lexicon.inventory(), env.precomputed.clone())?;
    Ok((model, env))
}

fn sentence_example(id: String, text: &str) -> Result<Example> {
    let ex = Example::new(id, data::tokenize(text), 0, None);
    data::preprocess(&ex).with_context(|| format!("no words left in {text:?}"))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Train => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let env = Env::from_config(&cfg)?;
            let all = experiment::task_subset(&dataset(&cfg)?, cfg.task);
            let (train, dev) = experiment::train_dev_split(&all, cfg.dev_fraction, cfg.seed);
            let (model, outcome) = experiment::fit(&cfg, &env, &train, &dev)?;
            let path = checkpoint_path(&cfg);
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            model.save(&path)?;
            let mut table = format!("{:>5} {:>10} {:>8}\n", "epoch", "loss", "dev F1");
            for e in &outcome.log {
                let f1 = e.dev_f1.map_or_else(|| "-".into(), |f| format!("{f:.2}"));
                table.push_str(&format!("{:>5} {:>10.5} {:>8}\n", e.epoch, e.loss, f1));
            }
            table.push_str(&format!(
                "best epoch {}, checkpoint {}\n",
                outcome.best_epoch,
                path.display()
            ));
            print!("{table}");
            let results = serde_json::json!({
                "train": train.len(),
                "dev": dev.len(),
                "best_epoch": outcome.best_epoch,
                "epochs": outcome.log.iter().map(|e| serde_json::json!({
                    "epoch": e.epoch, "loss": e.loss, "dev_f1": e.dev_f1
                })).collect::<Vec<_>>(),
            });
            Report::new("train", &model.config, results).write(&cfg.out, &model.config, &table)?;
        }
        Command::Evaluate => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let (model, env) = load_model(&checkpoint_path(&cfg), g)?;
            let result = experiment::evaluate(&model, &env.lexicon, &dataset(&cfg)?)?;
            let table = experiment::metrics_table(&result.task, &result.metrics, result.accuracy);
            print!("{table}");
            Report::new("evaluate", &model.config, &result).write(
                &cfg.out,
                &model.config,
                &table,
            )?;
        }
        Command::Cv => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let env = Env::from_config(&cfg)?;
            let cv = experiment::cross_validate(&cfg, &env, &dataset(&cfg)?)?;
            let table = experiment::cv_table(&cv);
            print!("{table}");
            Report::new("cv", &cfg, &cv).write(&cfg.out, &cfg, &table)?;
        }
        Command::Predict { sentences, json } => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let (model, env) = load_model(&checkpoint_path(&cfg), g)?;
            let examples = if sentences.is_empty() {
                dataset(&cfg)?
            } else {
                sentences
                    .iter()
                    .enumerate()
                    .map(|(i, s)| sentence_example(format!("s{}", i + 1), s))
                    .collect::<Result<_>>()?
            };
            for ex in &examples {
                let a = model.analyze(&model.prepare(ex, &env.lexicon)?)?;
                let words: Vec<&str> = a
                    .location
                    .indices
                    .iter()
                    .map(|&i| ex.tokens[i].as_str())
                    .collect();
                if json {
                    let line = match model.config.task {
                        Task::Detection => serde_json::json!({
                            "id": ex.id, "label": a.detection.label, "probability": a.detection.probability[1],
                        }),
                        Task::Location => serde_json::json!({
                            "id": ex.id, "pun_index": a.location.indices, "words": words,
                        }),
                    };
                    println!("{line}");
                } else {
                    match model.config.task {
                        Task::Detection => println!(
                            "{}\t{}\t{:.4}\t{}",
                            ex.id,
                            a.detection.label,
                            a.detection.probability[1],
                            ex.tokens.join(" ")
                        ),
                        Task::Location => {
                            println!("{}\t{}\t{}", ex.id, words.join(","), ex.tokens.join(" "))
                        }
                    }
                }
            }
        }
        Command::Pipeline { detector, locator } => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let (det, env) = load_model(&detector, g)?;
            let (loc, _) = load_model(&locator, g)?;
            if det.config.task != Task::Detection || loc.config.task != Task::Location {
                bail!(PunError::Validation(
                    "pipeline needs a detection and a location checkpoint".into()
                ));
            }
            let m = experiment::pipeline(&det, &loc, &env.lexicon, &dataset(&cfg)?)?;
            let table = experiment::metrics_table("pipeline", &m, None);
            print!("{table}");
            Report::new("pipeline", &cfg, &m).write(&cfg.out, &cfg, &table)?;
        }
        Command::Sweep { d_p, d_a } => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let env = Env::from_config(&cfg)?;
            let d_ps = d_p.unwrap_or_else(|| experiment::SWEEP_GRID.to_vec());
            let d_as = d_a.unwrap_or_else(|| experiment::SWEEP_GRID.to_vec());
            let cells = experiment::sweep(&cfg, &env, &dataset(&cfg)?, &d_ps, &d_as)?;
            let csv = experiment::sweep_csv(&cells);
            std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out))?;
            let csv_path = Path::new(&cfg.out).join("sweep.csv");
            std::fs::write(&csv_path, &csv)
                .with_context(|| format!("writing {}", csv_path.display()))?;
            let mut table = format!("{:>5} {:>5} {:>9}\n", "d_P", "d_A", "mean F1");
            for c in &cells {
                table.push_str(&format!(
                    "{:>5} {:>5} {:>9.2}\n",
                    c.d_p, c.d_a, c.cv.mean.f1
                ));
            }
            print!("{table}");
            Report::new("sweep", &cfg, &cells).write(&cfg.out, &cfg, &table)?;
        }
        Command::InspectAttention { sentence, word } => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let (model, env) = load_model(&checkpoint_path(&cfg), g)?;
            let ex = sentence_example("input".into(), &sentence)?;
            let inst = model.prepare(&ex, &env.lexicon)?;
            let a = model.analyze(&inst)?;
            println!("{:<16} {:>9} {:>9}", "token", "salience", "pun prob");
            for (i, (tok, s)) in ex.tokens.iter().zip(a.salience()).enumerate() {
                println!("{tok:<16} {s:>9.4} {:>9.4}", a.location.probabilities[i]);
            }
            println!(
                "detection: label {} (p = {:.4})",
                a.detection.label, a.detection.probability[1]
            );
            let idx = match word {
                None => a.location.indices.first().copied().unwrap_or(0),
                Some(w) => match w.parse::<usize>() {
                    Ok(i) if i < ex.tokens.len() => i,
                    Ok(i) => bail!(PunError::arg(format!("token index {i} out of range"))),
                    Err(_) => ex
                        .tokens
                        .iter()
                        .position(|t| t.eq_ignore_ascii_case(&w))
                        .with_context(|| format!("{w:?} is not a token of the sentence"))?,
                },
            };
            if a.alpha_p.is_empty() {
                println!("model has no phoneme attention");
            } else {
                let symbols = env.lexicon.symbols_of(&inst.prons[idx]);
                println!("phoneme attention for {:?}:", ex.tokens[idx]);
                for (s, w) in symbols.iter().zip(&a.alpha_p[idx]) {
                    println!("  {s:<4} {w:.4}");
                }
            }
        }
        Command::GradCheck { seeds, tolerance } => {
            let base = experiment::grad_check_config(RunConfig::default().seed);
            let cfg = resolve_config(g, base)?;
            let env = Env::from_config(&cfg)?;
            let rows = experiment::grad_check_suite(&cfg, &env, seeds)?;
            let mut worst: f64 = 0.0;
            for r in &rows {
                println!(
                    "seed {:>4} {:<9} params {:>6} max rel err {:.3e} ({})",
                    r.seed, r.task, r.checked, r.max_rel_err, r.worst_param
                );
                worst = worst.max(r.max_rel_err);
            }
            if worst < tolerance {
                println!("max rel err {worst:.3e} < {tolerance:e}, PASS");
            } else {
                println!("max rel err {worst:.3e} >= {tolerance:e}, FAIL");
                bail!(PunError::Validation("gradient check failed".into()));
            }
        }
        Command::G2p { words } => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let env = Env::from_config(&cfg)?;
            if words.is_empty() {
                bail!(PunError::Usage("g2p needs at least one word".into()));
            }
            for w in &words {
                let p = env.lexicon.lookup(w)?;
                println!("{w} {}", env.lexicon.symbols_of(&p).join(" "));
            }
        }
        Command::Convert { source } => {
            let (examples, output) = match source {
                ConvertSource::Semeval {
                    xml,
                    gold,
                    kind,
                    output,
                } => {
                    let kind = match kind.as_deref() {
                        None => None,
                        Some("detection") => Some(GoldKind::Detection),
                        Some("location") => Some(GoldKind::Location),
                        Some(k) => bail!(PunError::Usage(format!(
                            "unknown gold kind {k:?}; expected detection or location"
                        ))),
                    };
                    (data::adapt_semeval(xml, gold, kind)?, output)
                }
                ConvertSource::Ptd { input, output } => (data::adapt_ptd(input)?, output),
            };
            data::write_canonical(&output, &examples)?;
            let (n, pos, located) = data::label_counts(&examples);
            println!(
                "{n} examples, {pos} with puns, {located} with a pun position -> {}",
                output.display()
            );
        }
        Command::Synth { n, output } => {
            let cfg = resolve_config(g, RunConfig::default())?;
            let examples = data::synthetic_corpus(n, cfg.seed);
            data::write_canonical(&output, &examples)?;
            println!("{} examples -> {}", examples.len(), output.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| {
            if let Some(p) = e.downcast_ref::<PunError>() {
                Some(p.exit_code() as u8)
            } else {
                e.downcast_ref::<std::io::Error>().map(|_| 2)
            }
        })
        .unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
