//! Training runs, cross-validation, sweeps and their reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EncoderKind, RunConfig, Task, KEYS};
use crate::data::{
    self, accuracy, make_folds, score_detection, score_location, Example, MetricsReport,
};
use crate::encoder::{PrecomputedEmbeddings, Vocabulary};
use crate::error::{PunError, Result};
use crate::heads::{self, Instance, PunModel, TrainConfig, TrainOutcome};
use crate::numerics::{gradcheck, seeded_rng};
use crate::phonodict::{ParseOptions, PronunciationLexicon};

/// Resources shared by every model of a run.
#[derive(Debug, Clone)]
pub struct Env {
    pub lexicon: PronunciationLexicon,
    pub precomputed: Option<Arc<PrecomputedEmbeddings>>,
}

impl Env {
    /// The configured dictionary (bundled subset when unset) and, for the
    /// precomputed encoder, the embeddings file.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let opts = ParseOptions {
            strip_stress: cfg.strip_stress,
        };
        let lexicon = if cfg.cmudict.is_empty() {
            PronunciationLexicon::parse(crate::phonodict::MINI_CMUDICT.as_bytes(), opts)?
        } else {
            PronunciationLexicon::from_path(&cfg.cmudict, opts)?
        };
        let precomputed = match cfg.encoder {
            EncoderKind::Toy => None,
            EncoderKind::Precomputed => {
                if cfg.embeddings.is_empty() {
                    return Err(PunError::Validation(
                        "encoder = precomputed needs embeddings".into(),
                    ));
                }
                Some(Arc::new(PrecomputedEmbeddings::load(&cfg.embeddings)?))
            }
        };
        Ok(Env {
            lexicon,
            precomputed,
        })
    }

    pub fn mini() -> Self {
        Env {
            lexicon: PronunciationLexicon::mini(),
            precomputed: None,
        }
    }
}

/// Reads a canonical dataset and applies preprocessing.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let raw = data::load_canonical(path)?;
    Ok(data::preprocess_all(&raw).examples)
}

/// Examples a task is trained and scored on: all for detection, those with
/// a gold pun position for location.
pub fn task_subset(examples: &[Example], task: Task) -> Vec<Example> {
    match task {
        Task::Detection => examples.to_vec(),
        Task::Location => examples
            .iter()
            .filter(|e| e.pun_index.is_some())
            .cloned()
            .collect(),
    }
}

/// Seeded split into training and dev examples.
pub fn train_dev_split(
    examples: &[Example],
    dev_fraction: f64,
    seed: u64,
) -> (Vec<Example>, Vec<Example>) {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut seeded_rng(seed.wrapping_add(1)));
    let n_dev = (examples.len() as f64 * dev_fraction).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| examples[i].clone()).collect();
    (pick(&idx[n_dev..]), pick(&idx[..n_dev]))
}

pub fn new_model(cfg: &RunConfig, env: &Env, train: &[Example]) -> Result<PunModel<f32>> {
    let vocab = match cfg.encoder {
        EncoderKind::Toy => {
            Vocabulary::build(train.iter().map(|e| e.tokens.as_slice()), cfg.min_count)
        }
        EncoderKind::Precomputed => Vocabulary::default(),
    };
    PunModel::new(
        cfg.clone(),
        vocab,
        env.lexicon.inventory(),
        env.precomputed.clone(),
    )
}

/// Builds a model from the training examples and trains it on `cfg.task`.
pub fn fit(
    cfg: &RunConfig,
    env: &Env,
    train: &[Example],
    dev: &[Example],
) -> Result<(PunModel<f32>, TrainOutcome)> {
    let mut model = new_model(cfg, env, train)?;
    let train_set = model.prepare_all(train, &env.lexicon)?;
    let dev_set = model.prepare_all(dev, &env.lexicon)?;
    let outcome = heads::train(&mut model, &train_set, &dev_set, &TrainConfig::from(cfg))?;
    Ok((model, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub task: String,
    pub examples: usize,
    pub metrics: MetricsReport,
    /// Detection only, percent.
    pub accuracy: Option<f64>,
}

pub fn evaluate(
    model: &PunModel<f32>,
    lexicon: &PronunciationLexicon,
    examples: &[Example],
) -> Result<EvalResult> {
    let task = model.config.task;
    let subset = task_subset(examples, task);
    let insts = model.prepare_all(&subset, lexicon)?;
    evaluate_instances(model, &insts, task)
}

fn evaluate_instances(model: &PunModel<f32>, insts: &[Instance], task: Task) -> Result<EvalResult> {
    let (metrics, accuracy) = match task {
        Task::Detection => {
            let preds = insts
                .iter()
                .map(|i| Ok(model.detect(i)?.label))
                .collect::<Result<Vec<_>>>()?;
            let golds: Vec<usize> = insts.iter().map(|i| i.label).collect();
            (
                score_detection(&preds, &golds)?,
                Some(data::accuracy(&preds, &golds)?),
            )
        }
        Task::Location => {
            let preds = insts
                .iter()
                .map(|i| Ok(model.locate(i)?.indices))
                .collect::<Result<Vec<_>>>()?;
            let golds: Vec<Option<usize>> = insts.iter().map(|i| i.pun_index).collect();
            (score_location(&preds, &golds)?, None)
        }
    };
    Ok(EvalResult {
        task: task.to_string(),
        examples: insts.len(),
        metrics,
        accuracy,
    })
}

/// Detect-then-locate scores of two trained models over a dataset.
pub fn pipeline(
    detector: &PunModel<f32>,
    locator: &PunModel<f32>,
    lexicon: &PronunciationLexicon,
    examples: &[Example],
) -> Result<MetricsReport> {
    data::pipeline_eval(
        examples,
        |e| Ok(detector.detect(&detector.prepare(e, lexicon)?)?.label),
        |e| Ok(locator.locate(&locator.prepare(e, lexicon)?)?.indices),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
    pub accuracy: Option<f64>,
    /// F1 of predicting a pun everywhere (detection only).
    pub always_positive_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub task: String,
    pub folds: Vec<FoldResult>,
    /// Macro average over folds.
    pub mean: MeanScores,
    pub mean_always_positive_f1: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// k-fold cross-validation. Folds train in parallel; fold `f` seeds its
/// model with `seed + f`. Results come back in fold order.
pub fn cross_validate(cfg: &RunConfig, env: &Env, examples: &[Example]) -> Result<CvResult> {
    cfg.validate()?;
    let data = task_subset(examples, cfg.task);
    let plan = make_folds(data.len(), cfg.folds, cfg.seed, cfg.dev_fraction)?;
    let pick = |ids: &[usize]| -> Vec<Example> { ids.iter().map(|&i| data[i].clone()).collect() };
    let folds = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let mut fcfg = cfg.clone();
            fcfg.seed = cfg.seed.wrapping_add(f as u64);
            let (train, dev, test) = (pick(&fold.train), pick(&fold.dev), pick(&fold.test));
            let (model, outcome) = fit(&fcfg, env, &train, &dev)?;
            let insts = model.prepare_all(&test, &env.lexicon)?;
            let eval = evaluate_instances(&model, &insts, cfg.task)?;
            let always_positive_f1 = match cfg.task {
                Task::Detection => {
                    let golds: Vec<usize> = test.iter().map(|e| e.label as usize).collect();
                    Some(score_detection(&vec![1; golds.len()], &golds)?.f1)
                }
                Task::Location => None,
            };
            log::info!("fold {f}: F1 {:.2}", eval.metrics.f1);
            Ok(FoldResult {
                fold: f,
                train: train.len(),
                dev: dev.len(),
                test: test.len(),
                best_epoch: outcome.best_epoch,
                metrics: eval.metrics,
                accuracy: eval.accuracy,
                always_positive_f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_scores = MeanScores {
        precision: mean(folds.iter().map(|f| f.metrics.precision)),
        recall: mean(folds.iter().map(|f| f.metrics.recall)),
        f1: mean(folds.iter().map(|f| f.metrics.f1)),
    };
    let mean_always_positive_f1 = match cfg.task {
        Task::Detection => Some(mean(folds.iter().filter_map(|f| f.always_positive_f1))),
        Task::Location => None,
    };
    Ok(CvResult {
        task: cfg.task.to_string(),
        folds,
        mean: mean_scores,
        mean_always_positive_f1,
    })
}

/// Phoneme embedding and attention sizes tried by default.
pub const SWEEP_GRID: &[usize] = &[8, 16, 32, 64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub d_p: usize,
    pub d_a: usize,
    pub cv: CvResult,
}

/// Cross-validation for every `(d_P, d_A)` pair, cells in grid order.
pub fn sweep(
    cfg: &RunConfig,
    env: &Env,
    examples: &[Example],
    d_ps: &[usize],
    d_as: &[usize],
) -> Result<Vec<SweepCell>> {
    let cells: Vec<(usize, usize)> = d_ps
        .iter()
        .flat_map(|&p| d_as.iter().map(move |&a| (p, a)))
        .collect();
    cells
        .par_iter()
        .map(|&(d_p, d_a)| {
            let mut c = cfg.clone();
            c.d_p = d_p;
            c.d_a = d_a;
            Ok(SweepCell {
                d_p,
                d_a,
                cv: cross_validate(&c, env, examples)?,
            })
        })
        .collect()
}

/// `d_P,d_A,fold,precision,recall,f1`, one row per fold plus a `mean` row per cell.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("d_P,d_A,fold,precision,recall,f1\n");
    for c in cells {
        for f in &c.cv.folds {
            let m = &f.metrics;
            s.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4}\n",
                c.d_p, c.d_a, f.fold, m.precision, m.recall, m.f1
            ));
        }
        let m = &c.cv.mean;
        s.push_str(&format!(
            "{},{},mean,{:.4},{:.4},{:.4}\n",
            c.d_p, c.d_a, m.precision, m.recall, m.f1
        ));
    }
    s
}

/// Small end-to-end model dimensions used by the finite-difference suite.
pub fn grad_check_config(seed: u64) -> RunConfig {
    RunConfig {
        d_c: 8,
        d_p: 8,
        d_a: 8,
        layers: 2,
        heads: 2,
        ff_width: 16,
        max_len: 8,
        seed,
        ..RunConfig::default()
    }
}

fn grad_check_examples() -> Vec<Example> {
    let toks = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
    vec![
        Example::new("g1", toks("A sale by the boat"), 1, Some(1)),
        Example::new("g2", toks("His dog and her tale is"), 1, Some(4)),
        Example::new("g3", toks("the zzyzx cup"), 0, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub seed: u64,
    pub task: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Finite-difference check of the full model in 64-bit precision, both tasks,
/// over `seeds` consecutive seeds starting at `cfg.seed`.
pub fn grad_check_suite(cfg: &RunConfig, env: &Env, seeds: u64) -> Result<Vec<GradCheckRow>> {
    let examples = grad_check_examples();
    let mut rows = Vec::new();
    for s in 0..seeds {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(s);
        let vocab = Vocabulary::build(examples.iter().map(|e| e.tokens.as_slice()), 1);
        let model = PunModel::<f64>::new(
            c.clone(),
            vocab,
            env.lexicon.inventory(),
            env.precomputed.clone(),
        )?;
        let insts = model.prepare_all(&examples, &env.lexicon)?;
        for task in [Task::Detection, Task::Location] {
            let batch: Vec<&Instance> = insts
                .iter()
                .filter(|i| task == Task::Detection || i.pun_index.is_some())
                .collect();
            let rep = gradcheck::check(&model.params, gradcheck::DEFAULT_STEP, |g, vars| {
                model.loss(g, vars, &batch, task, None)
            })?;
            rows.push(GradCheckRow {
                seed: c.seed,
                task: task.to_string(),
                max_rel_err: rep.max_rel_err,
                worst_param: rep.worst_param,
                checked: rep.checked,
            });
        }
    }
    Ok(rows)
}

/// A report: timestamp, command, resolved config, seed and results.
#[derive(Debug, Clone, Serialize)]
pub struct Report<R> {
    pub generated_at_unix: u64,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub results: R,
}

impl<R: Serialize> Report<R> {
    pub fn new(command: &str, cfg: &RunConfig, results: R) -> Self {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Report {
            generated_at_unix: now,
            command: command.to_string(),
            seed: cfg.seed,
            config: KEYS
                .iter()
                .map(|k| (k.to_string(), cfg.get(k).unwrap_or_default()))
                .collect(),
            results,
        }
    }

    /// Pretty JSON; the timestamp sits alone on the second line.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json` and `report.txt` (header, `table`, config) into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, cfg: &RunConfig, table: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| PunError::path(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()).map_err(|e| PunError::path(&json, e))?;
        let txt = dir.join("report.txt");
        let mut f = std::fs::File::create(&txt).map_err(|e| PunError::path(&txt, e))?;
        writeln!(f, "# generated_at_unix {}", self.generated_at_unix)?;
        writeln!(f, "# command {}", self.command)?;
        f.write_all(table.as_bytes())?;
        writeln!(f, "\n# resolved config")?;
        f.write_all(cfg.to_text().as_bytes())?;
        Ok(json)
    }
}

/// Drops the timestamp line so reports of repeated runs can be compared.
pub fn without_timestamp(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.contains("generated_at_unix"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
}

pub fn cv_table(cv: &CvResult) -> String {
    let mut s = format!(
        "{:>5} {:>6} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9}\n",
        "fold", "train", "dev", "test", "best", "P", "R", "F1", "acc"
    );
    for f in &cv.folds {
        s.push_str(&format!(
            "{:>5} {:>6} {:>5} {:>5} {:>5} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
            f.fold,
            f.train,
            f.dev,
            f.test,
            f.best_epoch,
            f.metrics.precision,
            f.metrics.recall,
            f.metrics.f1,
            fmt_opt(f.accuracy)
        ));
    }
    s.push_str(&format!(
        "{:>5} {:>6} {:>5} {:>5} {:>5} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
        "mean", "", "", "", "", cv.mean.precision, cv.mean.recall, cv.mean.f1, ""
    ));
    if let Some(b) = cv.mean_always_positive_f1 {
        s.push_str(&format!("always-positive baseline F1 {b:.2}\n"));
    }
    s
}

pub fn metrics_table(label: &str, m: &MetricsReport, acc: Option<f64>) -> String {
    format!(
        "{:<10} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9} {:>9}\n{:<10} {:>6} {:>6} {:>6} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
        "", "tp", "fp", "fn", "P", "R", "F1", "acc", label, m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1,
        fmt_opt(acc)
    )
}

/// Accuracy of the detector over a labelled set, percent.
pub fn detection_accuracy(
    model: &PunModel<f32>,
    lexicon: &PronunciationLexicon,
    examples: &[Example],
) -> Result<f64> {
    let insts = model.prepare_all(examples, lexicon)?;
    let preds = insts
        .iter()
        .map(|i| Ok(model.detect(i)?.label))
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<usize> = insts.iter().map(|i| i.label).collect();
    accuracy(&preds, &golds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_corpus;

    fn tiny(task: Task) -> RunConfig {
        RunConfig {
            task,
            d_c: 8,
            d_p: 8,
            d_a: 4,
            layers: 1,
            heads: 2,
            ff_width: 16,
            max_len: 16,
            epochs: 2,
            lr: 1e-3,
            batch_size: 8,
            folds: 3,
            ..RunConfig::default()
        }
    }

    fn corpus(n: usize) -> Vec<Example> {
        data::preprocess_all(&synthetic_corpus(n, 4)).examples
    }

    #[test]
    fn cv_is_deterministic_and_ordered() {
        let env = Env::mini();
        let data = corpus(30);
        let a = cross_validate(&tiny(Task::Detection), &env, &data).unwrap();
        let b = cross_validate(&tiny(Task::Detection), &env, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.folds.iter().map(|f| f.fold).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(a.folds.iter().map(|f| f.test).sum::<usize>(), 30);
        assert!(a.mean_always_positive_f1.is_some());

        let loc = cross_validate(&tiny(Task::Location), &env, &data).unwrap();
        let located = data.iter().filter(|e| e.pun_index.is_some()).count();
        assert_eq!(loc.folds.iter().map(|f| f.test).sum::<usize>(), located);
    }

    #[test]
    fn report_json_stable_apart_from_timestamp() {
        let cfg = tiny(Task::Detection);
        let mut r1 = Report::new("cv", &cfg, vec![1, 2]);
        let r2 = Report::new("cv", &cfg, vec![1, 2]);
        r1.generated_at_unix += 17;
        assert_ne!(r1.to_json(), r2.to_json());
        assert_eq!(
            without_timestamp(&r1.to_json()),
            without_timestamp(&r2.to_json())
        );
        assert_eq!(
            r1.to_json().lines().nth(1).unwrap().trim_start(),
            format!("\"generated_at_unix\": {},", r1.generated_at_unix)
        );
        let v: serde_json::Value = serde_json::from_str(&r1.to_json()).unwrap();
        assert_eq!(v["config"]["d_c"], "8");
        assert_eq!(v["seed"], 42);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Task::Detection);
        Report::new("evaluate", &cfg, 3)
            .write(dir.path(), &cfg, "table\n")
            .unwrap();
        let txt = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(txt.starts_with("# generated_at_unix "));
        assert!(txt.contains("table\n"));
        let cfg_text = txt.split("# resolved config\n").nth(1).unwrap();
        assert_eq!(RunConfig::from_text(cfg_text).unwrap(), cfg);
    }

    #[test]
    fn sweep_rows() {
        let env = Env::mini();
        let data = corpus(24);
        let mut cfg = tiny(Task::Location);
        cfg.epochs = 1;
        let cells = sweep(&cfg, &env, &data, &[4, 8], &[2]).unwrap();
        assert_eq!(
            cells.iter().map(|c| (c.d_p, c.d_a)).collect::<Vec<_>>(),
            vec![(4, 2), (8, 2)]
        );
        let csv = sweep_csv(&cells);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "d_P,d_A,fold,precision,recall,f1");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[1].starts_with("4,2,0,"));
        assert!(lines[4].starts_with("4,2,mean,"));
    }

    #[test]
    fn split_is_seeded() {
        let data = corpus(20);
        let (t, d) = train_dev_split(&data, 0.1, 3);
        assert_eq!((t.len(), d.len()), (18, 2));
        assert_eq!(train_dev_split(&data, 0.1, 3), (t, d));
    }

    #[test]
    fn untrained_detector_near_chance_on_balanced_set() {
        let raw = corpus(120);
        let pos: Vec<Example> = raw
            .iter()
            .filter(|e| e.label == 1)
            .take(40)
            .cloned()
            .collect();
        let neg: Vec<Example> = raw
            .iter()
            .filter(|e| e.label == 0)
            .take(40)
            .cloned()
            .collect();
        assert_eq!((pos.len(), neg.len()), (40, 40));
        let balanced: Vec<Example> = pos.into_iter().chain(neg).collect();
        let env = Env::mini();
        let model = new_model(&RunConfig::default(), &env, &balanced).unwrap();
        let acc = detection_accuracy(&model, &env.lexicon, &balanced).unwrap();
        assert!((40.0..=60.0).contains(&acc), "{acc}");
    }

    #[test]
    fn grad_check_suite_passes() {
        let env = Env::mini();
        let rows = grad_check_suite(&grad_check_config(7), &env, 1).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
    }
}
