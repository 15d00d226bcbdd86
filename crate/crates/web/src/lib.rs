//! WebAssembly bindings for the browser demo: pronunciation lookup, a small
//! in-page training run on the synthetic corpus, and sentence analysis.
//!
//! Every export returns a JSON string; the plain-Rust functions behind them
//! are usable (and tested) natively.

use std::cell::RefCell;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use punnet::config::{AlphaPVariant, RunConfig, Task};
use punnet::data::{self, Example};
use punnet::experiment::{self, Env};
use punnet::heads::{EpochLog, PunModel};
use punnet::numerics::seeded_rng;
use punnet::numerics::Params;
use punnet::phonattn::PhonAttn;
use punnet::{PunError, Result};

struct Demo {
    env: Env,
    detector: PunModel<f32>,
    locator: PunModel<f32>,
}

thread_local! {
    static DEMO: RefCell<Option<Demo>> = const { RefCell::new(None) };
}

#[derive(Serialize)]
pub struct WordPron {
    pub word: String,
    pub known: bool,
    pub phonemes: Vec<String>,
    /// Weights of a freshly initialized phoneme attention layer.
    pub weights: Vec<f32>,
}

/// Looks up each whitespace-separated word in the built-in dictionary.
pub fn g2p_words(words: &str, seed: u64) -> Result<Vec<WordPron>> {
    let lex = punnet::phonodict::PronunciationLexicon::mini();
    let mut params = Params::<f32>::new();
    let attn = PhonAttn::declare(
        lex.inventory().len(),
        16,
        8,
        AlphaPVariant::Softmax,
        &mut params,
        &mut seeded_rng(seed),
    )?;
    words
        .split_whitespace()
        .map(|w| {
            let pron = lex.lookup(w)?;
            let (_, weights) = attn.pronunciation_embed(&params, &pron)?;
            Ok(WordPron {
                word: w.to_string(),
                known: lex.contains(w),
                phonemes: lex
                    .symbols_of(&pron)
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
                weights,
            })
        })
        .collect()
}

#[derive(Serialize)]
pub struct TaskRun {
    pub best_epoch: usize,
    pub log: Vec<(usize, f64, Option<f64>)>,
}

#[derive(Serialize)]
pub struct TrainSummary {
    pub sentences: usize,
    pub positives: usize,
    pub detection: TaskRun,
    pub location: TaskRun,
}

fn demo_config(task: Task, epochs: usize, seed: u64) -> RunConfig {
    RunConfig {
        task,
        d_c: 16,
        d_p: 16,
        d_a: 8,
        layers: 1,
        heads: 2,
        ff_width: 32,
        max_len: 32,
        lr: 1e-3,
        dropout: 0.0,
        batch_size: 8,
        epochs,
        seed,
        ..RunConfig::default()
    }
}

fn summarize(log: &[EpochLog], best_epoch: usize) -> TaskRun {
    TaskRun {
        best_epoch,
        log: log.iter().map(|e| (e.epoch, e.loss, e.dev_f1)).collect(),
    }
}

/// Trains a detector and a locator on a synthetic corpus and keeps them for
/// [`analyze_sentence`]. The training set doubles as the selection set.
pub fn train_models(sentences: usize, epochs: usize, seed: u64) -> Result<TrainSummary> {
    if !(1..=500).contains(&epochs) {
        return Err(PunError::arg("epochs must be between 1 and 500"));
    }
    let env = Env::mini();
    let corpus = data::preprocess_all(&data::synthetic_corpus(sentences, seed)).examples;
    let (_, positives, _) = data::label_counts(&corpus);
    let located = experiment::task_subset(&corpus, Task::Location);
    let (detector, det) = experiment::fit(
        &demo_config(Task::Detection, epochs, seed),
        &env,
        &corpus,
        &corpus,
    )?;
    let (locator, loc) = experiment::fit(
        &demo_config(Task::Location, epochs, seed),
        &env,
        &located,
        &located,
    )?;
    let summary = TrainSummary {
        sentences: corpus.len(),
        positives,
        detection: summarize(&det.log, det.best_epoch),
        location: summarize(&loc.log, loc.best_epoch),
    };
    DEMO.with(|d| {
        *d.borrow_mut() = Some(Demo {
            env,
            detector,
            locator,
        })
    });
    Ok(summary)
}

#[derive(Serialize)]
pub struct TokenView {
    pub token: String,
    pub phonemes: Vec<String>,
    pub phoneme_weights: Vec<f32>,
    pub salience: f32,
    pub pun_probability: f32,
}

#[derive(Serialize)]
pub struct SentenceView {
    pub pun_probability: f32,
    pub is_pun: bool,
    pub pun_index: usize,
    pub tokens: Vec<TokenView>,
}

/// Detects and locates with the trained demo models.
pub fn analyze_sentence(sentence: &str) -> Result<SentenceView> {
    let raw = Example::new("input", data::tokenize(sentence), 0, None);
    let ex = data::preprocess(&raw).ok_or_else(|| PunError::arg("sentence has no words"))?;
    DEMO.with(|d| {
        let d = d.borrow();
        let demo = d
            .as_ref()
            .ok_or_else(|| PunError::arg("train the demo models first"))?;
        let det = demo
            .detector
            .analyze(&demo.detector.prepare(&ex, &demo.env.lexicon)?)?;
        let inst = demo.locator.prepare(&ex, &demo.env.lexicon)?;
        let loc = demo.locator.analyze(&inst)?;
        let salience = loc.salience();
        let tokens = inst
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| TokenView {
                token: t.clone(),
                phonemes: demo
                    .env
                    .lexicon
                    .symbols_of(&inst.prons[i])
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
                phoneme_weights: loc.alpha_p.get(i).cloned().unwrap_or_default(),
                salience: salience[i],
                pun_probability: loc.location.probabilities[i],
            })
            .collect();
        Ok(SentenceView {
            pun_probability: det.detection.probability[1],
            is_pun: det.detection.label == 1,
            pun_index: loc.location.indices.first().copied().unwrap_or(0),
            tokens,
        })
    })
}

fn to_js<S: Serialize>(r: Result<S>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn g2p(words: &str) -> std::result::Result<String, JsError> {
    to_js(g2p_words(words, 1))
}

#[wasm_bindgen]
pub fn train(sentences: u32, epochs: u32, seed: u32) -> std::result::Result<String, JsError> {
    to_js(train_models(
        sentences as usize,
        epochs as usize,
        u64::from(seed),
    ))
}

#[wasm_bindgen]
pub fn analyze(sentence: &str) -> std::result::Result<String, JsError> {
    to_js(analyze_sentence(sentence))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g2p_marks_unknown_words() {
        let out = g2p_words("sale zzyzx", 1).unwrap();
        assert_eq!(out[0].phonemes, ["S", "EY", "L"]);
        assert!(out[0].known);
        assert!((out[0].weights.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(!out[1].known);
        assert_eq!(out[1].phonemes, ["UNK"]);
    }

    #[test]
    fn analyze_requires_training() {
        DEMO.with(|d| *d.borrow_mut() = None);
        assert!(analyze_sentence("a sale by the boat").is_err());
    }

    #[test]
    fn train_then_analyze() {
        let summary = train_models(30, 5, 3).unwrap();
        assert_eq!(summary.detection.log.len(), 5);
        let view = analyze_sentence("The captain held a sale on his boat!").unwrap();
        assert_eq!(view.tokens.len(), 8);
        assert!(view
            .tokens
            .iter()
            .all(|t| (0.0..=1.0).contains(&t.pun_probability)));
        assert!((0.0..=1.0).contains(&view.pun_probability));
        assert!(view.pun_index < 8);
        assert!(analyze_sentence("?!").is_err());
    }
}
