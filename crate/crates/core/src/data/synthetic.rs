//! Generated sentences with planted homophone puns.
//!
//! A positive sentence places a word next to a context word that evokes its
//! homophone ("sale" with "boat" evokes "sail"); that word is the gold pun.
//! Negatives fill the same slot with an unrelated noun. Every word is in the
//! bundled pronunciation dictionary.

use rand::seq::SliceRandom;
use rand::Rng;

use super::Example;
use crate::numerics::seeded_rng;

/// `(pun word, context word evoking its homophone)`.
pub const PLANTED: &[(&str, &str)] = &[
    ("sale", "boat"),
    ("sail", "store"),
    ("see", "coast"),
    ("sun", "father"),
    ("son", "sky"),
    ("flower", "bakery"),
    ("flour", "garden"),
    ("night", "castle"),
    ("knight", "dark"),
    ("bare", "forest"),
    ("pain", "window"),
    ("piece", "war"),
    ("peace", "cake"),
    ("hare", "barber"),
    ("hair", "rabbit"),
    ("male", "letter"),
    ("wait", "gym"),
    ("weight", "clock"),
    ("dear", "forest"),
    ("bred", "bakery"),
    ("tale", "dog"),
    ("tail", "story"),
    ("soul", "fish"),
    ("sole", "spirit"),
    ("write", "road"),
];

const NEUTRAL: &[&str] = &[
    "apple", "chair", "river", "table", "book", "cup", "ship", "shop",
];
const AGENTS: &[&str] = &["man", "girl", "sailor", "baker", "farmer", "child"];
const VERBS: &[&str] = &["saw", "found", "wanted", "loved", "bought"];
const ADJECTIVES: &[&str] = &["old", "new"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or_default()
}

/// Tokens and the index of the slot word.
fn sentence<R: Rng>(rng: &mut R, word: &str, ctx: &str) -> (Vec<String>, usize) {
    let agent = pick(rng, AGENTS);
    let verb = pick(rng, VERBS);
    let (toks, idx): (Vec<&str>, usize) = match rng.gen_range(0..4) {
        0 => (vec!["The", agent, verb, "the", word, "near", "the", ctx], 4),
        1 => (vec!["A", word, "by", "the", ctx], 1),
        2 => (
            vec!["His", ctx, "and", "her", word, "is", pick(rng, ADJECTIVES)],
            4,
        ),
        _ => (
            vec!["At", "the", ctx, ",", "the", agent, verb, "the", word, "!"],
            8,
        ),
    };
    (toks.into_iter().map(str::to_string).collect(), idx)
}

/// `n` sentences, about two thirds of them puns, in shuffled order. Raw
/// tokens may include punctuation, so run preprocessing before training.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = seeded_rng(seed);
    let n_pos = (2 * n + 1) / 3;
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let &(pun, ctx) = PLANTED.choose(&mut rng).expect("non-empty table");
            let id = format!("syn_{i:04}");
            if pos {
                let (tokens, idx) = sentence(&mut rng, pun, ctx);
                Example::new(id, tokens, 1, Some(idx))
            } else {
                let noun = pick(&mut rng, NEUTRAL);
                let (tokens, _) = sentence(&mut rng, noun, ctx);
                Example::new(id, tokens, 0, None)
            }
        })
        .collect()
}
