use std::sync::OnceLock;

use regex::Regex;

use super::Example;

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+(?:['’-]\w+)*|[^\w\s]+").unwrap())
}

fn punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{P}+$").unwrap())
}

fn digits_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{Nd}+$").unwrap())
}

/// Splits raw text into words and punctuation runs. Apostrophes and hyphens
/// inside a word stay with it.
pub fn tokenize(text: &str) -> Vec<String> {
    word_re()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Only Unicode punctuation characters.
pub fn is_punctuation(token: &str) -> bool {
    punct_re().is_match(token)
}

/// Only decimal digits.
pub fn is_numeric(token: &str) -> bool {
    digits_re().is_match(token)
}

fn dropped(token: &str) -> bool {
    is_numeric(token) || is_punctuation(token)
}

/// Drops numeric and punctuation tokens and remaps `pun_index`. Returns
/// `None` when nothing would be left. If the pun token itself is dropped the
/// example keeps its label but loses the index.
pub fn preprocess(ex: &Example) -> Option<Example> {
    let mut tokens = Vec::with_capacity(ex.tokens.len());
    let mut pun_index = None;
    for (i, t) in ex.tokens.iter().enumerate() {
        if dropped(t) {
            continue;
        }
        if ex.pun_index == Some(i) {
            pun_index = Some(tokens.len());
        }
        tokens.push(t.clone());
    }
    if tokens.is_empty() {
        return None;
    }
    if ex.pun_index.is_some() && pun_index.is_none() {
        log::warn!("example {}: pun token removed by preprocessing", ex.id);
    }
    Some(Example {
        id: ex.id.clone(),
        tokens,
        label: ex.label,
        pun_index,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub examples: Vec<Example>,
    /// Ids of sentences that became empty.
    pub excluded: Vec<String>,
}

pub fn preprocess_all(examples: &[Example]) -> Preprocessed {
    let mut out = Vec::with_capacity(examples.len());
    let mut excluded = Vec::new();
    for ex in examples {
        match preprocess(ex) {
            Some(p) => out.push(p),
            None => excluded.push(ex.id.clone()),
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} example(s) empty after preprocessing, excluded",
            excluded.len()
        );
    }
    Preprocessed {
        examples: out,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn drops_numbers_and_punctuation() {
        let ex = Example::new("a", toks(&["It", "costs", "12", "dollars", "!"]), 0, None);
        assert_eq!(
            preprocess(&ex).unwrap().tokens,
            toks(&["It", "costs", "dollars"])
        );
    }

    #[test]
    fn remaps_index() {
        let ex = Example::new("a", toks(&["I", "42", "saw", "sale"]), 1, Some(3));
        let p = preprocess(&ex).unwrap();
        assert_eq!(p.pun_index, Some(2));
        assert_eq!(p.tokens[2], "sale");
    }

    #[test]
    fn keeps_inner_apostrophes_and_hyphens() {
        assert_eq!(
            tokenize("Don't over-think it, 3 times!"),
            toks(&["Don't", "over-think", "it", ",", "3", "times", "!"])
        );
        let ex = Example::new("a", tokenize("Don't over-think it, 3 times!"), 0, None);
        assert_eq!(
            preprocess(&ex).unwrap().tokens,
            toks(&["Don't", "over-think", "it", "times"])
        );
    }

    #[test]
    fn unicode_punctuation() {
        for t in ["“", "”", "…", "—", "¿", "«»", "--", "'"] {
            assert!(is_punctuation(t), "{t}");
        }
        for t in ["$", "a.", "1.5", "x"] {
            assert!(!is_punctuation(t), "{t}");
        }
        assert!(is_numeric("2017"));
        assert!(is_numeric("٣"));
        assert!(!is_numeric("1.5"));
        assert!(!is_numeric("12th"));
    }

    #[test]
    fn empty_sentence_excluded() {
        let exs = vec![
            Example::new("a", toks(&["!", "?", "..."]), 0, None),
            Example::new("b", toks(&["ok"]), 0, None),
        ];
        let p = preprocess_all(&exs);
        assert_eq!(p.excluded, vec!["a".to_string()]);
        assert_eq!(p.examples.len(), 1);
    }

    #[test]
    fn removed_pun_token_keeps_label() {
        let ex = Example::new("a", toks(&["a", "7"]), 1, Some(1));
        let p = preprocess(&ex).unwrap();
        assert_eq!((p.label, p.pun_index), (1, None));
    }
}
