use std::collections::HashMap;

pub const UNK_TOKEN: &str = "<unk>";

/// Word-level vocabulary. Id 0 is always the unknown-word token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Words counted case-insensitively; ordering is (count desc, word asc).
    pub fn build<'a, I, S>(corpus: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for sentence in corpus {
            for tok in sentence {
                *counts.entry(tok.as_ref().to_lowercase()).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && w != UNK_TOKEN)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(entries.into_iter().map(|(w, _)| w))
    }

    /// Rebuilds a vocabulary from its word list (without the leading UNK).
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(words.into_iter().map(Into::into));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Known words in id order, UNK excluded.
    pub fn words(&self) -> &[String] {
        &self.words[1..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_is_unk_only() {
        let v = Vocabulary::build(Vec::<&[&str]>::new(), 1);
        assert_eq!(v.len(), 1);
        assert_eq!(v.word(0), UNK_TOKEN);
        assert_eq!(v.id("anything"), 0);
    }

    #[test]
    fn ordering_and_ties() {
        let a = ["b", "a", "c", "c"];
        let b = ["B", "d"];
        let v = Vocabulary::build([&a[..], &b[..]], 1);
        assert_eq!(v.words(), ["b", "c", "a", "d"]);
        assert_eq!(v.id("B"), 1);
    }

    #[test]
    fn min_count_filters() {
        let a = ["x", "x", "y"];
        let v = Vocabulary::build([&a[..]], 2);
        assert_eq!(v.words(), ["x"]);
        assert_eq!(v.id("y"), 0);
    }
}
