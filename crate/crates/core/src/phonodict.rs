//! CMU-style pronouncing dictionary parsing and word-to-phoneme lookup.
//!
//! Multi-pronunciation words resolve to their first listed alternate and
//! out-of-dictionary words resolve to a single reserved `UNK` phoneme, so
//! every token gets at least one phoneme.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use log::warn;

use crate::error::{PunError, Result};

/// The 39 ARPAbet base symbols used by the CMU dictionary.
pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

pub const UNK_SYMBOL: &str = "UNK";
pub const UNK_PHONEME: usize = 0;

/// Small dictionary subset shipped with the crate.
pub const MINI_CMUDICT: &str = include_str!("../assets/mini_cmudict.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    /// `UNK` at id 0 followed by the ARPAbet base set. With `with_stress`
    /// the stressed vowel variants (`AH0`, `AH1`, `AH2`, ...) are appended.
    pub fn arpabet(with_stress: bool) -> Self {
        let mut symbols = vec![UNK_SYMBOL.to_string()];
        symbols.extend(ARPABET.iter().map(|s| s.to_string()));
        if with_stress {
            for v in VOWELS {
                for d in 0..3 {
                    symbols.push(format!("{v}{d}"));
                }
            }
        }
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        PhonemeInventory { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pronunciation {
    pub phoneme_ids: Vec<usize>,
}

impl Pronunciation {
    pub fn unk() -> Self {
        Pronunciation {
            phoneme_ids: vec![UNK_PHONEME],
        }
    }

    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }

    pub fn is_unk(&self) -> bool {
        self.phoneme_ids == [UNK_PHONEME]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub strip_stress: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { strip_stress: true }
    }
}

#[derive(Debug, Clone)]
pub struct PronunciationLexicon {
    inventory: PhonemeInventory,
    entries: BTreeMap<String, Vec<Pronunciation>>,
    malformed: usize,
}

impl PronunciationLexicon {
    pub fn parse<R: Read>(reader: R, opts: ParseOptions) -> Result<Self> {
        let inventory = PhonemeInventory::arpabet(!opts.strip_stress);
        let mut entries: BTreeMap<String, Vec<Pronunciation>> = BTreeMap::new();
        let mut malformed = 0;
        let mut reader = BufReader::new(reader);
        let mut buf = Vec::new();
        let mut lineno = 0;
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            lineno += 1;
            // Older dictionary releases carry a few Latin-1 bytes.
            let line = String::from_utf8_lossy(&buf);
            let line = line.trim();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let phones: Vec<&str> = parts.take_while(|p| !p.starts_with('#')).collect();
            let Some(word) = base_word(head) else {
                malformed += 1;
                continue;
            };
            if phones.is_empty() {
                malformed += 1;
                continue;
            }
            let mut ids = Vec::with_capacity(phones.len());
            for p in phones {
                let sym = if opts.strip_stress {
                    p.trim_end_matches(['0', '1', '2'])
                } else {
                    p
                };
                let id = inventory
                    .id(sym)
                    .filter(|&i| i != UNK_PHONEME)
                    .ok_or_else(|| PunError::Parse {
                        line: lineno,
                        msg: format!("unknown phoneme {p:?} in entry {head:?}"),
                    })?;
                ids.push(id);
            }
            entries
                .entry(word)
                .or_default()
                .push(Pronunciation { phoneme_ids: ids });
        }
        if malformed > 0 {
            warn!("skipped {malformed} malformed dictionary lines");
        }
        Ok(PronunciationLexicon {
            inventory,
            entries,
            malformed,
        })
    }

    pub fn from_path(path: impl AsRef<Path>, opts: ParseOptions) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| PunError::path(path, e))?;
        Self::parse(f, opts)
    }

    /// Parses the bundled subset.
    pub fn mini() -> Self {
        Self::parse(MINI_CMUDICT.as_bytes(), ParseOptions::default())
            .expect("bundled dictionary parses")
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn malformed_lines(&self) -> usize {
        self.malformed
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// All alternates of `word` in file order, `None` when absent.
    pub fn alternates(&self, word: &str) -> Option<&[Pronunciation]> {
        self.entries.get(&normalize(word)).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&normalize(word))
    }

    /// First listed pronunciation, or `[UNK]` for absent words.
    pub fn lookup(&self, word: &str) -> Result<Pronunciation> {
        if word.is_empty() {
            return Err(PunError::arg("lookup of empty word"));
        }
        Ok(self
            .alternates(word)
            .and_then(|a| a.first().cloned())
            .unwrap_or_else(Pronunciation::unk))
    }

    pub fn phonemize_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Pronunciation>> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }

    pub fn symbols_of(&self, p: &Pronunciation) -> Vec<&str> {
        p.phoneme_ids
            .iter()
            .map(|&i| self.inventory.symbol(i))
            .collect()
    }
}

/// Dictionary key form: uppercase, apostrophes kept.
pub fn normalize(word: &str) -> String {
    word.to_uppercase()
}

/// `WORD(2)` -> `WORD`; rejects empty heads and unbalanced markers.
fn base_word(head: &str) -> Option<String> {
    let word = match head.find('(') {
        Some(i) if head.ends_with(')') && i > 0 => {
            let inner = &head[i + 1..head.len() - 1];
            if inner.is_empty() || !inner.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            &head[..i]
        }
        Some(_) => return None,
        None => head,
    };
    (!word.is_empty()).then(|| normalize(word))
}
