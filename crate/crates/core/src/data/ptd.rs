//! Reader for labelled sentence files: `label<TAB>sentence`,
//! `id<TAB>label<TAB>sentence`, or `label,sentence` when no tab is present.
//! Sentences are tokenized here and carry no pun position.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use super::{tokenize, Example};
use crate::error::{PunError, Result};

fn label_of(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

fn split_line(line: &str) -> Option<(Option<&str>, u8, &str)> {
    if line.contains('\t') {
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if let Some(l) = label_of(fields[0]) {
            return Some((None, l, line.split_once('\t')?.1));
        }
        if fields.len() == 3 {
            if let Some(l) = label_of(fields[1]) {
                return Some((Some(fields[0].trim()), l, fields[2]));
            }
        }
        None
    } else {
        let (l, s) = line.split_once(',')?;
        Some((None, label_of(l)?, s))
    }
}

pub fn read_ptd<R: BufRead>(reader: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, label, sentence) = split_line(&line).ok_or_else(|| PunError::Parse {
            line: lineno,
            msg: "expected a 0/1 label and a sentence".into(),
        })?;
        let id = id.map_or_else(|| format!("ptd_{lineno}"), str::to_string);
        if !seen.insert(id.clone()) {
            return Err(PunError::Consistency(format!(
                "line {lineno}: duplicate id {id}"
            )));
        }
        let tokens = tokenize(sentence.trim().trim_matches('"'));
        if tokens.is_empty() {
            return Err(PunError::Parse {
                line: lineno,
                msg: "empty sentence".into(),
            });
        }
        out.push(Example::new(id, tokens, label, None));
    }
    Ok(out)
}

pub fn adapt_ptd(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| PunError::path(path, e))?;
    read_ptd(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_and_three_columns() {
        let text = "1\tI used to be a banker, but I lost interest.\n\n0\tThe cat sat.\n";
        let ex = read_ptd(text.as_bytes()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].label, 1);
        assert_eq!(ex[0].pun_index, None);
        assert_eq!(ex[0].tokens[5], "banker");
        assert_eq!(ex[1].id, "ptd_3");

        let ex = read_ptd("p1\t1\tA pun.\np2\t0\tNot one.\n".as_bytes()).unwrap();
        assert_eq!(ex[1].id, "p2");
        assert_eq!(ex[1].label, 0);
        assert_eq!(ex[1].tokens, vec!["Not", "one", "."]);
    }

    #[test]
    fn comma_delimited() {
        let ex = read_ptd("1,\"Time flies, like an arrow\"\n".as_bytes()).unwrap();
        assert_eq!(
            ex[0].tokens,
            vec!["Time", "flies", ",", "like", "an", "arrow"]
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = read_ptd("a\t1\tx\na\t0\ty\n".as_bytes());
        assert!(matches!(r, Err(PunError::Consistency(_))));
    }

    #[test]
    fn bad_label() {
        assert!(matches!(
            read_ptd("yes\tfoo\n".as_bytes()),
            Err(PunError::Parse { line: 1, .. })
        ));
    }
}
