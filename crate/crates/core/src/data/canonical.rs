//! JSON Lines dataset files: one `{"id", "tokens", "label", "pun_index"}`
//! object per line.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::Example;
use crate::error::{PunError, Result};

pub fn read_canonical<R: BufRead>(reader: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| PunError::Schema {
            line: lineno,
            msg: e.to_string(),
        })?;
        ex.validate()
            .map_err(|e| PunError::Validation(format!("line {lineno}: {e}")))?;
        if !seen.insert(ex.id.clone()) {
            return Err(PunError::Consistency(format!(
                "line {lineno}: duplicate id {}",
                ex.id
            )));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| PunError::path(path, e))?;
    read_canonical(BufReader::new(f))
}

pub fn write_canonical_to<W: Write>(examples: &[Example], mut w: W) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| PunError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_canonical(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| PunError::path(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_canonical_to(examples, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Example> {
        vec![
            Example::new(
                "a",
                vec!["I".into(), "saw".into(), "sale".into()],
                1,
                Some(2),
            ),
            Example::new("b\"q", vec!["naïve".into(), "—".into()], 0, None),
            Example::new("c", vec!["x".into()], 1, None),
        ]
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_canonical_to(&sample(), &mut buf).unwrap();
        let back = read_canonical(&buf[..]).unwrap();
        assert_eq!(back, sample());
        let mut buf2 = Vec::new();
        write_canonical_to(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_canonical(&p, &sample()).unwrap();
        assert_eq!(load_canonical(&p).unwrap(), sample());
    }

    #[test]
    fn missing_tokens_reports_line() {
        let text = "{\"id\":\"a\",\"tokens\":[\"x\"],\"label\":0,\"pun_index\":null}\n\n{\"id\":\"b\",\"label\":0}\n";
        match read_canonical(text.as_bytes()) {
            Err(PunError::Schema { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("tokens"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn index_out_of_range() {
        let text = "{\"id\":\"a\",\"tokens\":[\"x\",\"y\"],\"label\":1,\"pun_index\":2}\n";
        assert!(matches!(
            read_canonical(text.as_bytes()),
            Err(PunError::Validation(_))
        ));
    }

    #[test]
    fn other_violations() {
        let bad_label = "{\"id\":\"a\",\"tokens\":[\"x\"],\"label\":2,\"pun_index\":null}\n";
        assert!(matches!(
            read_canonical(bad_label.as_bytes()),
            Err(PunError::Validation(_))
        ));
        let neg_with_index = "{\"id\":\"a\",\"tokens\":[\"x\"],\"label\":0,\"pun_index\":0}\n";
        assert!(matches!(
            read_canonical(neg_with_index.as_bytes()),
            Err(PunError::Validation(_))
        ));
        let empty = "{\"id\":\"a\",\"tokens\":[],\"label\":0,\"pun_index\":null}\n";
        assert!(matches!(
            read_canonical(empty.as_bytes()),
            Err(PunError::Validation(_))
        ));
        let dup = "{\"id\":\"a\",\"tokens\":[\"x\"],\"label\":0}\n{\"id\":\"a\",\"tokens\":[\"y\"],\"label\":0}\n";
        assert!(matches!(
            read_canonical(dup.as_bytes()),
            Err(PunError::Consistency(_))
        ));
        assert!(matches!(
            read_canonical("not json\n".as_bytes()),
            Err(PunError::Schema { line: 1, .. })
        ));
    }
}
