//! Reader for the shared-task distribution: an XML corpus of `<text id>`
//! elements containing `<word id>` tokens, plus a tab-separated gold file.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::Example;
use crate::error::{PunError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemevalText {
    pub id: String,
    /// `(word id, surface form)` in document order.
    pub words: Vec<(String, String)>,
}

/// Shape of a gold file: `context-id 0|1` or `context-id word-id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoldKind {
    Detection,
    Location,
}

fn attr_id(e: &BytesStart, pos: u64) -> Result<String> {
    let fmt = |m: String| PunError::Format(format!("XML at byte {pos}: {m}"));
    let a = e
        .try_get_attribute("id")
        .map_err(|err| fmt(err.to_string()))?
        .ok_or_else(|| {
            fmt(format!(
                "<{}> without id",
                String::from_utf8_lossy(e.name().as_ref())
            ))
        })?;
    Ok(a.unescape_value()
        .map_err(|err| fmt(err.to_string()))?
        .into_owned())
}

pub fn read_semeval<R: BufRead>(xml: R) -> Result<Vec<SemevalText>> {
    let mut reader = Reader::from_reader(xml);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut texts = Vec::new();
    let mut current: Option<SemevalText> = None;
    let mut word: Option<(String, String)> = None;
    loop {
        let pos = reader.buffer_position();
        let fmt = |m: String| PunError::Format(format!("XML at byte {pos}: {m}"));
        match reader
            .read_event_into(&mut buf)
            .map_err(|e| fmt(e.to_string()))?
        {
            Event::Start(e) => match e.name().as_ref() {
                b"text" => {
                    current = Some(SemevalText {
                        id: attr_id(&e, pos)?,
                        words: Vec::new(),
                    })
                }
                b"word" => word = Some((attr_id(&e, pos)?, String::new())),
                _ => {}
            },
            Event::Text(t) => {
                if let Some((_, s)) = word.as_mut() {
                    s.push_str(&t.unescape().map_err(|e| fmt(e.to_string()))?);
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"word" => {
                    let w = word.take().ok_or_else(|| fmt("unmatched </word>".into()))?;
                    current
                        .as_mut()
                        .ok_or_else(|| fmt(format!("word {} outside <text>", w.0)))?
                        .words
                        .push(w);
                }
                b"text" => texts.push(
                    current
                        .take()
                        .ok_or_else(|| fmt("unmatched </text>".into()))?,
                ),
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    Ok(texts)
}

fn classify(ctx: &str, value: &str) -> Option<GoldKind> {
    match value {
        "0" | "1" => Some(GoldKind::Detection),
        v if v
            .strip_prefix(ctx)
            .is_some_and(|rest| rest.starts_with('_')) =>
        {
            Some(GoldKind::Location)
        }
        _ => None,
    }
}

/// Parses a gold file and works out its kind from the second column.
pub fn read_gold<R: BufRead>(reader: R) -> Result<(GoldKind, Vec<(String, String)>)> {
    let mut rows = Vec::new();
    let mut kind = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(PunError::Parse {
                line: i + 1,
                msg: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        let k = classify(fields[0], fields[1]).ok_or_else(|| PunError::Parse {
            line: i + 1,
            msg: format!(
                "cannot tell whether {:?} is a label or a word id",
                fields[1]
            ),
        })?;
        match kind {
            None => kind = Some(k),
            Some(prev) if prev != k => {
                return Err(PunError::Parse {
                    line: i + 1,
                    msg: "gold file mixes labels and word ids".into(),
                })
            }
            _ => {}
        }
        rows.push((fields[0].to_string(), fields[1].to_string()));
    }
    let kind = kind.ok_or_else(|| PunError::Format("gold file is empty".into()))?;
    Ok((kind, rows))
}

/// Joins texts with gold annotations. Detection gold yields labels only;
/// location gold yields positive examples with 0-based `pun_index`.
pub fn join_gold(
    texts: &[SemevalText],
    kind: GoldKind,
    gold: &[(String, String)],
) -> Result<Vec<Example>> {
    let by_id: HashMap<&str, &SemevalText> = texts.iter().map(|t| (t.id.as_str(), t)).collect();
    if by_id.len() != texts.len() {
        return Err(PunError::Consistency("duplicate text id in XML".into()));
    }
    let mut ann: HashMap<&str, &str> = HashMap::new();
    for (ctx, value) in gold {
        if !by_id.contains_key(ctx.as_str()) {
            return Err(PunError::Consistency(format!(
                "gold id {ctx} not present in XML"
            )));
        }
        if ann.insert(ctx, value).is_some() {
            return Err(PunError::Consistency(format!("gold id {ctx} listed twice")));
        }
    }
    let mut out = Vec::with_capacity(texts.len());
    let mut unlabeled = 0usize;
    for t in texts {
        let tokens: Vec<String> = t.words.iter().map(|(_, w)| w.clone()).collect();
        let (label, pun_index) = match (kind, ann.get(t.id.as_str())) {
            (GoldKind::Detection, Some(v)) => (u8::from(*v == "1"), None),
            (GoldKind::Detection, None) => {
                return Err(PunError::Consistency(format!(
                    "text {} has no gold label",
                    t.id
                )))
            }
            (GoldKind::Location, Some(word_id)) => {
                let idx = t
                    .words
                    .iter()
                    .position(|(id, _)| id == word_id)
                    .ok_or_else(|| {
                        PunError::Consistency(format!(
                            "gold word {word_id} not present in text {}",
                            t.id
                        ))
                    })?;
                (1, Some(idx))
            }
            (GoldKind::Location, None) => {
                unlabeled += 1;
                (0, None)
            }
        };
        let ex = Example::new(t.id.clone(), tokens, label, pun_index);
        ex.validate()?;
        out.push(ex);
    }
    if unlabeled > 0 {
        log::warn!("{unlabeled} text(s) without a gold pun word treated as negatives");
    }
    Ok(out)
}

/// Reads XML and gold, checking the gold kind against `expect` if given.
pub fn read_semeval_with_gold<X: BufRead, G: BufRead>(
    xml: X,
    gold: G,
    expect: Option<GoldKind>,
) -> Result<Vec<Example>> {
    let texts = read_semeval(xml)?;
    let (kind, rows) = read_gold(gold)?;
    if let Some(e) = expect {
        if e != kind {
            return Err(PunError::Consistency(format!(
                "expected a {e:?} gold file, found {kind:?}"
            )));
        }
    }
    join_gold(&texts, kind, &rows)
}

pub fn adapt_semeval(
    xml_path: impl AsRef<Path>,
    gold_path: impl AsRef<Path>,
    expect: Option<GoldKind>,
) -> Result<Vec<Example>> {
    let open = |p: &Path| {
        std::fs::File::open(p)
            .map(std::io::BufReader::new)
            .map_err(|e| PunError::path(p, e))
    };
    read_semeval_with_gold(open(xml_path.as_ref())?, open(gold_path.as_ref())?, expect)
}

#[cfg(test)]
mod tests {
    use super::*;

    const XML: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<corpus>
  <text id="het_1">
    <word id="het_1_1">I</word>
    <word id="het_1_2">used</word>
    <word id="het_1_3">to</word>
    <word id="het_1_4">sail</word>
    <word id="het_1_5">&amp;</word>
  </text>
  <text id="het_2">
    <word id="het_2_1">No</word>
    <word id="het_2_2">pun</word>
  </text>
</corpus>"#;

    #[test]
    fn parses_xml() {
        let texts = read_semeval(XML.as_bytes()).unwrap();
        assert_eq!(texts.len(), 2);
        assert_eq!(
            texts[0].words[3],
            ("het_1_4".to_string(), "sail".to_string())
        );
        assert_eq!(texts[0].words[4].1, "&");
    }

    #[test]
    fn location_gold_gives_zero_based_index() {
        let ex =
            read_semeval_with_gold(XML.as_bytes(), "het_1\thet_1_4\n".as_bytes(), None).unwrap();
        assert_eq!(ex[0].pun_index, Some(3));
        assert_eq!(ex[0].label, 1);
        assert_eq!((ex[1].label, ex[1].pun_index), (0, None));
    }

    #[test]
    fn detection_gold_has_no_index() {
        let ex = read_semeval_with_gold(XML.as_bytes(), "het_1\t1\nhet_2\t0\n".as_bytes(), None)
            .unwrap();
        assert_eq!((ex[0].label, ex[0].pun_index), (1, None));
        assert_eq!((ex[1].label, ex[1].pun_index), (0, None));
    }

    #[test]
    fn unknown_gold_id() {
        let r = read_semeval_with_gold(
            XML.as_bytes(),
            "het_9\t1\nhet_1\t1\nhet_2\t0\n".as_bytes(),
            None,
        );
        assert!(matches!(r, Err(PunError::Consistency(_))));
        let r = read_semeval_with_gold(XML.as_bytes(), "het_1\thet_1_9\n".as_bytes(), None);
        assert!(matches!(r, Err(PunError::Consistency(_))));
    }

    #[test]
    fn gold_shape_detection() {
        assert!(matches!(
            read_gold("a\t1\na\ta_2\n".as_bytes()),
            Err(PunError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_gold("a\tb_2\n".as_bytes()),
            Err(PunError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_gold("a\t1\tx\n".as_bytes()),
            Err(PunError::Parse { .. })
        ));
        let r = read_semeval_with_gold(
            XML.as_bytes(),
            "het_1\t1\nhet_2\t0\n".as_bytes(),
            Some(GoldKind::Location),
        );
        assert!(matches!(r, Err(PunError::Consistency(_))));
    }
}
