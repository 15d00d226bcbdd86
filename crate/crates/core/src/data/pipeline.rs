//! Detect-then-locate scoring over a whole dataset.
//!
//! Sentences the detector rejects get no location prediction, so their gold
//! pun (if any) is a false negative. Sentences it accepts are passed to the
//! locator and every predicted index is scored, which makes a gold-negative
//! sentence that is accepted count as a false positive.

use super::{score_location, Example, MetricsReport};
use crate::error::{PunError, Result};

/// Scores precomputed outputs; `located[i]` is ignored when `detected[i]` is 0.
pub fn pipeline_score(
    detected: &[usize],
    located: &[Vec<usize>],
    golds: &[Option<usize>],
) -> Result<MetricsReport> {
    if detected.len() != golds.len() || located.len() != golds.len() {
        return Err(PunError::arg(format!(
            "pipeline inputs disagree: {} detections, {} locations, {} golds",
            detected.len(),
            located.len(),
            golds.len()
        )));
    }
    let gated: Vec<Vec<usize>> = detected
        .iter()
        .zip(located)
        .map(|(&d, l)| if d == 1 { l.clone() } else { Vec::new() })
        .collect();
    score_location(&gated, golds)
}

/// Runs the detector on every sentence and the locator only on accepted ones.
pub fn pipeline_eval<D, L>(
    dataset: &[Example],
    mut detect: D,
    mut locate: L,
) -> Result<MetricsReport>
where
    D: FnMut(&Example) -> Result<usize>,
    L: FnMut(&Example) -> Result<Vec<usize>>,
{
    let mut detected = Vec::with_capacity(dataset.len());
    let mut located = Vec::with_capacity(dataset.len());
    for ex in dataset {
        let d = detect(ex)?;
        located.push(if d == 1 { locate(ex)? } else { Vec::new() });
        detected.push(d);
    }
    let golds: Vec<Option<usize>> = dataset.iter().map(|e| e.pun_index).collect();
    pipeline_score(&detected, &located, &golds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, n: usize, pun: Option<usize>) -> Example {
        let tokens = (0..n).map(|i| format!("w{i}")).collect();
        Example::new(id, tokens, u8::from(pun.is_some()), pun)
    }

    /// Six sentences, one of each outcome:
    ///
    /// | id | gold | detect | locate | tp | fp | fn |
    /// |----|------|--------|--------|----|----|----|
    /// | s1 | 2    | 1      | 2      | 1  |    |    |
    /// | s2 | 0    | 1      | 3      |    | 1  | 1  |
    /// | s3 | 1    | 0      | -      |    |    | 1  |
    /// | s4 | -    | 1      | 1      |    | 1  |    |
    /// | s5 | -    | 0      | -      |    |    |    |
    /// | s6 | 4    | 1      | 4      | 1  |    |    |
    ///
    /// tp = 2, fp = 2, fn = 2, so P = R = F1 = 50%.
    #[test]
    fn six_sentence_table() {
        let data = vec![
            ex("s1", 5, Some(2)),
            ex("s2", 5, Some(0)),
            ex("s3", 5, Some(1)),
            ex("s4", 5, None),
            ex("s5", 5, None),
            ex("s6", 5, Some(4)),
        ];
        let det = |e: &Example| Ok(usize::from(!matches!(e.id.as_str(), "s3" | "s5")));
        let mut calls = Vec::new();
        let loc = |e: &Example| {
            calls.push(e.id.clone());
            Ok(vec![match e.id.as_str() {
                "s1" => 2,
                "s2" => 3,
                "s4" => 1,
                "s6" => 4,
                other => panic!("locator called on {other}"),
            }])
        };
        let r = pipeline_eval(&data, det, loc).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 2, 2));
        assert_eq!((r.precision, r.recall, r.f1), (50.0, 50.0, 50.0));
        assert_eq!(calls, vec!["s1", "s2", "s4", "s6"]);
    }

    #[test]
    fn perfect_and_rejecting_detectors() {
        let data = vec![ex("a", 3, Some(1)), ex("b", 3, None), ex("c", 4, Some(3))];
        let perfect = pipeline_eval(
            &data,
            |e| Ok(e.label as usize),
            |e| Ok(vec![e.pun_index.unwrap()]),
        )
        .unwrap();
        assert_eq!(perfect.f1, 100.0);

        let reject = pipeline_eval(&data, |_| Ok(0), |_| Ok(vec![0])).unwrap();
        assert_eq!((reject.recall, reject.fn_), (0.0, 2));
    }

    #[test]
    fn gating_never_helps() {
        let golds = vec![Some(0), Some(1), None, Some(2)];
        let located = vec![vec![0], vec![1], vec![0], vec![2]];
        let open = pipeline_score(&[1, 1, 1, 1], &located, &golds).unwrap();
        for mask in 0..16usize {
            let det: Vec<usize> = (0..4).map(|i| (mask >> i) & 1).collect();
            let gated = pipeline_score(&det, &located, &golds).unwrap();
            assert!(gated.tp <= open.tp);
            assert!(gated.recall <= open.recall);
        }
    }
}
