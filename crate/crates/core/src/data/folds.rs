use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{PunError, Result};
use crate::numerics::seeded_rng;

/// Index sets into the dataset for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Seeded k-fold split. Test partitions are contiguous runs of a shuffled
/// order with sizes differing by at most one; within each fold a seeded
/// `dev_fraction` of the training indices is held out as the dev set.
pub fn make_folds(n: usize, k: usize, seed: u64, dev_fraction: f64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(PunError::arg(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(PunError::arg(format!("{n} examples cannot fill {k} folds")));
    }
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(PunError::arg(format!(
            "dev_fraction {dev_fraction} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test = order[start..start + size].to_vec();
        let mut rest: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        start += size;
        rest.shuffle(&mut seeded_rng(seed.wrapping_add(f as u64 + 1)));
        let n_dev = (rest.len() as f64 * dev_fraction).round() as usize;
        let dev = rest[..n_dev].to_vec();
        let train = rest[n_dev..].to_vec();
        folds.push(Fold { train, dev, test });
    }
    Ok(FoldPlan { seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_into_ten() {
        let plan = make_folds(100, 10, 3, 0.1).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for f in &plan.folds {
            assert_eq!(f.test.len(), 10);
            assert_eq!(f.dev.len(), 9);
            assert_eq!(f.train.len(), 81);
        }
        let mut all: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            make_folds(57, 10, 9, 0.1).unwrap(),
            make_folds(57, 10, 9, 0.1).unwrap()
        );
        assert_ne!(
            make_folds(57, 10, 9, 0.1).unwrap(),
            make_folds(57, 10, 10, 0.1).unwrap()
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_folds(5, 10, 0, 0.1).is_err());
        assert!(make_folds(50, 1, 0, 0.1).is_err());
        assert!(make_folds(50, 5, 0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn partitions(n in 2usize..300, k in 2usize..12, seed in any::<u64>(), frac in 0.0f64..0.5) {
            prop_assume!(n >= k);
            let plan = make_folds(n, k, seed, frac).unwrap();
            let mut seen = vec![0u32; n];
            let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in &plan.folds {
                for &i in &f.test {
                    seen[i] += 1;
                }
                let mut union: Vec<usize> = f.train.iter().chain(&f.dev).chain(&f.test).copied().collect();
                union.sort_unstable();
                prop_assert_eq!(union, (0..n).collect::<Vec<_>>());
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
