use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, FoodPairRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Classes too small to stratify; their records were split jointly.
    pub warnings: Vec<String>,
}

fn counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Disjoint, exhaustive, seed-deterministic train/val/test split,
/// stratified by class. Records within each split are ordered by pair id.
pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let active = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut by_class: BTreeMap<usize, Vec<&FoodPairRecord>> = BTreeMap::new();
    for r in &dataset.records {
        by_class.entry(r.class_label).or_default().push(r);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<FoodPairRecord>; 3] = Default::default();
    let mut leftovers = Vec::new();
    let mut warnings = Vec::new();
    for (class, mut members) in by_class {
        members.shuffle(&mut rng);
        if members.len() < active {
            warnings.push(format!(
                "class {class} has {} records for {active} splits; split unstratified",
                members.len()
            ));
            leftovers.extend(members);
            continue;
        }
        let c = counts(members.len(), fractions);
        let mut it = members.into_iter();
        for (part, n) in parts.iter_mut().zip(c) {
            part.extend(it.by_ref().take(n).cloned());
        }
    }
    if !leftovers.is_empty() {
        leftovers.shuffle(&mut rng);
        let c = counts(leftovers.len(), fractions);
        let mut it = leftovers.into_iter();
        for (part, n) in parts.iter_mut().zip(c) {
            part.extend(it.by_ref().take(n).cloned());
        }
    }
    for p in parts.iter_mut() {
        p.sort_by_key(|r| r.pair_id);
    }
    let [train, val, test] = parts;
    Ok(Split {
        train: dataset.subset("train", train),
        val: dataset.subset("val", val),
        test: dataset.subset("test", test),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_generate, SyntheticConfig};

    fn ds() -> Dataset {
        synthetic_generate(&SyntheticConfig::default()).unwrap()
    }

    #[test]
    fn all_in_train() {
        let d = ds();
        let s = split_dataset(&d, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(s.train.len(), d.len());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn partition_and_determinism() {
        let d = ds();
        let a = split_dataset(&d, [0.4, 0.1, 0.5], 11).unwrap();
        let b = split_dataset(&d, [0.4, 0.1, 0.5], 11).unwrap();
        assert_eq!(a.train.records, b.train.records);
        assert_eq!(a.test.records, b.test.records);
        let mut ids: Vec<u64> = [&a.train, &a.val, &a.test]
            .iter()
            .flat_map(|s| s.records.iter().map(|r| r.pair_id))
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..d.len() as u64).collect::<Vec<_>>());
        // 10 per class -> 4/1/5 per class
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (80, 20, 100));
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn small_classes_fall_back_with_warning() {
        let d = synthetic_generate(&SyntheticConfig {
            pairs_per_class: 2,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let s = split_dataset(&d, [0.4, 0.3, 0.3], 0).unwrap();
        assert_eq!(s.warnings.len(), 20);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), d.len());
    }

    #[test]
    fn rejects_fractions_not_summing_to_one() {
        assert!(split_dataset(&ds(), [0.5, 0.5, 0.5], 0).is_err());
    }
}
