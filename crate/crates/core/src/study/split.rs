use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FidelityScore, PairRecord, Split};
use crate::{Error, Result};

/// Test-set size for `n` pairs: `round((1 - train_fraction) * n)`, halves away from zero.
pub fn test_count(n: usize, train_fraction: f64) -> usize {
    ((1.0 - train_fraction) * n as f64).round() as usize
}

/// Assigns every scored non-trap pair to train or test.
///
/// The split is stratified by `model_name`: each model contributes
/// `round((1 - f) * n_model)` test pairs, and any difference from the global
/// target `round((1 - f) * N)` is absorbed by the largest model (ties broken
/// by name). Within a model, test pairs are the head of a seeded shuffle of
/// the pair ids. Trap pairs are left unassigned.
pub fn split_dataset(
    pairs: &[PairRecord],
    scores: &[FidelityScore],
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<PairRecord>> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::arg(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let finals: HashMap<&str, &FidelityScore> = scores.iter().map(|s| (s.pair_id.as_str(), s)).collect();
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in pairs.iter().filter(|p| !p.is_trap) {
        match finals.get(p.pair_id.as_str()) {
            Some(s) if s.is_final && s.score.is_some() => {}
            _ => {
                return Err(Error::State(format!("pair {} has no final score", p.pair_id)));
            }
        }
        groups.entry(p.model_name.as_str()).or_default().push(p.pair_id.as_str());
    }

    let n: usize = groups.values().map(Vec::len).sum();
    let target = test_count(n, train_fraction);
    let mut per_model: BTreeMap<&str, usize> =
        groups.iter().map(|(m, ids)| (*m, test_count(ids.len(), train_fraction))).collect();
    let assigned: usize = per_model.values().sum();
    if assigned != target {
        // max_by_key keeps the last maximum, so iterate names in reverse to prefer the first.
        let largest = groups
            .iter()
            .rev()
            .max_by_key(|(_, ids)| ids.len())
            .map(|(m, _)| *m)
            .expect("non-empty when counts differ");
        let cap = groups[largest].len();
        let t = per_model.get_mut(largest).expect("present");
        *t = (*t as isize + target as isize - assigned as isize).clamp(0, cap as isize) as usize;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: HashMap<&str, Split> = HashMap::new();
    for (model, ids) in &mut groups {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let t = per_model[model];
        for (i, id) in ids.iter().enumerate() {
            assignment.insert(id, if i < t { Split::Test } else { Split::Train });
        }
    }

    Ok(pairs
        .iter()
        .map(|p| PairRecord {
            split: assignment.get(p.pair_id.as_str()).copied().unwrap_or(Split::Unassigned),
            ..p.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::TrapAnswer;
    use proptest::prelude::*;

    fn scored(models: &[(&str, usize)]) -> (Vec<PairRecord>, Vec<FidelityScore>) {
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        for (m, n) in models {
            for i in 0..*n {
                let id = format!("{m}-{i:04}");
                pairs.push(PairRecord::new(&id, "g", "s", *m));
                scores.push(FidelityScore {
                    pair_id: id,
                    n_valid: 12,
                    score: Some(0.5),
                    is_final: true,
                });
            }
        }
        (pairs, scores)
    }

    fn count(p: &[PairRecord], split: Split, model: Option<&str>) -> usize {
        p.iter()
            .filter(|r| r.split == split && model.is_none_or(|m| r.model_name == m))
            .count()
    }

    #[test]
    fn split_723() {
        let (pairs, scores) = scored(&[("BSRGAN", 148), ("StableSR", 148), ("PASD", 144), ("SeeSR", 142), ("SwinIR", 141)]);
        let out = split_dataset(&pairs, &scores, 0.8, 0).unwrap();
        assert_eq!(count(&out, Split::Test, None), 145);
        assert_eq!(count(&out, Split::Train, None), 578);
        for (m, n) in [("BSRGAN", 148), ("StableSR", 148), ("PASD", 144), ("SeeSR", 142), ("SwinIR", 141)] {
            let t = count(&out, Split::Test, Some(m)) as f64;
            assert!((t - 0.2 * n as f64).abs() <= 1.0, "{m}: {t}");
        }
    }

    #[test]
    fn two_models_of_five() {
        let (pairs, scores) = scored(&[("a", 5), ("b", 5)]);
        let out = split_dataset(&pairs, &scores, 0.8, 3).unwrap();
        assert_eq!(count(&out, Split::Test, Some("a")), 1);
        assert_eq!(count(&out, Split::Test, Some("b")), 1);
    }

    #[test]
    fn residual_goes_to_largest_model() {
        // Per-model rounding gives 1 + 1 + 1 = 3, the global target is round(0.2 * 18) = 4.
        let (pairs, scores) = scored(&[("a", 6), ("b", 6), ("c", 6)]);
        let out = split_dataset(&pairs, &scores, 0.8, 0).unwrap();
        assert_eq!(count(&out, Split::Test, None), 4);
        assert_eq!(count(&out, Split::Test, Some("a")), 2);
    }

    #[test]
    fn non_final_is_state_error() {
        let (pairs, mut scores) = scored(&[("a", 5)]);
        scores[2].is_final = false;
        assert!(matches!(split_dataset(&pairs, &scores, 0.8, 0), Err(Error::State(_))));
        scores.remove(2);
        assert!(matches!(split_dataset(&pairs, &scores, 0.8, 0), Err(Error::State(_))));
    }

    #[test]
    fn traps_stay_unassigned() {
        let (mut pairs, scores) = scored(&[("a", 5)]);
        let mut trap = PairRecord::new("trap", "g", "s", "a");
        trap.is_trap = true;
        trap.trap_expected = Some(TrapAnswer::No);
        pairs.push(trap);
        let out = split_dataset(&pairs, &scores, 0.8, 0).unwrap();
        assert_eq!(out.last().unwrap().split, Split::Unassigned);
    }

    proptest! {
        #[test]
        fn partition_and_determinism(a in 1usize..40, b in 0usize..40, c in 0usize..40, seed in any::<u64>()) {
            let (pairs, scores) = scored(&[("a", a), ("b", b), ("c", c)]);
            let x = split_dataset(&pairs, &scores, 0.8, seed).unwrap();
            let y = split_dataset(&pairs, &scores, 0.8, seed).unwrap();
            prop_assert_eq!(&x, &y);
            prop_assert!(x.iter().all(|p| p.split != Split::Unassigned));
            prop_assert_eq!(count(&x, Split::Test, None), test_count(a + b + c, 0.8));
        }
    }
}
