use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Stratified fold assignment: indices are shuffled with the seed's `folds`
/// stream, grouped by class (class order, then shuffled order), and dealt
/// round-robin with a counter that carries across classes. Fold sizes differ
/// by at most one and every class present must appear in every fold.
pub fn assign_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("fold count must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng::stream(seed, "folds"));
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut folds = vec![0; labels.len()];
    let mut counter = 0;
    for class in 0..class_count {
        for &i in order.iter().filter(|&&i| labels[i] == class) {
            folds[i] = counter % k;
            counter += 1;
        }
    }
    for class in 0..class_count {
        let present: Vec<bool> = (0..k)
            .map(|f| {
                labels
                    .iter()
                    .zip(&folds)
                    .any(|(l, g)| *l == class && *g == f)
            })
            .collect();
        let total = labels.iter().filter(|l| **l == class).count();
        if total > 0 {
            if let Some(f) = present.iter().position(|p| !p) {
                return Err(Error::Stratification(format!(
                    "class {class} has {total} samples and is missing from fold {f}"
                )));
            }
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_samples_five_folds_of_two() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let folds = assign_folds(&labels, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(folds.iter().filter(|x| **x == f).count(), 2);
        }
        assert_eq!(folds, assign_folds(&labels, 5, 3).unwrap());
    }

    #[test]
    fn table_sized_dataset_balances() {
        let mut labels = vec![0; 3332];
        labels.extend(vec![1; 3558]);
        labels.extend(vec![2; 3359]);
        assert_eq!(labels.len(), 10249);
        let folds = assign_folds(&labels, 5, 0).unwrap();
        let sizes: Vec<usize> = (0..5)
            .map(|f| folds.iter().filter(|x| **x == f).count())
            .collect();
        assert_eq!(sizes.iter().sum::<usize>(), 10249);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn sparse_class_fails_stratification() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1];
        assert!(matches!(
            assign_folds(&labels, 5, 1),
            Err(Error::Stratification(_))
        ));
    }
}
