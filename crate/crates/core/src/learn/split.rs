use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::XorShift64Star;

/// Seeded train/test partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n: usize,
    pub train_fraction_permille: u32,
    pub seed: u64,
    /// Ascending row indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with the seeded generator and takes the first
/// `round(train_fraction * n)` positions as training rows.
pub fn make_split(n: usize, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if n < 5 {
        return Err(Error::InvalidInput(format!(
            "need at least 5 rows to split, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    XorShift64Star::seed_from(seed).shuffle(&mut perm);
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        n,
        train_fraction_permille: (train_fraction * 1000.0).round() as u32,
        seed,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn too_small() {
        assert!(make_split(4, 0.8, 1).is_err());
        assert!(make_split(5, 0.8, 1).is_ok());
        assert!(make_split(10, 1.0, 1).is_err());
    }

    #[test]
    fn sizes() {
        let s = make_split(10, 0.8, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let s = make_split(7, 0.8, 7).unwrap();
        assert_eq!(s.train.len(), 6);
    }

    proptest! {
        #[test]
        fn partition_and_determinism(n in 5usize..400, seed in any::<u64>()) {
            let a = make_split(n, 0.8, seed).unwrap();
            let b = make_split(n, 0.8, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.train.len(), ((0.8 * n as f64).round() as usize).clamp(1, n - 1));
            let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
