use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Held-out set sizes; whatever remains becomes the training set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Name of the split holding `id`, if any.
    pub fn split_of(&self, id: &str) -> Option<&'static str> {
        let has = |v: &Vec<String>| v.binary_search_by(|x| x.as_str().cmp(id)).is_ok();
        if has(&self.train) {
            Some("train")
        } else if has(&self.validation) {
            Some("validation")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

/// Seeded partition of `ids` into disjoint train/validation/test sets.
///
/// The ids are sorted before shuffling, so the result depends only on the
/// id set and the seed. Each output list is sorted.
pub fn make_splits<S: AsRef<str>>(ids: &[S], seed: u64, sizes: SplitSizes) -> Result<Splits> {
    let unique: BTreeSet<&str> = ids.iter().map(AsRef::as_ref).collect();
    if unique.len() != ids.len() {
        return Err(CoreError::config("duplicate ids passed to make_splits"));
    }
    let held = sizes.validation + sizes.test;
    if held > unique.len() {
        return Err(CoreError::config(format!(
            "cannot hold out {} validation + {} test ids from {}",
            sizes.validation,
            sizes.test,
            unique.len()
        )));
    }
    let mut order: Vec<String> = unique.into_iter().map(str::to_string).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order.split_off(order.len() - sizes.test);
    let mut validation = order.split_off(order.len() - sizes.validation);
    let mut train = order;
    train.sort();
    validation.sort();
    test.sort();
    Ok(Splits {
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oversubscription_is_a_config_error() {
        let ids = ["a", "b", "c"];
        let sizes = SplitSizes { validation: 2, test: 2 };
        assert!(matches!(make_splits(&ids, 0, sizes), Err(CoreError::Config(_))));
    }

    #[test]
    fn paper_sized_holdout() {
        let ids: Vec<String> = (0..20_000).map(|i| format!("v{i:06}")).collect();
        let s = make_splits(&ids, 3, SplitSizes { validation: 5000, test: 5000 }).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (10_000, 5000, 5000));
        assert_eq!(s.split_of("v000123").is_some(), true);
    }

    proptest! {
        #[test]
        fn splits_partition_ids(n in 1usize..200, v in 0usize..50, t in 0usize..50, seed: u64) {
            prop_assume!(v + t <= n);
            let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
            let sizes = SplitSizes { validation: v, test: t };
            let s = make_splits(&ids, seed, sizes).unwrap();
            prop_assert_eq!(&s, &make_splits(&ids, seed, sizes).unwrap());
            let mut all: Vec<String> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
            prop_assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!((s.validation.len(), s.test.len()), (v, t));
        }
    }
}
