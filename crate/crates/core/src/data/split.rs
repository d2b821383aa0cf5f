use std::collections::BTreeMap;

use super::{Interaction, InteractionSet, MultiBehaviorDataset};

/// Leave-one-out split of the target behavior.
///
/// Auxiliary behaviors stay whole inside `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: MultiBehaviorDataset,
    /// user -> second-to-last target item
    pub validation: BTreeMap<u32, u32>,
    /// user -> last target item
    pub test: BTreeMap<u32, u32>,
}

impl SplitDataset {
    /// Per-user sorted target items remaining in train.
    pub fn train_positives(&self) -> Vec<Vec<u32>> {
        self.train.target().items_by_user(self.train.num_users)
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items
    }
}

/// Holds out each user's chronologically last target interaction for test
/// and the second-to-last for validation.
///
/// Users with two target interactions contribute only a test item; users
/// with one keep it in train.
pub fn leave_one_out_split(dataset: &MultiBehaviorDataset) -> SplitDataset {
    let target_idx = dataset.num_behaviors() - 1;
    let target = dataset.target();

    let mut by_user: Vec<Vec<Interaction>> = vec![Vec::new(); dataset.num_users];
    for r in target.records() {
        by_user[r.user as usize].push(*r);
    }

    let mut validation = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut held_out: Vec<Vec<u32>> = vec![Vec::new(); dataset.num_users];
    for (u, recs) in by_user.iter_mut().enumerate() {
        recs.sort_by_key(Interaction::order_key);
        let n = recs.len();
        if n >= 2 {
            let last = recs[n - 1].item;
            test.insert(u as u32, last);
            held_out[u].push(last);
        }
        if n >= 3 {
            let second = recs[n - 2].item;
            validation.insert(u as u32, second);
            held_out[u].push(second);
        }
    }

    // Records stay in original insertion order; only held-out items leave.
    let kept: Vec<Interaction> = target
        .records()
        .iter()
        .filter(|r| !held_out[r.user as usize].contains(&r.item))
        .copied()
        .collect();

    let mut train = dataset.clone();
    train.sets[target_idx] = InteractionSet::from_records(target_idx, kept);

    SplitDataset {
        train,
        validation,
        test,
    }
}
