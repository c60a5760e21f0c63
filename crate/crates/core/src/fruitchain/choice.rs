use std::collections::BTreeMap;
use std::sync::Arc;

use crate::fruitchain::ChainLink;
use crate::types::Fruit;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForkChoiceError {
    #[error("no branches to choose from")]
    EmptyBranchSet,
}

/// The fruits with serials `last + 1, last + 2, …` up to the first gap, in
/// serial order. When several fruits share a serial the lowest hash is kept.
pub fn select_contiguous<'a, I>(pending: I, last_included_serial: u64) -> Vec<Fruit>
where
    I: IntoIterator<Item = &'a Fruit>,
{
    let mut by_serial: BTreeMap<u64, &Fruit> = BTreeMap::new();
    for f in pending {
        if f.serial <= last_included_serial {
            continue;
        }
        by_serial
            .entry(f.serial)
            .and_modify(|cur| {
                if f.hash < cur.hash {
                    *cur = f;
                }
            })
            .or_insert(f);
    }
    let mut out = Vec::new();
    let mut next = last_included_serial + 1;
    while let Some(f) = by_serial.get(&next) {
        out.push((*f).clone());
        next += 1;
    }
    out
}

/// The branch with the highest total fruit difficulty; ties go to the
/// lexicographically smallest tip hash.
pub fn fork_choice(branches: &[Arc<ChainLink>]) -> Result<Arc<ChainLink>, ForkChoiceError> {
    branches
        .iter()
        .min_by(|a, b| b.difficulty_sum().cmp(&a.difficulty_sum()).then_with(|| a.hash().cmp(&b.hash())))
        .cloned()
        .ok_or(ForkChoiceError::EmptyBranchSet)
}
