use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::rng_for;
use crate::tokenize::{is_special, TokenSequence, MASK, NUM_SPECIALS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// Corruption of one sequence: `selected` is sorted; every selected
/// position has an action, and mask/random positions a replacement id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub selected: Vec<usize>,
    pub action: BTreeMap<usize, MaskAction>,
    pub replacement: BTreeMap<usize, u32>,
}

impl MaskingPlan {
    /// A plan selecting nothing.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// `ids` with replacements applied.
    pub fn apply(&self, ids: &[u32]) -> Vec<u32> {
        let mut out = ids.to_vec();
        for (&pos, &id) in &self.replacement {
            out[pos] = id;
        }
        out
    }

    pub fn count(&self, action: MaskAction) -> usize {
        self.action.values().filter(|&&a| a == action).count()
    }
}

/// Real (non-PAD) positions holding a regular token.
pub fn maskable_positions(seq: &TokenSequence) -> Vec<usize> {
    seq.ids
        .iter()
        .zip(&seq.attention_mask)
        .enumerate()
        .filter(|&(_, (&id, &m))| m != 0 && !is_special(id))
        .map(|(i, _)| i)
        .collect()
}

/// `floor(rate · n)` without float round-off at exact multiples.
pub fn selection_count(mask_rate: f64, maskable: usize) -> usize {
    (mask_rate * maskable as f64 + 1e-9).floor() as usize
}

/// Selects `k = floor(mask_rate · maskable)` positions; `floor(0.8k)` become
/// MASK, `floor(0.1k)` a uniform regular token, the rest keep their token.
pub fn make_masking_plan(
    seq: &TokenSequence,
    mask_rate: f64,
    vocab_size: usize,
    seed: u64,
) -> Result<MaskingPlan> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(invalid(format!("mask_rate {mask_rate} outside (0, 1)")));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(invalid(format!("vocab_size {vocab_size} has no regular tokens")));
    }
    let maskable = maskable_positions(seq);
    let k = selection_count(mask_rate, maskable.len());
    if k == 0 {
        return Err(invalid(format!(
            "{} maskable positions select nothing at rate {mask_rate}",
            maskable.len()
        )));
    }
    let n_mask = k * 8 / 10;
    let n_rand = k / 10;

    let mut rng = rng_for(seed, &[&"masking"]);
    let picks = index::sample(&mut rng, maskable.len(), k);
    let mut plan = MaskingPlan::empty();
    for (rank, idx) in picks.iter().enumerate() {
        let pos = maskable[idx];
        let action = if rank < n_mask {
            plan.replacement.insert(pos, MASK);
            MaskAction::Mask
        } else if rank < n_mask + n_rand {
            let id = rng.random_range(NUM_SPECIALS as u32..vocab_size as u32);
            plan.replacement.insert(pos, id);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        plan.action.insert(pos, action);
        plan.selected.push(pos);
    }
    plan.selected.sort_unstable();
    Ok(plan)
}
