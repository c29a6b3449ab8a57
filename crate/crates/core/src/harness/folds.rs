use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn split_of(&self, patient: &str) -> Option<Split> {
        let has = |v: &[String]| v.iter().any(|p| p == patient);
        if has(&self.train) {
            Some(Split::Train)
        } else if has(&self.val) {
            Some(Split::Val)
        } else if has(&self.test) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn patients(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ten patient-level train/val/test splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles the distinct patient ids and deals them into ten groups whose
/// sizes differ by at most one, with the larger groups spread evenly round
/// the cycle. Fold `f` tests on group `f`, validates on group `f + 1`
/// (mod 10) and trains on the other eight.
pub fn make_folds<S: AsRef<str>>(patients: &[S], seed: u64) -> Result<FoldPlan> {
    let unique: BTreeSet<&str> = patients.iter().map(AsRef::as_ref).collect();
    let n = unique.len();
    if n < FOLDS {
        return Err(invalid(format!("need at least {FOLDS} distinct patients, got {n}")));
    }
    let mut ids: Vec<String> = unique.into_iter().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    // group g holds [floor(g n / 10), floor((g + 1) n / 10))
    let bounds: Vec<usize> = (0..=FOLDS).map(|g| g * n / FOLDS).collect();
    let groups: Vec<&[String]> = (0..FOLDS).map(|g| &ids[bounds[g]..bounds[g + 1]]).collect();
    let folds = (0..FOLDS)
        .map(|f| {
            let v = (f + 1) % FOLDS;
            let train = (0..FOLDS).filter(|&g| g != f && g != v).flat_map(|g| groups[g].iter().cloned()).collect();
            Fold { id: f, train, val: groups[v].to_vec(), test: groups[f].to_vec() }
        })
        .collect();
    Ok(FoldPlan { seed, folds })
}

/// Checks disjointness, coverage and the 80/10/10 (+-1 patient) sizes.
pub fn check_plan<S: AsRef<str>>(plan: &FoldPlan, patients: &[S]) -> Result<()> {
    let all: BTreeSet<&str> = patients.iter().map(AsRef::as_ref).collect();
    let n = all.len() as f64;
    if plan.folds.len() != FOLDS {
        return Err(invalid(format!("plan has {} folds", plan.folds.len())));
    }
    for fold in &plan.folds {
        let mut seen = BTreeSet::new();
        for (split, frac) in [(Split::Train, 0.8), (Split::Val, 0.1), (Split::Test, 0.1)] {
            let ids = fold.patients(split);
            if (ids.len() as f64 - frac * n).abs() > 1.0 + 1e-9 {
                return Err(invalid(format!("fold {} {split:?} has {} of {n} patients", fold.id, ids.len())));
            }
            for p in ids {
                if !seen.insert(p.as_str()) {
                    return Err(invalid(format!("fold {} places patient {p} twice", fold.id)));
                }
            }
        }
        if seen != all {
            return Err(invalid(format!("fold {} does not cover exactly the given patients", fold.id)));
        }
    }
    Ok(())
}
