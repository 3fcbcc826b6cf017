//! Randomized session structure: nine sets of five trials.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::task::{DistributionId, LoadLevel, TrialSpec};

pub const SETS: usize = 9;
pub const TRIALS_PER_SET: usize = 5;
pub const SETS_PER_LOAD: usize = 3;
pub const TRIALS: usize = SETS * TRIALS_PER_SET;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub seed: u64,
    pub trials: Vec<TrialSpec>,
}

impl Protocol {
    pub fn sets(&self) -> impl Iterator<Item = &[TrialSpec]> {
        self.trials.chunks(TRIALS_PER_SET)
    }

    pub fn set_loads(&self) -> Vec<LoadLevel> {
        self.sets().map(|s| s[0].load).collect()
    }

    /// Checks the counting invariants; returns a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        if self.trials.len() != TRIALS {
            return Err(format!("{} trials, expected {TRIALS}", self.trials.len()));
        }
        for level in LoadLevel::ALL {
            let n = self.set_loads().iter().filter(|&&l| l == level).count();
            if n != SETS_PER_LOAD {
                return Err(format!("load {level} used in {n} sets"));
            }
        }
        for (i, set) in self.sets().enumerate() {
            if set.iter().any(|t| t.load != set[0].load || t.set_index as usize != i + 1) {
                return Err(format!("set {} mixes loads or set indices", i + 1));
            }
            let mut ids: Vec<DistributionId> = set.iter().map(|t| t.distribution).collect();
            ids.sort();
            if ids != DistributionId::COLLECTION {
                return Err(format!("set {} is not a permutation of B-F: {ids:?}", i + 1));
            }
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.trial_index as usize != i + 1 {
                return Err(format!("trial {} has index {}", i + 1, t.trial_index));
            }
        }
        Ok(())
    }
}

/// Shuffle the load multiset {0,0,0,20,20,20,50,50,50} over sets and the
/// collection layouts within each set. Deterministic per seed.
pub fn generate_protocol(seed: u64) -> Protocol {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loads: Vec<LoadLevel> = LoadLevel::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, SETS_PER_LOAD))
        .collect();
    loads.shuffle(&mut rng);

    let mut trials = Vec::with_capacity(TRIALS);
    for (set, &load) in loads.iter().enumerate() {
        let mut order = DistributionId::COLLECTION;
        order.shuffle(&mut rng);
        for distribution in order {
            trials.push(TrialSpec {
                distribution,
                load,
                set_index: set as u32 + 1,
                trial_index: trials.len() as u32 + 1,
                rng_seed: rng.random(),
            });
        }
    }
    Protocol { seed, trials }
}
