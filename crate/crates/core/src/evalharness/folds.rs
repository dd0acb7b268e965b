use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Frame-level, subject-stratified k-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    /// Fold id of each frame, indexed like the input.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// `subjects[i]` is the subject of frame `i`. Each subject's frames are
    /// shuffled (subjects visited in sorted order, one RNG stream) and dealt
    /// round-robin into the folds.
    pub fn new(subjects: &[&str], n_folds: usize, seed: u64) -> Result<Self, EvalError> {
        if n_folds < 2 {
            return Err(EvalError::BadFoldCount(n_folds));
        }
        let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in subjects.iter().enumerate() {
            by_subject.entry(s).or_default().push(i);
        }
        if let Some((s, frames)) = by_subject.iter().find(|(_, f)| f.len() < n_folds) {
            return Err(EvalError::TooFewFrames {
                subject: s.to_string(),
                frames: frames.len(),
                folds: n_folds,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment = vec![0; subjects.len()];
        for frames in by_subject.values_mut() {
            frames.shuffle(&mut rng);
            for (pos, &i) in frames.iter().enumerate() {
                assignment[i] = pos % n_folds;
            }
        }
        Ok(FoldPlan {
            n_folds,
            seed,
            assignment,
        })
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}
