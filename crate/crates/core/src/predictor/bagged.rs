//! Bagged regression-tree ensemble: the built-in surrogate standing in for
//! a Bayesian tree model. One bag per treatment arm; per-tree predictions
//! double as posterior-style ensemble draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeConfig};
use super::{Arm, OutcomeModel, PredictorError};
use crate::data::Dataset;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_trees: 100,
            max_depth: 6,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct BaggedTrees {
    trees0: Vec<RegressionTree>,
    trees1: Vec<RegressionTree>,
    p: usize,
}

/// Fits one bagged ensemble per arm on the training split. Each tree sees a
/// bootstrap resample of its arm's rows; resamples are drawn up front from a
/// per-arm seeded stream, so parallel fitting changes nothing.
pub fn fit_builtin(train: &Dataset, config: &EnsembleConfig) -> Result<BaggedTrees, PredictorError> {
    let y = train.outcomes().ok_or(PredictorError::MissingOutcomes)?;
    assert!(config.n_trees >= 1, "ensemble needs at least one tree");
    let x = {
        let mut x = Vec::with_capacity(train.n() * train.p());
        for i in 0..train.n() {
            x.extend_from_slice(train.row(i));
        }
        x
    };
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
    };

    let fit_arm = |arm: Arm, rows: Vec<usize>, label: &str| -> Result<Vec<RegressionTree>, PredictorError> {
        if rows.len() < 2 {
            return Err(PredictorError::TooFewUnits { arm, n: rows.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, label));
        let resamples: Vec<Vec<usize>> = (0..config.n_trees)
            .map(|_| {
                (0..rows.len())
                    .map(|_| rows[rng.gen_range(0..rows.len())])
                    .collect()
            })
            .collect();
        Ok(resamples
            .par_iter()
            .map(|sample| RegressionTree::fit(&x, train.p(), y, sample, &tree_cfg))
            .collect())
    };

    Ok(BaggedTrees {
        trees0: fit_arm(Arm::Control, train.control_indices(), "ensemble-control")?,
        trees1: fit_arm(Arm::Treated, train.treated_indices(), "ensemble-treated")?,
        p: train.p(),
    })
}

impl BaggedTrees {
    fn trees(&self, arm: Arm) -> &[RegressionTree] {
        match arm {
            Arm::Control => &self.trees0,
            Arm::Treated => &self.trees1,
        }
    }
}

impl OutcomeModel for BaggedTrees {
    fn predict(&self, x: &[f64], arm: Arm) -> Result<f64, PredictorError> {
        assert_eq!(x.len(), self.p, "covariate dimension mismatch");
        let trees = self.trees(arm);
        let sum: f64 = trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / trees.len() as f64)
    }

    fn ensemble_predict(&self, x: &[f64], arm: Arm) -> Result<Vec<f64>, PredictorError> {
        assert_eq!(x.len(), self.p, "covariate dimension mismatch");
        Ok(self.trees(arm).iter().map(|t| t.predict(x)).collect())
    }

    fn has_ensemble(&self) -> bool {
        true
    }
}
