use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::manifest::Split;
use super::metrics::Metrics;
use super::model::Branch;
use super::train::{evaluate, train, training_indices, ModelSetup, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::Strategy;

/// One model variant in a sweep: a fusion strategy over both branches, or a
/// single branch on its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    Fused(Strategy),
    Single(Branch),
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Fused(s) => s.name(),
            Arm::Single(b) => b.name(),
        }
    }

    pub fn is_fused(self) -> bool {
        matches!(self, Arm::Fused(_))
    }

    /// `setup` with this arm's strategy and branch selection.
    pub fn apply(self, setup: &ModelSetup) -> ModelSetup {
        let mut s = setup.clone();
        match self {
            Arm::Fused(strategy) => {
                s.fusion.strategy = strategy;
                s.model.branch = Branch::Both;
            }
            Arm::Single(branch) => s.model.branch = branch,
        }
        s
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Arm::Single(Branch::Spectral)),
            "semantic" => Ok(Arm::Single(Branch::Semantic)),
            other => other
                .parse::<Strategy>()
                .map(Arm::Fused)
                .map_err(|_| Error::config("sweep.strategies", format!("unknown arm `{other}`"))),
        }
    }
}

impl Serialize for Arm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Arm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub budget: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Smallest number of train examples any class has.
pub fn min_train_per_class(data: &Dataset) -> usize {
    let mut counts = vec![0usize; data.n_classes()];
    for i in data.indices(Split::Train) {
        counts[data.examples[i].label] += 1;
    }
    counts.into_iter().min().unwrap_or(0)
}

/// Trains and tests every arm at every per-class label budget.
///
/// Every run starts from the same seed, so runs differ only in the data
/// they see and the arm.
pub fn label_budget_sweep(
    data: &Dataset,
    budgets: &[usize],
    arms: &[Arm],
    setup: &ModelSetup,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() || arms.is_empty() {
        return Err(Error::config("sweep.budgets", "need at least one budget and one arm"));
    }
    if budgets[0] == 0 || budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sweep.budgets", "budgets must be positive and strictly ascending"));
    }
    let available = min_train_per_class(data);
    let max = budgets[budgets.len() - 1];
    if max > available {
        return Err(Error::config(
            "sweep.budgets",
            format!("largest budget {max} exceeds the {available} train examples of the smallest class"),
        ));
    }
    let mut rows = Vec::with_capacity(budgets.len() * arms.len());
    for &arm in arms {
        let arm_setup = arm.apply(setup);
        for &k in budgets {
            let run = TrainConfig {
                samples_per_class: Some(k),
                ..cfg.clone()
            };
            debug_assert_eq!(training_indices(data, Some(k))?.len(), k * data.n_classes());
            let (bundle, _) = train(data, &arm_setup, &run)?;
            rows.push(SweepRow {
                strategy: arm.name().to_string(),
                budget: k,
                metrics: evaluate(&bundle, data, Split::Test)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::train::tests::{small_setup, toy};

    #[test]
    fn arm_names_round_trip() {
        for name in ["fixed", "shared", "sampling", "spectral", "semantic"] {
            assert_eq!(name.parse::<Arm>().unwrap().name(), name);
        }
        assert!(matches!("both".parse::<Arm>(), Err(Error::Config { .. })));
    }

    #[test]
    fn one_row_per_arm_and_budget() {
        let data = toy(10, 2, 0);
        let arms: Vec<Arm> = Strategy::ALL.into_iter().map(Arm::Fused).collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let setup = small_setup(Strategy::Fixed, Branch::Both);
        let rows = label_budget_sweep(&data, &[1, 3, 6], &arms, &setup, &cfg).unwrap();
        assert_eq!(rows.len(), 9);
        for arm in &arms {
            let params: Vec<usize> = rows.iter().filter(|r| r.strategy == arm.name()).map(|r| r.metrics.params).collect();
            assert_eq!(params.len(), 3);
            assert!(params.iter().all(|&p| p == params[0]));
        }
        for r in &rows {
            for v in [r.metrics.accuracy, r.metrics.precision_macro, r.metrics.recall_macro, r.metrics.f1_macro] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(label_budget_sweep(&data, &[3, 1], &arms, &setup, &cfg).is_err());
        assert!(label_budget_sweep(&data, &[7], &arms, &setup, &cfg).is_err());
    }
}
