use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cohort::Label;
use crate::rng::{task_rng, TaskRng};

/// How patients are divided into training and test sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SplitScheme {
    /// Stratified K-fold; one assignment reused by every trial.
    KFold { k: usize },
    /// Stratified K-fold re-randomized for every trial.
    RandomKFold { k: usize },
    /// Stratified random split, re-drawn each trial.
    Holdout { train_fraction: f64 },
    /// Per-class draw with replacement; test is everyone never drawn.
    Bootstrap { train_fraction: f64 },
}

impl SplitScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SplitScheme::KFold { .. } => "kfold",
            SplitScheme::RandomKFold { .. } => "random_kfold",
            SplitScheme::Holdout { .. } => "holdout",
            SplitScheme::Bootstrap { .. } => "bootstrap",
        }
    }

    pub fn folds_per_trial(&self) -> usize {
        match *self {
            SplitScheme::KFold { k } | SplitScheme::RandomKFold { k } => k,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        match *self {
            SplitScheme::KFold { k } | SplitScheme::RandomKFold { k } if k < 2 => {
                Err(EvalError::InvalidConfig(format!("k must be at least 2, got {k}")))
            }
            SplitScheme::Holdout { train_fraction } | SplitScheme::Bootstrap { train_fraction }
                if !(train_fraction > 0.0 && train_fraction < 1.0) =>
            {
                Err(EvalError::InvalidConfig(format!(
                    "train_fraction must lie in (0, 1), got {train_fraction}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// One train/test assignment. Bootstrap training lists may repeat ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub seed: u64,
    /// `assignments[trial][fold]`.
    pub assignments: Vec<Vec<Fold>>,
}

fn by_class(patients: &[(String, Label)]) -> [Vec<String>; 2] {
    let mut out: [Vec<String>; 2] = Default::default();
    for (id, label) in patients {
        out[label.class_index()].push(id.clone());
    }
    out
}

fn kfold_with(patients: &[(String, Label)], k: usize, rng: &mut TaskRng) -> Result<Vec<Fold>, EvalError> {
    let mut classes = by_class(patients);
    for ids in &classes {
        if ids.len() % k != 0 || ids.is_empty() {
            return Err(EvalError::UnbalancedCohort {
                counts: [classes[0].len(), classes[1].len()],
                k,
            });
        }
    }
    for ids in classes.iter_mut() {
        ids.shuffle(rng);
    }
    Ok((0..k)
        .map(|f| {
            let mut fold = Fold {
                train: Vec::new(),
                test: Vec::new(),
            };
            for ids in &classes {
                let m = ids.len() / k;
                for (i, id) in ids.iter().enumerate() {
                    if i / m == f {
                        fold.test.push(id.clone());
                    } else {
                        fold.train.push(id.clone());
                    }
                }
            }
            fold
        })
        .collect())
}

/// Stratified K-fold: each class is shuffled and cut into `k` equal parts.
pub fn stratified_kfold(patients: &[(String, Label)], k: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    let scheme = SplitScheme::KFold { k };
    scheme.validate()?;
    let folds = kfold_with(patients, k, &mut task_rng(seed, &[0]))?;
    Ok(SplitPlan {
        scheme,
        seed,
        assignments: vec![folds],
    })
}

fn holdout_with(patients: &[(String, Label)], train_fraction: f64, rng: &mut TaskRng) -> Result<Fold, EvalError> {
    let mut fold = Fold {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut ids) in by_class(patients).into_iter().enumerate() {
        let n = ids.len();
        let n_test = (n as f64 * (1.0 - train_fraction)).round() as usize;
        if n_test == 0 || n_test >= n {
            return Err(EvalError::EmptySide {
                class: Label::from_class_index(c),
            });
        }
        ids.shuffle(rng);
        fold.test.extend_from_slice(&ids[..n_test]);
        fold.train.extend_from_slice(&ids[n_test..]);
    }
    Ok(fold)
}

/// Stratified random split with `round(n * (1 - train_fraction))` test
/// patients per class.
pub fn holdout_split(patients: &[(String, Label)], train_fraction: f64, seed: u64) -> Result<SplitPlan, EvalError> {
    let scheme = SplitScheme::Holdout { train_fraction };
    scheme.validate()?;
    let fold = holdout_with(patients, train_fraction, &mut task_rng(seed, &[0]))?;
    Ok(SplitPlan {
        scheme,
        seed,
        assignments: vec![vec![fold]],
    })
}

fn bootstrap_with(patients: &[(String, Label)], train_fraction: f64, rng: &mut TaskRng) -> Result<Fold, EvalError> {
    let mut fold = Fold {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, ids) in by_class(patients).into_iter().enumerate() {
        let draws = (train_fraction * ids.len() as f64).floor() as usize;
        let class = Label::from_class_index(c);
        if draws == 0 {
            return Err(EvalError::EmptySide { class });
        }
        let mut drawn = vec![false; ids.len()];
        for _ in 0..draws {
            let i = rng.random_range(0..ids.len());
            drawn[i] = true;
            fold.train.push(ids[i].clone());
        }
        let before = fold.test.len();
        fold.test
            .extend(ids.iter().zip(&drawn).filter(|(_, &d)| !d).map(|(id, _)| id.clone()));
        if fold.test.len() == before {
            return Err(EvalError::EmptySide { class });
        }
    }
    Ok(fold)
}

/// Draws `floor(train_fraction * n_c)` patients per class with replacement
/// for training; patients never drawn form the test set.
pub fn bootstrap_split(patients: &[(String, Label)], train_fraction: f64, seed: u64) -> Result<SplitPlan, EvalError> {
    let scheme = SplitScheme::Bootstrap { train_fraction };
    scheme.validate()?;
    let fold = bootstrap_with(patients, train_fraction, &mut task_rng(seed, &[0]))?;
    Ok(SplitPlan {
        scheme,
        seed,
        assignments: vec![vec![fold]],
    })
}

/// Assignments for every trial. K-fold keeps trial 0's assignment; the other
/// schemes draw afresh from `(seed, trial)`.
pub fn plan_splits(
    patients: &[(String, Label)],
    scheme: SplitScheme,
    trials: usize,
    seed: u64,
) -> Result<SplitPlan, EvalError> {
    scheme.validate()?;
    let assignments = match scheme {
        SplitScheme::KFold { k } => {
            let folds = kfold_with(patients, k, &mut task_rng(seed, &[0]))?;
            vec![folds; trials]
        }
        _ => (0..trials)
            .map(|t| {
                let mut rng = task_rng(seed, &[t as u64]);
                match scheme {
                    SplitScheme::RandomKFold { k } => kfold_with(patients, k, &mut rng),
                    SplitScheme::Holdout { train_fraction } => {
                        holdout_with(patients, train_fraction, &mut rng).map(|f| vec![f])
                    }
                    SplitScheme::Bootstrap { train_fraction } => {
                        bootstrap_with(patients, train_fraction, &mut rng).map(|f| vec![f])
                    }
                    SplitScheme::KFold { .. } => unreachable!(),
                }
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(SplitPlan {
        scheme,
        seed,
        assignments,
    })
}

/// Duplicates randomly chosen minority items until both classes are equally
/// represented. Originals keep their order; duplicates are appended.
pub fn oversample<T: Clone>(
    items: Vec<T>,
    label_of: impl Fn(&T) -> Label,
    rng: &mut TaskRng,
) -> Result<Vec<T>, EvalError> {
    let mut pools: [Vec<usize>; 2] = Default::default();
    for (i, it) in items.iter().enumerate() {
        pools[label_of(it).class_index()].push(i);
    }
    if pools[0].is_empty() || pools[1].is_empty() {
        return Err(EvalError::SingleClass);
    }
    let (minority, deficit) = if pools[0].len() < pools[1].len() {
        (&pools[0], pools[1].len() - pools[0].len())
    } else {
        (&pools[1], pools[0].len() - pools[1].len())
    };
    let extra: Vec<usize> = (0..deficit)
        .map(|_| minority[rng.random_range(0..minority.len())])
        .collect();
    let mut out = items;
    out.reserve(extra.len());
    for i in extra {
        out.push(out[i].clone());
    }
    Ok(out)
}

/// Labelled instances balanced by [`oversample`] with an RNG seeded from `seed`.
pub fn oversample_instances<T: Clone>(items: Vec<(T, Label)>, seed: u64) -> Result<Vec<(T, Label)>, EvalError> {
    oversample(items, |(_, l)| *l, &mut task_rng(seed, &[0]))
}
