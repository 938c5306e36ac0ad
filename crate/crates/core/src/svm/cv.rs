//! Stratified k-fold selection of C.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decision_value, predict_multiclass, train_binary, train_one_vs_all, SvmError, TrainConfig};
use crate::metrics::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub c: f64,
    /// Mean over folds of the fold's mean f1.
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std_dev: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub best_c: f64,
    pub folds: usize,
    pub scores: Vec<CvScore>,
}

/// Fold index for every sample. Each class is shuffled with the seeded RNG
/// and dealt round-robin, continuing the rotation from the previous class.
pub fn stratified_folds<S: AsRef<str>>(labels: &[S], folds: usize, seed: u64) -> Result<Vec<usize>, SvmError> {
    let insufficient = |reason: String| SvmError::InsufficientSamplesForFolds { folds, reason };
    if folds < 2 {
        return Err(SvmError::InvalidConfig("folds must be at least 2".into()));
    }
    if labels.len() < folds {
        return Err(insufficient(format!("only {} samples", labels.len())));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_ref()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    for f in 0..folds {
        let train_classes: BTreeSet<&str> = labels
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a != f)
            .map(|(l, _)| l.as_ref())
            .collect();
        if train_classes.len() < 2 {
            return Err(insufficient(format!("fold {f} leaves fewer than two classes for training")));
        }
    }
    Ok(assignment)
}

fn summarise(c: f64, fold_scores: Vec<f64>) -> CvScore {
    let n = fold_scores.len() as f64;
    let mean = fold_scores.iter().sum::<f64>() / n;
    let var = if fold_scores.len() > 1 {
        fold_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    CvScore {
        c,
        mean,
        std_dev: var.sqrt(),
        fold_scores,
    }
}

fn run_grid<F>(assignment: &[usize], cfg: &TrainConfig, fold_score: F) -> Result<CvReport, SvmError>
where
    F: Fn(&[usize], &[usize], f64) -> Result<f64, SvmError> + Sync,
{
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.c_grid.len())
        .flat_map(|ci| (0..cfg.folds).map(move |f| (ci, f)))
        .collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(ci, f)| {
            let train: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == f).collect();
            fold_score(&train, &test, cfg.c_grid[ci])
        })
        .collect::<Result<_, _>>()?;
    let scores: Vec<CvScore> = cfg
        .c_grid
        .iter()
        .enumerate()
        .map(|(ci, &c)| summarise(c, results[ci * cfg.folds..(ci + 1) * cfg.folds].to_vec()))
        .collect();
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.mean > best.mean || (s.mean == best.mean && s.c < best.c) {
            best = s;
        }
    }
    Ok(CvReport {
        best_c: best.c,
        folds: cfg.folds,
        scores,
    })
}

/// One-vs-all CV; each fold is scored by the mean f1 over classes present in
/// the held-out part.
pub fn cross_validate<S: AsRef<str> + Sync>(x: &[&[f32]], y: &[S], cfg: &TrainConfig) -> Result<CvReport, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch {
            samples: x.len(),
            labels: y.len(),
        });
    }
    let assignment = stratified_folds(y, cfg.folds, cfg.seed)?;
    run_grid(&assignment, cfg, |train, test, c| {
        let tx: Vec<&[f32]> = train.iter().map(|&i| x[i]).collect();
        let ty: Vec<&str> = train.iter().map(|&i| y[i].as_ref()).collect();
        let models = train_one_vs_all(&tx, &ty, c, cfg)?;
        let preds: Vec<&str> = test
            .iter()
            .map(|&i| predict_multiclass(&models, x[i]))
            .collect::<Result<_, _>>()?;
        let truth: Vec<&str> = test.iter().map(|&i| y[i].as_ref()).collect();
        Ok(evaluate(&preds, &truth, &[] as &[&str]).map(|r| r.mean_f1).unwrap_or(0.0))
    })
}

/// Binary CV over ±1 labels (decision ≥ 0 is positive), scored by the mean
/// f1 of the two classes.
pub fn cross_validate_binary(x: &[&[f32]], y: &[i8], cfg: &TrainConfig) -> Result<CvReport, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch {
            samples: x.len(),
            labels: y.len(),
        });
    }
    let names: Vec<&str> = y.iter().map(|&v| if v == 1 { "+1" } else { "-1" }).collect();
    let assignment = stratified_folds(&names, cfg.folds, cfg.seed)?;
    run_grid(&assignment, cfg, |train, test, c| {
        let tx: Vec<&[f32]> = train.iter().map(|&i| x[i]).collect();
        let ty: Vec<i8> = train.iter().map(|&i| y[i]).collect();
        let model = train_binary(&tx, &ty, c, cfg)?;
        let preds: Vec<&str> = test
            .iter()
            .map(|&i| decision_value(&model, x[i]).map(|v| if v >= 0.0 { "+1" } else { "-1" }))
            .collect::<Result<_, _>>()?;
        let truth: Vec<&str> = test.iter().map(|&i| names[i]).collect();
        Ok(evaluate(&preds, &truth, &[] as &[&str]).map(|r| r.mean_f1).unwrap_or(0.0))
    })
}
