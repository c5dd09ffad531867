//! Learner-level k-fold cross-validation and winner selection between
//! candidate models.
//!
//! Folds partition learners, not responses, using the same leakage rule as
//! the corpus split. The winner is the candidate with the highest mean
//! weighted F1; ties break on higher mean accuracy, then on candidate
//! order (logistic is listed first by convention).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    train_forest, train_logistic, ModelKind, TrainConfig, TrainError, TrainedModel,
};
use crate::corpus::Label;
use crate::evaluation::{score, ClassificationReport};
use crate::stylometry::{FeatureSchema, FeatureSet};

/// One model family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub kind: ModelKind,
    pub config: TrainConfig,
}

/// Cross-validation outcome for one candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateResult {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub fold_reports: Vec<ClassificationReport>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_weighted_f1: f64,
    pub sd_weighted_f1: f64,
}

/// All candidates' fold scores plus the selected winner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValResult {
    pub folds: usize,
    pub candidates: Vec<CandidateResult>,
    /// Index into `candidates`.
    pub winner: usize,
}

impl CrossValResult {
    pub fn winning_candidate(&self) -> &CandidateResult {
        &self.candidates[self.winner]
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Assigns each row to a fold by learner, round-robin over shuffled
/// learner ids.
fn fold_assignment(
    learner_ids: &[String],
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>, TrainError> {
    let mut unique: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for id in learner_ids {
        if !seen.contains_key(id.as_str()) {
            seen.insert(id.as_str(), ());
            unique.push(id);
        }
    }
    if unique.len() < folds {
        return Err(TrainError::TooFewLearners {
            learners: unique.len(),
            folds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let learner_fold: HashMap<&str, usize> = unique
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i % folds))
        .collect();
    Ok(learner_ids
        .iter()
        .map(|id| learner_fold[id.as_str()])
        .collect())
}

/// Trains one candidate on explicit row subsets and scores the held-out
/// rows. Standardization is fitted on the training rows only.
fn train_and_score(
    set: &FeatureSet,
    train_rows: &[usize],
    test_rows: &[usize],
    candidate: &CandidateSpec,
) -> Result<ClassificationReport, TrainError> {
    let model = train_on_rows(set, train_rows, candidate)?;
    let y_true: Vec<Label> = test_rows.iter().map(|&r| set.labels[r]).collect();
    let y_pred: Vec<Label> = test_rows
        .iter()
        .map(|&r| model.predict(&set.features[r]))
        .collect();
    score(&y_true, &y_pred).map_err(|_| TrainError::EmptyTrainingSet)
}

/// Trains one candidate on a row subset of a feature set.
pub fn train_on_rows(
    set: &FeatureSet,
    rows: &[usize],
    candidate: &CandidateSpec,
) -> Result<TrainedModel, TrainError> {
    let features: Vec<_> = rows.iter().map(|&r| set.features[r]).collect();
    let labels: Vec<Label> = rows.iter().map(|&r| set.labels[r]).collect();
    match candidate.kind {
        ModelKind::Logistic => {
            let schema =
                FeatureSchema::fit(&features).map_err(|_| TrainError::EmptyTrainingSet)?;
            let x: Vec<Vec<f64>> = features.iter().map(|fv| schema.apply(fv)).collect();
            Ok(TrainedModel::Logistic(train_logistic(
                &x,
                &labels,
                &schema,
                &candidate.config,
            )?))
        }
        ModelKind::Forest => {
            let x: Vec<Vec<f64>> = features.iter().map(|fv| fv.to_array().to_vec()).collect();
            Ok(TrainedModel::Forest(train_forest(
                &x,
                &labels,
                &candidate.config,
            )?))
        }
    }
}

/// Runs learner-level k-fold cross-validation over all candidates.
pub fn cross_validate(
    set: &FeatureSet,
    folds: usize,
    candidates: &[CandidateSpec],
    seed: u64,
) -> Result<CrossValResult, TrainError> {
    if folds < 2 {
        return Err(TrainError::TooFewFolds(folds));
    }
    if set.is_empty() || candidates.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let assignment = fold_assignment(&set.learner_ids, folds, seed)?;
    let mut results = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let mut fold_reports = Vec::with_capacity(folds);
        for fold in 0..folds {
            let train_rows: Vec<usize> = (0..set.len())
                .filter(|&r| assignment[r] != fold)
                .collect();
            let test_rows: Vec<usize> =
                (0..set.len()).filter(|&r| assignment[r] == fold).collect();
            fold_reports.push(train_and_score(set, &train_rows, &test_rows, candidate)?);
        }
        let accs: Vec<f64> = fold_reports.iter().map(|r| r.accuracy).collect();
        let wf1s: Vec<f64> = fold_reports.iter().map(|r| r.weighted_avg.f1).collect();
        let (mean_accuracy, sd_accuracy) = mean_sd(&accs);
        let (mean_weighted_f1, sd_weighted_f1) = mean_sd(&wf1s);
        results.push(CandidateResult {
            kind: candidate.kind,
            config: candidate.config.clone(),
            fold_reports,
            mean_accuracy,
            sd_accuracy,
            mean_weighted_f1,
            sd_weighted_f1,
        });
    }
    let scores: Vec<(f64, f64)> = results
        .iter()
        .map(|r| (r.mean_weighted_f1, r.mean_accuracy))
        .collect();
    let winner = select_winner(&scores);
    Ok(CrossValResult {
        folds,
        candidates: results,
        winner,
    })
}

/// Picks the winner from `(mean weighted F1, mean accuracy)` pairs:
/// highest F1, ties broken by higher accuracy, then by list order.
pub fn select_winner(scores: &[(f64, f64)]) -> usize {
    const TIE: f64 = 1e-12;
    let mut best = 0;
    for (i, &(wf1, acc)) in scores.iter().enumerate().skip(1) {
        let (best_wf1, best_acc) = scores[best];
        if wf1 > best_wf1 + TIE || ((wf1 - best_wf1).abs() <= TIE && acc > best_acc + TIE) {
            best = i;
        }
    }
    best
}
