//! Local classifiers over stylometric features: a multinomial logistic
//! regression and a random forest, both predicting the 3-class label, plus
//! learner-level cross-validation for model selection.

mod crossval;
mod forest;
mod logistic;

pub use crossval::{
    cross_validate, select_winner, train_on_rows, CandidateResult, CandidateSpec, CrossValResult,
};
pub use forest::{train_forest, DecisionTree, ForestModel};
pub use logistic::{
    loss_and_gradient, loss_trace, train_logistic, LogisticModel, TrainStatus, SOFTMAX_FLOOR,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::stylometry::FeatureVector;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("feature vector has {got} components, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("cross-validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{learners} unique learners cannot fill {folds} folds")]
    TooFewLearners { learners: usize, folds: usize },
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
}

/// Which classifier family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Forest,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Forest => "forest",
        })
    }
}

/// Hyperparameters for both model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// L2 penalty on the logistic weight matrix (scaled to match the
    /// sum-of-NLL objective; 1.0 reproduces the common C=1 default).
    pub l2_strength: f64,
    /// Fixed gradient-descent step; `None` uses backtracking line search.
    pub learning_rate: Option<f64>,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub trees_count: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Inverse-frequency sample weights for the logistic loss.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_strength: 1.0,
            learning_rate: None,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            trees_count: 200,
            max_depth: 8,
            min_samples_leaf: 2,
            class_weighting: false,
            seed: 0,
        }
    }
}

/// A trained model of either family, predicting from raw (unstandardized)
/// feature vectors. The logistic variant standardizes internally through
/// its stored schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Logistic(LogisticModel),
    Forest(ForestModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Logistic(_) => ModelKind::Logistic,
            TrainedModel::Forest(_) => ModelKind::Forest,
        }
    }

    pub fn predict(&self, features: &FeatureVector) -> Label {
        match self {
            TrainedModel::Logistic(m) => m.predict_features(features),
            TrainedModel::Forest(m) => m.predict(&features.to_array()),
        }
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk form of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model: TrainedModel,
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), TrainError> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| TrainError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, json).map_err(|e| TrainError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, TrainError> {
    let content = std::fs::read_to_string(path).map_err(|e| TrainError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let file: ModelFile = serde_json::from_str(&content).map_err(|e| TrainError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(TrainError::UnsupportedVersion(file.format_version));
    }
    Ok(file.model)
}

/// Checks a feature matrix for non-finite entries.
pub(crate) fn validate_finite(x: &[Vec<f64>]) -> Result<(), TrainError> {
    for (i, row) in x.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteFeature { row: i, column: j });
            }
        }
    }
    Ok(())
}
