//! The model under audit: a categorical Naive Bayes classifier.
//!
//! The platform trains this on its own data and the audit treats it as a
//! black box behind the [`Classifier`] trait. Inputs are every feature
//! column plus the protected column; the target column is what it learns
//! to predict.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};

/// Anything that can fill the prediction column of a dataset.
pub trait Classifier {
    /// Overwrite the prediction column, row by row, in place.
    fn label(&self, dataset: &mut Dataset) -> Result<()>;
}

/// `dataset` with its prediction column filled by `model`.
pub fn predict<C: Classifier + ?Sized>(model: &C, dataset: &Dataset) -> Result<Dataset> {
    let mut out = dataset.clone();
    model.label(&mut out)?;
    Ok(out)
}

/// Per-input conditional table: smoothed log P(value | class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InputTable {
    name: String,
    k: usize,
    /// `log_cond[y][v]` = log P(input = v | Y = y).
    log_cond: [Vec<f64>; 2],
}

/// Categorical Naive Bayes over a binary target, trained with add-one
/// smoothing and scored in log space (so even dozens of inputs with large
/// cardinalities cannot underflow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    target: String,
    log_prior: [f64; 2],
    inputs: Vec<InputTable>,
    /// Set when training saw a single class; prediction then short-circuits.
    degenerate_class: Option<u32>,
    pub warnings: Vec<String>,
    pub trained_on: u64,
}

const MODEL_FORMAT: &str = "p2nia-model/1";

/// On-disk wrapper so the artifact is self-describing.
#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    format: String,
    model: NaiveBayesModel,
}

/// Train on every feature column plus the protected column.
///
/// Errors on an empty dataset. A dataset where only one class occurs
/// still trains, but the resulting model always predicts that class and
/// carries a warning saying so.
pub fn train(dataset: &Dataset) -> Result<NaiveBayesModel> {
    let n = dataset.n_rows();
    if n == 0 {
        return Err(Error::Model("cannot train on an empty dataset".into()));
    }
    let schema = dataset.schema();
    let y_col = schema.target_index();
    let input_cols: Vec<usize> = schema
        .attributes
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a.role, Role::Feature | Role::Protected))
        .map(|(i, _)| i)
        .collect();

    let mut class_counts = [0u64; 2];
    let mut value_counts: Vec<[Vec<u64>; 2]> = input_cols
        .iter()
        .map(|&c| {
            let k = schema.attributes[c].cardinality();
            [vec![0u64; k], vec![0u64; k]]
        })
        .collect();
    for row in dataset.iter_rows() {
        let y = row[y_col] as usize;
        class_counts[y] += 1;
        for (slot, &c) in input_cols.iter().enumerate() {
            value_counts[slot][y][row[c] as usize] += 1;
        }
    }

    let mut warnings = Vec::new();
    let degenerate_class = match (class_counts[0], class_counts[1]) {
        (0, _) => Some(1u32),
        (_, 0) => Some(0u32),
        _ => None,
    };
    if let Some(class) = degenerate_class {
        warnings.push(format!(
            "training data contains a single class; the model always predicts {class}"
        ));
    }

    let log_prior = [
        ((class_counts[0] + 1) as f64 / (n + 2) as f64).ln(),
        ((class_counts[1] + 1) as f64 / (n + 2) as f64).ln(),
    ];
    let inputs = input_cols
        .iter()
        .zip(value_counts)
        .map(|(&c, counts)| {
            let attr = &schema.attributes[c];
            let k = attr.cardinality();
            let log_cond = [0, 1].map(|y| {
                counts[y]
                    .iter()
                    .map(|&cv| ((cv + 1) as f64 / (class_counts[y] + k as u64) as f64).ln())
                    .collect()
            });
            InputTable { name: attr.name.clone(), k, log_cond }
        })
        .collect();

    Ok(NaiveBayesModel {
        target: schema.attributes[y_col].name.clone(),
        log_prior,
        inputs,
        degenerate_class,
        warnings,
        trained_on: n as u64,
    })
}

impl NaiveBayesModel {
    /// Smoothed class prior P(Y = y).
    pub fn prior(&self, y: usize) -> f64 {
        self.log_prior[y].exp()
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// Input column names, in training order.
    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|i| i.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelArtifact {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<NaiveBayesModel> {
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        if artifact.format != MODEL_FORMAT {
            return Err(Error::Model(format!(
                "unsupported model format {:?} (expected {MODEL_FORMAT:?})",
                artifact.format
            )));
        }
        Ok(artifact.model)
    }

    pub fn write_json_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json_file(path: &std::path::Path) -> Result<NaiveBayesModel> {
        NaiveBayesModel::from_json(&std::fs::read_to_string(path)?)
    }

    /// Map each model input to its column index in `dataset`, validating
    /// cardinalities.
    fn resolve_inputs(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        self.inputs
            .iter()
            .map(|input| {
                let col = dataset.schema().column_index(&input.name)?;
                let k = dataset.schema().attributes[col].cardinality();
                if k != input.k {
                    return Err(Error::Model(format!(
                        "attribute {:?} has cardinality {k} but the model was trained with {}",
                        input.name, input.k
                    )));
                }
                Ok(col)
            })
            .collect()
    }
}

impl Classifier for NaiveBayesModel {
    fn label(&self, dataset: &mut Dataset) -> Result<()> {
        let cols = self.resolve_inputs(dataset)?;
        let pred_col = dataset.schema().prediction_index();
        for r in 0..dataset.n_rows() {
            let code = if let Some(class) = self.degenerate_class {
                class
            } else {
                let mut scores = self.log_prior;
                for (input, &c) in self.inputs.iter().zip(&cols) {
                    let v = dataset.code(r, c) as usize;
                    scores[0] += input.log_cond[0][v];
                    scores[1] += input.log_cond[1][v];
                }
                // Ties break toward the negative class.
                u32::from(scores[1] > scores[0])
            };
            dataset.set_code(r, pred_col, code)?;
        }
        Ok(())
    }
}
