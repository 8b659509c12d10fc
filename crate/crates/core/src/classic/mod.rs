//! Classifiers over spectral feature vectors: polynomial SVM, decision tree,
//! pruned tree and a small feed-forward network.
//!
//! A [`ClassicModel`] bundles the fitted [`Standardizer`] with one classifier
//! and serializes to a single versioned JSON document.

mod dataset;
mod eval;
pub mod mlp;
mod standardize;
pub mod svm;
pub mod tree;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use dataset::Dataset;
pub use eval::{evaluate_predictions, Metrics};
pub use mlp::{train_mlp, MlpConfig, MlpModel};
pub use standardize::Standardizer;
pub use svm::{train_svm, SvmConfig, SvmModel};
pub use tree::{prune_tree, train_tree, TreeConfig, TreeModel};

use crate::{Class, Error, Result};

pub const MODEL_SCHEMA: &str = "das-classic-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Classifier {
    Svm(SvmModel),
    Tree(TreeModel),
    PrunedTree(TreeModel),
    Mlp(MlpModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Svm,
    Tree,
    PrunedTree,
    Mlp,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Svm,
        ClassifierKind::Tree,
        ClassifierKind::PrunedTree,
        ClassifierKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Svm => "svm",
            ClassifierKind::Tree => "tree",
            ClassifierKind::PrunedTree => "pruned_tree",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "svm" => Ok(ClassifierKind::Svm),
            "tree" => Ok(ClassifierKind::Tree),
            "pruned_tree" => Ok(ClassifierKind::PrunedTree),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown classifier {other:?}"))),
        }
    }
}

/// Classifier output. `probability` is the excavator probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Class,
    pub probability: f64,
}

/// Logistic map of an SVM margin.
pub fn margin_probability(margin: f64) -> f64 {
    1.0 / (1.0 + (-margin).exp())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub svm: Option<SvmConfig>,
    pub tree: Option<TreeConfig>,
    pub mlp: Option<MlpConfig>,
}

/// Standardizer plus classifier, serialized as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicModel {
    pub schema: String,
    pub standardizer: Standardizer,
    pub classifier: Classifier,
}

impl ClassicModel {
    pub fn kind(&self) -> ClassifierKind {
        match self.classifier {
            Classifier::Svm(_) => ClassifierKind::Svm,
            Classifier::Tree(_) => ClassifierKind::Tree,
            Classifier::PrunedTree(_) => ClassifierKind::PrunedTree,
            Classifier::Mlp(_) => ClassifierKind::Mlp,
        }
    }

    pub fn dims(&self) -> usize {
        self.standardizer.dims()
    }

    /// Fits the standardizer on `train` and trains one classifier. The pruned
    /// tree needs `holdout`.
    pub fn train(
        kind: ClassifierKind,
        train: &Dataset,
        holdout: Option<&Dataset>,
        settings: &TrainSettings,
    ) -> Result<Self> {
        let standardizer = Standardizer::fit(train)?;
        let z = standardizer.apply_dataset(train)?;
        let classifier = match kind {
            ClassifierKind::Svm => Classifier::Svm(train_svm(&z, &settings.svm.unwrap_or_default())?),
            ClassifierKind::Tree => {
                Classifier::Tree(train_tree(&z, &settings.tree.unwrap_or_default())?)
            }
            ClassifierKind::PrunedTree => {
                let holdout = holdout.ok_or_else(|| {
                    Error::InsufficientData("pruned tree needs a holdout set".into())
                })?;
                let grown = train_tree(&z, &settings.tree.unwrap_or_default())?;
                let zh = standardizer.apply_dataset(holdout)?;
                Classifier::PrunedTree(prune_tree(&grown, &zh)?)
            }
            ClassifierKind::Mlp => {
                Classifier::Mlp(train_mlp(&z, &settings.mlp.unwrap_or_default())?.0)
            }
        };
        Ok(Self {
            schema: MODEL_SCHEMA.to_string(),
            standardizer,
            classifier,
        })
    }

    /// Prediction on an already standardized row.
    pub fn predict_standardized(&self, z: &[f64]) -> Result<Prediction> {
        if z.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: z.len(),
            });
        }
        Ok(match &self.classifier {
            Classifier::Svm(m) => {
                let margin = m.decision(z);
                Prediction {
                    label: if margin > 0.0 {
                        Class::Excavator
                    } else {
                        Class::Other
                    },
                    probability: margin_probability(margin),
                }
            }
            Classifier::Tree(t) | Classifier::PrunedTree(t) => {
                let (label, probability) = t.predict(z);
                Prediction { label, probability }
            }
            Classifier::Mlp(m) => {
                let p = m.probabilities(z)?;
                Prediction {
                    label: if p[0] > p[1] {
                        Class::Excavator
                    } else {
                        Class::Other
                    },
                    probability: p[0],
                }
            }
        })
    }

    /// Standardizes a raw feature row and classifies it.
    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        let z = self.standardizer.apply(features)?;
        self.predict_standardized(&z)
    }

    pub fn evaluate(&self, test: &Dataset) -> Result<Metrics> {
        if test.is_empty() {
            return Err(Error::InsufficientData("evaluation needs a non-empty test set".into()));
        }
        let predicted = test
            .features
            .iter()
            .map(|x| self.predict(x).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?;
        Ok(evaluate_predictions(&test.targets, &predicted))
    }

    pub fn to_writer<W: Write>(&self, dst: W) -> Result<()> {
        serde_json::to_writer(dst, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(src: R) -> Result<Self> {
        let m: ClassicModel = serde_json::from_reader(src)?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "unsupported model schema {:?} (expected {MODEL_SCHEMA:?})",
                m.schema
            )));
        }
        let inner_dims = match &m.classifier {
            Classifier::Svm(s) => (!s.support_vectors.is_empty()).then(|| s.dims()),
            Classifier::Tree(t) | Classifier::PrunedTree(t) => {
                t.max_feature().filter(|f| *f >= m.dims()).map(|f| f + 1)
            }
            Classifier::Mlp(n) => Some(n.inputs),
        };
        if let Some(d) = inner_dims {
            if d != m.dims() {
                return Err(Error::DimensionMismatch {
                    expected: m.dims(),
                    actual: d,
                });
            }
        }
        Ok(m)
    }
}
