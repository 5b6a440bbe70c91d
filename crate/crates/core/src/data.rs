//! Domains, run configuration and per-run reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, FeatureMatrix};

/// Labelled source samples; `labels[j]` is the class of column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDomain {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub name: String,
}

impl LabeledDomain {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<usize>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != features.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                features.ncols()
            )));
        }
        check_finite(&features)?;
        Ok(Self {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }
}

/// Target samples; pseudo-labels are absent until a first classifier runs.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledDomain {
    pub features: FeatureMatrix,
    pub pseudo_labels: Option<Vec<usize>>,
    pub name: String,
}

impl UnlabeledDomain {
    pub fn new(features: FeatureMatrix, name: impl Into<String>) -> Result<Self> {
        check_finite(&features)?;
        Ok(Self {
            features,
            pseudo_labels: None,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }
}

fn check_finite(x: &FeatureMatrix) -> Result<()> {
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % x.nrows(), pos / x.nrows());
        return Err(Error::Numeric(format!("non-finite feature at ({r}, {c})")));
    }
    Ok(())
}

/// A validated source/target pair. Samples are packed `[source | target]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: LabeledDomain,
    pub target: UnlabeledDomain,
    pub class_count: usize,
    /// Held-out target labels. Only used for reporting accuracy.
    pub target_truth: Option<Vec<usize>>,
}

/// Sample counts per class on each side; a zero marks an absent sub-domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl ClassCounts {
    pub fn present_in_both(&self, c: usize) -> bool {
        self.source[c] > 0 && self.target[c] > 0
    }
}

pub fn make_pair(source: LabeledDomain, target: UnlabeledDomain) -> Result<DomainPair> {
    let class_count = source.labels.iter().max().map_or(0, |m| m + 1);
    DomainPair::with_class_count(source, target, class_count)
}

impl DomainPair {
    /// Like [`make_pair`] but with an explicit class count, which allows `C = 1`.
    pub fn with_class_count(
        source: LabeledDomain,
        target: UnlabeledDomain,
        class_count: usize,
    ) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::Dimension(format!(
                "source has {} features, target has {}",
                source.dim(),
                target.dim()
            )));
        }
        if source.is_empty() || target.is_empty() {
            return Err(Error::Dimension(
                "both domains need at least one sample".into(),
            ));
        }
        if class_count == 0 {
            return Err(Error::Parameter("class count must be positive".into()));
        }
        let mut seen = vec![false; class_count];
        for &y in &source.labels {
            if y >= class_count {
                return Err(Error::Parameter(format!(
                    "source label {y} outside 0..{class_count}"
                )));
            }
            seen[y] = true;
        }
        if let Some(class) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyClass { class });
        }
        if let Some(p) = &target.pseudo_labels {
            validate_labels(p, target.len(), class_count)?;
        }
        Ok(Self {
            source,
            target,
            class_count,
            target_truth: None,
        })
    }

    pub fn with_target_truth(mut self, truth: Vec<usize>) -> Result<Self> {
        validate_labels(&truth, self.target.len(), self.class_count)?;
        self.target_truth = Some(truth);
        Ok(self)
    }

    pub fn ns(&self) -> usize {
        self.source.len()
    }

    pub fn nt(&self) -> usize {
        self.target.len()
    }

    pub fn n(&self) -> usize {
        self.ns() + self.nt()
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// `X = [X_S, X_T]`.
    pub fn packed_features(&self) -> FeatureMatrix {
        let (ns, nt) = (self.ns(), self.nt());
        let mut x = FeatureMatrix::zeros(self.dim(), ns + nt);
        x.columns_mut(0, ns).copy_from(&self.source.features);
        x.columns_mut(ns, nt).copy_from(&self.target.features);
        x
    }

    pub fn pseudo_labels(&self) -> Result<&[usize]> {
        self.target
            .pseudo_labels
            .as_deref()
            .ok_or_else(|| Error::State("target has no pseudo-labels".into()))
    }

    /// Swap in a fresh pseudo-label vector.
    pub fn replace_pseudo_labels(&mut self, labels: Vec<usize>) -> Result<()> {
        validate_labels(&labels, self.nt(), self.class_count)?;
        self.target.pseudo_labels = Some(labels);
        Ok(())
    }

    pub fn class_counts(&self) -> Result<ClassCounts> {
        let mut source = vec![0; self.class_count];
        for &y in &self.source.labels {
            source[y] += 1;
        }
        let mut target = vec![0; self.class_count];
        for &y in self.pseudo_labels()? {
            target[y] += 1;
        }
        Ok(ClassCounts { source, target })
    }

    /// Class of every packed sample: true labels then pseudo-labels.
    pub fn packed_labels(&self) -> Result<Vec<usize>> {
        let mut all = self.source.labels.clone();
        all.extend_from_slice(self.pseudo_labels()?);
        Ok(all)
    }
}

fn validate_labels(labels: &[usize], expected: usize, class_count: usize) -> Result<()> {
    if labels.len() != expected {
        return Err(Error::Dimension(format!(
            "{} labels for {} target samples",
            labels.len(),
            expected
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
        return Err(Error::Parameter(format!(
            "label {bad} outside 0..{class_count}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SigmaMode {
    /// Median of nonzero pairwise distances.
    #[default]
    Median,
    Fixed {
        sigma: f64,
    },
}

/// How the compacting / separation graphs enter the DB matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// `-1/W` on both masks, multiplied elementwise as printed.
    Literal,
    /// `1/W` on the compacting mask, `W` on the separation mask; only masked
    /// entries are reweighted.
    #[default]
    Spirit,
}

/// How repulsive matrices accumulate same-block entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatrixMode {
    /// Each entry filled once from the piecewise rule.
    #[default]
    Literal,
    /// Sum of `e eᵀ` over every ordered class pair `(c, r ≠ c)`.
    RankOneSum,
}

/// Feature space the projection is learned in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSetting {
    #[default]
    Primal,
    Linear,
    /// Bandwidth comes from `sigma_mode`.
    Rbf,
    Poly {
        degree: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Subspace dimension; clamped to the operand order when larger.
    pub k: usize,
    pub lambda: f64,
    /// Label-propagation fidelity weight for DGA-DA variants.
    pub mu: f64,
    /// Iteration cap `T`.
    pub max_iter: usize,
    pub kernel: KernelSetting,
    pub sigma_mode: SigmaMode,
    /// Neighbourhood size of the Laplacian graph; 0 means dense.
    pub neighborhood_p: usize,
    pub normalized_laplacian: bool,
    pub graph_mode: GraphMode,
    pub matrix_mode: MatrixMode,
    /// In spirit mode, keep the unmasked entries of the reweighted matrices.
    pub keep_off_mask: bool,
    /// Floor on `W` before taking reciprocals.
    pub w_floor: f64,
    /// Right-hand ridge; `None` uses `1e-9 · tr(B) / n`.
    pub ridge: Option<f64>,
    pub meda_alpha: f64,
    pub meda_rho: f64,
    pub meda_eta: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            k: 100,
            lambda: 1.0,
            mu: 0.01,
            max_iter: 10,
            kernel: KernelSetting::Primal,
            sigma_mode: SigmaMode::Median,
            neighborhood_p: 5,
            normalized_laplacian: true,
            graph_mode: GraphMode::Spirit,
            matrix_mode: MatrixMode::Literal,
            keep_off_mask: true,
            w_floor: 1e-6,
            ridge: None,
            meda_alpha: 10.0,
            meda_rho: 0.1,
            meda_eta: 1.0,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be > 0, got {}", self.mu));
        }
        if self.w_floor.is_nan() || self.w_floor <= 0.0 {
            return bad(format!("w_floor must be > 0, got {}", self.w_floor));
        }
        if let SigmaMode::Fixed { sigma } = self.sigma_mode {
            if sigma.is_nan() || sigma <= 0.0 {
                return bad(format!("fixed sigma must be > 0, got {sigma}"));
            }
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("ridge must be >= 0, got {r}"));
            }
        }
        if self.meda_eta <= 0.0 || self.meda_alpha < 0.0 || self.meda_rho < 0.0 {
            return bad("MEDA weights need eta > 0, alpha >= 0, rho >= 0".into());
        }
        Ok(())
    }

    /// Propagation trade-off in the `1 / (1 + μ)` parameterisation.
    pub fn propagation_alpha(&self) -> f64 {
        1.0 / (1.0 + self.mu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub accuracy: Option<f64>,
    pub objective: f64,
    /// Target pseudo-labels that changed in this iteration.
    pub churn: usize,
    pub eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub model: String,
    /// Accuracy of the initial 1-NN labelling, before any adaptation.
    pub initial_accuracy: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    /// Projection `A` (primal `ℓ × k`, kernel `n × k`), or the `n × C`
    /// expansion coefficients for MEDA variants.
    pub projection: DenseMatrix,
    pub predicted: Vec<usize>,
    /// First iteration whose churn was zero.
    pub converged_at: Option<usize>,
    /// Pseudo-labels produced by every iteration, in order.
    pub label_trajectory: Vec<Vec<usize>>,
    pub wall_time_secs: f64,
    /// Final embedded samples `Z` (`k × n`); not serialised.
    #[serde(skip)]
    pub embedding: Option<DenseMatrix>,
}

impl AdaptationReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.iterations.last().and_then(|r| r.accuracy)
    }

    pub fn accuracies(&self) -> Vec<Option<f64>> {
        self.iterations.iter().map(|r| r.accuracy).collect()
    }
}
