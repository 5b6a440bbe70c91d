//! Target-label producers and the accuracy metric.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, FeatureMatrix};
use crate::mmd::SymmetricWeightMatrix;

/// Per-sample class scores, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution(pub DenseMatrix);

impl LabelDistribution {
    pub fn one_hot(labels: &[usize], classes: usize) -> Self {
        let mut y = DenseMatrix::zeros(labels.len(), classes);
        for (i, &c) in labels.iter().enumerate() {
            y[(i, c)] = 1.0;
        }
        Self(y)
    }

    /// Rows for `None` entries are all zero.
    pub fn partial(labels: &[Option<usize>], classes: usize) -> Self {
        let mut y = DenseMatrix::zeros(labels.len(), classes);
        for (i, c) in labels.iter().enumerate() {
            if let Some(c) = c {
                y[(i, *c)] = 1.0;
            }
        }
        Self(y)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    /// Row-wise argmax; ties go to the lowest class index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.0
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// 1-nearest-neighbour labels for every query column; ties go to the lowest
/// train index.
pub fn nn_classify(
    train: &FeatureMatrix,
    train_labels: &[usize],
    query: &FeatureMatrix,
) -> Result<Vec<usize>> {
    if train.ncols() == 0 {
        return Err(Error::Parameter(
            "1-NN needs at least one training sample".into(),
        ));
    }
    if train_labels.len() != train.ncols() {
        return Err(Error::Dimension(format!(
            "{} labels for {} training samples",
            train_labels.len(),
            train.ncols()
        )));
    }
    if train.nrows() != query.nrows() {
        return Err(Error::Dimension(format!(
            "train dimension {} vs query dimension {}",
            train.nrows(),
            query.nrows()
        )));
    }
    let labels = query
        .column_iter()
        .map(|q| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, t) in train.column_iter().enumerate() {
                let d: f64 = t.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            train_labels[best]
        })
        .collect();
    Ok(labels)
}

/// Stationary point of `μ‖F - Y0‖²_F + tr(Fᵀ L F)`: `F = μ (μI + L)⁻¹ Y0`.
pub fn propagate_scores(
    laplacian: &SymmetricWeightMatrix,
    y0: &LabelDistribution,
    mu: f64,
) -> Result<DenseMatrix> {
    let n = laplacian.nrows();
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Parameter(format!("mu must be > 0, got {mu}")));
    }
    if !laplacian.is_square() || y0.rows() != n {
        return Err(Error::Dimension(format!(
            "Laplacian {}x{} vs {} label rows",
            laplacian.nrows(),
            laplacian.ncols(),
            y0.rows()
        )));
    }
    let mut system = laplacian.clone();
    for i in 0..n {
        system[(i, i)] += mu;
    }
    let rhs = &y0.0 * mu;
    let solved = match system.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("label propagation system is singular".into()))?,
    };
    Ok(solved)
}

/// Label propagation with the first `clamped_rows` rows reset to `y0` after
/// solving, then every row renormalized to sum to one.
pub fn propagate_labels(
    laplacian: &SymmetricWeightMatrix,
    y0: &LabelDistribution,
    mu: f64,
    clamped_rows: usize,
) -> Result<LabelDistribution> {
    let mut f = propagate_scores(laplacian, y0, mu)?;
    let clamped_rows = clamped_rows.min(f.nrows());
    f.rows_mut(0, clamped_rows)
        .copy_from(&y0.0.rows(0, clamped_rows));
    for mut row in f.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 && s.is_finite() {
            row /= s;
        }
    }
    Ok(LabelDistribution(f))
}

/// Fraction of positions where `pred` matches `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Parameter(
            "accuracy of an empty set is undefined".into(),
        ));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub(crate) fn argmax_rows(scores: &DMatrix<f64>) -> Vec<usize> {
    LabelDistribution(scores.clone()).hard_labels()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn query_on_train_point() {
        let train = FeatureMatrix::from_column_slice(2, 3, &[0.0, 0.0, 5.0, 5.0, -3.0, 1.0]);
        let query = FeatureMatrix::from_column_slice(2, 1, &[5.0, 5.0]);
        assert_eq!(nn_classify(&train, &[0, 1, 2], &query).unwrap(), vec![1]);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let train = FeatureMatrix::from_column_slice(1, 2, &[-1.0, 1.0]);
        let query = FeatureMatrix::from_column_slice(1, 1, &[0.0]);
        assert_eq!(nn_classify(&train, &[7, 3], &query).unwrap(), vec![7]);
    }

    #[test]
    fn nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train = FeatureMatrix::from_fn(3, 20, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..4)).collect();
        let query = FeatureMatrix::from_fn(3, 15, |_, _| rng.random_range(-1.0..1.0));
        let got = nn_classify(&train, &labels, &query).unwrap();
        for (q, &label) in got.iter().enumerate() {
            let mut dists: Vec<(f64, usize)> = (0..20)
                .map(|t| ((train.column(t) - query.column(q)).norm(), t))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(label, labels[dists[0].1]);
        }
    }

    #[test]
    fn nn_errors() {
        let empty = FeatureMatrix::zeros(2, 0);
        assert!(nn_classify(&empty, &[], &FeatureMatrix::zeros(2, 1)).is_err());
        let train = FeatureMatrix::zeros(2, 1);
        assert!(nn_classify(&train, &[0], &FeatureMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn zero_laplacian_returns_y0() {
        let y0 = LabelDistribution::one_hot(&[0, 1, 1], 2);
        let f = propagate_scores(&DenseMatrix::zeros(3, 3), &y0, 0.3).unwrap();
        assert!((f - &y0.0).amax() < 1e-15);
    }

    #[test]
    fn large_mu_clamps_to_y0() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = DenseMatrix::from_fn(5, 5, |_, _| rng.random_range(0.0..1.0));
        let mut w = &r + r.transpose();
        w.fill_diagonal(0.0);
        let mut l = -w.clone();
        for i in 0..5 {
            l[(i, i)] += w.row(i).sum();
        }
        let y0 = LabelDistribution::one_hot(&[0, 1, 2, 0, 1], 3);
        let f = propagate_scores(&l, &y0, 1e9).unwrap();
        assert!((f - &y0.0).amax() < 1e-6);
    }

    #[test]
    fn three_node_path_hand_solved() {
        // (I + L) F = Y0 with Y0 labelling node 0 as class 0:
        // [2 -1 0; -1 3 -1; 0 -1 2] f = [1 0 0]ᵀ → f = [5/8, 1/4, 1/8]
        let l =
            DenseMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let y0 = LabelDistribution::partial(&[Some(0), None, None], 2);
        let f = propagate_scores(&l, &y0, 1.0).unwrap();
        let expect = [0.625, 0.25, 0.125];
        for i in 0..3 {
            assert!((f[(i, 0)] - expect[i]).abs() < 1e-10);
            assert_eq!(f[(i, 1)], 0.0);
        }
        let dist = propagate_labels(&l, &y0, 1.0, 1).unwrap();
        assert_eq!(dist.hard_labels(), vec![0, 0, 0]);
        assert_eq!(dist.0[(0, 0)], 1.0);
    }

    #[test]
    fn clamped_rows_keep_source_labels() {
        let l = DenseMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let y0 = LabelDistribution::one_hot(&[0, 1], 2);
        let dist = propagate_labels(&l, &y0, 0.01, 1).unwrap();
        assert_eq!(
            dist.0.row(0).iter().cloned().collect::<Vec<_>>(),
            vec![1.0, 0.0]
        );
        let s: f64 = dist.0.row(1).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_label_ties() {
        let d = LabelDistribution(DenseMatrix::from_row_slice(
            2,
            3,
            &[0.5, 0.5, 0.0, 0.1, 0.2, 0.2],
        ));
        assert_eq!(d.hard_labels(), vec![0, 1]);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }
}
