//! Dense symmetric linear algebra used by every adaptation model.
//!
//! Feature matrices follow the column-sample convention: an `ℓ × n` matrix
//! holds `n` samples of dimension `ℓ`, source columns first.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Columns are samples.
pub type FeatureMatrix = DMatrix<f64>;

/// Relative ridge applied to the right-hand operand when none is given.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    /// `exp(-‖x - y‖² / 2σ²)`
    Rbf {
        sigma: f64,
    },
    /// `(xᵀy + 1)^degree`
    Poly {
        degree: u32,
    },
}

impl KernelKind {
    fn validate(&self) -> Result<()> {
        match *self {
            KernelKind::Rbf { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Parameter(format!("rbf bandwidth must be positive, got {sigma}")),
            ),
            KernelKind::Poly { degree: 0 } => {
                Err(Error::Parameter("polynomial degree must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Squared Euclidean distances between every pair of columns.
pub fn pairwise_sq_dists(x: &FeatureMatrix) -> DenseMatrix {
    let n = x.ncols();
    let mut d = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let xj = x.column(j);
        for i in 0..j {
            let xi = x.column(i);
            let s: f64 = xi
                .iter()
                .zip(xj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

/// Median of the nonzero pairwise distances (not squared).
///
/// Takes the squared-distance matrix as produced by [`pairwise_sq_dists`].
pub fn median_bandwidth(sq_dists: &DenseMatrix) -> Result<f64> {
    let n = sq_dists.nrows();
    let mut dists: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for i in 0..j {
            let d2 = sq_dists[(i, j)];
            if d2 > 0.0 {
                dists.push(d2.sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::Bandwidth);
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    Ok(median)
}

pub fn kernel_matrix(x: &FeatureMatrix, kind: KernelKind) -> Result<DenseMatrix> {
    kind.validate()?;
    let k = match kind {
        KernelKind::Linear => x.tr_mul(x),
        KernelKind::Poly { degree } => {
            let mut g = x.tr_mul(x);
            g.apply(|v| *v = (*v + 1.0).powi(degree as i32));
            g
        }
        KernelKind::Rbf { sigma } => {
            let mut d = pairwise_sq_dists(x);
            let denom = 2.0 * sigma * sigma;
            d.apply(|v| *v = (-*v / denom).exp());
            d
        }
    };
    Ok(k)
}

/// `H = I - (1/n) 𝟙𝟙ᵀ`.
pub fn centering_matrix(n: usize) -> DenseMatrix {
    let off = 1.0 / n as f64;
    DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - off } else { -off })
}

/// Ridge used when the caller does not supply one: `1e-9 · tr(B) / n`.
pub fn default_ridge(b: &DenseMatrix) -> f64 {
    let n = b.nrows().max(1);
    DEFAULT_RIDGE_SCALE * b.trace().abs() / n as f64
}

/// The `k` smallest solutions of `A v = λ (B + ridge·I) v`.
///
/// `B + ridge·I` is Cholesky-factored and the pencil is reduced to a standard
/// symmetric problem. Returned vectors are `(B + ridge·I)`-orthonormal, sorted by
/// ascending eigenvalue (ties keep reduced-problem order), and signed so that
/// their largest-magnitude component is positive.
pub fn gen_eig_smallest(
    a: &DenseMatrix,
    b: &DenseMatrix,
    k: usize,
    ridge: f64,
) -> Result<Vec<EigPair>> {
    let n = a.nrows();
    if !a.is_square() || !b.is_square() || b.nrows() != n {
        return Err(Error::Dimension(format!(
            "pencil operands must be square and equal: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if k > n {
        return Err(Error::Parameter(format!(
            "requested {k} eigenpairs of an order-{n} pencil"
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Parameter(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }

    let mut b_reg = b.clone();
    for i in 0..n {
        b_reg[(i, i)] += ridge;
    }
    let chol = Cholesky::new(b_reg).ok_or_else(|| {
        Error::Numeric("right-hand operand is not positive definite after ridge".into())
    })?;
    let l = chol.l();

    // C = L⁻¹ A L⁻ᵀ
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let mut c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let ct = c.transpose();
    c += ct;
    c *= 0.5;

    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .total_cmp(&eig.eigenvalues[j])
            .then(i.cmp(&j))
    });

    let mut pairs = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let reduced = eig.eigenvectors.column(idx).into_owned();
        let mut v = l
            .tr_solve_lower_triangular(&reduced)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        fix_sign(&mut v);
        pairs.push(EigPair {
            value: eig.eigenvalues[idx],
            vector: v,
        });
    }
    Ok(pairs)
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Sine of the largest principal angle between the column spaces of `a` and `b`.
///
/// Both inputs must have the same row count and full column rank.
pub fn subspace_distance(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let residual = &qb - &qa * qa.tr_mul(&qb);
    let sv = residual.singular_values();
    sv.iter().cloned().fold(0.0, f64::max)
}
