//! Affinity, the compacting / separation graphs, and graph Laplacians.

use crate::data::{GraphMode, SigmaMode};
use crate::error::{Error, Result};
use crate::linalg::{median_bandwidth, pairwise_sq_dists, DenseMatrix, FeatureMatrix};
use crate::mmd::{CrossMasks, SymmetricWeightMatrix};

/// Degree substituted for isolated vertices in the normalized Laplacian.
pub const DEGREE_FLOOR: f64 = f64::EPSILON;

#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub entries: DenseMatrix,
    pub sigma: f64,
    /// 0 means dense.
    pub neighborhood_p: usize,
}

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gaussian affinity `exp(-‖xᵢ - xⱼ‖² / 2σ²)` restricted to pairs where either
/// point is among the other's `p` nearest neighbours. The diagonal is zero.
pub fn build_affinity(
    x: &FeatureMatrix,
    sigma_mode: SigmaMode,
    neighborhood_p: usize,
) -> Result<AffinityMatrix> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::Parameter(format!(
            "affinity needs at least 2 samples, got {n}"
        )));
    }
    let d2 = pairwise_sq_dists(x);
    let sigma = match sigma_mode {
        SigmaMode::Median => median_bandwidth(&d2)?,
        SigmaMode::Fixed { sigma } if sigma > 0.0 => sigma,
        SigmaMode::Fixed { sigma } => {
            return Err(Error::Parameter(format!(
                "bandwidth must be positive, got {sigma}"
            )))
        }
    };
    let denom = 2.0 * sigma * sigma;

    let linked = if neighborhood_p == 0 || neighborhood_p >= n - 1 {
        None
    } else {
        Some(neighbor_links(&d2, neighborhood_p))
    };

    let mut w = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let keep = linked.as_ref().is_none_or(|l| l[i * n + j]);
            if keep {
                let v = (-d2[(i, j)] / denom).exp();
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    Ok(AffinityMatrix {
        entries: w,
        sigma,
        neighborhood_p,
    })
}

/// Symmetric "either is a p-neighbour of the other" relation, row-major n×n.
fn neighbor_links(d2: &DenseMatrix, p: usize) -> Vec<bool> {
    let n = d2.nrows();
    let mut linked = vec![false; n * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        for &j in order.iter().take(p) {
            linked[i * n + j] = true;
            linked[j * n + i] = true;
        }
    }
    linked
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGraphs {
    pub g_cg: SymmetricWeightMatrix,
    pub g_sg: SymmetricWeightMatrix,
    pub mode: GraphMode,
    masks: CrossMasks,
}

pub fn build_graphs(
    w: &AffinityMatrix,
    masks: &CrossMasks,
    mode: GraphMode,
    w_floor: f64,
) -> Result<BoundaryGraphs> {
    let n = w.len();
    if masks.len() != n {
        return Err(Error::Dimension(format!(
            "affinity is {n}x{n} but masks cover {} samples",
            masks.len()
        )));
    }
    let mut g_cg = DenseMatrix::zeros(n, n);
    let mut g_sg = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let wij = w.entries[(i, j)];
            let floored = wij.max(w_floor);
            if masks.is_compacting(i, j) {
                g_cg[(i, j)] = match mode {
                    GraphMode::Literal => -1.0 / floored,
                    GraphMode::Spirit => 1.0 / floored,
                };
            } else if masks.is_separating(i, j) {
                g_sg[(i, j)] = match mode {
                    GraphMode::Literal => -1.0 / floored,
                    GraphMode::Spirit => wij,
                };
            }
        }
    }
    Ok(BoundaryGraphs {
        g_cg,
        g_sg,
        mode,
        masks: masks.clone(),
    })
}

impl BoundaryGraphs {
    /// `G_CG ⊙ M`.
    pub fn compact(&self, m: &DenseMatrix, keep_off_mask: bool) -> DenseMatrix {
        self.reweight(m, &self.g_cg, keep_off_mask, |i, j| {
            self.masks.is_compacting(i, j)
        })
    }

    /// `G_SG ⊙ M`.
    pub fn separate(&self, m: &DenseMatrix, keep_off_mask: bool) -> DenseMatrix {
        self.reweight(m, &self.g_sg, keep_off_mask, |i, j| {
            self.masks.is_separating(i, j)
        })
    }

    // Literal mode is a plain Hadamard product. Spirit mode scales only the
    // masked entries and optionally leaves the rest untouched.
    fn reweight(
        &self,
        m: &DenseMatrix,
        g: &DenseMatrix,
        keep_off_mask: bool,
        on_mask: impl Fn(usize, usize) -> bool,
    ) -> DenseMatrix {
        match self.mode {
            GraphMode::Literal => m.component_mul(g),
            GraphMode::Spirit => DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
                if on_mask(i, j) {
                    m[(i, j)] * g[(i, j)]
                } else if keep_off_mask {
                    m[(i, j)]
                } else {
                    0.0
                }
            }),
        }
    }
}

/// `L = D - W`, or `D^{-1/2} (D - W) D^{-1/2}` when normalized.
pub fn build_laplacian(w: &AffinityMatrix, normalized: bool) -> SymmetricWeightMatrix {
    let n = w.len();
    let degree: Vec<f64> = (0..n).map(|i| w.entries.row(i).sum()).collect();
    let mut l = -w.entries.clone();
    for i in 0..n {
        l[(i, i)] += degree[i];
    }
    if normalized {
        let inv_sqrt: Vec<f64> = degree
            .iter()
            .map(|&d| 1.0 / d.max(DEGREE_FLOOR).sqrt())
            .collect();
        for j in 0..n {
            for i in 0..n {
                l[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainPair, LabeledDomain, MatrixMode, UnlabeledDomain};
    use crate::mmd::MmdMatrices;
    use nalgebra::{DVector, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::from_fn(2, n, |_, _| rng.random_range(-3.0..3.0))
    }

    fn toy_pair(seed: u64) -> DomainPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = FeatureMatrix::from_fn(2, 9, |_, _| rng.random_range(-1.0..1.0));
        let xt = FeatureMatrix::from_fn(2, 7, |_, _| rng.random_range(-1.0..1.0));
        let src = vec![0, 1, 2, 0, 1, 2, 0, 0, 1];
        let tgt: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
        let mut target = UnlabeledDomain::new(xt, "t").unwrap();
        target.pseudo_labels = Some(tgt);
        DomainPair::with_class_count(LabeledDomain::new(xs, src, "s").unwrap(), target, 3).unwrap()
    }

    #[test]
    fn coincident_points_have_unit_affinity() {
        let x = FeatureMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let w = build_affinity(&x, SigmaMode::Fixed { sigma: 0.3 }, 0).unwrap();
        assert_eq!(w.entries[(0, 1)], 1.0);
        assert_eq!(w.entries[(0, 0)], 0.0);
    }

    #[test]
    fn affinity_at_sqrt_two_sigma() {
        let sigma = 0.8;
        let d = sigma * 2f64.sqrt();
        let x = FeatureMatrix::from_column_slice(1, 2, &[0.0, d]);
        let w = build_affinity(&x, SigmaMode::Fixed { sigma }, 0).unwrap();
        assert!((w.entries[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert!((w.entries[(0, 1)] - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn median_affinity_matches_formula() {
        let x = cloud(10, 10);
        let w = build_affinity(&x, SigmaMode::Median, 0).unwrap();
        let mut dists = Vec::new();
        for i in 0..10 {
            for j in (i + 1)..10 {
                dists.push((x.column(i) - x.column(j)).norm());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sigma = dists[22]; // 45 pairs, odd count
        assert!((w.sigma - sigma).abs() < 1e-15);
        for i in 0..10 {
            for j in 0..10 {
                let expect = if i == j {
                    0.0
                } else {
                    (-(x.column(i) - x.column(j)).norm_squared() / (2.0 * sigma * sigma)).exp()
                };
                assert!((w.entries[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_points_median_fails() {
        let x = FeatureMatrix::from_element(2, 4, 0.5);
        assert!(matches!(
            build_affinity(&x, SigmaMode::Median, 0),
            Err(Error::Bandwidth)
        ));
        assert!(build_affinity(&FeatureMatrix::zeros(2, 1), SigmaMode::Median, 0).is_err());
    }

    #[test]
    fn neighborhood_sparsifies_symmetrically() {
        // points on a line: 0, 1, 2, 10
        let x = FeatureMatrix::from_column_slice(1, 4, &[0.0, 1.0, 2.0, 10.0]);
        let w = build_affinity(&x, SigmaMode::Fixed { sigma: 5.0 }, 1).unwrap();
        // nearest neighbours: 0->1, 1->0 (tie with 2, lower index), 2->1, 3->2
        assert!(w.entries[(0, 1)] > 0.0);
        assert!(w.entries[(1, 2)] > 0.0);
        assert!(w.entries[(2, 3)] > 0.0);
        assert_eq!(w.entries[(0, 2)], 0.0);
        assert_eq!(w.entries[(0, 3)], 0.0);
        assert_eq!(w.entries[(1, 3)], 0.0);
        assert_eq!(w.entries, w.entries.transpose());
    }

    #[test]
    fn literal_unit_affinity_gives_minus_one() {
        let pair = toy_pair(1);
        let masks = CrossMasks::new(&pair).unwrap();
        let w = AffinityMatrix {
            entries: DenseMatrix::from_element(pair.n(), pair.n(), 1.0),
            sigma: 1.0,
            neighborhood_p: 0,
        };
        let g = build_graphs(&w, &masks, GraphMode::Literal, 1e-6).unwrap();
        for i in 0..pair.n() {
            for j in 0..pair.n() {
                if masks.is_compacting(i, j) {
                    assert_eq!(g.g_cg[(i, j)], -1.0);
                } else {
                    assert_eq!(g.g_cg[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn spirit_constant_affinity_is_uniform() {
        let pair = toy_pair(2);
        let masks = CrossMasks::new(&pair).unwrap();
        let c = 0.25;
        let w = AffinityMatrix {
            entries: DenseMatrix::from_element(pair.n(), pair.n(), c),
            sigma: 1.0,
            neighborhood_p: 0,
        };
        let g = build_graphs(&w, &masks, GraphMode::Spirit, 1e-6).unwrap();
        for i in 0..pair.n() {
            for j in 0..pair.n() {
                let cg = if masks.is_compacting(i, j) {
                    1.0 / c
                } else {
                    0.0
                };
                let sg = if masks.is_separating(i, j) { c } else { 0.0 };
                assert_eq!(g.g_cg[(i, j)], cg);
                assert_eq!(g.g_sg[(i, j)], sg);
            }
        }
    }

    #[test]
    fn floor_prevents_blow_up() {
        let pair = toy_pair(3);
        let masks = CrossMasks::new(&pair).unwrap();
        let w = AffinityMatrix {
            entries: DenseMatrix::zeros(pair.n(), pair.n()),
            sigma: 1.0,
            neighborhood_p: 0,
        };
        let g = build_graphs(&w, &masks, GraphMode::Spirit, 1e-6).unwrap();
        assert!(g.g_cg.iter().all(|v| v.is_finite() && *v <= 1e6));
    }

    #[test]
    fn spirit_preserves_sign_pattern() {
        let pair = toy_pair(4);
        let mmd = MmdMatrices::build(&pair, MatrixMode::Literal).unwrap();
        let w = build_affinity(&pair.packed_features(), SigmaMode::Median, 0).unwrap();
        let g = build_graphs(&w, &mmd.masks, GraphMode::Spirit, 1e-6).unwrap();
        let reweighted = g.compact(&mmd.mc_sum, true);
        for i in 0..pair.n() {
            for j in 0..pair.n() {
                let (r, m) = (reweighted[(i, j)], mmd.mc_sum[(i, j)]);
                if m == 0.0 {
                    assert_eq!(r, 0.0);
                } else {
                    assert_eq!(r.signum(), m.signum());
                }
                if !mmd.masks.is_compacting(i, j) {
                    assert_eq!(reweighted[(i, j)], mmd.mc_sum[(i, j)]);
                }
            }
        }
        let dropped = g.compact(&mmd.mc_sum, false);
        for i in 0..pair.n() {
            for j in 0..pair.n() {
                if !mmd.masks.is_compacting(i, j) {
                    assert_eq!(dropped[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn literal_flips_compacting_sign() {
        let pair = toy_pair(5);
        let mmd = MmdMatrices::build(&pair, MatrixMode::Literal).unwrap();
        let w = build_affinity(&pair.packed_features(), SigmaMode::Median, 0).unwrap();
        let g = build_graphs(&w, &mmd.masks, GraphMode::Literal, 1e-6).unwrap();
        let reweighted = g.compact(&mmd.mc_sum, true);
        for i in 0..pair.n() {
            for j in 0..pair.n() {
                if mmd.masks.is_compacting(i, j) {
                    assert!(reweighted[(i, j)] > 0.0);
                } else {
                    assert_eq!(reweighted[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn two_node_laplacian() {
        let w = AffinityMatrix {
            entries: DenseMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            sigma: 1.0,
            neighborhood_p: 0,
        };
        let l = build_laplacian(&w, false);
        assert_eq!(
            l,
            DenseMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
    }

    #[test]
    fn path_laplacians() {
        let w = AffinityMatrix {
            entries: DenseMatrix::from_row_slice(
                3,
                3,
                &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0],
            ),
            sigma: 1.0,
            neighborhood_p: 0,
        };
        let l = build_laplacian(&w, false);
        let expect =
            DenseMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 3.0, -2.0, 0.0, -2.0, 2.0]);
        assert_eq!(l, expect);
        assert!((&l * DVector::from_element(3, 1.0)).amax() < 1e-15);

        let ln = build_laplacian(&w, true);
        let s3 = 3f64.sqrt();
        let s2 = 2f64.sqrt();
        let expect = DenseMatrix::from_row_slice(
            3,
            3,
            &[
                1.0,
                -1.0 / s3,
                0.0,
                -1.0 / s3,
                1.0,
                -2.0 / (s3 * s2),
                0.0,
                -2.0 / (s3 * s2),
                1.0,
            ],
        );
        assert!((ln - expect).amax() < 1e-15);
    }

    #[test]
    fn isolated_vertex_normalized() {
        let w = AffinityMatrix {
            entries: DenseMatrix::from_row_slice(
                3,
                3,
                &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ),
            sigma: 1.0,
            neighborhood_p: 0,
        };
        let l = build_laplacian(&w, true);
        assert!(l.iter().all(|v| v.is_finite()));
        assert_eq!(l[(2, 2)], 0.0);
    }

    #[test]
    fn laplacian_psd_on_random_clouds() {
        for seed in 0..5 {
            let x = cloud(seed, 15);
            for p in [0, 3] {
                let w = build_affinity(&x, SigmaMode::Median, p).unwrap();
                for normalized in [false, true] {
                    let l = build_laplacian(&w, normalized);
                    let min = SymmetricEigen::new(l)
                        .eigenvalues
                        .iter()
                        .cloned()
                        .fold(f64::MAX, f64::min);
                    assert!(min >= -1e-10);
                }
            }
        }
    }
}
