//! MMD coefficient matrices over the packed sample order `[source | target]`.
//!
//! Every matrix here is a sum of blocks of the form `e eᵀ`, where `e` is
//! `+1/n_a` on one sample group and `-1/n_b` on another, so that
//! `tr(Z M Zᵀ)` becomes a squared distance between group means.

use crate::data::{ClassCounts, DomainPair, MatrixMode};
use crate::error::Result;
use crate::linalg::DenseMatrix;

pub type SymmetricWeightMatrix = DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

/// Domain and class of every packed sample; answers the graph mask queries.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossMasks {
    ns: usize,
    labels: Vec<usize>,
}

impl CrossMasks {
    pub fn new(pair: &DomainPair) -> Result<Self> {
        Ok(Self {
            ns: pair.ns(),
            labels: pair.packed_labels()?,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn cross_domain(&self, i: usize, j: usize) -> bool {
        (i < self.ns) != (j < self.ns)
    }

    /// Cross-domain pair sharing a class: where `(M_c)ᵢⱼ = -1/(n_s⁽ᶜ⁾ n_t⁽ᶜ⁾)`.
    pub fn is_compacting(&self, i: usize, j: usize) -> bool {
        self.cross_domain(i, j) && self.labels[i] == self.labels[j]
    }

    /// Cross-domain pair with different classes: where `(M_S→T)ᵢⱼ = -1/(n_s⁽ᶜ⁾ n_t⁽ʳ⁾)`.
    pub fn is_separating(&self, i: usize, j: usize) -> bool {
        self.cross_domain(i, j) && self.labels[i] != self.labels[j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmdMatrices {
    pub m0: SymmetricWeightMatrix,
    pub mc_sum: SymmetricWeightMatrix,
    pub m_st: SymmetricWeightMatrix,
    pub m_ts: SymmetricWeightMatrix,
    pub masks: CrossMasks,
}

impl MmdMatrices {
    pub fn build(pair: &DomainPair, mode: MatrixMode) -> Result<Self> {
        Ok(Self {
            m0: build_marginal(pair),
            mc_sum: build_conditional(pair)?,
            m_st: build_repulsive(pair, Direction::SourceToTarget, mode)?,
            m_ts: build_repulsive(pair, Direction::TargetToSource, mode)?,
            masks: CrossMasks::new(pair)?,
        })
    }

    /// `M_S→T + M_T→S`.
    pub fn repulsive_sum(&self) -> SymmetricWeightMatrix {
        &self.m_st + &self.m_ts
    }
}

#[derive(Clone, Copy)]
enum Fill {
    Set,
    Add,
}

fn weight(a: usize, b: usize) -> f64 {
    1.0 / (a as f64 * b as f64)
}

/// Writes the `e eᵀ` block pattern for groups `a` (positive side) and `b`.
fn fill_pair(m: &mut DenseMatrix, a: &[usize], b: &[usize], fill: Fill) {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return;
    }
    let waa = weight(na, na);
    let wbb = weight(nb, nb);
    let wab = -weight(na, nb);
    let mut put = |i: usize, j: usize, v: f64| match fill {
        Fill::Set => m[(i, j)] = v,
        Fill::Add => m[(i, j)] += v,
    };
    for &i in a {
        for &j in a {
            put(i, j, waa);
        }
        for &j in b {
            put(i, j, wab);
            put(j, i, wab);
        }
    }
    for &i in b {
        for &j in b {
            put(i, j, wbb);
        }
    }
}

/// Packed indices of every source / target sub-domain.
struct Groups {
    source: Vec<Vec<usize>>,
    target: Vec<Vec<usize>>,
}

impl Groups {
    fn new(pair: &DomainPair) -> Result<Self> {
        let c = pair.class_count;
        let ns = pair.ns();
        let mut source = vec![Vec::new(); c];
        for (i, &y) in pair.source.labels.iter().enumerate() {
            source[y].push(i);
        }
        let mut target = vec![Vec::new(); c];
        for (j, &y) in pair.pseudo_labels()?.iter().enumerate() {
            target[y].push(ns + j);
        }
        Ok(Self { source, target })
    }

    fn counts(&self) -> ClassCounts {
        ClassCounts {
            source: self.source.iter().map(Vec::len).collect(),
            target: self.target.iter().map(Vec::len).collect(),
        }
    }
}

/// `M0`: `1/n_s²` on source pairs, `1/n_t²` on target pairs, `-1/(n_s n_t)` across.
pub fn build_marginal(pair: &DomainPair) -> SymmetricWeightMatrix {
    let n = pair.n();
    let src: Vec<usize> = (0..pair.ns()).collect();
    let tgt: Vec<usize> = (pair.ns()..n).collect();
    let mut m = DenseMatrix::zeros(n, n);
    fill_pair(&mut m, &src, &tgt, Fill::Set);
    m
}

/// `Σ_c M_c` over classes present on both sides.
pub fn build_conditional(pair: &DomainPair) -> Result<SymmetricWeightMatrix> {
    let groups = Groups::new(pair)?;
    let counts = groups.counts();
    let n = pair.n();
    let mut m = DenseMatrix::zeros(n, n);
    for c in 0..pair.class_count {
        if counts.present_in_both(c) {
            fill_pair(&mut m, &groups.source[c], &groups.target[c], Fill::Set);
        }
    }
    Ok(m)
}

/// Repulsive matrix pairing each sub-domain `c` of one side with every
/// sub-domain `r ≠ c` of the other.
pub fn build_repulsive(
    pair: &DomainPair,
    direction: Direction,
    mode: MatrixMode,
) -> Result<SymmetricWeightMatrix> {
    let groups = Groups::new(pair)?;
    let n = pair.n();
    let mut m = DenseMatrix::zeros(n, n);
    let fill = match mode {
        MatrixMode::Literal => Fill::Set,
        MatrixMode::RankOneSum => Fill::Add,
    };
    let (from, to) = match direction {
        Direction::SourceToTarget => (&groups.source, &groups.target),
        Direction::TargetToSource => (&groups.target, &groups.source),
    };
    for (c, a) in from.iter().enumerate() {
        for (r, b) in to.iter().enumerate() {
            if r != c {
                fill_pair(&mut m, a, b, fill);
            }
        }
    }
    Ok(m)
}
