//! Adaptation models and the pseudo-label refinement loop.
//!
//! Every model learns a projection by minimising `tr(Aᵀ S D Sᵀ A) + λ‖A‖²`
//! subject to `Aᵀ S H Sᵀ A = I`, where `S` is the packed feature matrix (primal)
//! or a kernel matrix, and `D` is the model's DB matrix. The loop then
//! relabels the target in the learned space and repeats until the pseudo-labels
//! stop changing.
//!
//! | model     | DB matrix                                             | target labeller      |
//! |-----------|-------------------------------------------------------|----------------------|
//! | JDA       | `M0 + ΣM_c`                                           | 1-NN                 |
//! | CDDA      | `M0 + ΣM_c - (M_S→T + M_T→S)`                          | 1-NN                 |
//! | DGA-DA    | as CDDA                                               | label propagation    |
//! | MEDA      | `M0 + ΣM_c` inside a kernel ridge structural risk      | kernel ridge argmax  |
//!
//! `+CG` reweights the compacting term with `G_CG`; `+DB` additionally
//! reweights the repulsive term with `G_SG`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classify::{argmax_rows, nn_classify, propagate_labels, LabelDistribution};
use crate::data::{
    AdaptConfig, AdaptationReport, DomainPair, IterationRecord, KernelSetting, LabeledDomain,
    SigmaMode,
};
use crate::error::{Error, Result};
use crate::graph::{build_affinity, build_graphs, build_laplacian, AffinityMatrix, BoundaryGraphs};
use crate::linalg::{
    default_ridge, gen_eig_smallest, kernel_matrix, median_bandwidth, pairwise_sq_dists,
    DenseMatrix, FeatureMatrix, KernelKind,
};
use crate::mmd::{MmdMatrices, SymmetricWeightMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseModel {
    Jda,
    Cdda,
    DgaDa,
    Meda,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Boundary {
    None,
    /// Compacting graph only.
    Cg,
    /// Compacting and separation graphs.
    Db,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelKind {
    pub base: BaseModel,
    pub boundary: Boundary,
}

impl ModelKind {
    pub fn new(base: BaseModel, boundary: Boundary) -> Result<Self> {
        let kind = Self { base, boundary };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == BaseModel::Meda && self.boundary == Boundary::Db {
            return Err(Error::UnsupportedModel(
                "MEDA has no repulsive term, so MEDA+DB is undefined".into(),
            ));
        }
        Ok(())
    }

    /// The same base model without graph reweighting.
    pub fn baseline(&self) -> Self {
        Self {
            base: self.base,
            boundary: Boundary::None,
        }
    }

    fn has_repulsion(&self) -> bool {
        matches!(self.base, BaseModel::Cdda | BaseModel::DgaDa)
    }

    /// Every supported combination, baselines first within each family.
    pub fn all() -> Vec<ModelKind> {
        use BaseModel::*;
        use Boundary::*;
        [
            (Jda, None),
            (Jda, Cg),
            (Cdda, None),
            (Cdda, Cg),
            (Cdda, Db),
            (DgaDa, None),
            (DgaDa, Cg),
            (DgaDa, Db),
            (Meda, None),
            (Meda, Cg),
        ]
        .into_iter()
        .map(|(base, boundary)| ModelKind { base, boundary })
        .collect()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.base {
            BaseModel::Jda => "JDA",
            BaseModel::Cdda => "CDDA",
            BaseModel::DgaDa => "DGA-DA",
            BaseModel::Meda => "MEDA",
        };
        match self.boundary {
            Boundary::None => write!(f, "{base}"),
            Boundary::Cg => write!(f, "{base}+CG"),
            Boundary::Db => write!(f, "{base}+DB"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let (base, boundary) = match upper.split_once('+') {
            Some((b, g)) => (b, Some(g)),
            None => (upper.as_str(), None),
        };
        let base = match base {
            "JDA" => BaseModel::Jda,
            "CDDA" => BaseModel::Cdda,
            "DGA-DA" | "DGADA" | "DGA_DA" => BaseModel::DgaDa,
            "MEDA" => BaseModel::Meda,
            other => {
                return Err(Error::UnsupportedModel(format!(
                    "unknown base model {other:?}"
                )))
            }
        };
        let boundary = match boundary {
            None => Boundary::None,
            Some("CG") => Boundary::Cg,
            Some("DB") => Boundary::Db,
            Some(other) => {
                return Err(Error::UnsupportedModel(format!(
                    "unknown boundary variant {other:?}"
                )))
            }
        };
        ModelKind::new(base, boundary)
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Coefficient matrix `M0 + compacting term - separation term`.
#[derive(Clone, Debug, PartialEq)]
pub struct DbMatrix(pub SymmetricWeightMatrix);

pub fn assemble_db(
    mmd: &MmdMatrices,
    graphs: Option<&BoundaryGraphs>,
    kind: ModelKind,
    keep_off_mask: bool,
) -> Result<DbMatrix> {
    kind.validate()?;
    let graphs = match (kind.boundary, graphs) {
        (Boundary::None, _) => None,
        (_, Some(g)) => Some(g),
        (_, None) => {
            return Err(Error::State(format!("{kind} needs boundary graphs")));
        }
    };

    if kind.base == BaseModel::Meda {
        let m = &mmd.m0 + &mmd.mc_sum;
        let m = match graphs {
            Some(g) => g.compact(&m, keep_off_mask),
            None => m,
        };
        return Ok(DbMatrix(m));
    }

    let compact = match graphs {
        Some(g) => g.compact(&mmd.mc_sum, keep_off_mask),
        None => mmd.mc_sum.clone(),
    };
    let mut db = &mmd.m0 + compact;
    if kind.has_repulsion() {
        let repulsive = mmd.repulsive_sum();
        let separation = match (kind.boundary, graphs) {
            (Boundary::Db, Some(g)) => g.separate(&repulsive, keep_off_mask),
            _ => repulsive,
        };
        db -= separation;
    }
    Ok(DbMatrix(db))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `d × k`, columns sorted by ascending eigenvalue.
    pub matrix: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    /// `Z = Aᵀ S`, `k × n`.
    pub embedding: DenseMatrix,
    /// `tr(Aᵀ S D Sᵀ A) + λ‖A‖²_F`.
    pub objective: f64,
}

/// Solve `(S D Sᵀ + λI) A = S H Sᵀ A Φ` for the `k` smallest eigenpairs.
///
/// `S` is `X` (primal, `ℓ × n`) or `K` (kernel, `n × n`). `k` is clamped to
/// the row count of `S`.
pub fn solve_projection(
    s: &DenseMatrix,
    db: &DbMatrix,
    k: usize,
    lambda: f64,
    ridge: Option<f64>,
) -> Result<Projection> {
    let n = s.ncols();
    if db.0.nrows() != n || db.0.ncols() != n {
        return Err(Error::Dimension(format!(
            "DB matrix is {}x{} but there are {n} samples",
            db.0.nrows(),
            db.0.ncols()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    let d = s.nrows();

    let mut left = s * &db.0 * s.transpose();
    symmetrize(&mut left);
    for i in 0..d {
        left[(i, i)] += lambda;
    }

    // S H Sᵀ with H the centering matrix: centre each row of S.
    let mut centered = s.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let mut right = &centered * centered.transpose();
    symmetrize(&mut right);

    let ridge = ridge.unwrap_or_else(|| default_ridge(&right));
    let pairs = gen_eig_smallest(&left, &right, k.min(d), ridge)?;

    let mut a = DenseMatrix::zeros(d, pairs.len());
    for (j, p) in pairs.iter().enumerate() {
        a.set_column(j, &p.vector);
    }
    let objective = (a.transpose() * &left * &a).trace();
    Ok(Projection {
        embedding: a.tr_mul(s),
        eigenvalues: pairs.iter().map(|p| p.value).collect(),
        matrix: a,
        objective,
    })
}

fn symmetrize(m: &mut DenseMatrix) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Initial target labeller: `(source, target features) -> labels`.
pub type Labeler = dyn Fn(&LabeledDomain, &FeatureMatrix) -> Result<Vec<usize>> + Sync;

/// Optional overrides for [`run_adaptation_with`].
#[derive(Default)]
pub struct Hooks<'a> {
    /// Replaces the default 1-NN used when the target has no pseudo-labels.
    pub initial_labeler: Option<&'a Labeler>,
    /// Replaces the dense input-space affinity used by the boundary graphs.
    pub graph_affinity: Option<&'a AffinityMatrix>,
}

pub fn run_adaptation(
    pair: &DomainPair,
    cfg: &AdaptConfig,
    kind: ModelKind,
) -> Result<AdaptationReport> {
    run_adaptation_with(pair, cfg, kind, &Hooks::default())
}

/// MEDA with the compacting graph.
pub fn run_meda_cg(pair: &DomainPair, cfg: &AdaptConfig) -> Result<AdaptationReport> {
    run_adaptation(pair, cfg, ModelKind::new(BaseModel::Meda, Boundary::Cg)?)
}

pub fn run_adaptation_with(
    pair: &DomainPair,
    cfg: &AdaptConfig,
    kind: ModelKind,
    hooks: &Hooks<'_>,
) -> Result<AdaptationReport> {
    let started = Instant::now();
    cfg.validate()?;
    kind.validate()?;
    if kind.base == BaseModel::Meda && cfg.kernel == KernelSetting::Primal {
        return Err(Error::Parameter("MEDA variants require a kernel".into()));
    }

    let mut state = pair.clone();
    if state.target.pseudo_labels.is_none() {
        let init = match hooks.initial_labeler {
            Some(f) => f(&state.source, &state.target.features)?,
            None => nn_classify(
                &state.source.features,
                &state.source.labels,
                &state.target.features,
            )?,
        };
        state.replace_pseudo_labels(init)?;
    }
    let truth = pair.target_truth.as_deref();
    let score = |labels: &[usize]| -> Result<Option<f64>> {
        truth
            .map(|t| crate::classify::accuracy(labels, t))
            .transpose()
    };
    let initial_accuracy = score(state.pseudo_labels()?)?;

    let x = state.packed_features();
    let s = match resolve_kernel(cfg, &x)? {
        None => x.clone(),
        Some(kernel) => kernel_matrix(&x, kernel)?,
    };

    let owned_affinity;
    let graph_affinity = match (kind.boundary, hooks.graph_affinity) {
        (Boundary::None, _) => None,
        (_, Some(w)) => Some(w),
        (_, None) => {
            owned_affinity = build_affinity(&x, cfg.sigma_mode, 0)?;
            Some(&owned_affinity)
        }
    };

    let mut solver: Box<dyn IterationSolver> = match kind.base {
        BaseModel::Meda => Box::new(MedaSolver::new(&state, cfg, &x, s)?),
        _ => Box::new(SubspaceSolver { cfg, kind, s }),
    };

    let mut iterations = Vec::new();
    let mut trajectory = Vec::new();
    let mut converged_at = None;
    let mut last = None;
    for t in 1..=cfg.max_iter {
        let step = (|| -> Result<Step> {
            let mmd = MmdMatrices::build(&state, cfg.matrix_mode)?;
            let graphs = graph_affinity
                .map(|w| build_graphs(w, &mmd.masks, cfg.graph_mode, cfg.w_floor))
                .transpose()?;
            let db = assemble_db(&mmd, graphs.as_ref(), kind, cfg.keep_off_mask)?;
            solver.step(&state, &db)
        })()
        .map_err(|e| Error::Iteration {
            iteration: t,
            source: Box::new(e),
        })?;

        let previous = state.pseudo_labels()?;
        let churn = previous
            .iter()
            .zip(&step.labels)
            .filter(|(a, b)| a != b)
            .count();
        iterations.push(IterationRecord {
            iteration: t,
            accuracy: score(&step.labels)?,
            objective: step.objective,
            churn,
            eigenvalues: step.eigenvalues.clone(),
        });
        trajectory.push(step.labels.clone());
        state.replace_pseudo_labels(step.labels.clone())?;
        last = Some(step);
        if churn == 0 {
            converged_at = Some(t);
            break;
        }
    }

    let last = last.expect("max_iter >= 1");
    Ok(AdaptationReport {
        model: kind.to_string(),
        initial_accuracy,
        iterations,
        projection: last.projection,
        predicted: last.labels,
        converged_at,
        label_trajectory: trajectory,
        wall_time_secs: started.elapsed().as_secs_f64(),
        embedding: Some(last.embedding),
    })
}

/// Kernel to apply to the packed features, or `None` in primal mode.
pub fn resolve_kernel(cfg: &AdaptConfig, x: &FeatureMatrix) -> Result<Option<KernelKind>> {
    Ok(match cfg.kernel {
        KernelSetting::Primal => None,
        KernelSetting::Linear => Some(KernelKind::Linear),
        KernelSetting::Poly { degree } => Some(KernelKind::Poly { degree }),
        KernelSetting::Rbf => {
            let sigma = match cfg.sigma_mode {
                SigmaMode::Median => median_bandwidth(&pairwise_sq_dists(x))?,
                SigmaMode::Fixed { sigma } => sigma,
            };
            Some(KernelKind::Rbf { sigma })
        }
    })
}

struct Step {
    labels: Vec<usize>,
    objective: f64,
    eigenvalues: Vec<f64>,
    projection: DenseMatrix,
    embedding: DenseMatrix,
}

trait IterationSolver {
    fn step(&mut self, state: &DomainPair, db: &DbMatrix) -> Result<Step>;
}

/// JDA / CDDA / DGA-DA: generalized eigenproblem then relabel in `Z`.
struct SubspaceSolver<'a> {
    cfg: &'a AdaptConfig,
    kind: ModelKind,
    s: DenseMatrix,
}

impl IterationSolver for SubspaceSolver<'_> {
    fn step(&mut self, state: &DomainPair, db: &DbMatrix) -> Result<Step> {
        let proj = solve_projection(&self.s, db, self.cfg.k, self.cfg.lambda, self.cfg.ridge)?;
        let (ns, nt) = (state.ns(), state.nt());
        let z = &proj.embedding;
        let zs = z.columns(0, ns).into_owned();
        let zt = z.columns(ns, nt).into_owned();
        let nn = nn_classify(&zs, &state.source.labels, &zt)?;
        let labels = match self.kind.base {
            BaseModel::DgaDa => {
                let w = build_affinity(z, self.cfg.sigma_mode, self.cfg.neighborhood_p)?;
                let l = build_laplacian(&w, self.cfg.normalized_laplacian);
                let mut packed = state.source.labels.clone();
                packed.extend_from_slice(&nn);
                let y0 = LabelDistribution::one_hot(&packed, state.class_count);
                let f = propagate_labels(&l, &y0, self.cfg.mu, ns)?;
                f.hard_labels()[ns..].to_vec()
            }
            _ => nn,
        };
        Ok(Step {
            labels,
            objective: proj.objective,
            eigenvalues: proj.eigenvalues,
            projection: proj.matrix,
            embedding: proj.embedding,
        })
    }
}

/// MEDA-style structural risk minimisation over a kernel expansion.
///
/// Minimises `‖E(Y - Kβ)‖² + η tr(βᵀKβ) + tr(βᵀK(αM + ρL)Kβ)`, whose
/// stationary point solves `((E + αM + ρL) K + ηI) β = E Y`. `E` selects the
/// source rows and `Y` holds their one-hot labels.
struct MedaSolver<'a> {
    cfg: &'a AdaptConfig,
    kernel: DenseMatrix,
    laplacian: DenseMatrix,
    selector: Vec<f64>,
    targets: DenseMatrix,
}

impl<'a> MedaSolver<'a> {
    fn new(
        state: &DomainPair,
        cfg: &'a AdaptConfig,
        x: &FeatureMatrix,
        kernel: DenseMatrix,
    ) -> Result<Self> {
        let n = state.n();
        let ns = state.ns();
        let laplacian = if cfg.meda_rho > 0.0 {
            let w = build_affinity(x, cfg.sigma_mode, cfg.neighborhood_p)?;
            build_laplacian(&w, cfg.normalized_laplacian)
        } else {
            DenseMatrix::zeros(n, n)
        };
        let selector = (0..n).map(|i| if i < ns { 1.0 } else { 0.0 }).collect();
        let mut targets = DenseMatrix::zeros(n, state.class_count);
        for (i, &y) in state.source.labels.iter().enumerate() {
            targets[(i, y)] = 1.0;
        }
        Ok(Self {
            cfg,
            kernel,
            laplacian,
            selector,
            targets,
        })
    }
}

impl IterationSolver for MedaSolver<'_> {
    fn step(&mut self, state: &DomainPair, db: &DbMatrix) -> Result<Step> {
        let n = state.n();
        let cfg = self.cfg;
        let mut reg = &db.0 * cfg.meda_alpha + &self.laplacian * cfg.meda_rho;
        for i in 0..n {
            reg[(i, i)] += self.selector[i];
        }
        let mut system = reg * &self.kernel;
        for i in 0..n {
            system[(i, i)] += cfg.meda_eta;
        }
        let rhs = DenseMatrix::from_fn(n, state.class_count, |i, c| {
            self.selector[i] * self.targets[(i, c)]
        });
        let beta = solve_with_escalation(&system, &rhs)?;

        let scores = &self.kernel * &beta;
        let labels = argmax_rows(&scores.rows(state.ns(), state.nt()).into_owned());

        let mut fit = 0.0;
        for i in 0..state.ns() {
            for c in 0..state.class_count {
                fit += (self.targets[(i, c)] - scores[(i, c)]).powi(2);
            }
        }
        let smooth = (beta.transpose() * &self.kernel * &beta).trace();
        let structure = (scores.transpose()
            * (&db.0 * cfg.meda_alpha + &self.laplacian * cfg.meda_rho)
            * &scores)
            .trace();
        Ok(Step {
            labels,
            objective: fit + cfg.meda_eta * smooth + structure,
            eigenvalues: Vec::new(),
            embedding: scores.transpose(),
            projection: beta,
        })
    }
}

/// LU solve; on singularity retry with a growing diagonal shift.
fn solve_with_escalation(system: &DenseMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(x) = system.clone().lu().solve(rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let n = system.nrows();
    let mut shift = 1e-10 * (system.trace().abs() / n as f64).max(1.0);
    for _ in 0..6 {
        let mut shifted = system.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if let Some(x) = shifted.lu().solve(rhs) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        shift *= 100.0;
    }
    Err(Error::Numeric(
        "structural-risk system is singular even after ridge escalation".into(),
    ))
}
