//! Seeded Gaussian-blob domain pairs with a controlled shift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DomainPair, LabeledDomain, UnlabeledDomain};
use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shift {
    /// Rotation by `degrees` in the plane of the first two features, about the origin.
    Rotation { degrees: f64 },
    /// Added to every target sample; shorter vectors are zero-padded.
    Translation { offset: Vec<f64> },
    /// Target deviations from their class centre are multiplied by `factor`.
    CovarianceScale { factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRecipe {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    pub shift: Shift,
    pub noise: f64,
    /// Class centres are uniform in `[-center_spread, center_spread]^dim`.
    #[serde(default = "default_spread")]
    pub center_spread: f64,
    pub seed: u64,
}

fn default_spread() -> f64 {
    4.0
}

impl SyntheticRecipe {
    /// Three classes, 50 samples per class and domain, 2-D, 30° rotation, seed 7.
    pub fn golden() -> Self {
        Self {
            class_count: 3,
            per_class: 50,
            dim: 2,
            shift: Shift::Rotation { degrees: 30.0 },
            noise: 1.0,
            center_spread: default_spread(),
            seed: 7,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::Parameter(
                "recipe needs class_count >= 2, per_class >= 1, dim >= 1".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if !(self.center_spread > 0.0 && self.center_spread.is_finite()) {
            return Err(Error::Parameter("center_spread must be > 0".into()));
        }
        if matches!(self.shift, Shift::Rotation { .. }) && self.dim < 2 {
            return Err(Error::Parameter("rotation needs dim >= 2".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(recipe: &SyntheticRecipe) -> Result<DomainPair> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let (c, m, d) = (recipe.class_count, recipe.per_class, recipe.dim);
    let spread = Uniform::new_inclusive(-recipe.center_spread, recipe.center_spread)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| spread.sample(&mut rng)).collect())
        .collect();

    let labels: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, m)).collect();
    let mut draw = |scale: f64| -> FeatureMatrix {
        let mut x = FeatureMatrix::zeros(d, c * m);
        for (j, &k) in labels.iter().enumerate() {
            for r in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(r, j)] = centers[k][r] + scale * recipe.noise * z;
            }
        }
        x
    };
    let xs = draw(1.0);
    let scale = match recipe.shift {
        Shift::CovarianceScale { factor } => factor,
        _ => 1.0,
    };
    let mut xt = draw(scale);
    match &recipe.shift {
        Shift::Rotation { degrees } => {
            let (sin, cos) = degrees.to_radians().sin_cos();
            for mut col in xt.column_iter_mut() {
                let (a, b) = (col[0], col[1]);
                col[0] = cos * a - sin * b;
                col[1] = sin * a + cos * b;
            }
        }
        Shift::Translation { offset } => {
            for mut col in xt.column_iter_mut() {
                for (r, v) in offset.iter().enumerate().take(d) {
                    col[r] += v;
                }
            }
        }
        Shift::CovarianceScale { .. } => {}
    }

    let source = LabeledDomain::new(xs, labels.clone(), "synthetic-source")?;
    let target = UnlabeledDomain::new(xt, "synthetic-target")?;
    DomainPair::with_class_count(source, target, c)?.with_target_truth(labels)
}

/// SHA-256 over features and labels of both domains, little-endian.
pub fn pair_digest(pair: &DomainPair) -> String {
    let mut h = Sha256::new();
    for v in pair
        .source
        .features
        .iter()
        .chain(pair.target.features.iter())
    {
        h.update(v.to_le_bytes());
    }
    for &y in &pair.source.labels {
        h.update((y as u64).to_le_bytes());
    }
    if let Some(truth) = &pair.target_truth {
        for &y in truth {
            h.update((y as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
