//! Masked additive weight perturbation: `θ' = θ + ξ ⊙ m`.
//!
//! `ξ` is drawn from `U(−β, β)` or a zero-mean Gaussian with standard
//! deviation `β`; `m` is an i.i.d. Bernoulli(α) mask over the flat parameter
//! vector. Noise and mask come from separate seeded streams.

use rand::distributions::Distribution;
use rand::Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamVector;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    Uniform,
    Gaussian,
}

impl std::str::FromStr for NoiseDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "uni" => Ok(Self::Uniform),
            "gaussian" | "normal" | "norm" => Ok(Self::Gaussian),
            other => Err(Error::Config(format!("unknown noise distribution {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Gaussian => "gaussian",
        })
    }
}

/// Perturbation recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    /// Mask rate α ∈ [0, 1].
    pub alpha: f64,
    /// Noise scale β ≥ 0 (half-width for uniform, standard deviation for Gaussian).
    pub beta: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(distribution: NoiseDistribution, alpha: f64, beta: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            distribution,
            alpha,
            beta,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("noise alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("noise beta {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }

    /// Same recipe, different seed.
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Bernoulli mask over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    pub bits: Vec<bool>,
}

impl MaskVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Empirical mask rate `(1/D)·Σ mᵢ`.
    pub fn rate(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }
}

/// Samples `ξ ∈ R^D` from the spec's distribution using the spec's noise stream.
pub fn sample_noise(spec: &NoiseSpec, d: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.beta == 0.0 {
        return Ok(vec![0.0; d]);
    }
    let mut rng = seed::rng(seed::derive(spec.seed, seed::stream::NOISE, 0));
    Ok(match spec.distribution {
        NoiseDistribution::Uniform => {
            let dist = Uniform::new_inclusive(-spec.beta, spec.beta);
            (0..d).map(|_| dist.sample(&mut rng)).collect()
        }
        NoiseDistribution::Gaussian => {
            let dist = Normal::new(0.0, spec.beta)
                .map_err(|e| Error::Config(format!("gaussian noise: {e}")))?;
            (0..d).map(|_| dist.sample(&mut rng)).collect()
        }
    })
}

/// Samples `m ∈ {0,1}^D` with i.i.d. Bernoulli(α) bits.
pub fn sample_mask(alpha: f64, d: usize, seed: u64) -> Result<MaskVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("mask rate {alpha} outside [0, 1]")));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::stream::MASK, 0));
    let bits = (0..d).map(|_| rng.gen_bool(alpha)).collect();
    Ok(MaskVector { bits })
}

/// `θ'ᵢ = θᵢ + ξᵢ·mᵢ` for explicit noise and mask. Unmasked entries are copied bitwise.
pub fn apply_perturbation(theta: &ParamVector, noise: &[f64], mask: &MaskVector) -> Result<ParamVector> {
    let d = theta.len();
    if noise.len() != d || mask.len() != d {
        return Err(Error::dim(format!(
            "perturbation sizes differ: theta {d}, noise {}, mask {}",
            noise.len(),
            mask.len()
        )));
    }
    let values = theta
        .values
        .iter()
        .zip(noise)
        .zip(&mask.bits)
        .map(|((&t, &xi), &m)| if m { t + xi } else { t })
        .collect();
    theta.with_values(values)
}

/// Returns a perturbed copy of `theta`; the input is left untouched.
pub fn perturb(theta: &ParamVector, spec: &NoiseSpec) -> Result<ParamVector> {
    spec.validate()?;
    if spec.beta == 0.0 || spec.alpha == 0.0 {
        return Ok(theta.clone());
    }
    let d = theta.len();
    let mask = sample_mask(spec.alpha, d, spec.seed)?;
    let noise = sample_noise(spec, d)?;
    apply_perturbation(theta, &noise, &mask)
}
