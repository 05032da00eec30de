//! Class distributions and normalized certainty.
//!
//! Every estimator maps a distribution over `k` candidate answers to a
//! certainty in `[0, 1]`: 0 for the uniform distribution, 1 for a one-hot
//! distribution.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deviation from a unit sum that is silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;
const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("a distribution needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("{labels} labels but {probs} probabilities")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("probability {0} is negative or not finite")]
    InvalidProbability(f64),
    #[error("probabilities sum to {0}, too far from 1")]
    NotNormalized(f64),
    #[error("renyi order must be positive and different from 1, got {0}")]
    InvalidAlpha(f64),
    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),
}

/// Normalized probabilities over `k >= 2` uniquely labelled outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self, DistributionError> {
        if labels.len() != probs.len() {
            return Err(DistributionError::LengthMismatch {
                labels: labels.len(),
                probs: probs.len(),
            });
        }
        if labels.len() < 2 {
            return Err(DistributionError::TooFewClasses(labels.len()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(DistributionError::DuplicateLabel(l.clone()));
            }
        }
        if let Some(&bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(DistributionError::InvalidProbability(bad));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(DistributionError::NotNormalized(sum));
        }
        let probs = probs.into_iter().map(|p| p / sum).collect();
        Ok(Self { labels, probs })
    }

    /// Convenience constructor labelling classes `c0, c1, ...`.
    pub fn from_probs(probs: &[f64]) -> Result<Self, DistributionError> {
        let labels = (0..probs.len()).map(|i| format!("c{i}")).collect();
        Self::new(labels, probs.to_vec())
    }

    pub fn uniform(labels: Vec<String>) -> Result<Self, DistributionError> {
        let k = labels.len().max(1);
        Self::new(labels, vec![1.0 / k as f64; k])
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }
}

/// Shannon entropy in bits; zero-probability terms contribute nothing.
pub fn entropy_bits(dist: &ClassDistribution) -> f64 {
    -dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// `2^H`, in `[1, k]`.
pub fn class_perplexity(dist: &ClassDistribution) -> f64 {
    2f64.powf(entropy_bits(dist)).clamp(1.0, dist.k() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertaintyEstimator {
    #[default]
    Perplexity,
    Renyi {
        alpha: f64,
    },
    FisherRao,
}

impl CertaintyEstimator {
    pub const DEFAULT_RENYI_ALPHA: f64 = 0.5;

    pub fn renyi(alpha: f64) -> Result<Self, DistributionError> {
        if !(alpha.is_finite() && alpha > 0.0) || alpha == 1.0 {
            return Err(DistributionError::InvalidAlpha(alpha));
        }
        Ok(CertaintyEstimator::Renyi { alpha })
    }
}

impl fmt::Display for CertaintyEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertaintyEstimator::Perplexity => f.write_str("perplexity"),
            CertaintyEstimator::Renyi { alpha } => write!(f, "renyi:{alpha}"),
            CertaintyEstimator::FisherRao => f.write_str("fisher-rao"),
        }
    }
}

impl FromStr for CertaintyEstimator {
    type Err = DistributionError;

    /// Accepts `perplexity`, `renyi`, `renyi:<alpha>` and `fisher-rao`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "perplexity" => Ok(CertaintyEstimator::Perplexity),
            "fisher-rao" | "fisher_rao" | "fisherrao" => Ok(CertaintyEstimator::FisherRao),
            "renyi" => CertaintyEstimator::renyi(Self::DEFAULT_RENYI_ALPHA),
            _ => match s.strip_prefix("renyi:") {
                Some(a) => {
                    let alpha: f64 = a.parse().map_err(|_| DistributionError::UnknownEstimator(s.clone()))?;
                    CertaintyEstimator::renyi(alpha)
                }
                None => Err(DistributionError::UnknownEstimator(s)),
            },
        }
    }
}

/// Rényi divergence of order `alpha` from the uniform distribution, in nats.
fn renyi_from_uniform(probs: &[f64], alpha: f64) -> f64 {
    let k = probs.len() as f64;
    let q = 1.0 / k;
    let s: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p.powf(alpha) * q.powf(1.0 - alpha))
        .sum();
    s.ln() / (alpha - 1.0)
}

/// Fisher-Rao distance `2 arccos(sum sqrt(p q))` from the uniform distribution.
fn fisher_rao_from_uniform(probs: &[f64]) -> f64 {
    let k = probs.len() as f64;
    let bc: f64 = probs.iter().map(|&p| (p / k).sqrt()).sum();
    2.0 * bc.clamp(-1.0, 1.0).acos()
}

fn clamp_unit(x: f64) -> f64 {
    debug_assert!(
        (-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&x),
        "certainty {x} outside [0, 1]"
    );
    x.clamp(0.0, 1.0)
}

/// Certainty in `[0, 1]`: 0 at the uniform distribution, 1 at one-hot.
pub fn normalized_certainty(dist: &ClassDistribution, estimator: CertaintyEstimator) -> f64 {
    let k = dist.k() as f64;
    let raw = match estimator {
        CertaintyEstimator::Perplexity => (k - class_perplexity(dist)) / (k - 1.0),
        CertaintyEstimator::Renyi { alpha } => renyi_from_uniform(&dist.probs, alpha) / k.ln(),
        CertaintyEstimator::FisherRao => {
            let d_max = 2.0 * (1.0 / k.sqrt()).acos();
            fisher_rao_from_uniform(&dist.probs) / d_max
        }
    };
    clamp_unit(raw)
}
