//! Multi-layer coverage features and their gradient-weighted enhancement.
//!
//! For captured layers `h_1 … h_n` with KL saliency gradients `g_1 … g_n`, the
//! enhanced feature is the concatenation of `σ_j(h_j ⊙ g_j)` where
//! `σ_j(x) = 1 / (1 + exp(−α_j x))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_nn::{argmax, ForwardTrace, MlpModel};

/// Per-captured-layer sigmoid steepness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SteepnessConfig {
    alpha: Vec<f64>,
}

impl SteepnessConfig {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("steepness needs one α per capture layer".into()));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::Config(format!("steepness α must be finite and > 0, got {bad}")));
        }
        Ok(Self { alpha })
    }

    /// α = 1 on every layer.
    pub fn unit(layers: usize) -> Self {
        Self {
            alpha: vec![1.0; layers],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn check_layers(&self, layers: usize) -> Result<()> {
        if self.alpha.len() != layers {
            return Err(Error::Config(format!(
                "steepness has {} values but the model captures {layers} layers",
                self.alpha.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedFeature {
    pub values: Vec<f64>,
    pub pseudo_class: usize,
    pub source_id: String,
}

/// The α-independent part of a sample's representation: captured activations,
/// their saliency gradients and the model outputs. Computing this once lets the
/// steepness search re-enhance without repeating forward/backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSaliency {
    pub source_id: String,
    pub activations: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl SampleSaliency {
    pub fn compute(model: &MlpModel, x: &[f64], source_id: impl Into<String>) -> Result<Self> {
        let trace = model.forward(x)?;
        let grads = model.grad_wrt_captured(&trace)?;
        Ok(Self {
            source_id: source_id.into(),
            activations: trace.captured().map(<[f64]>::to_vec).collect(),
            grads,
            logits: trace.logits,
        })
    }

    pub fn pseudo_class(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn enhance(&self, steepness: &SteepnessConfig) -> Result<EnhancedFeature> {
        enhance_layers(
            self.activations.iter().map(Vec::as_slice),
            &self.grads,
            steepness,
            self.pseudo_class(),
            self.source_id.clone(),
        )
    }

    /// Raw activations of the last captured layer.
    pub fn last_layer(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

/// `z = h_1 ⊕ … ⊕ h_n` over the capture set, in capture order.
pub fn concat_features(trace: &ForwardTrace) -> Vec<f64> {
    trace.captured().flat_map(|h| h.iter().copied()).collect()
}

/// Largest `f64` strictly below 1 and smallest above 0, used to keep saturated
/// sigmoid outputs inside the open unit interval.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
const ABOVE_ZERO: f64 = f64::MIN_POSITIVE;

/// Logistic function with steepness `alpha`, evaluated on the sign-split
/// branch so that `exp` never overflows. Saturated values are clamped into
/// the open interval (0, 1).
pub fn sigmoid(alpha: f64, x: f64) -> f64 {
    let t = alpha * x;
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    s.clamp(ABOVE_ZERO, BELOW_ONE)
}

pub fn enhance(
    trace: &ForwardTrace,
    grads: &[Vec<f64>],
    steepness: &SteepnessConfig,
    source_id: impl Into<String>,
) -> Result<EnhancedFeature> {
    enhance_layers(
        trace.captured(),
        grads,
        steepness,
        trace.predicted_class(),
        source_id.into(),
    )
}

fn enhance_layers<'a>(
    activations: impl Iterator<Item = &'a [f64]>,
    grads: &[Vec<f64>],
    steepness: &SteepnessConfig,
    pseudo_class: usize,
    source_id: String,
) -> Result<EnhancedFeature> {
    steepness.check_layers(grads.len())?;
    let mut values = Vec::new();
    let mut seen = 0;
    for ((h, g), &alpha) in activations.zip(grads).zip(steepness.alpha()) {
        if h.len() != g.len() {
            return Err(Error::Shape {
                expected: h.len(),
                actual: g.len(),
            });
        }
        values.extend(
            h.iter()
                .zip(g)
                .map(|(&hi, &gi)| sigmoid(alpha, hi * gi)),
        );
        seen += 1;
    }
    if seen != grads.len() {
        return Err(Error::Shape {
            expected: grads.len(),
            actual: seen,
        });
    }
    Ok(EnhancedFeature {
        values,
        pseudo_class,
        source_id,
    })
}
