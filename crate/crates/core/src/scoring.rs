//! Inner/outer class distances, the distance ratio and its OOD mapping, the
//! energy score, the separability proxy `r_avg`, and the fused score.

use serde::{Deserialize, Serialize};

use crate::comparison_set::{ClassKey, ComparisonSet, SubsetPolicy};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature_space::{EnhancedFeature, SampleSaliency, SteepnessConfig};
use crate::tensor_nn::{euclidean, log_sum_exp, MlpModel};

/// Guard on the outer distance in the ratio.
pub const RATIO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Sisom,
    Sisome,
    Energy,
}

impl ScoreMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::Sisom => "sisom",
            ScoreMode::Sisome => "sisome",
            ScoreMode::Energy => "energy",
        }
    }

    /// How the in-distribution score (higher = more InD) is derived from a
    /// bundle, as recorded in output metadata.
    pub fn ind_score_rule(&self) -> &'static str {
        match self {
            ScoreMode::Sisom => "r_ood",
            ScoreMode::Sisome => "-fused",
            ScoreMode::Energy => "-energy",
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub sample_id: String,
    pub pseudo_class: usize,
    pub d_in: f64,
    pub d_out: f64,
    pub r: f64,
    pub r_ood: f64,
    pub energy: f64,
    pub fused: f64,
}

impl ScoreBundle {
    /// Higher means more in-distribution under `mode`.
    pub fn ind_score(&self, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Sisom => self.r_ood,
            ScoreMode::Sisome => -self.fused,
            ScoreMode::Energy => -self.energy,
        }
    }

    /// Higher means more worth annotating under `mode`.
    pub fn query_score(&self, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Sisom => self.r,
            ScoreMode::Sisome => self.fused,
            ScoreMode::Energy => self.energy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilityReport {
    pub r_avg: f64,
    pub per_sample_ratios: Vec<f64>,
    pub excluded_self_matches: usize,
}

/// `(d_in, d_out)` of `query` against `set`. Stored entries whose source id
/// equals `exclude_id` are skipped.
pub fn class_distances(
    query: &EnhancedFeature,
    set: &ComparisonSet,
    exclude_id: Option<&str>,
) -> Result<(f64, f64)> {
    distances(&query.values, query.pseudo_class, set, |i| {
        exclude_id.is_some_and(|id| set.entries()[i].feature.source_id == id)
    })
}

fn distances(
    values: &[f64],
    class: usize,
    set: &ComparisonSet,
    skip: impl Fn(usize) -> bool,
) -> Result<(f64, f64)> {
    let mut d_in = f64::INFINITY;
    let mut d_out = f64::INFINITY;
    let mut seen_in = false;
    let mut seen_out = false;
    for (i, e) in set.entries().iter().enumerate() {
        if set.class_of(i) == class {
            if skip(i) {
                continue;
            }
            seen_in = true;
            d_in = d_in.min(euclidean(values, &e.feature.values));
        } else {
            seen_out = true;
            d_out = d_out.min(euclidean(values, &e.feature.values));
        }
    }
    if !seen_in {
        return Err(Error::MissingClass { class });
    }
    if !seen_out {
        return Err(Error::MissingOuterClass { class });
    }
    Ok((d_in, d_out))
}

/// `r = d_in / max(d_out, ε)`, exactly 0 when `d_in = 0`.
pub fn sisom_score(d_in: f64, d_out: f64) -> f64 {
    if d_in == 0.0 {
        0.0
    } else {
        d_in / d_out.max(RATIO_EPS)
    }
}

/// `1 − (σ(r) + 1) / 2`; lies in `(0, 0.25]` and decreases strictly in `r`.
pub fn ood_score(r: f64) -> f64 {
    // (1 − σ(r)) / 2 rewritten so large r does not round to zero
    0.5 / (1.0 + r.exp())
}

/// `E = −log Σ exp(logits)`.
pub fn energy_score(logits: &[f64]) -> f64 {
    -log_sum_exp(logits)
}

/// `min(r_avg, 1)·E + max(1 − r_avg, 0)·r`.
pub fn fuse(r: f64, energy: f64, r_avg: f64) -> f64 {
    r_avg.min(1.0) * energy + (1.0 - r_avg).max(0.0) * r
}

/// Mean leave-self-out distance ratio over every stored entry.
pub fn separability(set: &ComparisonSet) -> Result<SeparabilityReport> {
    let classes: Vec<usize> = set.classes().collect();
    if classes.len() < 2 {
        return Err(Error::SeparabilityUndefined(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    if let Some(&c) = classes.iter().find(|&&c| set.class_indices(c).len() < 2) {
        return Err(Error::SeparabilityUndefined(format!(
            "class {c} has fewer than 2 stored entries"
        )));
    }
    let per_sample_ratios = set
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (d_in, d_out) = distances(&e.feature.values, set.class_of(i), set, |j| j == i)?;
            Ok(sisom_score(d_in, d_out))
        })
        .collect::<Result<Vec<f64>>>()?;
    let r_avg = per_sample_ratios.iter().sum::<f64>() / per_sample_ratios.len() as f64;
    Ok(SeparabilityReport {
        r_avg,
        excluded_self_matches: per_sample_ratios.len(),
        per_sample_ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreOptions {
    pub mode: ScoreMode,
    pub r_avg_override: Option<f64>,
    /// z-standardise `E` and `r` across the batch before fusing.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub bundles: Vec<ScoreBundle>,
    /// The `r_avg` used for fusion (`None` unless the mode is `sisome`).
    pub r_avg: Option<f64>,
}

/// Scores one already-featurised query.
pub fn score_one(
    saliency: &SampleSaliency,
    steepness: &SteepnessConfig,
    set: &ComparisonSet,
) -> Result<ScoreBundle> {
    let with_id = |e: Error| Error::Sample {
        id: saliency.source_id.clone(),
        source: Box::new(e),
    };
    let feature = saliency.enhance(steepness).map_err(with_id)?;
    let (d_in, d_out) = class_distances(&feature, set, None).map_err(with_id)?;
    let r = sisom_score(d_in, d_out);
    let energy = energy_score(&saliency.logits);
    Ok(ScoreBundle {
        sample_id: feature.source_id,
        pseudo_class: feature.pseudo_class,
        d_in,
        d_out,
        r,
        r_ood: ood_score(r),
        energy,
        fused: r,
    })
}

/// Forward → saliency → enhance → distances for every query row, in input
/// order, then fills `fused` according to `opts.mode`.
pub fn score_batch(
    model: &MlpModel,
    steepness: &SteepnessConfig,
    set: &ComparisonSet,
    queries: &Dataset,
    opts: &ScoreOptions,
) -> Result<ScoreBatch> {
    let mut bundles = Vec::with_capacity(queries.len());
    for (i, id) in queries.ids().iter().enumerate() {
        let s = SampleSaliency::compute(model, queries.row(i), id.clone()).map_err(|e| Error::Sample {
            id: id.clone(),
            source: Box::new(e),
        })?;
        bundles.push(score_one(&s, steepness, set)?);
    }
    let r_avg = match opts.mode {
        ScoreMode::Sisome => Some(match opts.r_avg_override {
            Some(v) => v,
            None => separability(set)?.r_avg,
        }),
        _ => None,
    };
    apply_mode(&mut bundles, opts.mode, r_avg, opts.standardize);
    Ok(ScoreBatch { bundles, r_avg })
}

/// Sets `fused` on every bundle: `r` for sisom, `E` for energy, and the
/// `r_avg`-weighted combination for sisome.
pub fn apply_mode(bundles: &mut [ScoreBundle], mode: ScoreMode, r_avg: Option<f64>, standardize: bool) {
    match mode {
        ScoreMode::Sisom => bundles.iter_mut().for_each(|b| b.fused = b.r),
        ScoreMode::Energy => bundles.iter_mut().for_each(|b| b.fused = b.energy),
        ScoreMode::Sisome => {
            let r_avg = r_avg.expect("sisome needs r_avg");
            let (e_shift, e_scale) = if standardize {
                mean_std(bundles.iter().map(|b| b.energy))
            } else {
                (0.0, 1.0)
            };
            let (r_shift, r_scale) = if standardize {
                mean_std(bundles.iter().map(|b| b.r))
            } else {
                (0.0, 1.0)
            };
            for b in bundles {
                let e = (b.energy - e_shift) / e_scale;
                let r = (b.r - r_shift) / r_scale;
                b.fused = fuse(r, e, r_avg);
            }
        }
    }
}

/// Everything needed to score queries against one model and labeled pool:
/// the comparison set (possibly reduced) and the `r_avg` used for fusion.
#[derive(Debug, Clone)]
pub struct PreparedScorer<'m> {
    model: &'m MlpModel,
    steepness: SteepnessConfig,
    reference: ComparisonSet,
    r_avg: Option<f64>,
    opts: ScoreOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerSetup {
    pub steepness: SteepnessConfig,
    pub options: ScoreOptions,
    pub class_key: ClassKey,
    pub subset: Option<SubsetPolicy>,
}

impl<'m> PreparedScorer<'m> {
    /// Builds the comparison set from `labeled`. `r_avg` always comes from the
    /// full set (or the override), so reduction only changes the reference
    /// points distances are measured against.
    pub fn new(model: &'m MlpModel, labeled: &Dataset, setup: &ScorerSetup) -> Result<Self> {
        setup.steepness.check_layers(model.capture_layers().len())?;
        let full = ComparisonSet::build_keyed(model, labeled, &setup.steepness, setup.class_key)?;
        let r_avg = match setup.options.r_avg_override {
            Some(v) => Some(v),
            None if setup.options.mode == ScoreMode::Sisome => Some(separability(&full)?.r_avg),
            None => separability(&full).ok().map(|rep| rep.r_avg),
        };
        let reference = match &setup.subset {
            Some(policy) => full.reduce(policy.radius, policy.fraction)?,
            None => full,
        };
        Ok(Self {
            model,
            steepness: setup.steepness.clone(),
            reference,
            r_avg,
            opts: setup.options,
        })
    }

    pub fn reference(&self) -> &ComparisonSet {
        &self.reference
    }

    /// `r_avg` of the full labeled set, when defined.
    pub fn r_avg(&self) -> Option<f64> {
        self.r_avg
    }

    pub fn score(&self, queries: &Dataset) -> Result<Vec<ScoreBundle>> {
        let opts = ScoreOptions {
            r_avg_override: self.r_avg,
            ..self.opts
        };
        Ok(score_batch(self.model, &self.steepness, &self.reference, queries, &opts)?.bundles)
    }
}

/// Mean and population standard deviation; a zero deviation is reported as 1.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}
