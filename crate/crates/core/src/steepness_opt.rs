//! Exhaustive grid search for the per-layer sigmoid steepness that minimises
//! the separability proxy `r_avg`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::comparison_set::{ClassKey, ComparisonSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature_space::{SampleSaliency, SteepnessConfig};
use crate::scoring::separability;
use crate::tensor_nn::{format_f64, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteepnessSearchSpace {
    /// Candidate α values, one list per capture layer.
    pub candidates: Vec<Vec<f64>>,
    /// Only keep combinations where α does not decrease with depth.
    #[serde(default)]
    pub monotone: bool,
}

impl SteepnessSearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("search space has no layers".into()));
        }
        for (j, layer) in self.candidates.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::Config(format!("layer {j} has no candidate α")));
            }
            if let Some(bad) = layer.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
                return Err(Error::Config(format!("layer {j}: α must be > 0, got {bad}")));
            }
        }
        Ok(())
    }

    /// Cartesian product in canonical order (first layer varies slowest),
    /// filtered by the monotone constraint when enabled.
    pub fn combinations(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for layer in &self.candidates {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    layer.iter().map(move |&a| {
                        let mut next = prefix.clone();
                        next.push(a);
                        next
                    })
                })
                .collect();
        }
        if self.monotone {
            out.retain(|combo| combo.windows(2).all(|w| w[1] >= w[0]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteepnessCandidate {
    pub alpha: Vec<f64>,
    pub r_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteepnessSearch {
    pub alpha_opt: SteepnessConfig,
    pub best_r_avg: f64,
    pub table: Vec<SteepnessCandidate>,
}

impl SteepnessSearch {
    /// `alpha_1,…,alpha_n,r_avg`
    pub fn to_csv(&self) -> String {
        let layers = self.alpha_opt.len();
        let mut out: String = (1..=layers).map(|j| format!("alpha_{j},")).collect();
        out.push_str("r_avg\n");
        for row in &self.table {
            for a in &row.alpha {
                let _ = write!(out, "{},", format_f64(*a));
            }
            let _ = writeln!(out, "{}", format_f64(row.r_avg));
        }
        out
    }
}

/// Evaluates `r_avg` for every admissible α combination and returns the
/// minimiser. Saliency gradients do not depend on α, so they are computed once
/// per sample and only the sigmoid is re-applied per candidate.
pub fn optimize(
    model: &MlpModel,
    labeled: &Dataset,
    space: &SteepnessSearchSpace,
    key: ClassKey,
) -> Result<SteepnessSearch> {
    space.validate()?;
    let layers = model.capture_layers().len();
    if space.candidates.len() != layers {
        return Err(Error::Config(format!(
            "search space has {} layers but the model captures {layers}",
            space.candidates.len()
        )));
    }
    let combos = space.combinations();
    if combos.is_empty() {
        return Err(Error::ConstraintInfeasible);
    }
    let labels = labeled.require_labels()?;
    let saliency = labeled
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| SampleSaliency::compute(model, labeled.row(i), id.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut table = Vec::with_capacity(combos.len());
    for alpha in combos {
        let steep = SteepnessConfig::new(alpha.clone())?;
        let set = ComparisonSet::from_saliency(&saliency, labels, model.num_classes(), &steep, key)?;
        let r_avg = separability(&set)?.r_avg;
        table.push(SteepnessCandidate { alpha, r_avg });
    }

    let best = table
        .iter()
        .min_by(|a, b| {
            a.r_avg
                .total_cmp(&b.r_avg)
                .then_with(|| lexicographic(&a.alpha, &b.alpha))
        })
        .expect("table is nonempty");
    Ok(SteepnessSearch {
        alpha_opt: SteepnessConfig::new(best.alpha.clone())?,
        best_r_avg: best.r_avg,
        table,
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_order_and_filter() {
        let space = SteepnessSearchSpace {
            candidates: vec![vec![1.0, 10.0], vec![1.0, 10.0]],
            monotone: false,
        };
        assert_eq!(
            space.combinations(),
            vec![vec![1.0, 1.0], vec![1.0, 10.0], vec![10.0, 1.0], vec![10.0, 10.0]]
        );
        let mono = SteepnessSearchSpace {
            candidates: vec![vec![10.0], vec![1.0, 100.0]],
            monotone: true,
        };
        assert_eq!(mono.combinations(), vec![vec![10.0, 100.0]]);
    }

    #[test]
    fn infeasible_constraint() {
        let model = MlpModel::new(&[2, 4, 3, 2], &[0, 1], 0).unwrap();
        let data = Dataset::new(
            vec!["a".into(), "b".into()],
            crate::tensor_nn::Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            Some(vec![0, 1]),
        )
        .unwrap();
        let space = SteepnessSearchSpace {
            candidates: vec![vec![10.0], vec![1.0]],
            monotone: true,
        };
        assert!(matches!(
            optimize(&model, &data, &space, ClassKey::TrueLabel),
            Err(Error::ConstraintInfeasible)
        ));
    }

    #[test]
    fn validation() {
        let empty = SteepnessSearchSpace { candidates: vec![vec![]], monotone: false };
        assert!(empty.validate().is_err());
        let neg = SteepnessSearchSpace { candidates: vec![vec![-1.0]], monotone: false };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn tie_break_is_lexicographic() {
        assert_eq!(lexicographic(&[1.0, 5.0], &[1.0, 10.0]), std::cmp::Ordering::Less);
    }
}
