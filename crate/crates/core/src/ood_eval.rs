//! OOD benchmark harness: threshold decision, AUROC, FPR at 95% TPR, score
//! histograms, and evaluation over a list of model checkpoints.
//!
//! In-distribution samples are the positive class throughout: a scorer is
//! good when InD samples score higher than OOD samples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, OodSplit, OodTag};
use crate::error::{Error, Result};
use crate::scoring::{PreparedScorer, ScoreBundle, ScoreMode, ScorerSetup};
use crate::tensor_nn::{format_f64, MlpModel};

pub const HISTOGRAM_BINS: usize = 50;
pub const TARGET_TPR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    InD,
    Ood,
}

/// In-distribution iff `score ≥ lambda`.
pub fn decide(score: f64, lambda: f64) -> Verdict {
    if score >= lambda {
        Verdict::InD
    } else {
        Verdict::Ood
    }
}

fn check_scores(ind: &[f64], ood: &[f64]) -> Result<()> {
    if ind.is_empty() || ood.is_empty() {
        return Err(Error::MetricUndefined(format!(
            "need nonempty score lists, got {} InD and {} OOD",
            ind.len(),
            ood.len()
        )));
    }
    if ind.iter().chain(ood).any(|v| v.is_nan()) {
        return Err(Error::MetricUndefined("scores contain NaN".into()));
    }
    Ok(())
}

/// Mann–Whitney AUROC with InD as the positive class:
/// `[#(ind > ood) + ½·#(ind = ood)] / (|ind|·|ood|)`, via mid-ranks.
pub fn auroc(ind: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(ind, ood)?;
    let mut pooled: Vec<(f64, bool)> = ind
        .iter()
        .map(|&v| (v, true))
        .chain(ood.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Ranks are 1-based; a tie block spanning ranks lo..=hi gets (lo+hi)/2.
    let mut ind_rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let positives = pooled[i..=j].iter().filter(|p| p.1).count();
        ind_rank_sum += mid_rank * positives as f64;
        i = j + 1;
    }
    let n = ind.len() as f64;
    let m = ood.len() as f64;
    let u = ind_rank_sum - n * (n + 1.0) / 2.0;
    Ok(u / (n * m))
}

/// Smallest false-positive rate over thresholds `t` (taken from the score
/// values, predict InD iff `score ≥ t`) that keep the InD true-positive rate
/// at or above 95%.
pub fn fpr_at_95tpr(ind: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(ind, ood)?;
    let threshold = tpr_threshold(ind, TARGET_TPR)?;
    let false_pos = ood.iter().filter(|&&s| s >= threshold).count();
    Ok(false_pos as f64 / ood.len() as f64)
}

/// Largest threshold whose true-positive rate on `ind` is at least `tpr`.
pub fn tpr_threshold(ind: &[f64], tpr: f64) -> Result<f64> {
    if ind.is_empty() {
        return Err(Error::MetricUndefined("no InD scores".into()));
    }
    let mut sorted = ind.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let k = (1..=n)
        .find(|&k| k as f64 / n as f64 >= tpr)
        .unwrap_or(n);
    Ok(sorted[k - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub set: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

/// Fixed-width histograms over the pooled range of all given score lists.
pub fn histograms(sets: &[(&str, &[f64])], bins: usize) -> Vec<Histogram> {
    let all = sets.iter().flat_map(|(_, s)| s.iter().copied());
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let width = (hi - lo) / bins as f64;
    sets.iter()
        .map(|(name, scores)| {
            let mut counts = vec![0; bins];
            for &s in *scores {
                let b = if width > 0.0 {
                    (((s - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[b] += 1;
            }
            Histogram {
                set: (*name).to_string(),
                lo,
                hi,
                counts,
            }
        })
        .collect()
}

pub fn histograms_to_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("set,bin,bin_lo,bin_hi,count\n");
    for h in hists {
        let width = (h.hi - h.lo) / h.counts.len() as f64;
        for (b, c) in h.counts.iter().enumerate() {
            let lo = h.lo + width * b as f64;
            let _ = writeln!(
                out,
                "{},{b},{},{},{c}",
                h.set,
                format_f64(lo),
                format_f64(lo + width)
            );
        }
    }
    out
}

/// A model together with the labeled pool it was trained on, which doubles
/// as its comparison set.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub label: String,
    pub model: MlpModel,
    pub labeled: Dataset,
}

#[derive(Debug, Clone)]
pub struct OodBenchmark {
    pub ind_eval: Dataset,
    pub ood_sets: Vec<OodSplit>,
    pub scorer: ScorerSetup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scorer: String,
    pub checkpoint: String,
    pub set: String,
    pub tag: String,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub n_ind: usize,
    pub n_ood: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBlock {
    pub checkpoint: String,
    pub r_avg: Option<f64>,
    pub reference_size: usize,
    pub rows: Vec<MetricRow>,
    /// Mean over the OOD sets of each tag, per scorer.
    pub aggregates: Vec<MetricRow>,
    #[serde(skip)]
    pub histograms: Vec<Histogram>,
    /// Mean `r_ood` of the InD evaluation set and of each OOD set.
    pub mean_r_ood: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub scorer: String,
    pub ind_score: String,
    pub baseline: String,
    pub baseline_ind_score: String,
    pub blocks: Vec<CheckpointBlock>,
}

impl BenchmarkResults {
    pub fn rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.blocks.iter().flat_map(|b| b.rows.iter())
    }

    pub fn find(&self, checkpoint: &str, scorer: &str, set: &str) -> Option<&MetricRow> {
        self.blocks
            .iter()
            .filter(|b| b.checkpoint == checkpoint)
            .flat_map(|b| b.rows.iter().chain(&b.aggregates))
            .find(|r| r.scorer == scorer && r.set == set)
    }
}

fn metric_row(
    scorer: ScoreMode,
    checkpoint: &str,
    split: &OodSplit,
    ind: &[f64],
    ood: &[f64],
) -> MetricRow {
    let metrics = auroc(ind, ood).and_then(|a| Ok((a, fpr_at_95tpr(ind, ood)?)));
    let (auroc, fpr95, error) = match metrics {
        Ok((a, f)) => (Some(a), Some(f), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    MetricRow {
        scorer: scorer.to_string(),
        checkpoint: checkpoint.to_string(),
        set: split.name.clone(),
        tag: split.tag.to_string(),
        auroc,
        fpr95,
        n_ind: ind.len(),
        n_ood: ood.len(),
        error,
    }
}

fn error_row(scorer: ScoreMode, checkpoint: &str, split: &OodSplit, err: &Error) -> MetricRow {
    MetricRow {
        scorer: scorer.to_string(),
        checkpoint: checkpoint.to_string(),
        set: split.name.clone(),
        tag: split.tag.to_string(),
        auroc: None,
        fpr95: None,
        n_ind: 0,
        n_ood: split.data.len(),
        error: Some(err.to_string()),
    }
}

fn aggregate(rows: &[MetricRow], scorer: ScoreMode, checkpoint: &str) -> Vec<MetricRow> {
    [OodTag::Near, OodTag::Far]
        .iter()
        .filter_map(|tag| {
            let tag = tag.to_string();
            let group: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.scorer == scorer.as_str() && r.tag == tag)
                .collect();
            if group.is_empty() {
                return None;
            }
            let mean = |f: fn(&MetricRow) -> Option<f64>| {
                let vals: Option<Vec<f64>> = group.iter().map(|r| f(r)).collect();
                vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            };
            Some(MetricRow {
                scorer: scorer.to_string(),
                checkpoint: checkpoint.to_string(),
                set: format!("{tag}-mean"),
                tag,
                auroc: mean(|r| r.auroc),
                fpr95: mean(|r| r.fpr95),
                n_ind: group[0].n_ind,
                n_ood: group.iter().map(|r| r.n_ood).sum(),
                error: None,
            })
        })
        .collect()
}

/// Evaluates every checkpoint against every OOD set with the configured
/// scorer and the energy baseline. Failures are recorded in the affected rows
/// and do not stop the run.
pub fn run_benchmark(checkpoints: &[Checkpoint], bench: &OodBenchmark) -> BenchmarkResults {
    let mode = bench.scorer.options.mode;
    let blocks = checkpoints
        .iter()
        .map(|cp| evaluate_checkpoint(cp, bench, mode))
        .collect();
    BenchmarkResults {
        scorer: mode.to_string(),
        ind_score: mode.ind_score_rule().to_string(),
        baseline: ScoreMode::Energy.to_string(),
        baseline_ind_score: ScoreMode::Energy.ind_score_rule().to_string(),
        blocks,
    }
}

fn evaluate_checkpoint(cp: &Checkpoint, bench: &OodBenchmark, mode: ScoreMode) -> CheckpointBlock {
    let mut block = CheckpointBlock {
        checkpoint: cp.label.clone(),
        r_avg: None,
        reference_size: 0,
        rows: Vec::new(),
        aggregates: Vec::new(),
        histograms: Vec::new(),
        mean_r_ood: Vec::new(),
    };
    let modes = if mode == ScoreMode::Energy {
        vec![ScoreMode::Energy]
    } else {
        vec![mode, ScoreMode::Energy]
    };

    let overlap = cp
        .labeled
        .ids()
        .iter()
        .find(|id| bench.ind_eval.ids().contains(id));
    let prepared = match overlap {
        Some(id) => Err(Error::Config(format!(
            "InD evaluation sample {id:?} is part of the labeled pool"
        ))),
        None => PreparedScorer::new(&cp.model, &cp.labeled, &bench.scorer),
    };
    let scorer = match prepared {
        Ok(s) => s,
        Err(e) => {
            for &m in &modes {
                for split in &bench.ood_sets {
                    block.rows.push(error_row(m, &cp.label, split, &e));
                }
            }
            return block;
        }
    };
    block.r_avg = scorer.r_avg();
    block.reference_size = scorer.reference().len();

    let ind_bundles = match scorer.score(&bench.ind_eval) {
        Ok(b) => b,
        Err(e) => {
            for &m in &modes {
                for split in &bench.ood_sets {
                    block.rows.push(error_row(m, &cp.label, split, &e));
                }
            }
            return block;
        }
    };
    block
        .mean_r_ood
        .push(("ind".to_string(), mean_of(&ind_bundles, |b| b.r_ood)));

    let ind_scores = |m: ScoreMode| -> Vec<f64> { ind_bundles.iter().map(|b| b.ind_score(m)).collect() };
    let mut hist_input: Vec<(String, Vec<f64>)> = vec![("ind".into(), ind_scores(mode))];

    let mut per_set: Vec<Option<Vec<ScoreBundle>>> = Vec::new();
    for split in &bench.ood_sets {
        match scorer.score(&split.data) {
            Ok(b) => {
                block.mean_r_ood.push((split.name.clone(), mean_of(&b, |x| x.r_ood)));
                hist_input.push((split.name.clone(), b.iter().map(|x| x.ind_score(mode)).collect()));
                per_set.push(Some(b));
            }
            Err(e) => {
                for &m in &modes {
                    block.rows.push(error_row(m, &cp.label, split, &e));
                }
                per_set.push(None);
            }
        }
    }
    for &m in &modes {
        let ind = ind_scores(m);
        for (split, bundles) in bench.ood_sets.iter().zip(&per_set) {
            if let Some(bundles) = bundles {
                let ood: Vec<f64> = bundles.iter().map(|b| b.ind_score(m)).collect();
                block.rows.push(metric_row(m, &cp.label, split, &ind, &ood));
            }
        }
    }
    // canonical order: scorer, then set order
    block.rows.sort_by_key(|r| {
        let m = modes.iter().position(|m| m.as_str() == r.scorer).unwrap_or(usize::MAX);
        let s = bench.ood_sets.iter().position(|s| s.name == r.set).unwrap_or(usize::MAX);
        (m, s)
    });
    for &m in &modes {
        block.aggregates.extend(aggregate(&block.rows, m, &cp.label));
    }
    let refs: Vec<(&str, &[f64])> = hist_input
        .iter()
        .map(|(n, s)| (n.as_str(), s.as_slice()))
        .collect();
    block.histograms = histograms(&refs, HISTOGRAM_BINS);
    block
}

fn mean_of(bundles: &[ScoreBundle], f: impl Fn(&ScoreBundle) -> f64) -> f64 {
    if bundles.is_empty() {
        return f64::NAN;
    }
    bundles.iter().map(f).sum::<f64>() / bundles.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_boundary_is_inclusive() {
        assert_eq!(decide(0.5, 0.5), Verdict::InD);
        assert_eq!(decide(0.5 - 1e-12, 0.5), Verdict::Ood);
        assert_eq!(decide(0.4, 0.3), Verdict::InD);
        assert_eq!(decide(0.4, 0.5), Verdict::Ood);
    }

    #[test]
    fn auroc_hand_cases() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.3, 0.7]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8], &[0.85, 0.3]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1], &[0.5]).unwrap(), 0.0);
        assert!(matches!(auroc(&[], &[0.5]), Err(Error::MetricUndefined(_))));
        assert!(auroc(&[f64::NAN], &[0.5]).is_err());
    }

    #[test]
    fn fpr_cases() {
        assert_eq!(fpr_at_95tpr(&[0.9, 0.8, 0.95], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(fpr_at_95tpr(&[0.7], &[0.1, 0.6]).unwrap(), 0.0);
        let same: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(fpr_at_95tpr(&same, &same).unwrap(), 0.95);
        assert!(fpr_at_95tpr(&[1.0], &[]).is_err());
    }

    #[test]
    fn histogram_bins_cover_range() {
        let a = [0.0, 0.5, 1.0];
        let b = [2.0];
        let h = histograms(&[("a", &a), ("b", &b)], 4);
        assert_eq!(h[0].counts, vec![1, 1, 1, 0]);
        assert_eq!(h[1].counts, vec![0, 0, 0, 1]);
        assert_eq!(h[0].lo, 0.0);
        assert_eq!(h[0].hi, 2.0);
        let csv = histograms_to_csv(&h);
        assert_eq!(csv.lines().count(), 9);
    }
}
