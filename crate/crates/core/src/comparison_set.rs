//! Labeled store of enhanced features, partitioned by class, plus the
//! fixed-radius greedy coverage reduction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature_space::{EnhancedFeature, SampleSaliency, SteepnessConfig};
use crate::tensor_nn::{euclidean, format_f64, MlpModel};

/// Which class a stored entry is filed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassKey {
    #[default]
    TrueLabel,
    PseudoClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEntry {
    pub feature: EnhancedFeature,
    pub true_class: usize,
}

impl StoredEntry {
    pub fn class(&self, key: ClassKey) -> usize {
        match key {
            ClassKey::TrueLabel => self.true_class,
            ClassKey::PseudoClass => self.feature.pseudo_class,
        }
    }
}

/// Coverage radius for the reduction. Serialised as a number or as the string
/// `"auto-median-nn"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Fixed(f64),
    /// Median nearest-neighbour distance within each class.
    AutoMedianNn,
}

const AUTO_MEDIAN_NN: &str = "auto-median-nn";

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RadiusRepr {
    Fixed(f64),
    Named(String),
}

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Radius::Fixed(r) => RadiusRepr::Fixed(*r),
            Radius::AutoMedianNn => RadiusRepr::Named(AUTO_MEDIAN_NN.into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RadiusRepr::deserialize(d)? {
            RadiusRepr::Fixed(r) => Ok(Radius::Fixed(r)),
            RadiusRepr::Named(n) if n == AUTO_MEDIAN_NN => Ok(Radius::AutoMedianNn),
            RadiusRepr::Named(n) => Err(serde::de::Error::custom(format!(
                "radius must be a number or \"{AUTO_MEDIAN_NN}\", got {n:?}"
            ))),
        }
    }
}

/// Fraction and radius for [`ComparisonSet::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetPolicy {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_radius")]
    pub radius: Radius,
}

fn default_radius() -> Radius {
    Radius::AutoMedianNn
}

fn default_fraction() -> f64 {
    0.10
}

impl Default for SubsetPolicy {
    fn default() -> Self {
        Self {
            fraction: default_fraction(),
            radius: Radius::AutoMedianNn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSet {
    entries: Vec<StoredEntry>,
    per_class: BTreeMap<usize, Vec<usize>>,
    class_key: ClassKey,
    reduced: bool,
    radius: Option<Radius>,
    fraction: Option<f64>,
}

impl ComparisonSet {
    /// Forward, saliency and enhancement for every labeled sample.
    pub fn build(model: &MlpModel, pool: &Dataset, steepness: &SteepnessConfig) -> Result<Self> {
        Self::build_keyed(model, pool, steepness, ClassKey::default())
    }

    pub fn build_keyed(
        model: &MlpModel,
        pool: &Dataset,
        steepness: &SteepnessConfig,
        key: ClassKey,
    ) -> Result<Self> {
        let labels = pool.require_labels()?;
        let saliency = pool
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| SampleSaliency::compute(model, pool.features().row(i), id.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_saliency(&saliency, labels, model.num_classes(), steepness, key)
    }

    /// Build from precomputed saliencies; `labels[i]` is the true class of
    /// `saliency[i]`.
    pub fn from_saliency(
        saliency: &[SampleSaliency],
        labels: &[usize],
        num_classes: usize,
        steepness: &SteepnessConfig,
        key: ClassKey,
    ) -> Result<Self> {
        if saliency.is_empty() {
            return Err(Error::EmptyPool("labeled pool is empty".into()));
        }
        if saliency.len() != labels.len() {
            return Err(Error::Shape {
                expected: saliency.len(),
                actual: labels.len(),
            });
        }
        let mut counts = vec![0usize; num_classes];
        for &y in labels {
            if y >= num_classes {
                return Err(Error::Config(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            counts[y] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "class {missing} has no labeled samples"
            )));
        }
        let entries = saliency
            .iter()
            .zip(labels)
            .map(|(s, &y)| {
                Ok(StoredEntry {
                    feature: s.enhance(steepness)?,
                    true_class: y,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_entries(entries, key))
    }

    pub fn from_entries(entries: Vec<StoredEntry>, key: ClassKey) -> Self {
        let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            per_class.entry(e.class(key)).or_default().push(i);
        }
        Self {
            entries,
            per_class,
            class_key: key,
            reduced: false,
            radius: None,
            fraction: None,
        }
    }

    pub fn entries(&self) -> &[StoredEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_key(&self) -> ClassKey {
        self.class_key
    }

    pub fn class_of(&self, entry: usize) -> usize {
        self.entries[entry].class(self.class_key)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        self.per_class.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn per_class(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.per_class
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn radius(&self) -> Option<Radius> {
        self.radius
    }

    pub fn fraction(&self) -> Option<f64> {
        self.fraction
    }

    /// Per-class representative subset by greedy fixed-radius max coverage.
    ///
    /// Entries keep their original relative order in the result.
    pub fn reduce(&self, radius: Radius, fraction: f64) -> Result<ComparisonSet> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subset fraction must be in (0, 1], got {fraction}"
            )));
        }
        if let Radius::Fixed(r) = radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!(
                    "coverage radius must be > 0, got {r}"
                )));
            }
        }
        let mut keep = Vec::new();
        for members in self.per_class.values() {
            let points: Vec<&[f64]> = members
                .iter()
                .map(|&i| self.entries[i].feature.values.as_slice())
                .collect();
            let r = match radius {
                Radius::Fixed(r) => r,
                Radius::AutoMedianNn => median_nn_distance(&points),
            };
            let budget = class_budget(fraction, members.len());
            let trace = greedy_max_coverage(&points, r, budget);
            keep.extend(trace.selected.iter().map(|&local| members[local]));
        }
        keep.sort_unstable();
        let entries = keep.iter().map(|&i| self.entries[i].clone()).collect();
        let mut out = Self::from_entries(entries, self.class_key);
        out.reduced = true;
        out.radius = Some(radius);
        out.fraction = Some(fraction);
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let dim = self.entries.first().map_or(0, |e| e.feature.values.len());
        let mut out = String::from("source_id,true_class,pseudo_class");
        for k in 0..dim {
            let _ = write!(out, ",z{k}");
        }
        out.push('\n');
        for e in &self.entries {
            let _ = write!(
                out,
                "{},{},{}",
                e.feature.source_id, e.true_class, e.feature.pseudo_class
            );
            for &v in &e.feature.values {
                let _ = write!(out, ",{}", format_f64(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, key: ClassKey) -> Result<ComparisonSet> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[..3] != ["source_id", "true_class", "pseudo_class"] {
            return Err(Error::Parse {
                line: 1,
                message: "expected header source_id,true_class,pseudo_class,z0,...".into(),
            });
        }
        let dim = cols.len() - 3;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(bad(format!("expected {} fields, got {}", dim + 3, fields.len())));
            }
            let parse_class = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad class {s:?}")));
            let values = fields[3..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad value {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            entries.push(StoredEntry {
                true_class: parse_class(fields[1])?,
                feature: EnhancedFeature {
                    source_id: fields[0].to_string(),
                    pseudo_class: parse_class(fields[2])?,
                    values,
                },
            });
        }
        Ok(Self::from_entries(entries, key))
    }
}

/// `max(1, ⌈fraction · n⌉)`, with the product rounded to 9 decimals first so
/// that e.g. `0.1 · 30` gives 3 rather than 4.
pub fn class_budget(fraction: f64, class_size: usize) -> usize {
    let raw = fraction * class_size as f64;
    let rounded = (raw * 1e9).round() / 1e9;
    (rounded.ceil() as usize).clamp(1, class_size.max(1))
}

/// Record of one greedy coverage run over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    /// Chosen point indices in selection order.
    pub selected: Vec<usize>,
    /// Marginal coverage gained by each coverage step.
    pub gains: Vec<usize>,
    /// Number of leading `selected` entries chosen by coverage; the rest come
    /// from the farthest-point fill.
    pub coverage_steps: usize,
}

/// Greedy fixed-radius max coverage: each step picks the point whose radius
/// ball (`≤ radius`) holds the most still-uncovered points, lowest index on
/// ties. Stops at `budget` or when everything is covered; leftover budget is
/// spent on farthest-point traversal from the chosen set.
pub fn greedy_max_coverage(points: &[&[f64]], radius: f64, budget: usize) -> GreedyTrace {
    let n = points.len();
    let budget = budget.min(n);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(points[i], points[j]) <= radius)
                .collect()
        })
        .collect();
    let mut gain: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let mut covered = vec![false; n];
    let mut chosen = vec![false; n];
    let mut n_covered = 0;
    let mut trace = GreedyTrace {
        selected: Vec::with_capacity(budget),
        gains: Vec::new(),
        coverage_steps: 0,
    };

    while trace.selected.len() < budget && n_covered < n {
        let mut best = None;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            match best {
                Some(b) if gain[i] <= gain[b] => {}
                _ => best = Some(i),
            }
        }
        let Some(b) = best else { break };
        chosen[b] = true;
        trace.selected.push(b);
        trace.gains.push(gain[b]);
        for &p in &neighbors[b] {
            if !covered[p] {
                covered[p] = true;
                n_covered += 1;
                // distance is symmetric, so p's neighbours are exactly the
                // candidates whose ball contains p
                for &q in &neighbors[p] {
                    gain[q] -= 1;
                }
            }
        }
    }
    trace.coverage_steps = trace.selected.len();

    if trace.selected.len() < budget {
        let mut min_dist = vec![f64::INFINITY; n];
        for &s in &trace.selected {
            for i in 0..n {
                min_dist[i] = min_dist[i].min(euclidean(points[i], points[s]));
            }
        }
        while trace.selected.len() < budget {
            let mut best: Option<usize> = None;
            for i in 0..n {
                if chosen[i] {
                    continue;
                }
                match best {
                    Some(b) if min_dist[i] <= min_dist[b] => {}
                    _ => best = Some(i),
                }
            }
            let Some(b) = best else { break };
            chosen[b] = true;
            trace.selected.push(b);
            for i in 0..n {
                min_dist[i] = min_dist[i].min(euclidean(points[i], points[b]));
            }
        }
    }
    trace
}

/// Median over points of the distance to their nearest other point (lower
/// median for even counts). Zero for fewer than two points.
pub fn median_nn_distance(points: &[&[f64]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut nn: Vec<f64> = (0..points.len())
        .map(|i| {
            (0..points.len())
                .filter(|&j| j != i)
                .map(|j| euclidean(points[i], points[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    nn[(nn.len() - 1) / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_nn::Matrix;

    fn entry(values: Vec<f64>, class: usize, id: &str) -> StoredEntry {
        StoredEntry {
            feature: EnhancedFeature {
                values,
                pseudo_class: class,
                source_id: id.into(),
            },
            true_class: class,
        }
    }

    fn pool(n: usize, classes: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 0.1, (i % 3) as f64]).collect();
        Dataset::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            Matrix::from_rows(&rows).unwrap(),
            Some((0..n).map(|i| i % classes).collect()),
        )
        .unwrap()
    }

    #[test]
    fn build_partitions_entries() {
        let model = MlpModel::new(&[2, 6, 4, 2], &[0, 1], 3).unwrap();
        let set = ComparisonSet::build(&model, &pool(10, 2), &SteepnessConfig::unit(2)).unwrap();
        assert_eq!(set.len(), 10);
        let total: usize = set.per_class().values().map(Vec::len).sum();
        assert_eq!(total, 10);
        let again = ComparisonSet::build(&model, &pool(10, 2), &SteepnessConfig::unit(2)).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn zero_model_entries_collapse() {
        let model = MlpModel::zeros(&[2, 6, 4, 3], &[0, 1]).unwrap();
        let set = ComparisonSet::build(&model, &pool(9, 3), &SteepnessConfig::unit(2)).unwrap();
        for e in set.entries() {
            assert!(e.feature.values.iter().all(|&v| v == 0.5));
            assert_eq!(e.feature.pseudo_class, 0);
        }
    }

    #[test]
    fn missing_class_is_config_error() {
        let model = MlpModel::new(&[2, 4, 3], &[0], 0).unwrap();
        let err = ComparisonSet::build(&model, &pool(6, 2), &SteepnessConfig::unit(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn line_example_picks_center_then_outlier() {
        let pts = [[0.0], [0.1], [0.2], [5.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let t = greedy_max_coverage(&refs, 0.15, 2);
        assert_eq!(t.selected, vec![1, 3]);
        assert_eq!(t.gains, vec![3, 1]);
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let entries = (0..7)
            .map(|i| entry(vec![i as f64, 0.0], i % 2, &format!("e{i}")))
            .collect();
        let set = ComparisonSet::from_entries(entries, ClassKey::TrueLabel);
        let red = set.reduce(Radius::Fixed(100.0), 1.0).unwrap();
        assert_eq!(red.entries(), set.entries());
        assert!(red.is_reduced());
    }

    #[test]
    fn budget_one_takes_max_coverage_entry() {
        let entries = vec![
            entry(vec![0.0], 0, "a"),
            entry(vec![1.0], 0, "b"),
            entry(vec![1.5], 0, "c"),
            entry(vec![10.0], 1, "d"),
            entry(vec![10.2], 1, "e"),
        ];
        let set = ComparisonSet::from_entries(entries, ClassKey::TrueLabel);
        let red = set.reduce(Radius::Fixed(1.0), 0.01).unwrap();
        let ids: Vec<&str> = red.entries().iter().map(|e| e.feature.source_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "d"]);
    }

    #[test]
    fn fill_after_full_coverage_uses_farthest_point() {
        let pts = [[0.0], [0.1], [3.0], [0.05]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let t = greedy_max_coverage(&refs, 10.0, 3);
        assert_eq!(t.coverage_steps, 1);
        assert_eq!(t.selected, vec![0, 2, 1]);
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(class_budget(0.1, 30), 3);
        assert_eq!(class_budget(0.1, 31), 4);
        assert_eq!(class_budget(0.1, 5), 1);
        assert_eq!(class_budget(0.1, 1), 1);
        assert_eq!(class_budget(1.0, 17), 17);
    }

    #[test]
    fn reduce_rejects_bad_params() {
        let set = ComparisonSet::from_entries(vec![entry(vec![0.0], 0, "a")], ClassKey::TrueLabel);
        assert!(set.reduce(Radius::Fixed(0.0), 0.5).is_err());
        assert!(set.reduce(Radius::Fixed(1.0), 0.0).is_err());
        assert!(set.reduce(Radius::Fixed(1.0), 1.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let entries = vec![entry(vec![0.25, 0.1], 0, "a"), entry(vec![0.75, 0.3], 1, "b")];
        let set = ComparisonSet::from_entries(entries, ClassKey::TrueLabel);
        let back = ComparisonSet::parse_csv(&set.to_csv(), ClassKey::TrueLabel).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn median_nn() {
        let pts = [[0.0], [1.0], [3.0], [7.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        // nn distances: 1, 1, 2, 4 → lower median 1
        assert_eq!(median_nn_distance(&refs), 1.0);
    }
}
