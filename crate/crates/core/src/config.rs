//! Experiment configuration: a single JSON document describing data, model,
//! steepness, reference-set policy, scorer, AL schedule and OOD benchmark.
//!
//! Unknown keys are rejected and every module precondition that can be checked
//! without touching data is checked by [`ExperimentConfig::validate`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::al_engine::{AlConfig, ModelSpec, Strategy};
use crate::comparison_set::{ClassKey, Radius, SubsetPolicy};
use crate::data::{generate, DataSuite, Dataset, GeneratorSpec, OodSplit, OodTag};
use crate::error::{Error, Result};
use crate::feature_space::SteepnessConfig;
use crate::rng::{SeedTree, LABEL_DATA_GEN};
use crate::scoring::{ScoreMode, ScoreOptions, ScorerSetup};
use crate::steepness_opt::SteepnessSearchSpace;
use crate::tensor_nn::TrainHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub steepness: SteepnessSection,
    /// Reference-set reduction; absent means score against every labeled sample.
    #[serde(default)]
    pub subset: Option<SubsetPolicy>,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub al: AlSchedule,
    #[serde(default)]
    pub ood: OodConfig,
    /// Directory relative data paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: DataSource,
    pub test: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generate(GeneratorSpec),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSetConfig {
    pub name: String,
    pub tag: OodTag,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    #[serde(default)]
    pub sets: Vec<OodSetConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub capture: Option<Vec<usize>>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_hidden() -> Vec<usize> {
    ModelSpec::default().hidden
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            capture: None,
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            hidden: self.hidden.clone(),
            capture: self.capture.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_lr() -> f64 {
    TrainHyper::default().lr
}
fn default_epochs() -> usize {
    TrainHyper::default().epochs
}
fn default_batch() -> usize {
    TrainHyper::default().batch_size
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Fixed α per captured layer (all ones when absent) and an optional grid
/// for `optimize-steepness`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteepnessSection {
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub search: Option<SteepnessSearchSpace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    #[serde(default)]
    pub mode: ScoreMode,
    #[serde(default)]
    pub r_avg_override: Option<f64>,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub class_key: ClassKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlSchedule {
    #[serde(default = "default_al_size")]
    pub initial_size: usize,
    #[serde(default = "default_al_size")]
    pub query_size: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
}

fn default_al_size() -> usize {
    20
}
fn default_cycles() -> usize {
    5
}
fn default_strategy() -> Strategy {
    Strategy::Sisom
}

impl Default for AlSchedule {
    fn default() -> Self {
        Self {
            initial_size: default_al_size(),
            query_size: default_al_size(),
            cycles: default_cycles(),
            strategy: default_strategy(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Sets `path` (dot separated) in a JSON document. The value is parsed as
/// JSON when possible and taken as a plain string otherwise. Missing
/// intermediate objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override {assignment:?} is not key=value")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(cfg_err(format!("override key {path:?} is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let last = i + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| cfg_err(format!("override {path:?}: {key:?} is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| cfg_err(format!("override {path:?}: index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(cfg_err(format!("override {path:?}: {key:?} is not inside an object"))),
        };
    }
    unreachable!("path has at least one key")
}

impl ExperimentConfig {
    pub fn from_value(doc: Value) -> Result<Self> {
        serde_json::from_value(doc).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    /// Reads, applies overrides, and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON (sorted keys, defaults filled in).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn snapshot(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    pub fn steepness(&self) -> SteepnessConfig {
        let layers = self.model.spec().capture_layers().len();
        match &self.steepness.alpha {
            Some(a) => SteepnessConfig::new(a.clone()).expect("validated"),
            None => SteepnessConfig::unit(layers),
        }
    }

    pub fn scorer_setup(&self) -> ScorerSetup {
        ScorerSetup {
            steepness: self.steepness(),
            options: ScoreOptions {
                mode: self.scorer.mode,
                r_avg_override: self.scorer.r_avg_override,
                standardize: self.scorer.standardize,
            },
            class_key: self.scorer.class_key,
            subset: self.subset,
        }
    }

    pub fn al_config(&self) -> AlConfig {
        AlConfig {
            initial_size: self.al.initial_size,
            query_size: self.al.query_size,
            cycles: self.al.cycles,
            strategy: self.al.strategy,
            model: self.model.spec(),
            train: self.model.train.hyper(0),
            steepness: self.steepness(),
            class_key: self.scorer.class_key,
            r_avg_override: self.scorer.r_avg_override,
            seed: self.seed,
        }
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<()> {
        let spec = self.model.spec();
        if spec.hidden.is_empty() || spec.hidden.contains(&0) {
            return Err(cfg_err("model.hidden must list at least one positive width"));
        }
        let capture = spec.capture_layers();
        if capture.is_empty()
            || capture.windows(2).any(|w| w[1] <= w[0])
            || capture.iter().any(|&c| c >= spec.hidden.len())
        {
            return Err(cfg_err(format!(
                "model.capture must be a nonempty, strictly increasing subset of 0..{}",
                spec.hidden.len()
            )));
        }
        let t = &self.model.train;
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(cfg_err(format!("model.train.lr must be > 0, got {}", t.lr)));
        }
        if t.batch_size == 0 {
            return Err(cfg_err("model.train.batch_size must be ≥ 1"));
        }

        if let Some(alpha) = &self.steepness.alpha {
            SteepnessConfig::new(alpha.clone())?.check_layers(capture.len())?;
        }
        if let Some(space) = &self.steepness.search {
            space.validate()?;
            if space.candidates.len() != capture.len() {
                return Err(cfg_err(format!(
                    "steepness.search has {} layers but the model captures {}",
                    space.candidates.len(),
                    capture.len()
                )));
            }
            if space.combinations().is_empty() {
                return Err(Error::ConstraintInfeasible);
            }
        }

        if let Some(policy) = &self.subset {
            if !(policy.fraction > 0.0 && policy.fraction <= 1.0) {
                return Err(cfg_err(format!("subset.fraction must be in (0, 1], got {}", policy.fraction)));
            }
            if let Radius::Fixed(r) = policy.radius {
                if !(r.is_finite() && r > 0.0) {
                    return Err(cfg_err(format!("subset.radius must be > 0, got {r}")));
                }
            }
        }

        if let Some(r) = self.scorer.r_avg_override {
            if !(r.is_finite() && r >= 0.0) {
                return Err(cfg_err(format!("scorer.r_avg_override must be ≥ 0, got {r}")));
            }
        }

        if self.al.query_size == 0 || self.al.cycles == 0 || self.al.initial_size == 0 {
            return Err(cfg_err("al.initial_size, al.query_size and al.cycles must be ≥ 1"));
        }

        let mut names = BTreeSet::new();
        for set in &self.ood.sets {
            let ok = !set.name.is_empty()
                && set.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !ok {
                return Err(cfg_err(format!(
                    "OOD set name {:?} must be nonempty [A-Za-z0-9_-]",
                    set.name
                )));
            }
            if set.name == "ind" || !names.insert(set.name.as_str()) {
                return Err(cfg_err(format!("OOD set name {:?} is reserved or duplicated", set.name)));
            }
        }

        let mut generated = vec![&self.dataset.train, &self.dataset.test];
        generated.extend(self.ood.sets.iter().map(|s| &s.source));
        let mut dims = BTreeSet::new();
        for src in generated {
            if let DataSource::Generate(g) = src {
                g.validate()?;
                dims.insert(g.dim());
            }
        }
        if dims.len() > 1 {
            return Err(cfg_err(format!("generated splits disagree on dimension: {dims:?}")));
        }
        for (name, src) in [("train", &self.dataset.train), ("test", &self.dataset.test)] {
            if let DataSource::Generate(g) = src {
                if !generator_is_labeled(g) {
                    return Err(cfg_err(format!("dataset.{name} must be a labeled generator")));
                }
            }
        }
        Ok(())
    }

    /// AL-specific feasibility: the initial pool must cover every class and
    /// the pool must hold enough samples for every query round. Checked
    /// against the generator spec when `suite` is absent.
    pub fn validate_al(&self, suite: Option<&DataSuite>) -> Result<()> {
        let (n, classes) = match (suite, &self.dataset.train) {
            (Some(s), _) => (s.train.len(), s.train.num_classes()),
            (None, DataSource::Generate(g)) => generator_size(g),
            (None, DataSource::Path(_)) => return Ok(()),
        };
        if self.al.initial_size < classes {
            return Err(cfg_err(format!(
                "al.initial_size {} cannot cover {classes} classes",
                self.al.initial_size
            )));
        }
        let needed = self.al.initial_size + self.al.query_size * self.al.cycles;
        if needed > n {
            return Err(cfg_err(format!(
                "AL schedule needs {needed} training samples but train has {n}"
            )));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn load_source(&self, src: &DataSource, label: &str, data_radius: Option<f64>) -> Result<Dataset> {
        match src {
            DataSource::Path(p) => Dataset::load_csv(self.resolve(p)),
            DataSource::Generate(g) => {
                let mut g = g.clone();
                if let GeneratorSpec::UniformFar { data_radius: r @ None, .. } = &mut g {
                    *r = data_radius;
                    if r.is_none() {
                        return Err(cfg_err(format!("{label}: uniform-far needs a data radius")));
                    }
                }
                let seed = self.seeds().child(LABEL_DATA_GEN).seed(label);
                generate(&g, seed, label)
            }
        }
    }

    /// Generates or loads every split, then checks the data-dependent
    /// preconditions.
    pub fn load_data(&self) -> Result<DataSuite> {
        let train = self.load_source(&self.dataset.train, "train", None)?;
        let radius = Some(train.radius()).filter(|r| *r > 0.0);
        let test = self.load_source(&self.dataset.test, "test", radius)?;
        let ood = self
            .ood
            .sets
            .iter()
            .map(|s| {
                Ok(OodSplit {
                    name: s.name.clone(),
                    tag: s.tag,
                    data: self.load_source(&s.source, &format!("ood-{}", s.name), radius)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let suite = DataSuite { train, test, ood };
        self.validate_data(&suite)?;
        Ok(suite)
    }

    pub fn validate_data(&self, suite: &DataSuite) -> Result<()> {
        let d = suite.train.dim();
        let labels = suite
            .train
            .labels()
            .ok_or_else(|| cfg_err("training split must be labeled"))?;
        if suite.test.labels().is_none() {
            return Err(cfg_err("test split must be labeled"));
        }
        let classes = suite.train.num_classes();
        if classes < 2 {
            return Err(cfg_err("training split needs at least two classes"));
        }
        if suite.test.num_classes() > classes {
            return Err(cfg_err("test split has labels outside the training classes"));
        }
        for (name, ds) in std::iter::once(("test", &suite.test))
            .chain(suite.ood.iter().map(|s| (s.name.as_str(), &s.data)))
        {
            if ds.dim() != d {
                return Err(cfg_err(format!("{name} has dimension {} but train has {d}", ds.dim())));
            }
        }
        let mut seen = BTreeSet::new();
        for c in labels {
            seen.insert(*c);
        }
        if seen.len() != classes {
            return Err(cfg_err("every class in 0..C must occur in the training split"));
        }
        Ok(())
    }
}

fn generator_is_labeled(g: &GeneratorSpec) -> bool {
    matches!(
        g,
        GeneratorSpec::Blobs { .. } | GeneratorSpec::Moons { .. } | GeneratorSpec::Rings { .. }
    )
}

fn generator_size(g: &GeneratorSpec) -> (usize, usize) {
    match g {
        GeneratorSpec::Blobs { n, k, .. } | GeneratorSpec::Rings { n, k, .. } => (*n, *k),
        GeneratorSpec::Moons { n, .. } => (*n, 2),
        GeneratorSpec::ShiftedBlobs { n, .. } | GeneratorSpec::UniformFar { n, .. } => (*n, 0),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "dataset": {
            "train": {"generate": {"kind": "blobs", "n": 60, "k": 3, "dim": 4, "sigma": 0.5}},
            "test": {"generate": {"kind": "blobs", "n": 30, "k": 3, "dim": 4, "sigma": 0.5}}
        },
        "ood": {"sets": [
            {"name": "far", "tag": "far", "source": {"generate": {"kind": "uniform-far", "n": 10, "dim": 4, "radius_factor": 3}}}
        ]}
    }"#;

    #[test]
    fn defaults_and_hash() {
        let cfg = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.validate_al(None).is_err());
        assert_eq!(cfg.model.hidden, vec![64, 32]);
        assert_eq!(cfg.al.cycles, 5);
        assert_eq!(cfg.steepness().alpha(), &[1.0, 1.0]);
        let again = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.hash(), again.hash());
        let other = ExperimentConfig::parse(MINIMAL, &["seed=4".into()]).unwrap();
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replacen("\"seed\": 3", "\"seed\": 3, \"sed\": 1", 1);
        assert!(matches!(ExperimentConfig::parse(&bad, &[]), Err(Error::Schema(_))));
        let bad = ExperimentConfig::parse(MINIMAL, &["model.width=3".into()]);
        assert!(matches!(bad, Err(Error::Schema(_))));
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::parse(
            MINIMAL,
            &[
                "model.hidden=[8]".into(),
                "scorer.mode=sisome".into(),
                "subset.radius=auto-median-nn".into(),
                "ood.sets.0.source.generate.n=5".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.hidden, vec![8]);
        assert_eq!(cfg.scorer.mode, ScoreMode::Sisome);
        assert_eq!(cfg.subset.unwrap().radius, Radius::AutoMedianNn);
        assert_eq!(cfg.subset.unwrap().fraction, 0.10);
        match &cfg.ood.sets[0].source {
            DataSource::Generate(GeneratorSpec::UniformFar { n, .. }) => assert_eq!(*n, 5),
            other => panic!("{other:?}"),
        }
        let mut doc = serde_json::json!({"a": 1});
        assert!(apply_override(&mut doc, "a.b=2").is_err());
        assert!(apply_override(&mut doc, "novalue").is_err());
    }

    #[test]
    fn fail_fast_validation() {
        let check = |o: &str| ExperimentConfig::parse(MINIMAL, &[o.to_string()]).unwrap().validate();
        assert!(check("steepness.alpha=[1.0]").is_err());
        assert!(check("steepness.alpha=[1.0,-2.0]").is_err());
        assert!(check("model.capture=[1,0]").is_err());
        assert!(check("model.train.lr=0").is_err());
        assert!(check("subset.fraction=0").is_err());
        assert!(check("al.cycles=0").is_err());
        let al = |o: &str| ExperimentConfig::parse(MINIMAL, &[o.to_string()]).unwrap().validate_al(None);
        assert!(al("al.initial_size=2").is_err());
        assert!(al("al.query_size=20").is_err());
        assert!(al("al.query_size=8").is_ok());
        assert!(check("dataset.test.generate.dim=5").is_err());
        assert!(matches!(
            check(r#"steepness.search={"candidates":[[10],[1]],"monotone":true}"#),
            Err(Error::ConstraintInfeasible)
        ));
        assert!(check(r#"steepness.search={"candidates":[[1,10],[1,10]]}"#).is_ok());
    }

    #[test]
    fn data_loading_is_seeded() {
        let cfg = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        let a = cfg.load_data().unwrap();
        let b = cfg.load_data().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ood[0].data.len(), 10);
        assert!(a.ood[0].data.labels().is_none());
        let bound = 3.0 * a.train.radius();
        for i in 0..a.ood[0].data.len() {
            assert!(a.ood[0].data.row(i).iter().all(|v| v.abs() <= bound));
        }
    }
}
