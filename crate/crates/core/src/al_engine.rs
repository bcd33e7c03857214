//! Pool-based active learning: labeled/unlabeled pools, query strategies, and
//! the retrain-per-cycle loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::comparison_set::{ClassKey, ComparisonSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature_space::{SampleSaliency, SteepnessConfig};
use crate::ood_eval::Checkpoint;
use crate::rng::{SeedTree, LABEL_INIT, LABEL_POOL_INIT, LABEL_QUERY, LABEL_SHUFFLE};
use crate::scoring::{apply_mode, score_one, separability, ScoreBundle, ScoreMode};
use crate::tensor_nn::{squared_distance, MlpModel, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sisom,
    Sisome,
    Random,
    Energy,
    Coreset,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Sisom => "sisom",
            Strategy::Sisome => "sisome",
            Strategy::Random => "random",
            Strategy::Energy => "energy",
            Strategy::Coreset => "coreset",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hidden widths and captured hidden-layer indices; input and output widths
/// come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub capture: Option<Vec<usize>>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            capture: None,
        }
    }
}

impl ModelSpec {
    /// Capture set, defaulting to every hidden layer.
    pub fn capture_layers(&self) -> Vec<usize> {
        self.capture
            .clone()
            .unwrap_or_else(|| (0..self.hidden.len()).collect())
    }

    pub fn layer_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }

    pub fn init(&self, input: usize, classes: usize, seed: u64) -> Result<MlpModel> {
        MlpModel::new(&self.layer_dims(input, classes), &self.capture_layers(), seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlConfig {
    pub initial_size: usize,
    pub query_size: usize,
    pub cycles: usize,
    pub strategy: Strategy,
    pub model: ModelSpec,
    /// `seed` is ignored; per-cycle seeds derive from `AlConfig::seed`.
    pub train: TrainHyper,
    pub steepness: SteepnessConfig,
    pub class_key: ClassKey,
    pub r_avg_override: Option<f64>,
    pub seed: u64,
}

impl AlConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.query_size == 0 {
            return Err(Error::Config("query size must be ≥ 1".into()));
        }
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be ≥ 1".into()));
        }
        if self.initial_size < classes {
            return Err(Error::Config(format!(
                "initial pool of {} cannot cover {classes} classes",
                self.initial_size
            )));
        }
        self.steepness.check_layers(self.model.capture_layers().len())
    }

    fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    /// Train hyperparameters for a cycle, with the shuffle seed forked from
    /// the run seed.
    pub fn cycle_hyper(&self, cycle: usize) -> TrainHyper {
        TrainHyper {
            seed: self.seeds().child(LABEL_SHUFFLE).seed(&format!("cycle-{cycle}")),
            ..self.train
        }
    }

    pub fn cycle_init_seed(&self, cycle: usize) -> u64 {
        self.seeds().child(LABEL_INIT).seed(&format!("cycle-{cycle}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub labeled_size: usize,
    /// Ids moved from U to L in this cycle (empty for cycle 0).
    pub queried: Vec<String>,
    pub test_accuracy: f64,
    /// Separability of the labeled set under the model trained this cycle.
    pub r_avg: Option<f64>,
    /// Mean distance ratio of the queried samples and of the whole unlabeled
    /// pool, both under the model that made the query.
    pub query_r_mean: Option<f64>,
    pub pool_r_mean: Option<f64>,
    pub wall_clock_s: f64,
}

/// Labeled/unlabeled split of the training set, as sorted row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub cycle: usize,
    pub history: Vec<CycleRecord>,
}

impl PoolState {
    pub fn new(total: usize, mut labeled: Vec<usize>) -> Result<Self> {
        labeled.sort_unstable();
        labeled.dedup();
        if labeled.last().is_some_and(|&i| i >= total) {
            return Err(Error::Config("initial pool index out of range".into()));
        }
        let mut in_l = vec![false; total];
        for &i in &labeled {
            in_l[i] = true;
        }
        let unlabeled = (0..total).filter(|&i| !in_l[i]).collect();
        Ok(Self {
            labeled,
            unlabeled,
            cycle: 0,
            history: Vec::new(),
        })
    }

    /// Moves `picked` from U to L.
    pub fn annotate(&mut self, picked: &[usize]) -> Result<()> {
        let mut moving = picked.to_vec();
        moving.sort_unstable();
        for &i in &moving {
            if self.unlabeled.binary_search(&i).is_err() {
                return Err(Error::Config(format!("sample {i} is not in the unlabeled pool")));
            }
        }
        self.unlabeled.retain(|i| moving.binary_search(i).is_err());
        self.labeled.extend(moving);
        self.labeled.sort_unstable();
        Ok(())
    }

    /// Disjointness and conservation against a pool of `total` samples.
    pub fn check_invariants(&self, total: usize) -> bool {
        let mut seen = vec![0u8; total];
        for &i in self.labeled.iter().chain(&self.unlabeled) {
            if i >= total {
                return false;
            }
            seen[i] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }
}

/// The `q` ids with the largest values; ties go to the lowest id. The result
/// is ordered by descending value.
pub fn select_topk<Id: Ord + Clone>(scores: &[(Id, f64)], q: usize) -> Result<Vec<Id>> {
    if q > scores.len() {
        return Err(Error::Size {
            requested: q,
            available: scores.len(),
        });
    }
    let mut order: Vec<&(Id, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(order.into_iter().take(q).map(|(id, _)| id.clone()).collect())
}

/// Greedy k-center: repeatedly pick the unlabeled point farthest from
/// `labeled ∪ picked` (lowest id on ties).
pub fn coreset_select<Id: Ord + Clone>(
    labeled: &[&[f64]],
    unlabeled: &[(Id, &[f64])],
    q: usize,
) -> Result<Vec<Id>> {
    if q > unlabeled.len() {
        return Err(Error::Size {
            requested: q,
            available: unlabeled.len(),
        });
    }
    let mut order: Vec<usize> = (0..unlabeled.len()).collect();
    order.sort_by(|&a, &b| unlabeled[a].0.cmp(&unlabeled[b].0));
    let mut min_d: Vec<f64> = order
        .iter()
        .map(|&i| {
            labeled
                .iter()
                .map(|l| squared_distance(unlabeled[i].1, l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; order.len()];
    let mut picked = Vec::with_capacity(q);
    for _ in 0..q {
        let mut best: Option<usize> = None;
        for k in 0..order.len() {
            if taken[k] {
                continue;
            }
            match best {
                Some(b) if min_d[k] <= min_d[b] => {}
                _ => best = Some(k),
            }
        }
        let b = best.expect("q ≤ |unlabeled|");
        taken[b] = true;
        let center = unlabeled[order[b]].1;
        picked.push(unlabeled[order[b]].0.clone());
        for k in 0..order.len() {
            if !taken[k] {
                min_d[k] = min_d[k].min(squared_distance(unlabeled[order[k]].1, center));
            }
        }
    }
    Ok(picked)
}

/// Class-stratified random initial pool: classes take turns drawing from
/// their own shuffled members until `size` samples are chosen.
pub fn stratified_initial(labels: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > labels.len() {
        return Err(Error::Size {
            requested: size,
            available: labels.len(),
        });
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        members.reverse();
    }
    let mut chosen = Vec::with_capacity(size);
    while chosen.len() < size {
        for members in by_class.values_mut() {
            if chosen.len() == size {
                break;
            }
            if let Some(i) = members.pop() {
                chosen.push(i);
            }
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Trains a freshly initialised model on `labeled` for the given cycle.
pub fn train_cycle_model(labeled: &Dataset, classes: usize, cfg: &AlConfig, cycle: usize) -> Result<MlpModel> {
    let init = cfg.model.init(labeled.dim(), classes, cfg.cycle_init_seed(cycle))?;
    let (model, _) = init.train(labeled.features(), labeled.require_labels()?, &cfg.cycle_hyper(cycle))?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct AlRun {
    pub state: PoolState,
    /// Models trained after each query round, with the labeled pool they saw.
    pub checkpoints: Vec<Checkpoint>,
    pub initial_model: MlpModel,
}

/// Runs `cfg.cycles` query rounds starting from a class-stratified initial
/// pool. `on_cycle` receives each cycle record as soon as it is complete.
pub fn run_cycles(
    train: &Dataset,
    test: &Dataset,
    cfg: &AlConfig,
    on_cycle: impl FnMut(&CycleRecord),
) -> Result<AlRun> {
    let labels = train.require_labels()?;
    let seed = cfg.seeds().seed(LABEL_POOL_INIT);
    let initial = stratified_initial(labels, cfg.initial_size, seed)?;
    run_cycles_from(train, test, cfg, initial, on_cycle)
}

/// As [`run_cycles`] with an explicit initial labeled pool (training-row
/// indices).
pub fn run_cycles_from(
    train: &Dataset,
    test: &Dataset,
    cfg: &AlConfig,
    initial: Vec<usize>,
    mut on_cycle: impl FnMut(&CycleRecord),
) -> Result<AlRun> {
    let labels = train.require_labels()?;
    let test_labels = test.require_labels()?;
    let classes = train.num_classes().max(test.num_classes());
    cfg.validate(classes)?;
    let mut state = PoolState::new(train.len(), initial)?;
    let needed = cfg.query_size * cfg.cycles;
    if needed > state.unlabeled.len() {
        return Err(Error::Size {
            requested: needed,
            available: state.unlabeled.len(),
        });
    }

    let wrap = |cycle: usize| move |e: Error| Error::Cycle { cycle, source: Box::new(e) };

    let started = Instant::now();
    let labeled = train.subset(&state.labeled);
    let mut model = train_cycle_model(&labeled, classes, cfg, 0).map_err(wrap(0))?;
    let initial_model = model.clone();
    let record = CycleRecord {
        cycle: 0,
        labeled_size: state.labeled.len(),
        queried: Vec::new(),
        test_accuracy: model.accuracy(test.features(), test_labels).map_err(wrap(0))?,
        r_avg: labeled_r_avg(&model, &labeled, cfg).map_err(wrap(0))?,
        query_r_mean: None,
        pool_r_mean: None,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    on_cycle(&record);
    state.history.push(record);

    let mut checkpoints = Vec::with_capacity(cfg.cycles);
    for cycle in 1..=cfg.cycles {
        let started = Instant::now();
        let (picked, query_r_mean, pool_r_mean) =
            query(&model, train, &state, cfg, cycle).map_err(wrap(cycle))?;
        state.annotate(&picked).map_err(wrap(cycle))?;
        state.cycle = cycle;

        let labeled = train.subset(&state.labeled);
        model = train_cycle_model(&labeled, classes, cfg, cycle).map_err(wrap(cycle))?;
        let record = CycleRecord {
            cycle,
            labeled_size: state.labeled.len(),
            queried: picked.iter().map(|&i| train.ids()[i].clone()).collect(),
            test_accuracy: model.accuracy(test.features(), test_labels).map_err(wrap(cycle))?,
            r_avg: labeled_r_avg(&model, &labeled, cfg).map_err(wrap(cycle))?,
            query_r_mean,
            pool_r_mean,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        on_cycle(&record);
        state.history.push(record);
        checkpoints.push(Checkpoint {
            label: format!("cycle_{cycle}"),
            model: model.clone(),
            labeled,
        });
    }
    debug_assert!(state.check_invariants(labels.len()));
    Ok(AlRun {
        state,
        checkpoints,
        initial_model,
    })
}

fn labeled_r_avg(model: &MlpModel, labeled: &Dataset, cfg: &AlConfig) -> Result<Option<f64>> {
    let set = ComparisonSet::build_keyed(model, labeled, &cfg.steepness, cfg.class_key)?;
    Ok(separability(&set).ok().map(|r| r.r_avg))
}

/// Scores U with `model` and picks `q` rows. Returns the chosen training-row
/// indices and the mean `r` of the chosen rows and of all of U.
fn query(
    model: &MlpModel,
    train: &Dataset,
    state: &PoolState,
    cfg: &AlConfig,
    cycle: usize,
) -> Result<(Vec<usize>, Option<f64>, Option<f64>)> {
    let q = cfg.query_size;
    let labeled = train.subset(&state.labeled);
    let set = ComparisonSet::build_keyed(model, &labeled, &cfg.steepness, cfg.class_key)?;
    let saliency_of = |i: usize| SampleSaliency::compute(model, train.row(i), train.ids()[i].clone());
    let unlabeled_saliency = state
        .unlabeled
        .iter()
        .map(|&i| saliency_of(i))
        .collect::<Result<Vec<_>>>()?;
    let mut bundles: Vec<ScoreBundle> = unlabeled_saliency
        .iter()
        .map(|s| score_one(s, &cfg.steepness, &set))
        .collect::<Result<_>>()?;

    let picked = match cfg.strategy {
        Strategy::Sisom | Strategy::Sisome | Strategy::Energy => {
            let mode = match cfg.strategy {
                Strategy::Sisom => ScoreMode::Sisom,
                Strategy::Sisome => ScoreMode::Sisome,
                _ => ScoreMode::Energy,
            };
            let r_avg = match (mode, cfg.r_avg_override) {
                (ScoreMode::Sisome, Some(v)) => Some(v),
                (ScoreMode::Sisome, None) => Some(separability(&set)?.r_avg),
                _ => None,
            };
            apply_mode(&mut bundles, mode, r_avg, false);
            let scored: Vec<(usize, f64)> = state
                .unlabeled
                .iter()
                .zip(&bundles)
                .map(|(&i, b)| (i, b.query_score(mode)))
                .collect();
            select_topk(&scored, q)?
        }
        Strategy::Random => {
            let mut rng = cfg.seeds().child(LABEL_QUERY).rng(&format!("cycle-{cycle}"));
            let mut pool = state.unlabeled.clone();
            pool.shuffle(&mut rng);
            pool.truncate(q);
            pool
        }
        Strategy::Coreset => {
            let labeled_sal = state
                .labeled
                .iter()
                .map(|&i| saliency_of(i))
                .collect::<Result<Vec<_>>>()?;
            let l: Vec<&[f64]> = labeled_sal.iter().map(SampleSaliency::last_layer).collect();
            let u: Vec<(usize, &[f64])> = state
                .unlabeled
                .iter()
                .zip(&unlabeled_saliency)
                .map(|(&i, s)| (i, s.last_layer()))
                .collect();
            coreset_select(&l, &u, q)?
        }
    };

    let r_of: BTreeMap<usize, f64> = state
        .unlabeled
        .iter()
        .zip(&bundles)
        .map(|(&i, b)| (i, b.r))
        .collect();
    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let query_r_mean = mean(picked.iter().map(|i| r_of[i]).collect());
    let pool_r_mean = mean(r_of.values().copied().collect());
    Ok((picked, query_r_mean, pool_r_mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_examples() {
        let scores = [("a", 3.0), ("b", 1.0), ("c", 2.0)];
        let mut got = select_topk(&scores, 2).unwrap();
        got.sort();
        assert_eq!(got, vec!["a", "c"]);
        let flat = [(3, 1.0), (1, 1.0), (2, 1.0)];
        assert_eq!(select_topk(&flat, 2).unwrap(), vec![1, 2]);
        assert!(matches!(select_topk(&flat, 4), Err(Error::Size { .. })));
    }

    #[test]
    fn coreset_examples() {
        let l = [[0.0]];
        let lref: Vec<&[f64]> = l.iter().map(|p| p.as_slice()).collect();
        let u = [(0usize, [1.0]), (1, [10.0]), (2, [11.0])];
        let uref: Vec<(usize, &[f64])> = u.iter().map(|(i, p)| (*i, p.as_slice())).collect();
        assert_eq!(coreset_select(&lref, &uref, 1).unwrap(), vec![2]);
        let mut all = coreset_select(&lref, &uref, 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(coreset_select(&lref, &uref, 4).is_err());
    }

    #[test]
    fn coincident_point_is_picked_last() {
        let l = [[0.0, 0.0]];
        let lref: Vec<&[f64]> = l.iter().map(|p| p.as_slice()).collect();
        let u = [(0usize, [0.0, 0.0]), (1, [0.5, 0.0]), (2, [0.0, 0.2])];
        let uref: Vec<(usize, &[f64])> = u.iter().map(|(i, p)| (*i, p.as_slice())).collect();
        let picked = coreset_select(&lref, &uref, 3).unwrap();
        assert_eq!(picked[0], 1);
        assert_eq!(*picked.last().unwrap(), 0);
    }

    #[test]
    fn pool_state_moves() {
        let mut s = PoolState::new(6, vec![4, 1]).unwrap();
        assert_eq!(s.labeled, vec![1, 4]);
        assert_eq!(s.unlabeled, vec![0, 2, 3, 5]);
        s.annotate(&[5, 0]).unwrap();
        assert_eq!(s.labeled, vec![0, 1, 4, 5]);
        assert!(s.check_invariants(6));
        assert!(s.annotate(&[1]).is_err());
    }

    #[test]
    fn stratified_covers_classes() {
        let labels = [0, 0, 0, 0, 1, 1, 2, 2, 2];
        let init = stratified_initial(&labels, 3, 5).unwrap();
        let mut classes: Vec<usize> = init.iter().map(|&i| labels[i]).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1, 2]);
        assert_eq!(init, stratified_initial(&labels, 3, 5).unwrap());
        assert_eq!(stratified_initial(&labels, 9, 1).unwrap().len(), 9);
    }
}
