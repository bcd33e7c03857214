//! Datasets, synthetic generators and the CSV sample format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor_nn::{format_f64, Matrix};

/// Samples as rows, with stable ids and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    features: Matrix,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, features: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::Shape {
                expected: features.rows(),
                actual: ids.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(Error::Shape {
                    expected: ids.len(),
                    actual: l.len(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("duplicate sample id {id:?}")));
            }
        }
        if !features.is_finite() {
            return Err(Error::Config("dataset contains non-finite features".into()));
        }
        Ok(Self {
            ids,
            features,
            labels,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Config("dataset has no labels".into()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// One more than the largest label, or 0 when unlabeled/empty.
    pub fn num_classes(&self) -> usize {
        self.labels()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: Matrix::from_vec(indices.len(), self.dim(), data)
                .expect("row lengths match"),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Largest Euclidean norm of any sample.
    pub fn radius(&self) -> f64 {
        (0..self.len())
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,label");
        for k in 0..self.dim() {
            let _ = write!(out, ",f{k}");
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.ids[i]);
            out.push(',');
            if let Some(l) = &self.labels {
                let _ = write!(out, "{}", l[i]);
            }
            for &v in self.row(i) {
                out.push(',');
                out.push_str(&format_f64(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    /// Header `id[,label],f0,…`; rows are numbered from 1 at the header.
    pub fn parse_csv(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"id") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `id`".into(),
            });
        }
        let has_label_col = cols.get(1) == Some(&"label");
        let first_feature = if has_label_col { 2 } else { 1 };
        let dim = cols.len() - first_feature;
        for (k, c) in cols[first_feature..].iter().enumerate() {
            if *c != format!("f{k}") {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected column f{k}, got {c:?}"),
                });
            }
        }

        let mut ids = Vec::new();
        let mut seen = HashSet::new();
        let mut data = Vec::new();
        let mut labels: Vec<Option<usize>> = Vec::new();
        for (i, line) in lines {
            let row = i + 1;
            let bad = |message: String| Error::Parse { line: row, message };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(bad(format!(
                    "expected {} fields, got {}",
                    cols.len(),
                    fields.len()
                )));
            }
            let id = fields[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(bad(format!("duplicate id {id:?}")));
            }
            ids.push(id);
            if has_label_col {
                labels.push(if fields[1].is_empty() {
                    None
                } else {
                    Some(
                        fields[1]
                            .parse()
                            .map_err(|_| bad(format!("bad label {:?}", fields[1])))?,
                    )
                });
            }
            for f in &fields[first_feature..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| bad(format!("non-numeric feature {f:?}")))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite feature {f:?}")));
                }
                data.push(v);
            }
        }

        let labels = if labels.iter().all(Option::is_none) {
            None
        } else if labels.iter().all(Option::is_some) {
            Some(labels.into_iter().map(Option::unwrap).collect())
        } else {
            return Err(Error::Parse {
                line: 1,
                message: "label column is only partly filled".into(),
            });
        };
        let rows = ids.len();
        Dataset::new(ids, Matrix::from_vec(rows, dim, data)?, labels)
    }
}

/// Role of an OOD split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodTag {
    Near,
    Far,
}

impl std::fmt::Display for OodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OodTag::Near => "near",
            OodTag::Far => "far",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodSplit {
    pub name: String,
    pub tag: OodTag,
    pub data: Dataset,
}

/// Train/test data plus named OOD sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSuite {
    pub train: Dataset,
    pub test: Dataset,
    pub ood: Vec<OodSplit>,
}

/// Synthetic generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// `k` isotropic Gaussians. Without explicit centers, class `c` sits at
    /// `center_radius · e_c` (requires `k ≤ dim`). Classes are assigned
    /// round-robin, so sizes differ by at most one.
    Blobs {
        n: usize,
        k: usize,
        dim: usize,
        sigma: f64,
        #[serde(default = "default_center_radius")]
        center_radius: f64,
        #[serde(default)]
        centers: Option<Vec<Vec<f64>>>,
    },
    /// Two interleaving half circles with Gaussian noise; balanced labels.
    Moons {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// `k` concentric circles of radius 1..=k, label = ring index.
    Rings {
        n: usize,
        k: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Unlabeled Gaussians centred on the midpoints of every pair of blob
    /// centres, cycling through the pairs.
    ShiftedBlobs {
        n: usize,
        k: usize,
        dim: usize,
        sigma: f64,
        #[serde(default = "default_center_radius")]
        center_radius: f64,
        #[serde(default)]
        centers: Option<Vec<Vec<f64>>>,
    },
    /// Unlabeled uniform samples in `[−R, R]^dim` with
    /// `R = radius_factor · data_radius`. A missing `data_radius` is filled in
    /// from the training split when generated as part of a suite.
    UniformFar {
        n: usize,
        dim: usize,
        radius_factor: f64,
        #[serde(default)]
        data_radius: Option<f64>,
    },
}

fn default_center_radius() -> f64 {
    6.0
}

fn default_noise() -> f64 {
    0.1
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn blob_centers(k: usize, dim: usize, center_radius: f64, centers: &Option<Vec<Vec<f64>>>) -> Result<Vec<Vec<f64>>> {
    match centers {
        Some(c) => {
            if c.len() != k || c.iter().any(|v| v.len() != dim) {
                return Err(config_err(format!("blobs need {k} centers of dimension {dim}")));
            }
            Ok(c.clone())
        }
        None => {
            if k > dim {
                return Err(config_err(format!(
                    "default blob centers need k ≤ dim (k={k}, dim={dim}); pass explicit centers"
                )));
            }
            Ok((0..k)
                .map(|c| {
                    let mut v = vec![0.0; dim];
                    v[c] = center_radius;
                    v
                })
                .collect())
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be ≥ 0, got {v}")))
            }
        };
        let count = |name: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be ≥ {min}, got {v}")))
            }
        };
        match self {
            GeneratorSpec::Blobs { n, k, dim, sigma, center_radius, centers }
            | GeneratorSpec::ShiftedBlobs { n, k, dim, sigma, center_radius, centers } => {
                count("n", *n, 1)?;
                count("k", *k, 2)?;
                count("dim", *dim, 2)?;
                non_negative("sigma", *sigma)?;
                positive("center_radius", *center_radius)?;
                blob_centers(*k, *dim, *center_radius, centers)?;
            }
            GeneratorSpec::Moons { n, noise } => {
                count("n", *n, 2)?;
                non_negative("noise", *noise)?;
            }
            GeneratorSpec::Rings { n, k, noise } => {
                count("n", *n, 1)?;
                count("k", *k, 2)?;
                non_negative("noise", *noise)?;
            }
            GeneratorSpec::UniformFar { n, dim, radius_factor, data_radius } => {
                count("n", *n, 1)?;
                count("dim", *dim, 2)?;
                positive("radius_factor", *radius_factor)?;
                if let Some(r) = data_radius {
                    positive("data_radius", *r)?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Blobs { dim, .. }
            | GeneratorSpec::ShiftedBlobs { dim, .. }
            | GeneratorSpec::UniformFar { dim, .. } => *dim,
            GeneratorSpec::Moons { .. } | GeneratorSpec::Rings { .. } => 2,
        }
    }
}

/// Deterministic synthetic data. Sample ids are `{prefix}-{index}`.
pub fn generate(spec: &GeneratorSpec, seed: u64, prefix: &str) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Option<Vec<usize>> = Some(Vec::new());
    match spec {
        GeneratorSpec::Blobs { n, k, dim, sigma, center_radius, centers } => {
            let centers = blob_centers(*k, *dim, *center_radius, centers)?;
            let lbl = labels.as_mut().unwrap();
            for i in 0..*n {
                let c = i % k;
                rows.push(gaussian_around(&centers[c], *sigma, &mut rng));
                lbl.push(c);
            }
        }
        GeneratorSpec::ShiftedBlobs { n, k, dim, sigma, center_radius, centers } => {
            let centers = blob_centers(*k, *dim, *center_radius, centers)?;
            let mut mids = Vec::new();
            for a in 0..*k {
                for b in a + 1..*k {
                    mids.push(
                        centers[a]
                            .iter()
                            .zip(&centers[b])
                            .map(|(x, y)| 0.5 * (x + y))
                            .collect::<Vec<f64>>(),
                    );
                }
            }
            for i in 0..*n {
                rows.push(gaussian_around(&mids[i % mids.len()], *sigma, &mut rng));
            }
            labels = None;
        }
        GeneratorSpec::Moons { n, noise } => {
            let noise_dist = Normal::new(0.0, *noise).map_err(|e| config_err(e.to_string()))?;
            let n_outer = n / 2;
            let n_inner = n - n_outer;
            let lbl = labels.as_mut().unwrap();
            let step = |count: usize, i: usize| {
                if count > 1 {
                    std::f64::consts::PI * i as f64 / (count - 1) as f64
                } else {
                    0.0
                }
            };
            for i in 0..n_outer {
                let t = step(n_outer, i);
                rows.push(vec![
                    t.cos() + noise_dist.sample(&mut rng),
                    t.sin() + noise_dist.sample(&mut rng),
                ]);
                lbl.push(0);
            }
            for i in 0..n_inner {
                let t = step(n_inner, i);
                rows.push(vec![
                    1.0 - t.cos() + noise_dist.sample(&mut rng),
                    0.5 - t.sin() + noise_dist.sample(&mut rng),
                ]);
                lbl.push(1);
            }
        }
        GeneratorSpec::Rings { n, k, noise } => {
            let noise_dist = Normal::new(0.0, *noise).map_err(|e| config_err(e.to_string()))?;
            let lbl = labels.as_mut().unwrap();
            for i in 0..*n {
                let ring = i % k;
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (ring + 1) as f64 + noise_dist.sample(&mut rng);
                rows.push(vec![r * theta.cos(), r * theta.sin()]);
                lbl.push(ring);
            }
        }
        GeneratorSpec::UniformFar { n, dim, radius_factor, data_radius } => {
            let rho = data_radius.ok_or_else(|| {
                config_err("uniform-far needs data_radius (or a training split to derive it from)")
            })?;
            let half = radius_factor * rho;
            let dist = Uniform::new_inclusive(-half, half);
            for _ in 0..*n {
                rows.push((0..*dim).map(|_| dist.sample(&mut rng)).collect());
            }
            labels = None;
        }
    }
    let ids = (0..rows.len()).map(|i| format!("{prefix}-{i}")).collect();
    Dataset::new(ids, Matrix::from_rows(&rows)?, labels)
}

fn gaussian_around(center: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return center.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    center.iter().map(|&c| c + normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, k: usize) -> GeneratorSpec {
        GeneratorSpec::Blobs {
            n,
            k,
            dim: 4,
            sigma: 0.5,
            center_radius: 6.0,
            centers: None,
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = generate(&blobs(100, 2), 7, "train").unwrap();
        let b = generate(&blobs(100, 2), 7, "train").unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_ne!(a, generate(&blobs(100, 2), 8, "train").unwrap());
    }

    #[test]
    fn moons_are_balanced() {
        let d = generate(&GeneratorSpec::Moons { n: 100, noise: 0.1 }, 1, "m").unwrap();
        let ones = d.labels().unwrap().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 50);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn shifted_blobs_sit_between_centers() {
        let spec = GeneratorSpec::ShiftedBlobs {
            n: 6,
            k: 3,
            dim: 3,
            sigma: 0.0,
            center_radius: 2.0,
            centers: None,
        };
        let d = generate(&spec, 0, "near").unwrap();
        assert!(d.labels().is_none());
        assert_eq!(d.row(0), &[1.0, 1.0, 0.0]);
        assert_eq!(d.row(1), &[1.0, 0.0, 1.0]);
        assert_eq!(d.row(2), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_far_respects_bound() {
        let spec = GeneratorSpec::UniformFar {
            n: 50,
            dim: 3,
            radius_factor: 5.0,
            data_radius: Some(2.0),
        };
        let d = generate(&spec, 3, "far").unwrap();
        assert!(d.features().as_slice().iter().all(|v| v.abs() <= 10.0));
    }

    #[test]
    fn invalid_params_are_config_errors() {
        assert!(generate(&blobs(10, 1), 0, "x").is_err());
        assert!(generate(&blobs(0, 2), 0, "x").is_err());
        assert!(generate(&blobs(10, 5), 0, "x").is_err());
        let far = GeneratorSpec::UniformFar { n: 3, dim: 2, radius_factor: 5.0, data_radius: None };
        assert!(matches!(generate(&far, 0, "x"), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let d = generate(&blobs(20, 2), 2, "t").unwrap();
        assert_eq!(Dataset::parse_csv(&d.to_csv()).unwrap(), d);
    }

    #[test]
    fn csv_duplicate_id() {
        let text = "id,label,f0,f1\na,0,1,2\nb,1,1,2\na,0,3,4\n";
        match Dataset::parse_csv(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("\"a\""));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_empty_labels_mean_unlabeled() {
        let d = Dataset::parse_csv("id,label,f0,f1\na,,1,2\nb,,3,4\n").unwrap();
        assert!(d.labels().is_none());
        let d = Dataset::parse_csv("id,f0,f1\na,1,2\n").unwrap();
        assert!(d.labels().is_none());
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            Dataset::parse_csv("id,label,f0,f1\na,0,1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Dataset::parse_csv("id,label,f0\na,0,x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
