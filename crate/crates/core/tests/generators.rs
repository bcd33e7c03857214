mod common;

use sisom::config::ExperimentConfig;
use sisom::data::{generate, GeneratorSpec};

#[test]
fn blobs_are_reproducible() {
    let spec = GeneratorSpec::Blobs { n: 100, k: 2, dim: 3, sigma: 1.0, center_radius: 6.0, centers: None };
    assert_eq!(generate(&spec, 7, "b").unwrap().to_csv(), generate(&spec, 7, "b").unwrap().to_csv());
    assert_ne!(generate(&spec, 7, "b").unwrap().to_csv(), generate(&spec, 8, "b").unwrap().to_csv());
}

#[test]
fn moons_are_balanced() {
    let ds = generate(&GeneratorSpec::Moons { n: 100, noise: 0.1 }, 1, "m").unwrap();
    let ones = ds.labels().unwrap().iter().filter(|&&y| y == 1).count();
    assert_eq!(ones, 50);
}

/// The far-OOD set of the golden benchmark stays inside the `5ρ` hypercube
/// and well away from every class center.
#[test]
fn golden_far_set_geometry() {
    let cfg = ExperimentConfig::load(common::golden_config_path(), &[]).unwrap();
    let suite = cfg.load_data().unwrap();
    let rho = suite.train.radius();
    let far = &suite.ood.iter().find(|s| s.name == "uniform").unwrap().data;
    let d = far.dim() as f64;
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            let mut v = vec![0.0; 8];
            v[c] = 6.0;
            v
        })
        .collect();
    let mut min_center = f64::INFINITY;
    for i in 0..far.len() {
        let x = far.row(i);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 5.0 * rho * d.sqrt());
        for c in &centers {
            let refs = [c.as_slice()];
            min_center = min_center.min(common::brute_min_distance(x, &refs));
        }
    }
    assert!(min_center > 2.0 * rho, "min distance {min_center} vs 2ρ = {}", 2.0 * rho);
}
