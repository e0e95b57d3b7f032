use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segtraj::som::{self, Schedule, Topology};
use segtraj::ward;

fn cloud(seed: u64, n: usize, dim: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-3.0..3.0))
}

fn euclid(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Ranks units by distance to `x`; ties keep the lower index first.
fn ranked(codes: &Array2<f64>, x: ndarray::ArrayView1<f64>) -> Vec<usize> {
    let mut units: Vec<usize> = (0..codes.nrows()).collect();
    units.sort_by(|&a, &b| euclid(codes.row(a), x).total_cmp(&euclid(codes.row(b), x)).then(a.cmp(&b)));
    units
}

#[test]
fn quality_measures_match_recomputation() {
    let data = cloud(8, 300, 3);
    let topo = Topology::grid(5, 4);
    let model = som::som_init(topo, data.view(), 2)
        .unwrap()
        .with_schedule(Schedule::default_for(&topo, 1500));
    let model = som::som_train(&model, data.view()).unwrap();
    let mut qe = 0.0;
    let mut errors = 0;
    for row in data.rows() {
        let r = ranked(&model.codes, row);
        qe += euclid(model.codes.row(r[0]), row);
        errors += usize::from(topo.distance(r[0], r[1]) > 1);
    }
    let n = data.nrows() as f64;
    assert!((som::quantization_error(&model, data.view()).unwrap() - qe / n).abs() < 1e-12);
    assert!((som::topographic_error(&model, data.view()).unwrap() - errors as f64 / n).abs() < 1e-12);
    let labels = som::assign(&model, data.view()).unwrap();
    for (row, &u) in data.rows().into_iter().zip(&labels) {
        assert_eq!(u, ranked(&model.codes, row)[0]);
    }
}

#[test]
fn training_is_reproducible() {
    let data = cloud(3, 200, 4);
    let topo = Topology::string(6);
    let model = som::som_init(topo, data.view(), 99)
        .unwrap()
        .with_schedule(Schedule::default_for(&topo, 1000));
    let a = som::som_train(&model, data.view()).unwrap();
    let b = som::som_train(&model, data.view()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trained_iterations, 1000);
    let other = som::som_init(topo, data.view(), 100).unwrap();
    assert_ne!(other.codes, model.codes);
}

#[test]
fn lattice_distances() {
    let g = Topology::grid(8, 8);
    assert_eq!(g.distance(0, 63), 7);
    assert_eq!(g.distance(0, 9), 1);
    assert_eq!(g.distance(9, 0), 1);
    let s = Topology::string(10);
    assert_eq!(s.distance(2, 7), 5);
    assert_eq!(s.diameter(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ward_heights_never_decrease(seed in any::<u64>(), n in 2usize..25) {
        let points = cloud(seed, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let live = weights.iter().filter(|&&w| w > 0.0).count();
        match ward::ward_cluster(points.view(), &weights) {
            Ok(d) => {
                prop_assert_eq!(d.merges.len(), live - 1);
                for w in d.merges.windows(2) {
                    prop_assert!(w[1].height >= w[0].height - 1e-9 * w[0].height.abs().max(1.0));
                }
                let total: f64 = weights.iter().sum();
                prop_assert!((d.merges.last().unwrap().weight - total).abs() < 1e-9);
            }
            Err(_) => prop_assert!(live < 2),
        }
    }

    #[test]
    fn cuts_are_nested(seed in any::<u64>(), n in 3usize..20) {
        let points = cloud(seed, n, 2);
        let weights = vec![1.0; n];
        let d = ward::ward_cluster(points.view(), &weights).unwrap();
        for k in 1..n {
            let coarse = ward::cut(&d, k).unwrap();
            let fine = ward::cut(&d, k + 1).unwrap();
            // Every fine segment lies inside one coarse segment.
            for s in 1..=k + 1 {
                let parents: std::collections::BTreeSet<_> =
                    fine.units_of(s).iter().map(|&u| coarse.unit_to_segment[u]).collect();
                prop_assert_eq!(parents.len(), 1);
            }
            prop_assert!(coarse.segment_weights.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn bmu_matches_scan(seed in any::<u64>()) {
        let data = cloud(seed, 40, 3);
        let model = som::som_init(Topology::grid(3, 3), data.view(), seed).unwrap();
        for row in cloud(seed ^ 7, 20, 3).rows() {
            prop_assert_eq!(som::bmu(&model, row).unwrap(), ranked(&model.codes, row)[0]);
        }
    }
}
