//! Sampler and null-model checks for the evaluation harness.

use mobisynth::evaluation::{holdout_accuracy, perturb, FeatureVector};
use mobisynth::geo::{GeoPoint, METERS_PER_DEGREE};
use mobisynth::kinematics::Fix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn teleport_noise_has_the_requested_spread() {
    let p = GeoPoint::new(10.0, 20.0).unwrap();
    let fixes: Vec<Fix> = (0..10_000).map(|k| Fix { t: k as f64, point: p, speed: 0.0, accel: 0.0 }).collect();
    let out = perturb(&fixes, 1.0, 1000.0, 8).unwrap();
    let north: Vec<f64> = out.iter().map(|f| (f.point.lat() - 10.0) * METERS_PER_DEGREE).collect();
    let east: Vec<f64> = out.iter().map(|f| (f.point.lon() - 20.0) * METERS_PER_DEGREE * 10f64.to_radians().cos()).collect();
    for axis in [north, east] {
        let m = axis.iter().sum::<f64>() / axis.len() as f64;
        let sd = (axis.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (axis.len() - 1) as f64).sqrt();
        assert!((900.0..=1100.0).contains(&sd), "{sd}");
    }
}

fn random_vector(rng: &mut ChaCha8Rng) -> FeatureVector {
    let n = Normal::new(0.0, 1.0).unwrap();
    FeatureVector {
        max_accel: 3.0 + n.sample(rng),
        min_accel: -3.0 + n.sample(rng),
        mean_accel: 0.01 * n.sample(rng),
        std_accel: 0.8 + 0.1 * n.sample(rng),
        mean_abs_accel: 0.6 + 0.1 * n.sample(rng),
        std_abs_accel: 0.75 + 0.1 * n.sample(rng),
        max_speed: 15.0 + 3.0 * n.sample(rng),
        idle_time_s: rng.random_range(0.0..100.0),
        distance_m: rng.random_range(1000.0..8000.0),
    }
}

#[test]
fn identical_distributions_are_not_separable() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<(FeatureVector, u8)> = (0..200).map(|i| (random_vector(&mut rng), (i % 2) as u8)).collect();
    for k in [1, 10] {
        let acc = holdout_accuracy(&data, k, 0.1, 1000, 3).unwrap();
        assert!((0.4..=0.6).contains(&acc), "k = {k}: {acc}");
    }
}

#[test]
fn separated_classes_are_recognized() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data: Vec<(FeatureVector, u8)> = (0..100)
        .map(|i| {
            let mut f = random_vector(&mut rng);
            if i % 2 == 1 {
                f.max_speed += 40.0;
            }
            (f, (i % 2) as u8)
        })
        .collect();
    assert!(holdout_accuracy(&data, 1, 0.1, 200, 4).unwrap() > 0.9);
}
