//! Initial guesses for the step solver.
//!
//! `|a|` statistics do not depend on the order or signs of the entries, so the
//! guess first draws a pool of magnitudes with the wanted mean and std, then
//! arranges signed copies of them into a plausible speed trace: a fast ramp
//! out of `v0`, a noisy cruise around a level tuned so `mean(v)` hits the
//! target, and a fast ramp back down. Forward and backward passes meet in the
//! middle; sign flips there cancel most of the residual `Σa`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Speeds below target by more than this trigger the largest free magnitude.
const RAMP_GAP_MPS: f64 = 1.0;
const CRUISE_NOISE_MPS: f64 = 2.0;
const CRUISE_CORRELATION_S: f64 = 15.0;

/// `n` magnitudes in `[0, cap]` whose population mean and std are `m` and `s`
/// (up to clipping).
pub(crate) fn magnitude_pool(rng: &mut ChaCha8Rng, n: usize, m: f64, s: f64, cap: f64) -> Vec<f64> {
    let shape = (m / s).powi(2);
    let gamma = Gamma::new(shape, s * s / m).expect("positive gamma parameters");
    let mut x: Vec<f64> = (0..n).map(|_| gamma.sample(rng).min(cap)).collect();
    for _ in 0..200 {
        let (mean, sd) = mean_std(&x);
        if sd <= 0.0 {
            break;
        }
        if (mean - m).abs() < 1e-13 && (sd - s).abs() < 1e-13 {
            break;
        }
        x.iter_mut().for_each(|v| *v = (m + (*v - mean) * s / sd).clamp(0.0, cap));
    }
    x
}

pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Signed accelerations drawn from `values` (sorted descending) that make the
/// speed, starting at `v0`, follow `target`.
fn tracking_pass(values: &[f64], order: &[usize], target: &[f64], v0: f64) -> Vec<f64> {
    let mut free = vec![true; values.len()];
    let (mut next_large, mut next_random) = (0, 0);
    let mut v = v0;
    let mut out = Vec::with_capacity(values.len());
    for &goal in target.iter().take(values.len()) {
        let gap = goal - v;
        let idx = if gap > RAMP_GAP_MPS {
            while !free[next_large] {
                next_large += 1;
            }
            next_large
        } else {
            while !free[order[next_random]] {
                next_random += 1;
            }
            order[next_random]
        };
        free[idx] = false;
        let x = values[idx];
        let a = if gap > 0.0 || v - x < 0.0 { x } else { -x };
        v += a;
        out.push(a);
    }
    out
}

pub(crate) fn mean_speed(v0: f64, a: &[f64]) -> f64 {
    let n = a.len() as f64;
    v0 + a.iter().enumerate().map(|(i, x)| x * (n - i as f64) / n).sum::<f64>()
}

/// Flips signs near the middle to pull `Σa` toward zero without letting any
/// speed go negative.
fn cancel_residual(a: &mut [f64], v0: f64) {
    let n = a.len();
    let (lo, hi) = (n / 4, (3 * n).div_ceil(4));
    for _ in 0..6 {
        let e: f64 = a.iter().sum();
        if e.abs() < 1e-12 {
            return;
        }
        let mut best: Option<(usize, f64)> = None;
        for k in lo..hi {
            if a[k] * e <= 0.0 {
                continue;
            }
            let after = (e - 2.0 * a[k]).abs();
            if after >= e.abs() || best.is_some_and(|(_, b)| after >= b) {
                continue;
            }
            if e > 0.0 {
                // speeds from k on drop by 2a_k
                let mut v = v0 + a[..k].iter().sum::<f64>();
                let floor_ok = a[k..n - 1].iter().enumerate().all(|(off, x)| {
                    v += if off == 0 { -x } else { *x };
                    v >= 0.0
                });
                if !floor_ok {
                    continue;
                }
            }
            best = Some((k, after));
        }
        match best {
            Some((k, _)) => a[k] = -a[k],
            None => return,
        }
    }
}

pub(crate) struct GuessSpec {
    pub n: usize,
    pub v0: f64,
    pub v_target: f64,
    pub mean_abs: f64,
    pub std_abs: f64,
    pub accel_cap: f64,
}

pub(crate) fn initial_guess(rng: &mut ChaCha8Rng, spec: &GuessSpec) -> Vec<f64> {
    let n = spec.n;
    let mut pool = magnitude_pool(rng, n, spec.mean_abs, spec.std_abs, spec.accel_cap);
    pool.sort_by(|a, b| b.total_cmp(a));
    let fwd: Vec<f64> = pool.iter().copied().step_by(2).collect();
    let bwd: Vec<f64> = pool.iter().copied().skip(1).step_by(2).collect();
    let mut fwd_order: Vec<usize> = (0..fwd.len()).collect();
    let mut bwd_order: Vec<usize> = (0..bwd.len()).collect();
    fwd_order.shuffle(rng);
    bwd_order.shuffle(rng);

    // stationary OU noise for the cruise level
    let phi = (-1.0 / CRUISE_CORRELATION_S).exp();
    let kick = (1.0 - phi * phi).sqrt();
    let mut noise = Vec::with_capacity(n + 1);
    let mut z: f64 = rng.sample(StandardNormal);
    noise.push(CRUISE_NOISE_MPS * z);
    for _ in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        z = phi * z + kick * w;
        noise.push(CRUISE_NOISE_MPS * z);
    }

    let build = |level: f64| -> Vec<f64> {
        let c = spec.v_target + level;
        let ft: Vec<f64> = (0..fwd.len()).map(|j| (c + noise[j + 1]).max(0.0)).collect();
        let bt: Vec<f64> = (0..bwd.len()).map(|j| (c + noise[n - 1 - j]).max(0.0)).collect();
        let mut a = tracking_pass(&fwd, &fwd_order, &ft, spec.v0);
        let back = tracking_pass(&bwd, &bwd_order, &bt, spec.v0);
        a.extend(back.iter().rev().map(|x| -x));
        cancel_residual(&mut a, spec.v0);
        a
    };

    let (mut lo, mut hi) = (-spec.v_target - 5.0, 2.0 * spec.v_target + 10.0);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..48 {
        let level = 0.5 * (lo + hi);
        let a = build(level);
        let vbar = mean_speed(spec.v0, &a);
        let err = (vbar - spec.v_target).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, a));
        }
        if vbar < spec.v_target {
            lo = level;
        } else {
            hi = level;
        }
    }
    best.expect("bisection ran").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pool_has_requested_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(m, s) in &[(0.3, 0.4), (0.6, 0.72), (0.95, 1.09), (0.12, 0.4)] {
            let x = magnitude_pool(&mut rng, 150, m, s, 7.0);
            let (mean, sd) = mean_std(&x);
            assert!((mean - m).abs() < 1e-6 && (sd - s).abs() < 1e-6, "{m},{s}: {mean},{sd}");
            assert!(x.iter().all(|v| (0.0..=7.0).contains(v)));
        }
    }

    #[test]
    fn guess_is_close_to_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = GuessSpec { n: 120, v0: 0.0, v_target: 10.0, mean_abs: 0.5, std_abs: 0.6, accel_cap: 7.0 };
        let a = initial_guess(&mut rng, &spec);
        assert_eq!(a.len(), 120);
        assert!((mean_speed(0.0, &a) - 10.0).abs() < 0.5);
        assert!(a.iter().sum::<f64>().abs() < 1.0);
    }
}
