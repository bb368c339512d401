//! Augmented-Lagrangian solver for one step's acceleration vector.
//!
//! The affine constraint `Σa = 0` and the box on each `a_j` are kept exactly
//! by projection. The statistic constraints and nonnegative speeds go through
//! the Lagrangian, with `|a|` smoothed as `sqrt(a² + ε²)`. Callers pass bounds
//! already tightened by a margin larger than `ε`, so a converged point also
//! satisfies the unsmoothed constraints.

pub(crate) const SMOOTHING: f64 = 1e-4;

pub(crate) struct Problem<'a> {
    pub v0: f64,
    pub v_target: f64,
    pub mean_abs: (f64, f64),
    pub std_abs: (f64, f64),
    /// Required gap `std|a| − mean|a|`.
    pub std_over_mean: f64,
    pub accel: (f64, f64),
    /// Floor on every speed except the last, which equals `v0`.
    pub speed_floor: f64,
    /// Proximal center, usually the initial guess.
    pub anchor: &'a [f64],
    pub prox_weight: f64,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.anchor.len()
    }

    pub(crate) fn mean_speed(&self, a: &[f64]) -> f64 {
        let n = a.len() as f64;
        self.v0 + a.iter().enumerate().map(|(i, x)| x * (n - i as f64) / n).sum::<f64>()
    }

    /// Smoothed mean and std of `|a|`.
    fn abs_stats(a: &[f64]) -> (f64, f64) {
        let n = a.len() as f64;
        let m = a.iter().map(|x| x.hypot(SMOOTHING)).sum::<f64>() / n;
        let q = a.iter().map(|x| x * x).sum::<f64>() / n + SMOOTHING * SMOOTHING;
        (m, (q - m * m).max(0.0).sqrt())
    }

    /// `[g_mean, g_std, g_gap, v_1 − floor, …, v_{N−1} − floor]`, all `≥ 0` when feasible.
    fn constraints(&self, a: &[f64]) -> Vec<f64> {
        let (m, s) = Self::abs_stats(a);
        let (lo, hi) = self.mean_abs;
        let (slo, shi) = self.std_abs;
        let mut g = Vec::with_capacity(a.len() + 2);
        g.push((hi - m) * (m - lo));
        g.push((shi - s) * (s - slo));
        g.push(s - m - self.std_over_mean);
        let mut v = self.v0;
        for x in &a[..a.len() - 1] {
            v += x;
            g.push(v - self.speed_floor);
        }
        g
    }

    fn objective(&self, a: &[f64]) -> f64 {
        let e = self.mean_speed(a) - self.v_target;
        let n = self.n() as f64;
        let prox: f64 = a.iter().zip(self.anchor).map(|(x, c)| (x - c) * (x - c)).sum();
        e * e + self.prox_weight * prox / n
    }

    fn lagrangian(&self, a: &[f64], lambda: &[f64], rho: f64) -> f64 {
        let g = self.constraints(a);
        let mut val = self.objective(a);
        for (gk, lk) in g.iter().zip(lambda) {
            val += if *gk <= lk / rho { -lk * gk + 0.5 * rho * gk * gk } else { -lk * lk / (2.0 * rho) };
        }
        val
    }

    fn evaluate(&self, a: &[f64], lambda: &[f64], rho: f64) -> Eval {
        let n = a.len();
        let nf = n as f64;
        let g = self.constraints(a);
        let value = self.lagrangian(a, lambda, rho);
        let coef: Vec<f64> = g.iter().zip(lambda).map(|(gk, lk)| (lk - rho * gk).max(0.0)).collect();

        let e = self.mean_speed(a) - self.v_target;
        let (m, s) = Self::abs_stats(a);
        let (lo, hi) = self.mean_abs;
        let (slo, shi) = self.std_abs;
        let dg_mean = hi + lo - 2.0 * m;
        let dg_std = shi + slo - 2.0 * s;

        // reverse cumulative sums of speed multipliers: a_i enters v_j for j ≥ i
        let mut speed_pull = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n - 1).rev() {
            acc += coef[3 + i];
            speed_pull[i] = acc;
        }

        let grad = (0..n)
            .map(|i| {
                let x = a[i];
                let phi = x.hypot(SMOOTHING);
                let dm = x / phi / nf;
                let ds = if s > 0.0 { x / (nf * s) * (1.0 - m / phi) } else { 0.0 };
                let mut gi = 2.0 * e * (nf - i as f64) / nf + 2.0 * self.prox_weight * (x - self.anchor[i]) / nf;
                gi -= coef[0] * dg_mean * dm;
                gi -= coef[1] * dg_std * ds;
                gi -= coef[2] * (ds - dm);
                gi -= speed_pull[i];
                gi
            })
            .collect();
        Eval { value, grad }
    }

    pub(crate) fn max_violation(&self, a: &[f64]) -> f64 {
        self.constraints(a).iter().fold(0.0f64, |acc, g| acc.max(-g))
    }
}

/// Euclidean projection onto `{Σa = 0, lo ≤ a_j ≤ hi}` by bisection on a shift.
pub(crate) fn project(y: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    let sum_at = |t: f64| y.iter().map(|v| (v - t).clamp(lo, hi)).sum::<f64>();
    let (mut a, mut b) = (y.iter().fold(f64::INFINITY, |m, v| m.min(*v)) - hi, y.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - lo);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if sum_at(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    let t = 0.5 * (a + b);
    let mut x: Vec<f64> = y.iter().map(|v| (v - t).clamp(lo, hi)).collect();
    // push the leftover rounding into the entry with the most room
    let rest: f64 = x.iter().sum();
    if let Some(k) = (0..x.len()).max_by(|&i, &j| {
        let room = |v: f64| (v - lo).min(hi - v);
        room(x[i]).total_cmp(&room(x[j]))
    }) {
        x[k] = (x[k] - rest).clamp(lo, hi);
    }
    x
}

pub(crate) fn solve(p: &Problem<'_>, start: &[f64], budget: usize) -> Vec<f64> {
    let mut x = project(start, p.accel);
    let m = p.n() + 2;
    let mut lambda = vec![0.0; m];
    let mut rho = 10.0;
    let mut step = 1.0 / p.n() as f64;
    let mut prev_violation = p.max_violation(&x);
    let outer_rounds = 40;
    let inner_iters = (budget / outer_rounds).max(20);

    for _ in 0..outer_rounds {
        for _ in 0..inner_iters {
            let ev = p.evaluate(&x, &lambda, rho);
            let mut t = (step * 2.0).min(10.0);
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&ev.grad).map(|(xi, gi)| xi - t * gi).collect();
                let trial = project(&trial, p.accel);
                let dx: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let lin: f64 = dx.iter().zip(&ev.grad).map(|(d, g)| d * g).sum();
                let quad: f64 = dx.iter().map(|d| d * d).sum::<f64>() / (2.0 * t);
                let val = p.lagrangian(&trial, &lambda, rho);
                if val <= ev.value + lin + quad + 1e-15 * ev.value.abs() {
                    accepted = Some((trial, quad * 2.0 * t));
                    break;
                }
                t *= 0.5;
            }
            let Some((next, moved_sq)) = accepted else { break };
            step = t;
            x = next;
            if moved_sq.sqrt() / t < 1e-10 {
                break;
            }
        }
        let g = p.constraints(&x);
        for (lk, gk) in lambda.iter_mut().zip(&g) {
            *lk = (*lk - rho * gk).max(0.0);
        }
        let violation = g.iter().fold(0.0f64, |acc, v| acc.max(-v));
        if violation <= 1e-12 && (p.mean_speed(&x) - p.v_target).abs() < 1e-6 {
            break;
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * 5.0).min(1e9);
        }
        prev_violation = violation;
    }
    x
}
