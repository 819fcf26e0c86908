//! Closed-form Brownian-motion and Brownian-bridge math.
//!
//! A Brownian bridge pinned at `z0` (time 0) and `zT` (time T) has, at time t,
//! mean `(1 - t/T) z0 + (t/T) zT` and per-coordinate variance `t(T - t)/T`.
//! For an integer frame triple (s, t, e) the bridge deviation metric uses
//! `beta = (t - s)/(e - s)` and `sigma^2 = (t - s)(e - t)/(e - s)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{check_same_dim, normalize};
use crate::Embedding;

/// Strictly increasing integer frame triple, 1-based: 1 <= s < t < e.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTriple {
    s: usize,
    t: usize,
    e: usize,
}

impl TimeTriple {
    pub fn new(s: usize, t: usize, e: usize) -> Result<Self> {
        if s < 1 || s >= t || t >= e {
            return Err(Error::InvalidTimes { s, t, e });
        }
        Ok(TimeTriple { s, t, e })
    }

    pub fn s(&self) -> usize {
        self.s
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn e(&self) -> usize {
        self.e
    }

    /// beta = (t - s) / (e - s)
    pub fn beta(&self) -> f64 {
        (self.t - self.s) as f64 / (self.e - self.s) as f64
    }
}

/// A sampled path: one state per (strictly increasing) time.
#[derive(Debug, Clone)]
pub struct ProcessPath {
    pub times: Vec<f64>,
    pub states: Vec<Embedding>,
}

/// Mean of the bridge at time t: (1 - t/T) z0 + (t/T) zT.
pub fn bridge_mean(z0: &[f64], z_t: &[f64], t: f64, horizon: f64) -> Result<Embedding> {
    check_same_dim(z0, z_t)?;
    if !(0.0..=horizon).contains(&t) || horizon <= 0.0 {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let a = t / horizon;
    Ok(z0
        .iter()
        .zip(z_t)
        .map(|(x0, x1)| (1.0 - a) * x0 + a * x1)
        .collect())
}

/// sigma^2 = (t - s)(e - t)/(e - s), always positive for a valid triple.
pub fn bridge_variance(times: TimeTriple) -> f64 {
    let (s, t, e) = (times.s as f64, times.t as f64, times.e as f64);
    (t - s) * (e - t) / (e - s)
}

/// Contrastive distance of a middle state from its bridge interpolation:
/// -(1 / 2 sigma^2) || mid - (1 - beta) head - beta tail ||^2. Always <= 0.
pub fn bridge_distance(head: &[f64], mid: &[f64], tail: &[f64], times: TimeTriple) -> Result<f64> {
    check_same_dim(head, mid)?;
    check_same_dim(mid, tail)?;
    let beta = times.beta();
    let sigma2 = bridge_variance(times);
    let dev2: f64 = mid
        .iter()
        .zip(head.iter().zip(tail))
        .map(|(m, (h, t))| {
            let d = m - (1.0 - beta) * h - beta * t;
            d * d
        })
        .sum();
    Ok(-dev2 / (2.0 * sigma2))
}

/// Deviation vector mid - (1 - beta) head - beta tail, shared by the
/// distance value and its gradients.
pub fn bridge_deviation_vec(head: &[f64], mid: &[f64], tail: &[f64], beta: f64) -> Vec<f64> {
    mid.iter()
        .zip(head.iter().zip(tail))
        .map(|(m, (h, t))| m - (1.0 - beta) * h - beta * t)
        .collect()
}

/// (head + tail) / 2, optionally l2-normalized for cosine scoring.
pub fn bridge_center(head: &[f64], tail: &[f64], renormalize: bool) -> Result<Embedding> {
    check_same_dim(head, tail)?;
    let c: Vec<f64> = head.iter().zip(tail).map(|(h, t)| (h + t) / 2.0).collect();
    if renormalize {
        normalize(&c)
    } else {
        Ok(c)
    }
}

/// Sample a d-dimensional Wiener process at the given times.
/// W(0) = 0; increments are independent N(0, dt I).
pub fn sample_brownian_motion<R: Rng>(rng: &mut R, times: &[f64], d: usize) -> Result<ProcessPath> {
    if times.is_empty() {
        return Err(Error::Empty("times".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NonIncreasingTimes);
    }
    let mut states = Vec::with_capacity(times.len());
    let mut prev_t = 0.0;
    let mut state = vec![0.0; d];
    for &t in times {
        let dt = t - prev_t;
        if dt > 0.0 {
            let sd = dt.sqrt();
            for x in state.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x += sd * g;
            }
        }
        states.push(state.clone());
        prev_t = t;
    }
    Ok(ProcessPath {
        times: times.to_vec(),
        states,
    })
}

/// Sample a Brownian bridge pinned at z0 (t=0) and zT (t=T) at the given
/// times. States at t=0 and t=T are the pins exactly; interior states are
/// drawn sequentially from the conditional bridge law, so each marginal is
/// N(bridge_mean, t(T-t)/T I).
pub fn sample_brownian_bridge<R: Rng>(
    rng: &mut R,
    z0: &[f64],
    z_t: &[f64],
    times: &[f64],
    horizon: f64,
) -> Result<ProcessPath> {
    check_same_dim(z0, z_t)?;
    if times.is_empty() {
        return Err(Error::Empty("times".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NonIncreasingTimes);
    }
    for &t in times {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
    }
    let d = z0.len();
    let mut states = Vec::with_capacity(times.len());
    // sequential conditioning: given the bridge value x at time a, the value
    // at time b (a < b < T) is N(x + (b-a)/(T-a) (zT - x), (b-a)(T-b)/(T-a) I)
    let mut prev_t = 0.0;
    let mut prev_x: Vec<f64> = z0.to_vec();
    for &t in times {
        let x = if t == 0.0 {
            z0.to_vec()
        } else if t == horizon {
            z_t.to_vec()
        } else {
            let frac = (t - prev_t) / (horizon - prev_t);
            let var = (t - prev_t) * (horizon - t) / (horizon - prev_t);
            let sd = var.sqrt();
            (0..d)
                .map(|i| {
                    let mean = prev_x[i] + frac * (z_t[i] - prev_x[i]);
                    let g: f64 = rng.sample(StandardNormal);
                    mean + sd * g
                })
                .collect()
        };
        states.push(x.clone());
        prev_t = t;
        prev_x = x;
    }
    Ok(ProcessPath {
        times: times.to_vec(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_boundaries_and_interior() {
        let m = bridge_mean(&[0.0, 0.0], &[1.0, 1.0], 0.0, 4.0).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        let m = bridge_mean(&[0.0, 0.0], &[1.0, 1.0], 4.0, 4.0).unwrap();
        assert_eq!(m, vec![1.0, 1.0]);
        let m = bridge_mean(&[0.0], &[4.0], 1.0, 4.0).unwrap();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mean_rejects_bad_inputs() {
        assert!(bridge_mean(&[0.0], &[1.0, 2.0], 1.0, 4.0).is_err());
        assert!(bridge_mean(&[0.0], &[1.0], 5.0, 4.0).is_err());
        assert!(bridge_mean(&[0.0], &[1.0], -0.1, 4.0).is_err());
    }

    #[test]
    fn variance_direct_substitution() {
        assert_abs_diff_eq!(
            bridge_variance(TimeTriple::new(1, 3, 5).unwrap()),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            bridge_variance(TimeTriple::new(1, 2, 5).unwrap()),
            0.75,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            bridge_variance(TimeTriple::new(2, 3, 7).unwrap()),
            0.8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn triple_rejects_degenerate() {
        assert!(TimeTriple::new(0, 1, 2).is_err());
        assert!(TimeTriple::new(1, 1, 2).is_err());
        assert!(TimeTriple::new(1, 2, 2).is_err());
        assert!(TimeTriple::new(3, 2, 5).is_err());
    }

    #[test]
    fn distance_zero_on_interpolation_line() {
        let tt = TimeTriple::new(1, 2, 3).unwrap();
        let head = vec![1.0, 2.0];
        let tail = vec![-1.0, 0.5];
        let beta = tt.beta();
        let mid: Vec<f64> = head
            .iter()
            .zip(&tail)
            .map(|(h, t)| (1.0 - beta) * h + beta * t)
            .collect();
        assert_abs_diff_eq!(
            bridge_distance(&head, &mid, &tail, tt).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // identical embeddings lie on every interpolation line
        let v = vec![0.3, -0.7, 2.0];
        assert_abs_diff_eq!(
            bridge_distance(&v, &v, &v, TimeTriple::new(2, 5, 9).unwrap()).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn distance_hand_evaluated() {
        // beta = 0.5, sigma^2 = 0.5, deviation = [1,0] - 0.5[1,0] - 0.5[0,1]
        // = [0.5,-0.5], norm^2 = 0.5, distance = -0.5/(2*0.5) = -0.5
        let tt = TimeTriple::new(1, 2, 3).unwrap();
        let d = bridge_distance(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], tt).unwrap();
        assert_abs_diff_eq!(d, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn center_examples() {
        let v = vec![0.2, -0.4];
        assert_eq!(bridge_center(&v, &v, false).unwrap(), v);
        assert_eq!(
            bridge_center(&[1.0, 0.0], &[-1.0, 0.0], false).unwrap(),
            vec![0.0, 0.0]
        );
        let c = bridge_center(&[1.0, 0.0], &[0.0, 1.0], true).unwrap();
        assert_abs_diff_eq!(c[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-7);
        assert_abs_diff_eq!(c[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-7);
        assert!(bridge_center(&[1.0, 0.0], &[-1.0, 0.0], true).is_err());
    }

    #[test]
    fn motion_at_zero_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_brownian_motion(&mut rng, &[0.0], 4).unwrap();
        assert_eq!(p.states[0], vec![0.0; 4]);

        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let a = sample_brownian_motion(&mut r1, &[0.5, 1.0, 2.5], 3).unwrap();
        let b = sample_brownian_motion(&mut r2, &[0.5, 1.0, 2.5], 3).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x, y);
        }
        assert!(sample_brownian_motion(&mut rng, &[1.0, 1.0], 2).is_err());
    }

    #[test]
    fn motion_variance_matches_time() {
        // Monte-Carlo oracle: Var[W(t)] = t per coordinate, within 3 SE.
        // SE of sample variance of N(0, v) over n draws is v * sqrt(2/(n-1)).
        let n = 10_000;
        let times = [0.5, 1.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut sums = vec![0.0; times.len()];
        let mut sqs = vec![0.0; times.len()];
        for _ in 0..n {
            let p = sample_brownian_motion(&mut rng, &times, 1).unwrap();
            for (k, s) in p.states.iter().enumerate() {
                sums[k] += s[0];
                sqs[k] += s[0] * s[0];
            }
        }
        for (k, &t) in times.iter().enumerate() {
            let mean = sums[k] / n as f64;
            let var = sqs[k] / n as f64 - mean * mean;
            let se = t * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!(
                (var - t).abs() < 3.0 * se,
                "var {var} vs t {t} (3se {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn bridge_endpoints_exact_and_deterministic() {
        let z0 = vec![1.0, -2.0];
        let zt = vec![3.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = sample_brownian_bridge(&mut rng, &z0, &zt, &[0.0, 4.0], 4.0).unwrap();
        assert_eq!(p.states[0], z0);
        assert_eq!(p.states[1], zt);

        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = sample_brownian_bridge(&mut r1, &z0, &zt, &[1.0, 2.0, 3.0], 4.0).unwrap();
        let b = sample_brownian_bridge(&mut r2, &z0, &zt, &[1.0, 2.0, 3.0], 4.0).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x, y);
        }
        assert!(sample_brownian_bridge(&mut r1, &z0, &zt, &[5.0], 4.0).is_err());
    }

    #[test]
    fn bridge_midpoint_statistics() {
        // z0 = zT = v: mean at T/2 is v, per-coordinate variance T/4.
        let v = vec![0.7, -1.2];
        let horizon = 4.0;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let p = sample_brownian_bridge(&mut rng, &v, &v, &[2.0], horizon).unwrap();
            for (i, x) in p.states[0].iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        let var_expected = horizon / 4.0;
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se_mean = var_expected.sqrt() / (n as f64).sqrt();
            let se_var = var_expected * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((mean - v[i]).abs() < 3.0 * se_mean);
            assert!((var - var_expected).abs() < 3.0 * se_var);
        }
    }

    proptest! {
        #[test]
        fn variance_symmetric_about_midpoint(s in 1usize..20, dt in 1usize..10, de in 1usize..10) {
            let t = s + dt;
            let e = t + de;
            let a = bridge_variance(TimeTriple::new(s, t, e).unwrap());
            let b = bridge_variance(TimeTriple::new(s, s + e - t, e).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn distance_nonpositive(
            head in proptest::collection::vec(-5.0f64..5.0, 3),
            mid in proptest::collection::vec(-5.0f64..5.0, 3),
            tail in proptest::collection::vec(-5.0f64..5.0, 3),
            s in 1usize..5, dt in 1usize..5, de in 1usize..5,
        ) {
            let tt = TimeTriple::new(s, s + dt, s + dt + de).unwrap();
            let d = bridge_distance(&head, &mid, &tail, tt).unwrap();
            prop_assert!(d <= 0.0);
        }

        #[test]
        fn mean_reversal_symmetry(
            z0 in proptest::collection::vec(-5.0f64..5.0, 3),
            zt in proptest::collection::vec(-5.0f64..5.0, 3),
            t in 0.0f64..4.0,
        ) {
            let a = bridge_mean(&z0, &zt, t, 4.0).unwrap();
            let b = bridge_mean(&zt, &z0, t, 4.0).unwrap();
            for i in 0..3 {
                prop_assert!((a[i] + b[i] - z0[i] - zt[i]).abs() < 1e-12);
            }
        }
    }
}
