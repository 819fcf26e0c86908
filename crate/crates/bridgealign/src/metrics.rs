//! Recognition and diagnostic metrics: frame-ensemble vs bridge-center
//! classification, score entropy, bridge deviation, and a label-invariant
//! tracking association accuracy.

use crate::bridge::bridge_center;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, softmax_inplace, Mat};
use crate::simulator::CategoryBank;
use crate::tracker::{hungarian, CostMatrix, TrackSet};
use crate::Embedding;

/// One instance's embedding sequence across frames.
#[derive(Debug, Clone)]
pub struct InstanceTrajectory {
    pub embeddings: Vec<Embedding>,
    pub category_id: usize,
    pub instance_id: usize,
}

/// Pre-softmax alignment scores against a category bank.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub temperature: f64,
}

/// scores_c = (embedding . bank_c) / temperature for a unit embedding.
pub fn alignment_scores(
    embedding: &[f64],
    bank: &CategoryBank,
    temperature: f64,
) -> Result<ScoreVector> {
    if temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }
    if (norm(embedding) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidConfig("embedding must be unit norm".into()));
    }
    let scores = bank
        .embeddings
        .iter()
        .map(|c| dot(embedding, c) / temperature)
        .collect();
    Ok(ScoreVector {
        scores,
        temperature,
    })
}

fn argmax_lowest_tie(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Frame-ensemble classifier: average the per-frame score vectors, argmax
/// with ties to the lowest category index.
pub fn classify_frame_ensemble(
    trajectory: &InstanceTrajectory,
    bank: &CategoryBank,
    temperature: f64,
) -> Result<(usize, ScoreVector)> {
    if trajectory.embeddings.is_empty() {
        return Err(Error::Empty("trajectory".into()));
    }
    let c = bank.len();
    let mut mean = vec![0.0; c];
    for e in &trajectory.embeddings {
        let sv = alignment_scores(e, bank, temperature)?;
        for (m, s) in mean.iter_mut().zip(&sv.scores) {
            *m += s;
        }
    }
    let t = trajectory.embeddings.len() as f64;
    for m in mean.iter_mut() {
        *m /= t;
    }
    let cat = argmax_lowest_tie(&mean);
    Ok((
        cat,
        ScoreVector {
            scores: mean,
            temperature,
        },
    ))
}

/// Bridge-center classifier: score the renormalized average of the first and
/// last embeddings.
pub fn classify_bridge_center(
    trajectory: &InstanceTrajectory,
    bank: &CategoryBank,
    temperature: f64,
) -> Result<(usize, ScoreVector)> {
    if trajectory.embeddings.is_empty() {
        return Err(Error::Empty("trajectory".into()));
    }
    let first = &trajectory.embeddings[0];
    let last = trajectory.embeddings.last().unwrap();
    let center = bridge_center(first, last, true)?;
    let sv = alignment_scores(&center, bank, temperature)?;
    Ok((argmax_lowest_tie(&sv.scores), sv))
}

/// Shannon entropy (natural log) of softmax(scores); in [0, log C].
pub fn entropy(scores: &ScoreVector) -> f64 {
    let mut p = scores.scores.clone();
    softmax_inplace(&mut p);
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Mean squared deviation of interior frames from the head-tail chord, with
/// beta = (t - 1)/(T - 1).
pub fn bridge_deviation(trajectory: &[Embedding]) -> Result<f64> {
    let t_frames = trajectory.len();
    if t_frames < 3 {
        return Err(Error::InvalidConfig(
            "bridge deviation needs at least 3 frames".into(),
        ));
    }
    let first = &trajectory[0];
    let last = &trajectory[t_frames - 1];
    let mut acc = 0.0;
    for (t, e) in trajectory.iter().enumerate().take(t_frames - 1).skip(1) {
        let beta = t as f64 / (t_frames - 1) as f64;
        acc += e
            .iter()
            .zip(first.iter().zip(last))
            .map(|(x, (h, l))| {
                let d = x - (1.0 - beta) * h - beta * l;
                d * d
            })
            .sum::<f64>();
    }
    Ok(acc / (t_frames - 2) as f64)
}

/// Fraction of (instance, frame) cells where the prediction occupies the
/// ground-truth slot, after optimally matching predicted ids to ground-truth
/// ids (Hungarian on overlap counts), so the metric is label-invariant.
pub fn association_accuracy(pred: &TrackSet, gt_identities: &[Vec<usize>]) -> Result<f64> {
    let t_frames = pred.num_frames();
    let n = pred.num_instances();
    if gt_identities.len() != t_frames || gt_identities.iter().any(|f| f.len() != n) {
        return Err(Error::ShapeMismatch("track set vs ground truth".into()));
    }
    // overlap[pred_id][gt_id] = number of frames where pred id sits in a slot
    // whose ground-truth occupant is gt_id
    let mut overlap = vec![vec![0usize; n]; n];
    for (pid, traj) in pred.trajectories.iter().enumerate() {
        for (frame, &slot) in traj.iter().enumerate() {
            overlap[pid][gt_identities[frame][slot]] += 1;
        }
    }
    let mut cost = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cost.data[i * n + j] = -(overlap[i][j] as f64);
        }
    }
    let matching = hungarian(&CostMatrix::new(cost)?)?;
    let correct: usize = (0..n).map(|pid| overlap[pid][matching[pid]]).sum();
    Ok(correct as f64 / (n * t_frames) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ortho_bank(c: usize, d: usize) -> CategoryBank {
        let embeddings = (0..c)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                v
            })
            .collect();
        CategoryBank {
            embeddings,
            names: (0..c).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn alignment_score_basics() {
        let bank = ortho_bank(3, 4);
        let e = bank.embeddings[1].clone();
        let sv = alignment_scores(&e, &bank, 1.0).unwrap();
        assert_eq!(sv.scores, vec![0.0, 1.0, 0.0]);
        let sv2 = alignment_scores(&e, &bank, 2.0).unwrap();
        for (a, b) in sv2.scores.iter().zip(&sv.scores) {
            assert_abs_diff_eq!(*a, b / 2.0, epsilon = 1e-15);
        }
        let mut off = vec![0.0; 4];
        off[3] = 1.0;
        let sv3 = alignment_scores(&off, &bank, 1.0).unwrap();
        assert_eq!(sv3.scores, vec![0.0; 3]);
        assert!(alignment_scores(&[0.5, 0.0, 0.0, 0.0], &bank, 1.0).is_err());
    }

    #[test]
    fn classifiers_on_constant_trajectory() {
        let bank = ortho_bank(3, 4);
        let traj = InstanceTrajectory {
            embeddings: vec![bank.embeddings[2].clone(); 4],
            category_id: 2,
            instance_id: 0,
        };
        assert_eq!(classify_frame_ensemble(&traj, &bank, 1.0).unwrap().0, 2);
        assert_eq!(classify_bridge_center(&traj, &bank, 1.0).unwrap().0, 2);

        let single = InstanceTrajectory {
            embeddings: vec![bank.embeddings[1].clone()],
            category_id: 1,
            instance_id: 0,
        };
        let (c, sv) = classify_frame_ensemble(&single, &bank, 1.0).unwrap();
        assert_eq!(c, 1);
        assert_eq!(sv.scores, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn bridge_center_symmetric_endpoints() {
        // endpoints rotated +/- theta around bank entry 0 in the (0,1) plane
        let bank = ortho_bank(2, 4);
        let th: f64 = 0.6;
        let head = vec![th.cos(), th.sin(), 0.0, 0.0];
        let tail = vec![th.cos(), -th.sin(), 0.0, 0.0];
        let traj = InstanceTrajectory {
            embeddings: vec![head, vec![0.0, 0.0, 1.0, 0.0], tail],
            category_id: 0,
            instance_id: 0,
        };
        assert_eq!(classify_bridge_center(&traj, &bank, 1.0).unwrap().0, 0);
    }

    #[test]
    fn drifted_middle_flips_frame_ensemble_only() {
        // endpoints at category 0; middle frames drift hard toward category 1
        let bank = ortho_bank(2, 4);
        let e0 = bank.embeddings[0].clone();
        let e1 = bank.embeddings[1].clone();
        let traj = InstanceTrajectory {
            embeddings: vec![e0.clone(), e1.clone(), e1.clone(), e1, e0],
            category_id: 0,
            instance_id: 0,
        };
        // frame ensemble: mean scores (2/5, 3/5) -> category 1
        let (fe, _) = classify_frame_ensemble(&traj, &bank, 1.0).unwrap();
        assert_eq!(fe, 1);
        // bridge center: (e0 + e0)/2 -> category 0
        let (bc, _) = classify_bridge_center(&traj, &bank, 1.0).unwrap();
        assert_eq!(bc, 0);
    }

    #[test]
    fn entropy_bounds_and_values() {
        let uniform = ScoreVector {
            scores: vec![3.0; 4],
            temperature: 1.0,
        };
        assert_abs_diff_eq!(entropy(&uniform), 4.0f64.ln(), epsilon = 1e-12);

        let peaked = ScoreVector {
            scores: vec![1e6, 0.0, 0.0],
            temperature: 1.0,
        };
        assert_abs_diff_eq!(entropy(&peaked), 0.0, epsilon = 1e-9);

        // C = 2 with probabilities (0.75, 0.25)
        let p = 0.75f64;
        let sv = ScoreVector {
            scores: vec![(p / (1.0 - p)).ln(), 0.0],
            temperature: 1.0,
        };
        let expected = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert_abs_diff_eq!(entropy(&sv), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&sv), 0.5623, epsilon = 1e-4);

        // invariant under adding a constant
        let shifted = ScoreVector {
            scores: sv.scores.iter().map(|x| x + 17.0).collect(),
            temperature: 1.0,
        };
        assert_abs_diff_eq!(entropy(&shifted), entropy(&sv), epsilon = 1e-12);
    }

    #[test]
    fn deviation_zero_on_linear_and_constant() {
        let lin: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64, 2.0 * t as f64]).collect();
        assert_abs_diff_eq!(bridge_deviation(&lin).unwrap(), 0.0, epsilon = 1e-12);
        let cst = vec![vec![1.0, -1.0]; 4];
        assert_abs_diff_eq!(bridge_deviation(&cst).unwrap(), 0.0, epsilon = 1e-12);
        assert!(bridge_deviation(&cst[..2]).is_err());
    }

    #[test]
    fn deviation_orthogonal_displacement() {
        // 3 frames, mid displaced by delta orthogonal to the chord
        let traj = vec![
            vec![0.0, 0.0],
            vec![0.5, 0.3], // chord midpoint is (0.5, 0), delta = (0, 0.3)
            vec![1.0, 0.0],
        ];
        assert_abs_diff_eq!(bridge_deviation(&traj).unwrap(), 0.09, epsilon = 1e-12);
    }

    #[test]
    fn deviation_rotation_invariant() {
        let traj = vec![
            vec![0.1, 0.9],
            vec![0.7, -0.2],
            vec![0.4, 0.4],
            vec![1.0, 0.0],
        ];
        let th: f64 = 0.8;
        let rot: Vec<Vec<f64>> = traj
            .iter()
            .map(|v| {
                vec![
                    v[0] * th.cos() - v[1] * th.sin(),
                    v[0] * th.sin() + v[1] * th.cos(),
                ]
            })
            .collect();
        assert_abs_diff_eq!(
            bridge_deviation(&traj).unwrap(),
            bridge_deviation(&rot).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn association_accuracy_extremes() {
        // pred == gt
        let pred = TrackSet {
            trajectories: vec![vec![0, 0], vec![1, 1], vec![2, 2], vec![3, 3]],
        };
        let gt = vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3]];
        assert_abs_diff_eq!(
            association_accuracy(&pred, &gt).unwrap(),
            1.0,
            epsilon = 1e-15
        );

        // consistent relabeling still scores 1.0
        let relabeled = vec![vec![3, 2, 1, 0], vec![3, 2, 1, 0]];
        assert_abs_diff_eq!(
            association_accuracy(&pred, &relabeled).unwrap(),
            1.0,
            epsilon = 1e-15
        );

        // per-frame cyclic rotation that no single relabeling can fix:
        // frame 0 identity, frame 1 rotated
        let rotated = vec![vec![0, 1, 2, 3], vec![1, 2, 3, 0]];
        assert_abs_diff_eq!(
            association_accuracy(&pred, &rotated).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }
}
