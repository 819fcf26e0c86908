//! Exact linear assignment and adjacent-frame query linking.
//!
//! The solver is the O(n^3) shortest-augmenting-path Hungarian method with
//! dual potentials. Among cost-minimal assignments it returns the
//! lexicographically smallest permutation: by complementary slackness every
//! optimal assignment uses only tight edges (cost == u_i + v_j), so a greedy
//! row-by-row pass over the tight-edge graph, feasibility-checked with an
//! augmenting-path matcher, pins the tie rule down exactly.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};

/// Square matrix of assignment costs.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub values: Mat,
}

impl CostMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        if values.rows != values.cols || values.rows == 0 {
            return Err(Error::BadCostMatrix);
        }
        if !values.all_finite() {
            return Err(Error::BadCostMatrix);
        }
        Ok(CostMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values.data[i * self.values.cols + j]
    }
}

/// Per-instance trajectories: `trajectories[id][t]` is the query slot the
/// instance occupies at frame t. Each frame's assignment is a bijection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrackSet {
    pub trajectories: Vec<Vec<usize>>,
}

impl TrackSet {
    pub fn num_instances(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_frames(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len())
    }

    /// Inverse view: per frame, slot -> instance id.
    pub fn slot_to_id(&self) -> Vec<Vec<usize>> {
        let n = self.num_instances();
        let t = self.num_frames();
        let mut out = vec![vec![0usize; n]; t];
        for (id, traj) in self.trajectories.iter().enumerate() {
            for (frame, &slot) in traj.iter().enumerate() {
                out[frame][slot] = id;
            }
        }
        out
    }
}

/// Shortest-augmenting-path Hungarian with potentials. Returns the row->col
/// assignment and the dual potentials (u over rows, v over cols).
fn hungarian_with_duals(cost: &CostMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.n();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to col j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let u_rows: Vec<f64> = u[1..=n].to_vec();
    let v_cols: Vec<f64> = v[1..=n].to_vec();
    (assignment, u_rows, v_cols)
}

/// Kuhn augmenting-path matching over an adjacency list; returns true when a
/// perfect matching over `rows` exists.
fn has_perfect_matching(adj: &[Vec<usize>], num_cols: usize) -> bool {
    let mut col_match: Vec<Option<usize>> = vec![None; num_cols];
    fn try_row(
        r: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        col_match: &mut [Option<usize>],
    ) -> bool {
        for &c in &adj[r] {
            if !seen[c] {
                seen[c] = true;
                if col_match[c].is_none() || try_row(col_match[c].unwrap(), adj, seen, col_match) {
                    col_match[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    for r in 0..adj.len() {
        let mut seen = vec![false; num_cols];
        if !try_row(r, adj, &mut seen, &mut col_match) {
            return false;
        }
    }
    true
}

/// Minimum-cost assignment; ties resolved to the lexicographically smallest
/// permutation (read row by row).
pub fn hungarian(cost: &CostMatrix) -> Result<Vec<usize>> {
    let n = cost.n();
    let (assignment, u, v) = hungarian_with_duals(cost);

    let scale: f64 = cost.values.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-9 * scale;

    // tight edges carry every optimal assignment
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| (cost.at(i, j) - u[i] - v[j]).abs() <= eps)
                .collect()
        })
        .collect();
    if tight.iter().map(|r| r.len()).sum::<usize>() == n {
        return Ok(assignment);
    }

    // greedy lexicographic selection over the tight graph
    let mut result = vec![0usize; n];
    let mut used_cols = vec![false; n];
    for i in 0..n {
        let mut chosen = None;
        for &j in &tight[i] {
            if used_cols[j] {
                continue;
            }
            // remaining rows must still admit a perfect matching
            let remaining: Vec<Vec<usize>> = (i + 1..n)
                .map(|r| {
                    tight[r]
                        .iter()
                        .cloned()
                        .filter(|&c| c != j && !used_cols[c])
                        .collect()
                })
                .collect();
            if has_perfect_matching(&remaining, n) {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.ok_or(Error::BadCostMatrix)?;
        result[i] = j;
        used_cols[j] = true;
    }
    Ok(result)
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &CostMatrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.at(i, j))
        .sum()
}

/// Link adjacent frames by negative cosine similarity. Returns, per
/// next-frame slot, the prev-frame slot it continues. Zero-norm queries are
/// scored as cosine 0 and logged.
pub fn link_adjacent(prev: &Mat, next: &Mat) -> Result<Vec<usize>> {
    if prev.rows != next.rows || prev.cols != next.cols {
        return Err(Error::ShapeMismatch(format!(
            "link_adjacent: {}x{} vs {}x{}",
            prev.rows, prev.cols, next.rows, next.cols
        )));
    }
    let n = prev.rows;
    let mut cost = Mat::zeros(n, n);
    for i in 0..n {
        let pi = prev.row(i);
        let npi = norm(pi);
        for j in 0..n {
            let nj = next.row(j);
            let nnj = norm(nj);
            let c = if npi < 1e-300 || nnj < 1e-300 {
                warn!("zero-norm query in link_adjacent ({i},{j}); cosine treated as 0");
                0.0
            } else {
                dot(pi, nj) / (npi * nnj)
            };
            cost.data[i * n + j] = -c;
        }
    }
    let row_to_col = hungarian(&CostMatrix::new(cost)?)?;
    // invert: next slot -> prev slot
    let mut next_to_prev = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        next_to_prev[j] = i;
    }
    Ok(next_to_prev)
}

/// Chain adjacent-frame links across a whole sequence; instance ids are the
/// frame-1 slots.
pub fn track_video(frames: &[Mat]) -> Result<TrackSet> {
    if frames.is_empty() {
        return Err(Error::Empty("frames".into()));
    }
    let n = frames[0].rows;
    // id_of_slot[slot] for the current frame
    let mut id_of_slot: Vec<usize> = (0..n).collect();
    let mut trajectories: Vec<Vec<usize>> = (0..n).map(|id| vec![id]).collect();
    for w in frames.windows(2) {
        let next_to_prev = link_adjacent(&w[0], &w[1])?;
        let mut new_ids = vec![0usize; n];
        for (next_slot, &prev_slot) in next_to_prev.iter().enumerate() {
            let id = id_of_slot[prev_slot];
            new_ids[next_slot] = id;
            trajectories[id].push(next_slot);
        }
        id_of_slot = new_ids;
    }
    Ok(TrackSet { trajectories })
}

/// Sliding-window tracking with one-frame overlap between consecutive
/// windows for identity hand-off. Returns the stitched track set and each
/// instance's bridge center (average of its first and last tracked
/// embeddings over the full span).
pub fn window_inference(frames: &[Mat], window: usize) -> Result<(TrackSet, Vec<Vec<f64>>)> {
    if window < 2 {
        return Err(Error::InvalidConfig("window must be >= 2".into()));
    }
    if frames.is_empty() {
        return Err(Error::Empty("frames".into()));
    }
    let t_total = frames.len();
    let n = frames[0].rows;

    let mut trajectories: Vec<Vec<usize>> = (0..n).map(|_| Vec::with_capacity(t_total)).collect();
    // ids for the overlap frame carried across windows
    let mut carry_ids: Vec<usize> = (0..n).collect();
    let mut start = 0usize;
    let mut first_window = true;
    while start < t_total {
        let end = (start + window).min(t_total);
        let local = track_video(&frames[start..end])?;
        let local_slot_to_id = local.slot_to_id();
        // map local ids to persistent ids through the overlap frame
        // (frame `start`, local frame 0)
        let mut persistent_of_local = vec![0usize; n];
        for slot in 0..n {
            let local_id = local_slot_to_id[0][slot];
            persistent_of_local[local_id] = carry_ids[slot];
        }
        let from = if first_window { 0 } else { 1 }; // skip the overlap frame
        for (local_id, traj) in local.trajectories.iter().enumerate() {
            let pid = persistent_of_local[local_id];
            for &slot in &traj[from..] {
                trajectories[pid].push(slot);
            }
        }
        // carry the last frame's ids into the next window
        let last_local = end - start - 1;
        for slot in 0..n {
            carry_ids[slot] = persistent_of_local[local_slot_to_id[last_local][slot]];
        }
        if end == t_total {
            break;
        }
        start = end - 1; // one-frame overlap
        first_window = false;
    }

    let tracks = TrackSet { trajectories };
    let centers = (0..n)
        .map(|id| {
            let first_slot = tracks.trajectories[id][0];
            let last_slot = *tracks.trajectories[id].last().unwrap();
            let f = frames[0].row(first_slot);
            let l = frames[t_total - 1].row(last_slot);
            f.iter().zip(l).map(|(a, b)| (a + b) / 2.0).collect()
        })
        .collect();
    Ok((tracks, centers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn brute_force(cost: &CostMatrix) -> (Vec<usize>, f64) {
        // lexicographically smallest among minimal-cost permutations
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..n {
                    let mut q: Vec<usize> = p.iter().map(|&x| x + usize::from(x >= pos)).collect();
                    q.insert(0, pos);
                    out.push(q);
                }
            }
            out
        }
        let n = cost.n();
        let mut perms = permutations(n);
        perms.sort();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in perms {
            let c = assignment_cost(cost, &p);
            if best.as_ref().is_none_or(|(_, bc)| c < *bc) {
                best = Some((p, c));
            }
        }
        best.unwrap()
    }

    #[test]
    fn hungarian_diagonal() {
        let m = Mat::from_rows(vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let c = CostMatrix::new(m).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a, vec![0, 1, 2]);
        assert_eq!(assignment_cost(&c, &a), 0.0);
    }

    #[test]
    fn hungarian_two_by_two() {
        let c = CostMatrix::new(Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 1.0]])).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a, vec![0, 1]);
        assert_eq!(assignment_cost(&c, &a), 2.0);
    }

    #[test]
    fn hungarian_tie_rule() {
        // every permutation costs 2; lexicographic winner is the identity
        let c = CostMatrix::new(Mat::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]])).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![0, 1]);
        // force the anti-diagonal through a tie on row 0 only
        let c = CostMatrix::new(Mat::from_rows(vec![vec![1.0, 1.0], vec![0.0, 5.0]])).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![1, 0]);
    }

    #[test]
    fn hungarian_rejects_bad_input() {
        assert!(CostMatrix::new(Mat::zeros(2, 3)).is_err());
        let mut m = Mat::zeros(2, 2);
        m.data[0] = f64::NAN;
        assert!(CostMatrix::new(m).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..300 {
            let n = 2 + (trial % 5);
            let mut m = Mat::zeros(n, n);
            for x in m.data.iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal) * 3.0;
            }
            let c = CostMatrix::new(m).unwrap();
            let a = hungarian(&c).unwrap();
            let (bp, bc) = brute_force(&c);
            assert_eq!(
                assignment_cost(&c, &a),
                bc,
                "cost mismatch n={n} trial={trial}"
            );
            assert_eq!(a, bp, "permutation mismatch n={n} trial={trial}");
        }
    }

    #[test]
    fn hungarian_matches_brute_force_with_integer_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..300 {
            let n = 2 + (trial % 4);
            let mut m = Mat::zeros(n, n);
            for x in m.data.iter_mut() {
                *x = rng.random_range(0..4) as f64;
            }
            let c = CostMatrix::new(m).unwrap();
            let a = hungarian(&c).unwrap();
            let (bp, bc) = brute_force(&c);
            assert_eq!(assignment_cost(&c, &a), bc);
            assert_eq!(a, bp, "tie rule mismatch n={n} trial={trial}");
        }
    }

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
        let mut m = Mat::zeros(n, d);
        for i in 0..n {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let v = crate::linalg::normalize(&v).unwrap();
            m.row_mut(i).copy_from_slice(&v);
        }
        m
    }

    #[test]
    fn link_identity_and_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = unit_rows(&mut rng, 4, 8);
        assert_eq!(link_adjacent(&prev, &prev).unwrap(), vec![0, 1, 2, 3]);

        let mut next = prev.clone();
        let row0 = next.row(0).to_vec();
        let row1 = next.row(1).to_vec();
        next.row_mut(0).copy_from_slice(&row1);
        next.row_mut(1).copy_from_slice(&row0);
        // next slot 0 holds prev slot 1's query
        assert_eq!(link_adjacent(&prev, &next).unwrap(), vec![1, 0, 2, 3]);
    }

    #[test]
    fn link_recovers_noisy_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..100 {
            let prev = unit_rows(&mut rng, 6, 16);
            let perm: Vec<usize> = {
                let mut p: Vec<usize> = (0..6).collect();
                use rand::seq::SliceRandom;
                p.shuffle(&mut rng);
                p
            };
            let mut next = Mat::zeros(6, 16);
            for (slot, &src) in perm.iter().enumerate() {
                let mut row = prev.row(src).to_vec();
                for x in row.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *x += 0.01 * g;
                }
                next.row_mut(slot).copy_from_slice(&row);
            }
            let link = link_adjacent(&prev, &next).unwrap();
            if link == perm {
                hits += 1;
            }
        }
        assert_eq!(hits, 100);
    }

    #[test]
    fn link_inverse_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = unit_rows(&mut rng, 5, 12);
        let b = unit_rows(&mut rng, 5, 12);
        let ab = link_adjacent(&a, &b).unwrap();
        let ba = link_adjacent(&b, &a).unwrap();
        for slot in 0..5 {
            assert_eq!(ba[ab[slot]], slot);
        }
    }

    #[test]
    fn track_single_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = unit_rows(&mut rng, 3, 8);
        let t = track_video(std::slice::from_ref(&f)).unwrap();
        assert_eq!(t.trajectories, vec![vec![0], vec![1], vec![2]]);
        let t = track_video(&[f.clone(), f.clone(), f.clone()]).unwrap();
        for (id, traj) in t.trajectories.iter().enumerate() {
            assert_eq!(*traj, vec![id, id, id]);
        }
    }

    #[test]
    fn window_matches_full_tracking() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::seq::SliceRandom;
        // well-separated instances, shuffled per frame
        let base = unit_rows(&mut rng, 5, 16);
        let t_frames = 7;
        let mut frames = Vec::new();
        for _ in 0..t_frames {
            let mut p: Vec<usize> = (0..5).collect();
            p.shuffle(&mut rng);
            let mut m = Mat::zeros(5, 16);
            for (slot, &src) in p.iter().enumerate() {
                m.row_mut(slot).copy_from_slice(base.row(src));
            }
            frames.push(m);
        }
        let full = track_video(&frames).unwrap();
        for w in 2..=t_frames {
            let (tracks, _) = window_inference(&frames, w).unwrap();
            assert_eq!(tracks, full, "window {w}");
        }
        assert!(window_inference(&frames, 1).is_err());
    }

    #[test]
    fn window_center_of_constant_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = unit_rows(&mut rng, 3, 8);
        let frames = vec![f.clone(), f.clone(), f.clone(), f.clone()];
        let (_, centers) = window_inference(&frames, 2).unwrap();
        for (id, c) in centers.iter().enumerate() {
            for (a, b) in c.iter().zip(f.row(id)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn track_equivariant_to_first_frame_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Mat> = (0..4).map(|_| unit_rows(&mut rng, 4, 12)).collect();
        // this is random data; linking is arbitrary but deterministic
        let base = track_video(&frames).unwrap();
        // permute frame-1 slots
        let perm = [2usize, 0, 3, 1];
        let mut f0 = Mat::zeros(4, 12);
        for (slot, &src) in perm.iter().enumerate() {
            f0.row_mut(slot).copy_from_slice(frames[0].row(src));
        }
        let mut permuted = frames.clone();
        permuted[0] = f0;
        let moved = track_video(&permuted).unwrap();
        // trajectory of old id `src` should now live under the new slot id
        for (new_id, &src) in perm.iter().enumerate() {
            assert_eq!(moved.trajectories[new_id][1..], base.trajectories[src][1..]);
        }
    }
}
