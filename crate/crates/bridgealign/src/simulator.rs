//! Synthetic stand-ins for text embeddings and segmentor outputs: category
//! banks, bridge-structured instance trajectories with controllable noise and
//! per-frame identity shuffles, and multi-scale context tokens for the
//! resampler. Every generator is a pure function of its seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bridge::{sample_brownian_bridge, TimeTriple};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, Mat};
use crate::objectives::{BridgeTriplet, TripletBatch};
use crate::resampler::ContextFeatures;

/// Unit-norm category embedding stand-ins with a pairwise-similarity cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryBank {
    pub embeddings: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl CategoryBank {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, |e| e.len())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub categories: usize,
    pub instances_per_category: usize,
    pub frames: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub noise_sigma: f64,
    pub shuffle: bool,
    pub endpoint_spread: f64,
    pub max_similarity: f64,
    /// Scale of the stochastic bridge deviation around the head-tail chord.
    /// 1.0 is the exact bridge law; small values give slow, well-separated
    /// trajectories where adjacent-frame matching is unambiguous.
    pub motion_scale: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            categories: 20,
            instances_per_category: 40,
            frames: 9,
            d_in: 48,
            d_out: 32,
            noise_sigma: 0.0,
            shuffle: false,
            endpoint_spread: 0.15,
            max_similarity: 0.3,
            motion_scale: 1.0,
            seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories < 1
            || self.instances_per_category < 1
            || self.frames < 1
            || self.d_in < 1
            || self.d_out < 1
        {
            return Err(Error::InvalidConfig("all counts must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if self.motion_scale < 0.0 {
            return Err(Error::InvalidConfig("motion_scale must be >= 0".into()));
        }
        if self.d_out > self.d_in {
            return Err(Error::InvalidConfig("d_out must not exceed d_in".into()));
        }
        Ok(())
    }

    pub fn instances(&self) -> usize {
        self.categories * self.instances_per_category
    }
}

/// Synthetic video: raw per-frame query features plus ground truth.
/// `frames[t]` is an N x d_in matrix in (possibly shuffled) slot order;
/// `gt_identities[t][slot]` is the instance id occupying that slot;
/// `gt_clean[t]` is the noise-free tensor in instance order.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub frames: Vec<Mat>,
    pub gt_identities: Vec<Vec<usize>>,
    pub gt_categories: Vec<usize>,
    pub gt_clean: Vec<Mat>,
}

impl SyntheticVideo {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_instances(&self) -> usize {
        self.gt_categories.len()
    }

    /// Feature of `instance` at `frame`, resolved through the shuffle map.
    pub fn instance_feature(&self, frame: usize, instance: usize) -> &[f64] {
        let slot = self.gt_identities[frame]
            .iter()
            .position(|&id| id == instance)
            .expect("instance present in every frame");
        self.frames[frame].row(slot)
    }
}

/// Rejection-sample C unit vectors whose pairwise cosines stay at or below
/// `max_similarity`. Falls back to Gram-Schmidt orthogonalization when
/// rejection stalls and C <= d; errors once the attempt budget is exhausted.
pub fn generate_category_bank<R: Rng>(
    rng: &mut R,
    c: usize,
    d: usize,
    max_similarity: f64,
) -> Result<CategoryBank> {
    const BUDGET: usize = 20_000;
    if c < 1 || d < 1 {
        return Err(Error::InvalidConfig("bank needs c >= 1, d >= 1".into()));
    }
    let mut embeddings: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut accepted = None;
        for _ in 0..BUDGET {
            let cand: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let cand = match normalize(&cand) {
                Ok(v) => v,
                Err(_) => continue,
            };
            if embeddings.iter().all(|e| dot(e, &cand) <= max_similarity) {
                accepted = Some(cand);
                break;
            }
        }
        if accepted.is_none() && embeddings.len() < d && max_similarity >= 0.0 {
            // project a fresh draw onto the orthogonal complement of the
            // accepted set's span; the accepted vectors are not mutually
            // orthogonal, so go through an orthonormal basis of that span
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(embeddings.len());
            for e in &embeddings {
                let mut b = e.clone();
                for _ in 0..2 {
                    for q in &basis {
                        let p = dot(q, &b);
                        for (bi, qi) in b.iter_mut().zip(q) {
                            *bi -= p * qi;
                        }
                    }
                }
                if let Ok(u) = normalize(&b) {
                    basis.push(u);
                }
            }
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..2 {
                for q in &basis {
                    let p = dot(q, &v);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= p * qi;
                    }
                }
            }
            if let Ok(u) = normalize(&v) {
                accepted = Some(u);
            }
        }
        match accepted {
            Some(v) => embeddings.push(v),
            None => return Err(Error::BankInfeasible { attempts: BUDGET }),
        }
    }
    let names = (0..c).map(|i| format!("category_{i:03}")).collect();
    Ok(CategoryBank { embeddings, names })
}

/// The fixed random isometry (orthonormal columns, d_in x d_out) lifting
/// latent trajectories into raw query space. Derived from the config seed so
/// every video generated under the same config shares it.
pub fn latent_isometry(config: &SimConfig) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1505_becb_a5e5_u64);
    let (d_in, d_out) = (config.d_in, config.d_out);
    // Gram-Schmidt on random Gaussian columns
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d_out);
    while cols.len() < d_out {
        let mut v: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let p = dot(c, &v);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= p * ci;
            }
        }
        if let Ok(u) = normalize(&v) {
            cols.push(u);
        }
    }
    let mut m = Mat::zeros(d_in, d_out);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d_in {
            m.data[i * d_out + j] = c[i];
        }
    }
    m
}

/// Generate one synthetic video. Head/tail anchors sit near each instance's
/// category direction (angular spread `endpoint_spread`); middles follow the
/// Brownian-bridge law at integer frame times; Gaussian noise and per-frame
/// slot shuffles are applied on top.
pub fn generate_video<R: Rng>(
    config: &SimConfig,
    bank: &CategoryBank,
    rng: &mut R,
) -> Result<SyntheticVideo> {
    config.validate()?;
    if bank.len() != config.categories || bank.dim() != config.d_out {
        return Err(Error::InvalidConfig(
            "bank shape inconsistent with sim config".into(),
        ));
    }
    let n = config.instances();
    let t_frames = config.frames;
    let iso = latent_isometry(config);

    let mut gt_categories = Vec::with_capacity(n);
    // latent trajectories, instance-major: n x t x d_out
    let mut latent: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for i in 0..n {
        let cat = i / config.instances_per_category;
        gt_categories.push(cat);
        let anchor = |rng: &mut R| -> Result<Vec<f64>> {
            let mut v = bank.embeddings[cat].clone();
            for x in v.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x += config.endpoint_spread * g;
            }
            normalize(&v)
        };
        let head = anchor(rng)?;
        let tail = anchor(rng)?;
        let traj = if t_frames == 1 {
            vec![head]
        } else {
            let horizon = (t_frames - 1) as f64;
            let times: Vec<f64> = (0..t_frames).map(|k| k as f64).collect();
            let mut states = sample_brownian_bridge(rng, &head, &tail, &times, horizon)?.states;
            if config.motion_scale != 1.0 {
                // shrink the stochastic part around the head-tail chord;
                // the bridge mean is the linear interpolation, so this
                // rescales deviations without moving the expected path
                for (k, state) in states.iter_mut().enumerate() {
                    let beta = k as f64 / horizon;
                    for (j, x) in state.iter_mut().enumerate() {
                        let mean = (1.0 - beta) * head[j] + beta * tail[j];
                        *x = mean + config.motion_scale * (*x - mean);
                    }
                }
            }
            states
        };
        latent.push(traj);
    }

    // lift into d_in, add noise, record clean tensor in instance order
    let mut gt_clean = Vec::with_capacity(t_frames);
    let mut noisy = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let mut clean = Mat::zeros(n, config.d_in);
        for i in 0..n {
            let lifted = iso.matvec(&latent[i][t]);
            clean.row_mut(i).copy_from_slice(&lifted);
        }
        let mut frame = clean.clone();
        if config.noise_sigma > 0.0 {
            for x in frame.data.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x += config.noise_sigma * g;
            }
        }
        gt_clean.push(clean);
        noisy.push(frame);
    }

    // per-frame slot shuffles
    let mut gt_identities = Vec::with_capacity(t_frames);
    let mut frames = Vec::with_capacity(t_frames);
    for frame in noisy {
        let mut ids: Vec<usize> = (0..n).collect();
        if config.shuffle {
            ids.shuffle(rng);
        }
        let mut shuffled = Mat::zeros(n, config.d_in);
        for (slot, &inst) in ids.iter().enumerate() {
            shuffled.row_mut(slot).copy_from_slice(frame.row(inst));
        }
        gt_identities.push(ids);
        frames.push(shuffled);
    }

    Ok(SyntheticVideo {
        frames,
        gt_identities,
        gt_categories,
        gt_clean,
    })
}

/// Synthetic multi-scale context tokens: per frame and scale, each token is a
/// convex mixture of that frame's instance features plus Gaussian noise, so
/// cross-attention has recoverable structure.
pub fn generate_context<R: Rng>(
    rng: &mut R,
    video: &SyntheticVideo,
    tokens_per_scale: [usize; 3],
    noise_sigma: f64,
) -> Result<ContextFeatures> {
    if tokens_per_scale.contains(&0) {
        return Err(Error::InvalidConfig("token counts must be positive".into()));
    }
    let n = video.num_instances();
    let d = video.frames[0].cols;
    let mut scales = Vec::with_capacity(3);
    for &count in &tokens_per_scale {
        let mut frames = Vec::with_capacity(video.num_frames());
        for frame in &video.frames {
            let mut tokens = Mat::zeros(count, d);
            for tok in 0..count {
                let mut w: Vec<f64> = (0..n)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        g.exp()
                    })
                    .collect();
                let z: f64 = w.iter().sum();
                for x in w.iter_mut() {
                    *x /= z;
                }
                for (i, &wi) in w.iter().enumerate() {
                    let row = frame.row(i);
                    let out = tokens.row_mut(tok);
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += wi * v;
                    }
                }
                if noise_sigma > 0.0 {
                    for x in tokens.row_mut(tok).iter_mut() {
                        let g: f64 = rng.sample(StandardNormal);
                        *x += noise_sigma * g;
                    }
                }
            }
            frames.push(tokens);
        }
        scales.push(frames);
    }
    Ok(ContextFeatures {
        scales: scales.try_into().expect("three scales"),
    })
}

/// Sample one bridge triplet per instance per video: frame times s < t < e
/// drawn uniformly over all strict triples (1-based), flattened across
/// videos. Embeddings are the raw per-frame features.
pub fn sample_triplet_batch<R: Rng>(
    videos: &[SyntheticVideo],
    rng: &mut R,
) -> Result<TripletBatch> {
    let mut triplets = Vec::new();
    let mut next_id = 0usize;
    for video in videos {
        let t_frames = video.num_frames();
        if t_frames < 3 {
            return Err(Error::InvalidConfig(
                "triplet sampling requires at least 3 frames".into(),
            ));
        }
        // three distinct frames, sorted: uniform over all C(T,3) triples
        let s;
        let t;
        let e;
        loop {
            let mut pick = [
                rng.random_range(1..=t_frames),
                rng.random_range(1..=t_frames),
                rng.random_range(1..=t_frames),
            ];
            pick.sort_unstable();
            if pick[0] < pick[1] && pick[1] < pick[2] {
                s = pick[0];
                t = pick[1];
                e = pick[2];
                break;
            }
        }
        let times = TimeTriple::new(s, t, e)?;
        for inst in 0..video.num_instances() {
            triplets.push(BridgeTriplet {
                head: video.instance_feature(s - 1, inst).to_vec(),
                mid: video.instance_feature(t - 1, inst).to_vec(),
                tail: video.instance_feature(e - 1, inst).to_vec(),
                times,
                instance_id: next_id,
                category_id: video.gt_categories[inst],
            });
            next_id += 1;
        }
    }
    Ok(TripletBatch { triplets })
}
