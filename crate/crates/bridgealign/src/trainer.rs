//! Trains the embedding projector (raw query features -> l2-normalized
//! alignment embeddings) by gradient descent on the combined objective.
//! Only the projector is trainable; the category bank is frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize, normalize_jacobian_apply, Mat};
use crate::metrics::{
    bridge_deviation, classify_bridge_center, classify_frame_ensemble, entropy, InstanceTrajectory,
};
use crate::objectives::{bta_loss, BtaParams, TripletBatch};
use crate::simulator::{
    generate_category_bank, generate_video, sample_triplet_batch, CategoryBank, SimConfig,
    SyntheticVideo,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Either a single linear map or a one-hidden-layer tanh perceptron; the
/// output is always l2-normalized.
#[derive(Debug, Clone)]
pub enum Projector {
    Linear {
        w: Mat, // d_out x d_in
    },
    Mlp {
        w1: Mat, // hidden x d_in
        b1: Vec<f64>,
        w2: Mat, // d_out x hidden
        b2: Vec<f64>,
    },
}

impl Projector {
    pub fn init(
        rng: &mut ChaCha8Rng,
        kind: ProjectorKind,
        d_in: usize,
        d_out: usize,
        hidden: usize,
    ) -> Self {
        let normal = StandardNormal;
        let mut rand_mat = |rows: usize, cols: usize| {
            let sd = 1.0 / (cols as f64).sqrt();
            let mut m = Mat::zeros(rows, cols);
            for x in m.data.iter_mut() {
                let g: f64 = normal.sample(rng);
                *x = sd * g;
            }
            m
        };
        match kind {
            ProjectorKind::Linear => Projector::Linear {
                w: rand_mat(d_out, d_in),
            },
            ProjectorKind::Mlp => Projector::Mlp {
                w1: rand_mat(hidden, d_in),
                b1: vec![0.0; hidden],
                w2: rand_mat(d_out, hidden),
                b2: vec![0.0; d_out],
            },
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            Projector::Linear { w } => w.cols,
            Projector::Mlp { w1, .. } => w1.cols,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Projector::Linear { w } => w.rows,
            Projector::Mlp { w2, .. } => w2.rows,
        }
    }

    fn forward_raw(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        match self {
            Projector::Linear { w } => (w.matvec(x), None),
            Projector::Mlp { w1, b1, w2, b2 } => {
                let mut h = w1.matvec(x);
                for (hi, bi) in h.iter_mut().zip(b1) {
                    *hi = (*hi + bi).tanh();
                }
                let mut raw = w2.matvec(&h);
                for (ri, bi) in raw.iter_mut().zip(b2) {
                    *ri += bi;
                }
                (raw, Some(h))
            }
        }
    }

    /// Forward map followed by l2 normalization.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                left: x.len(),
                right: self.d_in(),
            });
        }
        let (raw, _) = self.forward_raw(x);
        normalize(&raw)
    }

    pub fn num_params(&self) -> usize {
        match self {
            Projector::Linear { w } => w.data.len(),
            Projector::Mlp { w1, b1, w2, b2 } => {
                w1.data.len() + b1.len() + w2.data.len() + b2.len()
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Projector::Linear { w } => w.data.clone(),
            Projector::Mlp { w1, b1, w2, b2 } => {
                let mut v = w1.data.clone();
                v.extend_from_slice(b1);
                v.extend_from_slice(&w2.data);
                v.extend_from_slice(b2);
                v
            }
        }
    }

    pub fn set_params(&mut self, values: &[f64]) {
        match self {
            Projector::Linear { w } => w.data.copy_from_slice(values),
            Projector::Mlp { w1, b1, w2, b2 } => {
                let mut off = 0;
                for dst in [&mut w1.data, b1, &mut w2.data, b2] {
                    let n = dst.len();
                    dst.copy_from_slice(&values[off..off + n]);
                    off += n;
                }
            }
        }
    }

    /// Accumulate d(loss)/d(params) into `grad` given the input and the
    /// upstream gradient with respect to the normalized output.
    fn backward_into(&self, x: &[f64], g_unit: &[f64], grad: &mut [f64]) -> Result<()> {
        let (raw, hidden) = self.forward_raw(x);
        let g_raw = normalize_jacobian_apply(&raw, g_unit)?;
        match self {
            Projector::Linear { w } => {
                let (d_out, d_in) = (w.rows, w.cols);
                for i in 0..d_out {
                    let gi = g_raw[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &mut grad[i * d_in..(i + 1) * d_in];
                    for (gj, xj) in row.iter_mut().zip(x) {
                        *gj += gi * xj;
                    }
                }
            }
            Projector::Mlp { w1, w2, .. } => {
                let h = hidden.expect("mlp cache");
                let (hdim, d_in) = (w1.rows, w1.cols);
                let d_out = w2.rows;
                // raw = W2 h + b2
                let g_h = w2.matvec_t(&g_raw);
                // layout: [w1, b1, w2, b2]
                let (w1_g, rest) = grad.split_at_mut(hdim * d_in);
                let (b1_g, rest) = rest.split_at_mut(hdim);
                let (w2_g, b2_g) = rest.split_at_mut(d_out * hdim);
                for i in 0..d_out {
                    let gi = g_raw[i];
                    b2_g[i] += gi;
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &mut w2_g[i * hdim..(i + 1) * hdim];
                    for (gj, hj) in row.iter_mut().zip(&h) {
                        *gj += gi * hj;
                    }
                }
                for k in 0..hdim {
                    let g_pre = g_h[k] * (1.0 - h[k] * h[k]);
                    b1_g[k] += g_pre;
                    if g_pre == 0.0 {
                        continue;
                    }
                    let row = &mut w1_g[k * d_in..(k + 1) * d_in];
                    for (gj, xj) in row.iter_mut().zip(x) {
                        *gj += g_pre * xj;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_videos: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub delta: f64,
    pub k: usize,
    pub temperature: f64,
    pub projector: ProjectorKind,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_videos: 2,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            delta: 0.5,
            k: 5,
            temperature: 0.07,
            projector: ProjectorKind::Mlp,
            hidden: 64,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }

    pub fn bta_params(&self) -> BtaParams {
        BtaParams {
            delta: self.delta,
            k: self.k,
            temperature: self.temperature,
            renormalize_center: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub htm: f64,
    pub bc: f64,
    pub btc: f64,
}

/// Project every embedding of a raw triplet batch.
pub fn project_batch(projector: &Projector, raw: &TripletBatch) -> Result<TripletBatch> {
    let mut out = raw.clone();
    for t in out.triplets.iter_mut() {
        t.head = projector.project(&t.head)?;
        t.mid = projector.project(&t.mid)?;
        t.tail = projector.project(&t.tail)?;
    }
    Ok(out)
}

/// d(bta_loss)/d(params) for a raw batch, via the chain rule through the
/// projector and its normalization. Accumulation order is fixed by triplet
/// index, so the result is deterministic.
pub fn projector_gradient(
    projector: &Projector,
    raw: &TripletBatch,
    bank: &CategoryBank,
    params: &BtaParams,
) -> Result<(f64, crate::objectives::LossReport, Vec<f64>)> {
    let projected = project_batch(projector, raw)?;
    let report = bta_loss(&projected, bank, params)?;
    let mut grad = vec![0.0; projector.num_params()];
    for (t_raw, g) in raw.triplets.iter().zip(&report.grads) {
        projector.backward_into(&t_raw.head, &g.head, &mut grad)?;
        projector.backward_into(&t_raw.mid, &g.mid, &mut grad)?;
        projector.backward_into(&t_raw.tail, &g.tail, &mut grad)?;
    }
    Ok((report.total, report.clone(), grad))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

/// Train the projector on the videos' triplet batches. One optimizer step
/// per epoch; fully deterministic per seed.
pub fn train_projector(
    videos: &[SyntheticVideo],
    bank: &CategoryBank,
    cfg: &TrainConfig,
) -> Result<(Projector, Vec<EpochStats>)> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::Empty("video set".into()));
    }
    let d_in = videos[0].frames[0].cols;
    let d_out = bank.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut projector = Projector::init(&mut rng, cfg.projector, d_in, d_out, cfg.hidden);
    let bta = cfg.bta_params();

    let mut params = projector.params();
    let mut adam = AdamState {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        step: 0,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batch = sample_triplet_batch(videos, &mut rng)?;
        let (total, report, grad) = projector_gradient(&projector, &batch, bank, &bta)?;
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("training step at epoch {epoch}")));
        }
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * (g + cfg.weight_decay * *p);
                }
            }
            OptimizerKind::Adam => {
                adam.step += 1;
                let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                let bc1 = 1.0 - b1.powi(adam.step as i32);
                let bc2 = 1.0 - b2.powi(adam.step as i32);
                for i in 0..params.len() {
                    adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grad[i];
                    adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let mhat = adam.m[i] / bc1;
                    let vhat = adam.v[i] / bc2;
                    // decoupled weight decay
                    params[i] -= cfg.learning_rate
                        * (mhat / (vhat.sqrt() + cfg.adam_epsilon) + cfg.weight_decay * params[i]);
                }
            }
        }
        projector.set_params(&params);
        history.push(EpochStats {
            epoch,
            total,
            htm: report.htm,
            bc: report.bc,
            btc: report.btc,
        });
    }
    Ok((projector, history))
}

/// End-to-end parameter-space finite-difference check of
/// d(bta_loss)/d(projector parameters).
pub fn gradcheck_projector(
    projector: &Projector,
    raw: &TripletBatch,
    bank: &CategoryBank,
    params: &BtaParams,
    eps: f64,
) -> Result<f64> {
    let (_, _, analytic) = projector_gradient(projector, raw, bank, params)?;
    let point = projector.params();
    let f = |theta: &[f64]| -> Result<f64> {
        let mut p = projector.clone();
        p.set_params(theta);
        let projected = project_batch(&p, raw)?;
        bta_loss(&projected, bank, params).map(|r| r.total)
    };
    crate::objectives::finite_difference_check(&f, &point, &analytic, eps)
}

/// Classification summary of a projector on a video set.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub bridge_center_accuracy: f64,
    pub frame_ensemble_accuracy: f64,
    pub bridge_center_entropy: f64,
    pub frame_ensemble_entropy: f64,
    pub bridge_deviation_raw: f64,
    pub bridge_deviation_projected: f64,
    pub instances: usize,
}

/// Classify every instance of every video both ways, using ground-truth
/// association to assemble trajectories.
pub fn evaluate_projector(
    projector: &Projector,
    videos: &[SyntheticVideo],
    bank: &CategoryBank,
    temperature: f64,
) -> Result<EvalSummary> {
    let mut bc_hits = 0usize;
    let mut fe_hits = 0usize;
    let mut bc_entropy = 0.0;
    let mut fe_entropy = 0.0;
    let mut dev_raw = 0.0;
    let mut dev_proj = 0.0;
    let mut count = 0usize;
    for video in videos {
        let t_frames = video.num_frames();
        for inst in 0..video.num_instances() {
            let raw_traj: Vec<Vec<f64>> = (0..t_frames)
                .map(|t| video.instance_feature(t, inst).to_vec())
                .collect();
            let projected: Vec<Vec<f64>> = raw_traj
                .iter()
                .map(|x| projector.project(x))
                .collect::<Result<_>>()?;
            if t_frames >= 3 {
                dev_raw += bridge_deviation(&raw_traj)?;
                dev_proj += bridge_deviation(&projected)?;
            }
            let traj = InstanceTrajectory {
                embeddings: projected,
                category_id: video.gt_categories[inst],
                instance_id: inst,
            };
            let (bc_cat, bc_scores) = classify_bridge_center(&traj, bank, temperature)?;
            let (fe_cat, fe_scores) = classify_frame_ensemble(&traj, bank, temperature)?;
            bc_hits += usize::from(bc_cat == traj.category_id);
            fe_hits += usize::from(fe_cat == traj.category_id);
            bc_entropy += entropy(&bc_scores);
            fe_entropy += entropy(&fe_scores);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("evaluation set".into()));
    }
    let n = count as f64;
    Ok(EvalSummary {
        bridge_center_accuracy: bc_hits as f64 / n,
        frame_ensemble_accuracy: fe_hits as f64 / n,
        bridge_center_entropy: bc_entropy / n,
        frame_ensemble_entropy: fe_entropy / n,
        bridge_deviation_raw: dev_raw / n,
        bridge_deviation_projected: dev_proj / n,
        instances: count,
    })
}

/// One (delta, frames) cell of the hyper-parameter survey.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub delta: f64,
    pub frames: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub bridge_center_accuracy: f64,
    pub frame_ensemble_accuracy: f64,
    pub bridge_center_entropy: f64,
    pub frame_ensemble_entropy: f64,
}

/// Train-and-evaluate one short run per (delta, frames) grid cell. Cells are
/// independent, so they run through the data-parallel map; results come back
/// in grid order (frames-major, delta-minor).
pub fn run_sweep(
    sim_base: &SimConfig,
    train_base: &TrainConfig,
    delta_grid: &[f64],
    frames_grid: &[usize],
    epochs: usize,
    temperature: f64,
) -> Result<Vec<SweepCell>> {
    if delta_grid.is_empty() || frames_grid.is_empty() {
        return Err(Error::Empty("sweep grid".into()));
    }
    let cells: Vec<(f64, usize)> = frames_grid
        .iter()
        .flat_map(|&t| delta_grid.iter().map(move |&d| (d, t)))
        .collect();
    let results = crate::exec::map_indexed(&cells, |idx, &(delta, frames)| -> Result<SweepCell> {
        let sim = SimConfig {
            frames,
            seed: sim_base.seed ^ idx as u64,
            ..sim_base.clone()
        };
        sim.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
        let bank = generate_category_bank(&mut rng, sim.categories, sim.d_out, sim.max_similarity)?;
        let train_cfg = TrainConfig {
            delta,
            epochs,
            seed: train_base.seed ^ idx as u64,
            ..train_base.clone()
        };
        let videos: Vec<SyntheticVideo> = (0..train_cfg.batch_videos.max(1))
            .map(|_| generate_video(&sim, &bank, &mut rng))
            .collect::<Result<_>>()?;
        let held_out = vec![generate_video(&sim, &bank, &mut rng)?];
        let (projector, history) = train_projector(&videos, &bank, &train_cfg)?;
        let summary = evaluate_projector(&projector, &held_out, &bank, temperature)?;
        Ok(SweepCell {
            delta,
            frames,
            initial_loss: history.first().map_or(f64::NAN, |h| h.total),
            final_loss: history.last().map_or(f64::NAN, |h| h.total),
            bridge_center_accuracy: summary.bridge_center_accuracy,
            frame_ensemble_accuracy: summary.frame_ensemble_accuracy,
            bridge_center_entropy: summary.bridge_center_entropy,
            frame_ensemble_entropy: summary.frame_ensemble_entropy,
        })
    });
    results.into_iter().collect()
}
