use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::estimator::mse;
use super::params::{tanh_backward, tanh_in_place, Dense, Owner, ParamStore};
use super::time_embedding;
use crate::error::{Error, Result};
use crate::forward::simulate_chain_to;
use crate::image::{Grid, Shape};
use crate::posterior::{NoisePredictor, ScalePredictor};
use crate::rng::RngStream;
use crate::schedule::{check_step, NoiseSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Width of the first backbone layer.
    pub hidden: usize,
    /// Width of the shared feature vector the heads read.
    pub feature: usize,
    /// Hidden width inside each head.
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub total_steps: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            feature: 64,
            head_hidden: 32,
            embed_dim: 16,
            total_steps: 20,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    inner: Dense,
    outer: Dense,
}

/// Shared backbone plus one small output network per step.
///
/// ```text
/// h1  = tanh(Wx x + Ws s + Wt embed(i) + b1)
/// z   = tanh(W2 h1 + b2)
/// S   = tanh(Wf s + bf)              scale fusion
/// P_j = tanh(Wp embed(j) + bp)       head position code
/// Z_j = B_j tanh(A_j (z + S + P_j) + c_j) + d_j,   zero for j > i
/// ```
#[derive(Debug)]
pub struct ReversePredictor {
    config: PredictorConfig,
    shape: Shape,
    params: ParamStore,
    in_x: Dense,
    in_s: Dense,
    in_t: Dense,
    mid: Dense,
    fuse: Dense,
    pos: Dense,
    heads: Vec<Head>,
    backbone_runs: AtomicUsize,
    invocations: AtomicUsize,
}

impl Clone for ReversePredictor {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            shape: self.shape,
            params: self.params.clone(),
            in_x: self.in_x,
            in_s: self.in_s,
            in_t: self.in_t,
            mid: self.mid,
            fuse: self.fuse,
            pos: self.pos,
            heads: self.heads.clone(),
            backbone_runs: AtomicUsize::new(0),
            invocations: AtomicUsize::new(0),
        }
    }
}

struct Backbone {
    h1: Vec<f64>,
    z: Vec<f64>,
    fused: Vec<f64>,
}

struct HeadPass {
    embed: Vec<f64>,
    pos: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    out: Vec<f64>,
}

/// One training example: a noisy state with its scale input and the true
/// composite noises `eps_tilde_1..=eps_tilde_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSample {
    pub step: usize,
    pub x_i: Grid,
    pub scale: Grid,
    /// `targets[j - 1]` is `eps_tilde_j`.
    pub targets: Vec<Grid>,
}

impl ReversePredictor {
    pub fn new(shape: Shape, config: PredictorConfig, seed: u64) -> Result<Self> {
        let PredictorConfig {
            hidden,
            feature,
            head_hidden,
            embed_dim,
            total_steps,
        } = config;
        if hidden == 0 || feature == 0 || head_hidden == 0 || total_steps == 0 {
            return Err(Error::InvalidConfig("predictor widths and head count must be positive".into()));
        }
        time_embedding(0, embed_dim)?;
        let d = shape.len();
        let mut rng = RngStream::new(seed, 0x9ED);
        let mut p = ParamStore::new();
        let in_x = Dense::new(&mut p, "backbone.in_x", Owner::Shared, d, hidden, false, &mut rng);
        let in_s = Dense::new(&mut p, "backbone.in_scale", Owner::Shared, d, hidden, false, &mut rng);
        let in_t = Dense::new(&mut p, "backbone.in_time", Owner::Shared, embed_dim, hidden, true, &mut rng);
        let mid = Dense::new(&mut p, "backbone.mid", Owner::Shared, hidden, feature, true, &mut rng);
        let fuse = Dense::new(&mut p, "backbone.scale_fusion", Owner::Shared, d, feature, true, &mut rng);
        let pos = Dense::new(&mut p, "backbone.head_position", Owner::Shared, embed_dim, feature, true, &mut rng);
        let heads = (1..=total_steps)
            .map(|j| Head {
                inner: Dense::new(&mut p, &format!("head{j}.inner"), Owner::Head(j), feature, head_hidden, true, &mut rng),
                outer: Dense::new(&mut p, &format!("head{j}.outer"), Owner::Head(j), head_hidden, d, true, &mut rng),
            })
            .collect();
        Ok(Self {
            config,
            shape,
            params: p,
            in_x,
            in_s,
            in_t,
            mid,
            fuse,
            pos,
            heads,
            backbone_runs: AtomicUsize::new(0),
            invocations: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of backbone evaluations so far.
    pub fn backbone_runs(&self) -> usize {
        self.backbone_runs.load(Ordering::Relaxed)
    }

    fn check(&self, x: &Grid, scale: &Grid, step: usize) -> Result<()> {
        x.ensure_shape(self.shape)?;
        scale.ensure_shape(self.shape)?;
        check_step(step, 1, self.config.total_steps)
    }

    fn backbone(&self, x: &Grid, scale: &Grid, step: usize) -> Result<Backbone> {
        self.backbone_runs.fetch_add(1, Ordering::Relaxed);
        let p = &self.params;
        let mut h1 = vec![0.0; self.config.hidden];
        self.in_x.forward_add(p, x.data(), &mut h1);
        self.in_s.forward_add(p, scale.data(), &mut h1);
        self.in_t.forward_add(p, &time_embedding(step, self.config.embed_dim)?, &mut h1);
        tanh_in_place(&mut h1);
        let mut z = self.mid.forward(p, &h1);
        tanh_in_place(&mut z);
        let mut fused = self.fuse.forward(p, scale.data());
        tanh_in_place(&mut fused);
        Ok(Backbone { h1, z, fused })
    }

    fn head(&self, bb: &Backbone, j: usize) -> Result<HeadPass> {
        let p = &self.params;
        let embed = time_embedding(j, self.config.embed_dim)?;
        let mut pos = self.pos.forward(p, &embed);
        tanh_in_place(&mut pos);
        let u: Vec<f64> = bb.z.iter().zip(&bb.fused).zip(&pos).map(|((a, b), c)| a + b + c).collect();
        let head = &self.heads[j - 1];
        let mut v = head.inner.forward(p, &u);
        tanh_in_place(&mut v);
        let out = head.outer.forward(p, &v);
        Ok(HeadPass { embed, pos, u, v, out })
    }

    /// Loss `sum_{j <= i, include(j)} mse(Z_j, eps_tilde_j)` of one sample;
    /// the gradient is added to `grad` when given. Also returns the
    /// per-head terms (zero for masked or excluded heads).
    pub fn sample_loss(
        &self,
        sample: &PredictorSample,
        include: impl Fn(usize) -> bool,
        grad: Option<&mut [f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(&sample.x_i, &sample.scale, sample.step)?;
        if sample.targets.len() < sample.step {
            return Err(Error::InvalidArgument(format!(
                "sample at step {} carries {} targets",
                sample.step,
                sample.targets.len()
            )));
        }
        let bb = self.backbone(&sample.x_i, &sample.scale, sample.step)?;
        let mut per_head = vec![0.0; self.config.total_steps];
        let active: Vec<usize> = (1..=sample.step).filter(|&j| include(j)).collect();
        let mut passes = Vec::with_capacity(active.len());
        for &j in &active {
            let target = &sample.targets[j - 1];
            target.ensure_shape(self.shape)?;
            let pass = self.head(&bb, j)?;
            per_head[j - 1] = mse(&pass.out, target.data());
            passes.push(pass);
        }
        let total = per_head.iter().sum();
        let Some(grad) = grad else {
            return Ok((total, per_head));
        };
        let p = &self.params;
        let d = self.shape.len() as f64;
        let mut dz = vec![0.0; self.config.feature];
        let mut dfused = vec![0.0; self.config.feature];
        for (&j, pass) in active.iter().zip(&passes) {
            let head = &self.heads[j - 1];
            let dout: Vec<f64> = pass
                .out
                .iter()
                .zip(sample.targets[j - 1].data())
                .map(|(o, t)| 2.0 * (o - t) / d)
                .collect();
            let mut dv = vec![0.0; self.config.head_hidden];
            head.outer.backward(p, &pass.v, &dout, grad, Some(&mut dv));
            let dv = tanh_backward(&pass.v, &dv);
            let mut du = vec![0.0; self.config.feature];
            head.inner.backward(p, &pass.u, &dv, grad, Some(&mut du));
            for k in 0..du.len() {
                dz[k] += du[k];
                dfused[k] += du[k];
            }
            self.pos.backward(p, &pass.embed, &tanh_backward(&pass.pos, &du), grad, None);
        }
        let dz = tanh_backward(&bb.z, &dz);
        let mut dh1 = vec![0.0; self.config.hidden];
        self.mid.backward(p, &bb.h1, &dz, grad, Some(&mut dh1));
        let dh1 = tanh_backward(&bb.h1, &dh1);
        self.in_x.backward(p, sample.x_i.data(), &dh1, grad, None);
        self.in_s.backward(p, sample.scale.data(), &dh1, grad, None);
        self.in_t.backward(p, &time_embedding(sample.step, self.config.embed_dim)?, &dh1, grad, None);
        self.fuse.backward(p, sample.scale.data(), &tanh_backward(&bb.fused, &dfused), grad, None);
        Ok((total, per_head))
    }
}

impl NoisePredictor for ReversePredictor {
    fn total_steps(&self) -> usize {
        self.config.total_steps
    }

    fn predict_noises(&self, x_i: &Grid, scale: &Grid, step: usize) -> Result<Vec<Grid>> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        self.check(x_i, scale, step)?;
        let bb = self.backbone(x_i, scale, step)?;
        (1..=self.config.total_steps)
            .map(|j| {
                if j <= step {
                    Grid::new(self.shape, self.head(&bb, j)?.out)
                } else {
                    Ok(Grid::zeros(self.shape))
                }
            })
            .collect()
    }

    fn invocations(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }
}

/// Mean over the batch of `mse(Z_j, eps_tilde_j)`, counting samples with
/// `j > i` as zero.
pub fn head_loss(pred: &ReversePredictor, batch: &[PredictorSample], j: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_step(j, 1, pred.config.total_steps)?;
    let mut total = 0.0;
    for s in batch {
        if j <= s.step {
            total += pred.sample_loss(s, |k| k == j, None)?.0;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Simulates the forward chain of `x0` up to `step` and packages the state,
/// the estimated scale and the true composite noises.
pub fn make_predictor_sample(
    x0: &Grid,
    sched: &dyn NoiseSchedule,
    estimator: &dyn ScalePredictor,
    step: usize,
    rng: &mut RngStream,
) -> Result<PredictorSample> {
    check_step(step, 1, sched.total_steps())?;
    let traj = simulate_chain_to(x0, sched, rng, 1, step)?;
    let x_i = traj.last().state.clone();
    let scale = estimator.estimate_scale(&x_i, step)?;
    Ok(PredictorSample {
        step,
        x_i,
        scale,
        targets: traj.records[1..].iter().map(|r| r.composite_noise.clone()).collect(),
    })
}
