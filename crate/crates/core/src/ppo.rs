//! Proximal policy optimization with a hand-differentiated MLP.
//!
//! The policy is a shared ELU trunk with a linear Gaussian-mean head, a
//! linear value head and a state-independent log-std vector. Observations are
//! normalized with running statistics and the value head predicts returns in
//! normalized units.
//!
//! Checkpoints are JSON objects with `format`, `version`, the full PPO and env
//! configs, network arrays (`w` stored input-major), both normalizers, the
//! master RNG state and the last update's metrics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis as NdAxis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rlenv::{EnvConfig, VecEnv, ACT_DIM, OBS_DIM};

pub const CHECKPOINT_FORMAT: &str = "quadjump-ppo";
pub const CHECKPOINT_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `inputs × outputs`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((inputs, outputs)), b: Array1::zeros(outputs) }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let (r, c) = (inputs.max(outputs), inputs.min(outputs));
        let g = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        // sign fix so the distribution is uniform over orthogonal matrices
        let rd = qr.r();
        for j in 0..c {
            if rd[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let w = Array2::from_shape_fn((inputs, outputs), |(i, o)| {
            gain * if inputs >= outputs { q[(i, o)] } else { q[(o, i)] }
        });
        Self { w, b: Array1::zeros(outputs) }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub trunk: Vec<Linear>,
    pub mu: Linear,
    pub value: Linear,
    pub log_std: Array1<f64>,
}

/// Forward-pass outputs plus the activations `backward` needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub mu: Array2<f64>,
    pub value: Array1<f64>,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        widths: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut trunk = Vec::with_capacity(widths.len());
        let mut prev = obs_dim;
        for &w in widths {
            trunk.push(Linear::orthogonal(prev, w, std::f64::consts::SQRT_2, rng));
            prev = w;
        }
        Self {
            trunk,
            mu: Linear::orthogonal(prev, act_dim, 0.01, rng),
            value: Linear::orthogonal(prev, 1, 1.0, rng),
            log_std: Array1::from_elem(act_dim, init_log_std),
        }
    }

    pub fn zeros(obs_dim: usize, act_dim: usize, widths: &[usize]) -> Self {
        let mut trunk = Vec::new();
        let mut prev = obs_dim;
        for &w in widths {
            trunk.push(Linear::zeros(prev, w));
            prev = w;
        }
        Self {
            trunk,
            mu: Linear::zeros(prev, act_dim),
            value: Linear::zeros(prev, 1),
            log_std: Array1::zeros(act_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.obs_dim(), self.act_dim(), &self.widths())
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.first().unwrap_or(&self.mu).w.nrows()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.trunk.iter().map(|l| l.b.len()).collect()
    }

    pub fn sigma(&self) -> Array1<f64> {
        self.log_std.mapv(f64::exp)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Forward> {
        if x.ncols() != self.obs_dim() {
            return Err(Error::Shape { expected: self.obs_dim(), got: x.ncols() });
        }
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.trunk.len());
        for l in &self.trunk {
            let z = l.apply(post.last().unwrap_or(x));
            post.push(z.mapv(elu));
            pre.push(z);
        }
        let h = post.last().unwrap_or(x);
        let mu = self.mu.apply(h);
        let value = self.value.apply(h).column(0).to_owned();
        Ok(Forward { mu, value, input: x.clone(), pre, post })
    }

    /// Parameter gradients from output gradients; the log-std gradient is
    /// passed through unchanged.
    pub fn backward(
        &self,
        f: &Forward,
        d_mu: &Array2<f64>,
        d_value: &Array1<f64>,
        d_log_std: &Array1<f64>,
    ) -> PolicyNet {
        let mut g = self.zeros_like();
        let h = f.post.last().unwrap_or(&f.input);
        let dv = d_value.view().insert_axis(NdAxis(1)).to_owned();
        g.mu.w = h.t().dot(d_mu);
        g.mu.b = d_mu.sum_axis(NdAxis(0));
        g.value.w = h.t().dot(&dv);
        g.value.b = dv.sum_axis(NdAxis(0));
        g.log_std = d_log_std.clone();
        let mut dh = d_mu.dot(&self.mu.w.t()) + dv.dot(&self.value.w.t());
        for i in (0..self.trunk.len()).rev() {
            let dz = &dh * &f.pre[i].mapv(elu_grad);
            let prev = if i == 0 { &f.input } else { &f.post[i - 1] };
            g.trunk[i].w = prev.t().dot(&dz);
            g.trunk[i].b = dz.sum_axis(NdAxis(0));
            if i > 0 {
                dh = dz.dot(&self.trunk[i].w.t());
            }
        }
        g
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for l in self.trunk.iter().chain([&self.mu, &self.value]) {
            v.push(l.w.as_slice().expect("standard layout"));
            v.push(l.b.as_slice().expect("standard layout"));
        }
        v.push(self.log_std.as_slice().expect("standard layout"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        let Self { trunk, mu, value, log_std } = self;
        for l in trunk.iter_mut().chain([mu, value]) {
            v.push(l.w.as_slice_mut().expect("standard layout"));
            v.push(l.b.as_slice_mut().expect("standard layout"));
        }
        v.push(log_std.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Diagonal Gaussian log-density of each row of `a`.
pub fn log_prob(mu: &Array2<f64>, log_std: &Array1<f64>, a: &Array2<f64>) -> Array1<f64> {
    let k = log_std.len() as f64;
    let norm = log_std.sum() + 0.5 * k * LN_2PI;
    let inv = log_std.mapv(|l| (-l).exp());
    Array1::from_iter(mu.rows().into_iter().zip(a.rows()).map(|(m, a)| {
        let q: f64 = m.iter().zip(a).zip(&inv).map(|((m, a), s)| ((a - m) * s).powi(2)).sum();
        -0.5 * q - norm
    }))
}

pub fn entropy(log_std: &Array1<f64>) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (1.0 + LN_2PI)).sum()
}

/// Running mean and variance (parallel-merge form) for input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim], count: 1e-4, clip }
    }

    pub fn update(&mut self, x: &Array2<f64>) {
        let n = x.nrows() as f64;
        if n == 0.0 {
            return;
        }
        let bm = x.mean_axis(NdAxis(0)).expect("non-empty");
        let bv = x.var_axis(NdAxis(0), 0.0);
        let tot = self.count + n;
        for k in 0..self.mean.len() {
            let d = bm[k] - self.mean[k];
            let m2 = self.var[k] * self.count + bv[k] * n + d * d * self.count * n / tot;
            self.mean[k] += d * n / tot;
            self.var[k] = m2 / tot;
        }
        self.count = tot;
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = ((*v - self.mean[k]) / (self.var[k] + 1e-8).sqrt()).clamp(-self.clip, self.clip);
            }
        }
        y
    }

    pub fn scale(&self) -> f64 {
        (self.var[0] + 1e-8).sqrt()
    }

    pub fn denormalize_scalar(&self, v: f64) -> f64 {
        v * self.scale() + self.mean[0]
    }

    pub fn normalize_scalar(&self, v: f64) -> f64 {
        (v - self.mean[0]) / self.scale()
    }
}

/// Generalized advantage estimation over one env's trajectory. `dones[t]`
/// marks that the episode ended after step `t`; `last_value` bootstraps the
/// step after the final one.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut run = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next - values[t];
        run = delta + gamma * lambda * live * run;
        adv[t] = run;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub num_envs: usize,
    /// Steps per env per update.
    pub horizon: usize,
    pub total_steps: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    /// Adapts the learning rate toward this KL per update when set.
    pub kl_target: Option<f64>,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub widths: [usize; 3],
    pub init_log_std: f64,
    pub obs_clip: f64,
    pub seed: u64,
    /// Updates between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            num_envs: 256,
            horizon: 64,
            total_steps: 5_000_000,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            kl_target: None,
            epochs: 4,
            minibatches: 4,
            entropy_coef: 0.005,
            value_coef: 1.0,
            max_grad_norm: 1.0,
            widths: [512, 256, 128],
            init_log_std: 0.5f64.ln(),
            obs_clip: 5.0,
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.num_envs == 0 || self.horizon == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("envs, horizon, epochs and minibatches must be positive");
        }
        if self.minibatches > self.num_envs * self.horizon {
            return bad("more minibatches than samples");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must be in (0, 1]");
        }
        if !(self.clip > 0.0 && self.lr > 0.0 && self.max_grad_norm > 0.0) {
            return bad("clip, lr and max_grad_norm must be positive");
        }
        if self.widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.num_envs * self.horizon
    }

    /// Whole updates that fit in `total_steps`, at least one.
    pub fn num_updates(&self) -> usize {
        (self.total_steps as usize / self.batch_size()).max(1)
    }
}

/// Flattened rollout data, one row per sample.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    pub values: Array1<f64>,
    pub rewards: Array1<f64>,
    pub dones: Vec<bool>,
    pub advantages: Array1<f64>,
    /// Value targets in the same units as the value head.
    pub returns: Array1<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for got in [
            self.actions.nrows(),
            self.log_probs.len(),
            self.values.len(),
            self.rewards.len(),
            self.dones.len(),
            self.advantages.len(),
            self.returns.len(),
        ] {
            if got != n {
                return Err(Error::Shape { expected: n, got });
            }
        }
        Ok(())
    }

    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n < 2.0 {
            return;
        }
        let m = self.advantages.mean().unwrap_or(0.0);
        let s = self.advantages.std(0.0);
        self.advantages.mapv_inplace(|a| (a - m) / (s + 1e-8));
    }

    fn select(&self, idx: &[usize]) -> RolloutBatch {
        RolloutBatch {
            obs: self.obs.select(NdAxis(0), idx),
            actions: self.actions.select(NdAxis(0), idx),
            log_probs: self.log_probs.select(NdAxis(0), idx),
            values: self.values.select(NdAxis(0), idx),
            rewards: self.rewards.select(NdAxis(0), idx),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
            advantages: self.advantages.select(NdAxis(0), idx),
            returns: self.returns.select(NdAxis(0), idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub total: f64,
}

/// PPO loss on `batch` (advantages used as given) and its parameter gradient.
pub fn ppo_loss(net: &PolicyNet, batch: &RolloutBatch, cfg: &PpoConfig) -> Result<(LossStats, PolicyNet)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Shape { expected: 1, got: 0 });
    }
    let f = net.forward(&batch.obs)?;
    let logp = log_prob(&f.mu, &net.log_std, &batch.actions);
    let inv_var = net.log_std.mapv(|l| (-2.0 * l).exp());
    let nf = n as f64;
    let mut d_mu = Array2::zeros(f.mu.raw_dim());
    let mut d_log_std = Array1::zeros(net.act_dim());
    let mut d_value = Array1::zeros(n);
    let (mut pl, mut vl, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let lr = logp[i] - batch.log_probs[i];
        let ratio = lr.exp();
        let a = batch.advantages[i];
        let s1 = ratio * a;
        let s2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        pl -= s1.min(s2) / nf;
        kl += ((ratio - 1.0) - lr) / nf;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1.0 / nf;
        }
        if s1 <= s2 {
            let dlogp = -a * ratio / nf;
            for k in 0..net.act_dim() {
                let diff = batch.actions[(i, k)] - f.mu[(i, k)];
                d_mu[(i, k)] = dlogp * diff * inv_var[k];
                d_log_std[k] += dlogp * (diff * diff * inv_var[k] - 1.0);
            }
        }
        let e = f.value[i] - batch.returns[i];
        vl += e * e / nf;
        d_value[i] = cfg.value_coef * 2.0 * e / nf;
    }
    let ent = entropy(&net.log_std);
    d_log_std -= cfg.entropy_coef;
    let total = pl + cfg.value_coef * vl - cfg.entropy_coef * ent;
    let stats = LossStats { policy_loss: pl, value_loss: vl, entropy: ent, approx_kl: kl, clip_frac: clipped, total };
    if !total.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {total}")));
    }
    Ok((stats, net.backward(&f, &d_mu, &d_value, &d_log_std)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &PolicyNet) -> Self {
        let z: Vec<Vec<f64>> = net.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: z.clone(), v: z }
    }

    pub fn step(&mut self, net: &mut PolicyNet, grad: &PolicyNet, lr: f64) {
        self.t += 1;
        let b1 = 1.0 - self.beta1.powi(self.t as i32);
        let b2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in net.tensors_mut().into_iter().zip(grad.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                p[k] -= lr * (m[k] / b1) / ((v[k] / b2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `g` to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(g: &mut PolicyNet, max_norm: f64) -> f64 {
    let norm = g.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Epochs of shuffled minibatch steps. Advantages are normalized first. The
/// network is left untouched if any minibatch loss is non-finite.
pub fn update<R: Rng + ?Sized>(
    net: &mut PolicyNet,
    opt: &mut Adam,
    batch: &mut RolloutBatch,
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut R,
) -> Result<LossStats> {
    batch.validate()?;
    batch.normalize_advantages();
    let n = batch.len();
    let mb = (n / cfg.minibatches).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    let (net0, opt0) = (net.clone(), opt.clone());
    let mut acc = LossStats::default();
    let mut count: f64 = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            if chunk.len() < mb {
                continue;
            }
            let sub = batch.select(chunk);
            let (s, mut g) = match ppo_loss(net, &sub, cfg) {
                Ok(v) => v,
                Err(e) => {
                    *net = net0;
                    *opt = opt0;
                    return Err(e);
                }
            };
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            opt.step(net, &g, lr);
            acc.policy_loss += s.policy_loss;
            acc.value_loss += s.value_loss;
            acc.entropy += s.entropy;
            acc.approx_kl += s.approx_kl;
            acc.clip_frac += s.clip_frac;
            acc.total += s.total;
            count += 1.0;
        }
    }
    if !net.is_finite() {
        *net = net0;
        *opt = opt0;
        return Err(Error::Diverged("non-finite parameters".into()));
    }
    for v in [
        &mut acc.policy_loss,
        &mut acc.value_loss,
        &mut acc.entropy,
        &mut acc.approx_kl,
        &mut acc.clip_frac,
        &mut acc.total,
    ] {
        *v /= count.max(1.0);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_episode_reward: f64,
    /// Degrees, at episode end.
    pub mean_final_angle_deg: f64,
    pub collision_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub lr: f64,
    pub mean_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub net: PolicyNet,
    pub obs_norm: RunningNorm,
    pub value_norm: RunningNorm,
    pub updates: usize,
    pub env_steps: u64,
    pub rng: ChaCha8Rng,
    pub metrics: Option<UpdateMetrics>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(f);
            serde_json::to_writer(&mut w, self)?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        if c.net.obs_dim() != OBS_DIM || c.net.act_dim() != ACT_DIM {
            return Err(Error::Shape { expected: OBS_DIM, got: c.net.obs_dim() });
        }
        Ok(c)
    }

    /// Deterministic actions (Gaussian means) for a batch of raw observations.
    pub fn act_batch(&self, obs: &[[f64; OBS_DIM]]) -> Result<Vec<[f64; ACT_DIM]>> {
        let x = Array2::from_shape_fn((obs.len(), OBS_DIM), |(i, k)| obs[i][k]);
        let f = self.net.forward(&self.obs_norm.normalize(&x))?;
        Ok(f.mu.rows().into_iter().map(|r| std::array::from_fn(|k| r[k])).collect())
    }

    pub fn act(&self, obs: &[f64; OBS_DIM]) -> Result<[f64; ACT_DIM]> {
        Ok(self.act_batch(std::slice::from_ref(obs))?[0])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<UpdateMetrics>,
}

fn to_matrix(rows: &[[f64; OBS_DIM]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), OBS_DIM), |(i, k)| rows[i][k])
}

const METRICS_HEADER: [&str; 13] = [
    "update",
    "env_steps",
    "episodes",
    "mean_episode_reward",
    "mean_final_angle_deg",
    "collision_rate",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_frac",
    "lr",
    "mean_sigma",
];

fn metrics_record(m: &UpdateMetrics) -> Vec<String> {
    vec![
        m.update.to_string(),
        m.env_steps.to_string(),
        m.episodes.to_string(),
        m.mean_episode_reward.to_string(),
        m.mean_final_angle_deg.to_string(),
        m.collision_rate.to_string(),
        m.policy_loss.to_string(),
        m.value_loss.to_string(),
        m.entropy.to_string(),
        m.approx_kl.to_string(),
        m.clip_frac.to_string(),
        m.lr.to_string(),
        m.mean_sigma.to_string(),
    ]
}

pub fn write_metrics_csv<W: Write>(out: W, metrics: &[UpdateMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        w.write_record(metrics_record(m))?;
    }
    w.flush().map_err(|e| Error::io("metrics", e))?;
    Ok(())
}

/// Rollout/update loop. With `out_dir`, writes `metrics.csv`, periodic
/// `checkpoint_latest.json` and the final `checkpoint.json`; on divergence
/// the last good parameters are saved before returning the error.
pub fn train(
    ppo: &PpoConfig,
    env: &EnvConfig,
    out_dir: Option<&Path>,
    on_update: &mut dyn FnMut(&UpdateMetrics),
) -> Result<TrainOutcome> {
    ppo.validate()?;
    env.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ppo.seed);
    let mut net = PolicyNet::new(OBS_DIM, ACT_DIM, &ppo.widths, ppo.init_log_std, &mut rng);
    let mut opt = Adam::new(&net);
    let mut obs_norm = RunningNorm::new(OBS_DIM, ppo.obs_clip);
    let mut value_norm = RunningNorm::new(1, f64::MAX);
    let mut venv = VecEnv::new(env, ppo.num_envs, ppo.seed.wrapping_add(1))?;
    let mut obs = venv.reset_all()?;
    let (n, t_len) = (ppo.num_envs, ppo.horizon);
    let mut ep_return = vec![0.0; n];
    let mut lr = ppo.lr;
    let mut env_steps = 0u64;
    let mut history = Vec::new();
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let snapshot = |net: &PolicyNet, on: &RunningNorm, vn: &RunningNorm, rng: &ChaCha8Rng, updates, steps, m| Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        ppo: *ppo,
        env: env.clone(),
        net: net.clone(),
        obs_norm: on.clone(),
        value_norm: vn.clone(),
        updates,
        env_steps: steps,
        rng: rng.clone(),
        metrics: m,
    };

    for u in 0..ppo.num_updates() {
        let rows = n * t_len;
        let mut b_obs = Array2::zeros((rows, OBS_DIM));
        let mut b_act = Array2::zeros((rows, ACT_DIM));
        let mut b_logp = Array1::zeros(rows);
        let mut b_val = vec![0.0; rows];
        let mut b_rew = vec![0.0; rows];
        let mut b_done = vec![false; rows];
        let mut raw_obs = Vec::with_capacity(rows);
        let (mut episodes, mut ret_sum, mut ang_sum, mut collisions) = (0usize, 0.0, 0.0, 0usize);
        for t in 0..t_len {
            let x = obs_norm.normalize(&to_matrix(&obs));
            let f = net.forward(&x)?;
            let sigma = net.sigma();
            let mut actions = vec![[0.0; ACT_DIM]; n];
            for (e, a) in actions.iter_mut().enumerate() {
                for k in 0..ACT_DIM {
                    a[k] = f.mu[(e, k)] + sigma[k] * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let am = Array2::from_shape_fn((n, ACT_DIM), |(e, k)| actions[e][k]);
            let logp = log_prob(&f.mu, &net.log_std, &am);
            let steps = venv.step_all(&actions)?;
            // bootstrap truncated episodes from their final observation
            let trunc: Vec<usize> = (0..n).filter(|&e| steps[e].info.truncated).collect();
            let mut boot = vec![0.0; n];
            if !trunc.is_empty() {
                let fin: Vec<[f64; OBS_DIM]> =
                    trunc.iter().map(|&e| steps[e].final_obs.expect("final obs on done")).collect();
                let fv = net.forward(&obs_norm.normalize(&to_matrix(&fin)))?;
                for (j, &e) in trunc.iter().enumerate() {
                    boot[e] = value_norm.denormalize_scalar(fv.value[j]);
                }
            }
            for e in 0..n {
                // env-major rows so each env's trajectory is contiguous
                let r = e * t_len + t;
                b_obs.row_mut(r).assign(&x.row(e));
                b_act.row_mut(r).assign(&am.row(e));
                b_logp[r] = logp[e];
                b_val[r] = value_norm.denormalize_scalar(f.value[e]);
                b_rew[r] = steps[e].reward + ppo.gamma * boot[e];
                b_done[r] = steps[e].done;
                ep_return[e] += steps[e].reward;
                if steps[e].done {
                    episodes += 1;
                    ret_sum += ep_return[e];
                    ang_sum += steps[e].info.components.angle.to_degrees();
                    collisions += steps[e].info.collided as usize;
                    ep_return[e] = 0.0;
                }
            }
            raw_obs.extend_from_slice(&obs);
            obs = steps.iter().map(|s| s.obs).collect();
        }
        env_steps += rows as u64;
        let last = net.forward(&obs_norm.normalize(&to_matrix(&obs)))?;
        let mut adv = vec![0.0; rows];
        let mut ret = vec![0.0; rows];
        for e in 0..n {
            let sl = e * t_len..(e + 1) * t_len;
            let (a, r) = gae(
                &b_rew[sl.clone()],
                &b_val[sl.clone()],
                &b_done[sl.clone()],
                value_norm.denormalize_scalar(last.value[e]),
                ppo.gamma,
                ppo.lambda,
            );
            adv[sl.clone()].copy_from_slice(&a);
            ret[sl].copy_from_slice(&r);
        }
        let ret_m = Array2::from_shape_vec((rows, 1), ret.clone()).expect("shape");
        value_norm.update(&ret_m);
        let mut batch = RolloutBatch {
            obs: b_obs,
            actions: b_act,
            log_probs: b_logp,
            values: Array1::from(b_val),
            rewards: Array1::from(b_rew),
            dones: b_done,
            advantages: Array1::from(adv),
            returns: Array1::from_iter(ret.iter().map(|r| value_norm.normalize_scalar(*r))),
        };
        obs_norm.update(&to_matrix(&raw_obs));
        let stats = match update(&mut net, &mut opt, &mut batch, ppo, lr, &mut rng) {
            Ok(s) => s,
            Err(e) => {
                if let Some(d) = out_dir {
                    snapshot(&net, &obs_norm, &value_norm, &rng, u, env_steps, history.last().copied())
                        .save(&d.join("checkpoint_last_good.json"))?;
                }
                return Err(e);
            }
        };
        if let Some(target) = ppo.kl_target {
            if stats.approx_kl > 2.0 * target {
                lr = (lr / 1.5).max(1e-6);
            } else if stats.approx_kl < 0.5 * target {
                lr = (lr * 1.5).min(1e-2);
            }
        }
        let ep = episodes.max(1) as f64;
        let m = UpdateMetrics {
            update: u + 1,
            env_steps,
            episodes,
            mean_episode_reward: if episodes > 0 { ret_sum / ep } else { 0.0 },
            mean_final_angle_deg: if episodes > 0 { ang_sum / ep } else { 0.0 },
            collision_rate: if episodes > 0 { collisions as f64 / ep } else { 0.0 },
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_frac: stats.clip_frac,
            lr,
            mean_sigma: net.sigma().mean().unwrap_or(0.0),
        };
        history.push(m);
        on_update(&m);
        if let Some(d) = out_dir {
            let path = d.join("metrics.csv");
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_metrics_csv(BufWriter::new(f), &history)?;
            if ppo.checkpoint_every > 0 && (u + 1) % ppo.checkpoint_every == 0 {
                snapshot(&net, &obs_norm, &value_norm, &rng, u + 1, env_steps, Some(m))
                    .save(&d.join("checkpoint_latest.json"))?;
            }
        }
    }
    let ck = snapshot(&net, &obs_norm, &value_norm, &rng, history.len(), env_steps, history.last().copied());
    if let Some(d) = out_dir {
        ck.save(&d.join("checkpoint.json"))?;
    }
    Ok(TrainOutcome { checkpoint: ck, metrics: history })
}

/// Probability that a policy with scalar mean `mu` and std `sigma` picks the
/// positive action.
pub fn bandit_probability(mu: f64, sigma: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("unit normal").cdf(mu / sigma)
}

/// One-state bandit: a scalar Gaussian action, `a > 0` is the good arm with
/// advantage `+1`, otherwise `-1`. Returns the good-arm probability after
/// each update.
pub fn run_bandit(updates: usize, samples: usize, cfg: &PpoConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyNet::new(1, 1, &[8], cfg.init_log_std, &mut rng);
    let mut opt = Adam::new(&net);
    let x = Array2::zeros((samples, 1));
    let mut out = Vec::with_capacity(updates);
    for _ in 0..updates {
        let f = net.forward(&x)?;
        let sigma = net.sigma()[0];
        let actions = Array2::from_shape_fn((samples, 1), |(i, _)| {
            f.mu[(i, 0)] + sigma * rng.sample::<f64, _>(StandardNormal)
        });
        let logp = log_prob(&f.mu, &net.log_std, &actions);
        let adv = actions.column(0).mapv(|a| if a > 0.0 { 1.0 } else { -1.0 });
        let mut batch = RolloutBatch {
            obs: x.clone(),
            actions,
            log_probs: logp,
            values: f.value.clone(),
            rewards: adv.clone(),
            dones: vec![true; samples],
            advantages: adv.clone(),
            returns: adv,
        };
        update(&mut net, &mut opt, &mut batch, cfg, cfg.lr, &mut rng)?;
        let f = net.forward(&x.slice(ndarray::s![..1, ..]).to_owned())?;
        out.push(bandit_probability(f.mu[(0, 0)], net.sigma()[0]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny(rng: &mut ChaCha8Rng) -> PolicyNet {
        let mut net = PolicyNet::new(5, 3, &[8, 8, 8], -0.3, rng);
        // push some pre-activations negative and visit both ELU branches
        for l in net.trunk.iter_mut() {
            l.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        net.mu.w.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        net.log_std.mapv_inplace(|_| rng.gen_range(-0.8..0.2));
        net
    }

    fn random_batch(net: &PolicyNet, n: usize, rng: &mut ChaCha8Rng) -> RolloutBatch {
        let obs = Array2::from_shape_fn((n, net.obs_dim()), |_| rng.gen_range(-2.0..2.0));
        let f = net.forward(&obs).unwrap();
        let sigma = net.sigma();
        let actions = Array2::from_shape_fn((n, net.act_dim()), |(i, k)| {
            f.mu[(i, k)] + sigma[k] * rng.sample::<f64, _>(StandardNormal)
        });
        // old log-probs within the clip band so the surrogate is smooth
        let lp = log_prob(&f.mu, &net.log_std, &actions).mapv(|l| l + rng.gen_range(-0.1..0.1));
        RolloutBatch {
            obs,
            actions,
            log_probs: lp,
            values: Array1::zeros(n),
            rewards: Array1::zeros(n),
            dones: vec![false; n],
            advantages: Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
            returns: Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = PolicyNet::zeros(31, 12, &[16, 8, 4]);
        let f = net.forward(&Array2::ones((3, 31))).unwrap();
        assert!(f.mu.iter().all(|v| *v == 0.0));
        assert!(f.value.iter().all(|v| *v == 0.0));
        assert!(net.forward(&Array2::ones((3, 30))).is_err());
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::new(31, 12, &[512, 256, 128], 0.5f64.ln(), &mut rng);
        let row = Array1::from_shape_fn(31, |k| (k as f64 * 0.37).sin());
        let x = Array2::from_shape_fn((4, 31), |(_, k)| row[k]);
        let f = net.forward(&x).unwrap();
        for i in 1..4 {
            assert_eq!(f.mu.row(i), f.mu.row(0));
            assert_eq!(f.value[i], f.value[0]);
        }
        assert_eq!(net.widths(), vec![512, 256, 128]);
    }

    #[test]
    fn orthogonal_init_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Linear::orthogonal(6, 4, 2.0, &mut rng);
        let g = l.w.t().dot(&l.w);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(g[(i, j)], if i == j { 4.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = tiny(&mut rng);
        let batch = random_batch(&net, 16, &mut rng);
        let cfg = PpoConfig { entropy_coef: 0.05, ..PpoConfig::default() };
        let (_, g) = ppo_loss(&net, &batch, &cfg).unwrap();
        let h = 1e-6;
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
        let mut worst: f64 = 0.0;
        for (ti, gt) in grads.iter().enumerate() {
            for (k, &gk) in gt.iter().enumerate() {
                let mut p = net.clone();
                p.tensors_mut()[ti][k] += h;
                let up = ppo_loss(&p, &batch, &cfg).unwrap().0.total;
                p.tensors_mut()[ti][k] -= 2.0 * h;
                let dn = ppo_loss(&p, &batch, &cfg).unwrap().0.total;
                let fd = (up - dn) / (2.0 * h);
                let rel = (fd - gk).abs() / fd.abs().max(gk.abs()).max(1e-2);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let mu = Array2::from_shape_vec((1, 2), vec![0.3, -1.0]).unwrap();
        let ls = Array1::from(vec![0.1f64, -0.7]);
        let a = Array2::from_shape_vec((1, 2), vec![0.9, -0.2]).unwrap();
        let mut expect = 0.0;
        for k in 0..2 {
            let s = ls[k].exp();
            let z = (a[(0, k)] - mu[(0, k)]) / s;
            expect += (-0.5 * z * z).exp().ln() - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
        }
        let lp = log_prob(&mu, &ls, &a)[0];
        assert!(lp.is_finite());
        assert_abs_diff_eq!(lp, expect, epsilon = 1e-10);
    }

    #[test]
    fn ratio_identity_and_zero_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = tiny(&mut rng);
        let mut b = random_batch(&net, 32, &mut rng);
        let f = net.forward(&b.obs).unwrap();
        b.log_probs = log_prob(&f.mu, &net.log_std, &b.actions);
        let cfg = PpoConfig { entropy_coef: 0.0, ..PpoConfig::default() };
        let (s, _) = ppo_loss(&net, &b, &cfg).unwrap();
        assert_abs_diff_eq!(s.policy_loss, -b.advantages.mean().unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.approx_kl, 0.0, epsilon = 1e-15);
        assert_eq!(s.clip_frac, 0.0);
        b.advantages.fill(0.0);
        let (s, g) = ppo_loss(&net, &b, &cfg).unwrap();
        assert_eq!(s.policy_loss, 0.0);
        assert!(g.mu.w.iter().all(|v| *v == 0.0));
    }

    fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let vn = |t: usize| if t < n { v[t] } else { last };
        (0..n)
            .map(|t| {
                let mut a = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    let delta = r[k] + if d[k] { 0.0 } else { g * vn(k + 1) } - v[k];
                    a += w * delta;
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                a
            })
            .collect()
    }

    #[test]
    fn gae_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..20).map(|_| rng.gen_bool(0.2)).collect();
        let (a, ret) = gae(&r, &v, &d, 0.4, 0.97, 0.9);
        for (x, y) in a.iter().zip(brute_gae(&r, &v, &d, 0.4, 0.97, 0.9)) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-10);
        }
        for t in 0..20 {
            assert_abs_diff_eq!(ret[t], a[t] + v[t], epsilon = 1e-15);
        }
        // gamma = 0: one-step TD error
        let (a0, _) = gae(&r, &v, &d, 0.4, 1e-300, 0.9);
        for t in 0..20 {
            assert_abs_diff_eq!(a0[t], r[t] - v[t], epsilon = 1e-12);
        }
        // lambda = 1 without dones: discounted return minus value
        let nd = vec![false; 20];
        let (a1, _) = gae(&r, &v, &nd, 0.4, 0.9, 1.0);
        for t in 0..20 {
            let mut g = 0.0;
            for k in (t..20).rev() {
                g = r[k] + 0.9 * g;
            }
            g += 0.9f64.powi((20 - t) as i32) * 0.4;
            assert_abs_diff_eq!(a1[t], g - v[t], epsilon = 1e-10);
        }
    }

    #[test]
    fn running_norm_matches_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((300, 2), |(_, k)| rng.gen_range(-1.0..3.0) * (k + 1) as f64);
        let mut rn = RunningNorm::new(2, 10.0);
        rn.count = 0.0;
        for c in 0..3 {
            rn.update(&x.slice(ndarray::s![c * 100..(c + 1) * 100, ..]).to_owned());
        }
        let m = x.mean_axis(NdAxis(0)).unwrap();
        let v = x.var_axis(NdAxis(0), 0.0);
        for k in 0..2 {
            assert_abs_diff_eq!(rn.mean[k], m[k], epsilon = 1e-12);
            assert_abs_diff_eq!(rn.var[k], v[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn bandit_learns_good_arm() {
        let cfg = PpoConfig { lr: 1e-2, seed: 3, ..PpoConfig::default() };
        let p = run_bandit(200, 64, &cfg).unwrap();
        assert!(p[0] > 0.4);
        assert!(*p.last().unwrap() > 0.95, "{:?}", &p[p.len() - 5..]);
        // smoothed trend is increasing
        let first: f64 = p[..20].iter().sum();
        let last: f64 = p[p.len() - 20..].iter().sum();
        assert!(last > first);
    }

    #[test]
    fn smoke_training_is_deterministic_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let ppo = PpoConfig {
            num_envs: 8,
            horizon: 16,
            total_steps: 256,
            widths: [32, 16, 16],
            checkpoint_every: 1,
            ..PpoConfig::default()
        };
        let env = EnvConfig::default();
        let a = train(&ppo, &env, Some(dir.path()), &mut |_| {}).unwrap();
        let b = train(&ppo, &env, None, &mut |_| {}).unwrap();
        assert_eq!(a.metrics.len(), 2);
        assert_eq!(a.metrics, b.metrics);
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("checkpoint_latest.json").exists());
        let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(ck.net, a.checkpoint.net);
        let o = [0.1; OBS_DIM];
        assert_eq!(ck.act(&o).unwrap(), a.checkpoint.act(&o).unwrap());
    }
}
