//! Deterministic policy gradient learner with replay, target networks and
//! soft target updates. Networks are single-hidden-layer perceptrons with
//! hand-written backpropagation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{dim_mismatch, Error, Result};
use crate::obsbound::ActionBounds;
use crate::rng::SimRng;

/// Realized cost of one environment step, split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepCost {
    pub total: f64,
    pub accuracy: f64,
    pub power: f64,
}

/// What the learner needs from an environment.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset_features(&mut self, rng: &mut SimRng) -> Result<DVector<f64>>;
    fn step_features(&mut self, action: &[f64], rng: &mut SimRng) -> Result<(DVector<f64>, StepCost)>;
}

/// Weights and biases of `input -> hidden (ReLU) -> output (linear)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Intermediate values of a batched forward pass; samples are columns.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub z1: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub out: DMatrix<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, input),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(output, hidden),
            b2: DVector::zeros(output),
        }
    }

    /// Uniform on `+-1/sqrt(fan_in)` per layer.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let s1 = 1.0 / (input as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut u = |s: f64| rng.random_range(-s..=s);
        let w1 = DMatrix::from_fn(hidden, input, |_, _| u(s1));
        let b1 = DVector::from_fn(hidden, |_, _| u(s1));
        let w2 = DMatrix::from_fn(output, hidden, |_, _| u(s2));
        let b2 = DVector::from_fn(output, |_, _| u(s2));
        Self { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }
    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }
    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> MlpCache {
        let mut z1 = &self.w1 * x;
        for mut col in z1.column_iter_mut() {
            col += &self.b1;
        }
        let a1 = z1.map(|v| v.max(0.0));
        let mut out = &self.w2 * &a1;
        for mut col in out.column_iter_mut() {
            col += &self.b2;
        }
        MlpCache { z1, a1, out }
    }

    /// Gradients of a loss with output gradient `d_out`, plus the gradient
    /// with respect to input rows `input_from..` when requested.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        cache: &MlpCache,
        d_out: &DMatrix<f64>,
        input_from: Option<usize>,
    ) -> (Mlp, Option<DMatrix<f64>>) {
        let w2 = d_out * cache.a1.transpose();
        let b2 = row_sums(d_out);
        let mut dz1 = self.w2.transpose() * d_out;
        dz1.zip_apply(&cache.z1, |g, z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = &dz1 * x.transpose();
        let b1 = row_sums(&dz1);
        let d_in = input_from.map(|from| {
            let cols = self.w1.ncols() - from;
            self.w1.columns(from, cols).transpose() * &dz1
        });
        (Mlp { w1, b1, w2, b2 }, d_in)
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut off = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Euclidean distance between parameter vectors.
    pub fn distance(&self, other: &Mlp) -> f64 {
        self.slices()
            .iter()
            .zip(other.slices())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |r, _| m.row(r).sum())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what.to_string()))
    }
}

/// `target <- rate * online + (1 - rate) * target` for every parameter.
pub fn soft_update(target: &mut Mlp, online: &Mlp, rate: f64) {
    for (t, o) in target.slices_mut().into_iter().zip(online.slices()) {
        for (tv, ov) in t.iter_mut().zip(o.iter()) {
            *tv = rate * ov + (1.0 - rate) * *tv;
        }
    }
}

/// Adaptive moment estimation over one network's parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut off = 0;
        for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
            for (i, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                let k = off + i;
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gv;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gv * gv;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                *pv -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            off += p.len();
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Deterministic policy: logistic output mapped affinely onto the action interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub bounds: ActionBounds,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, action_dim: usize, bounds: ActionBounds, rng: &mut R) -> Self {
        Self {
            net: Mlp::random(state_dim, hidden, action_dim, rng),
            bounds,
        }
    }

    fn squash(&self, z: f64) -> f64 {
        self.bounds.mu_lo + self.bounds.width() * logistic(z)
    }

    /// Actions for a batch of states (columns).
    pub fn act_batch(&self, states: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpCache)> {
        check_finite(states, "actor input")?;
        let cache = self.net.forward(states);
        check_finite(&cache.out, "actor output")?;
        let acts = cache.out.map(|z| self.squash(z));
        Ok((acts, cache))
    }

    pub fn act(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        let x = DMatrix::from_column_slice(state.len(), 1, state.as_slice());
        let (a, _) = self.act_batch(&x)?;
        Ok(a.column(0).into_owned())
    }
}

/// Action-value network over the concatenation of state and action.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub state_dim: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::random(state_dim + action_dim, hidden, 1, rng),
            state_dim,
        }
    }

    pub fn input(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> DMatrix<f64> {
        let b = states.ncols();
        let mut x = DMatrix::zeros(self.net.input_dim(), b);
        x.rows_mut(0, self.state_dim).copy_from(states);
        x.rows_mut(self.state_dim, actions.nrows()).copy_from(actions);
        x
    }

    pub fn values(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<DVector<f64>> {
        let cache = self.net.forward(&self.input(states, actions));
        check_finite(&cache.out, "critic output")?;
        Ok(cache.out.row(0).transpose())
    }
}

/// Mean squared error of the critic against `targets` and its gradient.
pub fn critic_loss_and_grad(
    critic: &Critic,
    states: &DMatrix<f64>,
    actions: &DMatrix<f64>,
    targets: &DVector<f64>,
) -> Result<(f64, Mlp)> {
    let x = critic.input(states, actions);
    let cache = critic.net.forward(&x);
    check_finite(&cache.out, "critic output")?;
    let b = states.ncols() as f64;
    let err = DMatrix::from_fn(1, states.ncols(), |_, c| cache.out[(0, c)] - targets[c]);
    let loss = err.iter().map(|e| e * e).sum::<f64>() / b;
    let d_out = err * (2.0 / b);
    let (grads, _) = critic.net.backward(&x, &cache, &d_out, None);
    Ok((loss, grads))
}

/// Actor parameter gradient of `sum_c d_actions[:, c] . pi(s_c)`.
pub fn actor_backward(actor: &Actor, states: &DMatrix<f64>, cache: &MlpCache, d_actions: &DMatrix<f64>) -> Mlp {
    let width = actor.bounds.width();
    let mut d_z = d_actions.clone();
    d_z.zip_apply(&cache.out, |g, z| {
        let s = logistic(z);
        *g *= width * s * (1.0 - s);
    });
    actor.net.backward(states, cache, &d_z, None).0
}

/// Mean of `Q(s, pi(s))` over the batch and its gradient with respect to the actor.
pub fn actor_objective_and_grad(actor: &Actor, critic: &Critic, states: &DMatrix<f64>) -> Result<(f64, Mlp)> {
    let (acts, a_cache) = actor.act_batch(states)?;
    let x = critic.input(states, &acts);
    let c_cache = critic.net.forward(&x);
    check_finite(&c_cache.out, "critic output")?;
    let b = states.ncols() as f64;
    let objective = c_cache.out.sum() / b;
    let d_q = DMatrix::from_element(1, states.ncols(), 1.0 / b);
    let (_, d_act) = critic.net.backward(&x, &c_cache, &d_q, Some(critic.state_dim));
    let grads = actor_backward(actor, states, &a_cache, &d_act.expect("requested"));
    Ok((objective, grads))
}

/// One optimizer step on the critic loss; returns the loss before the step.
pub fn update_critic(
    critic: &mut Critic,
    opt: &mut Adam,
    states: &DMatrix<f64>,
    actions: &DMatrix<f64>,
    targets: &DVector<f64>,
) -> Result<f64> {
    let (loss, grads) = critic_loss_and_grad(critic, states, actions, targets)?;
    opt.step(&mut critic.net, &grads);
    Ok(loss)
}

/// One ascent step on the mean critic value; returns the objective before the step.
pub fn update_actor(actor: &mut Actor, critic: &Critic, opt: &mut Adam, states: &DMatrix<f64>) -> Result<f64> {
    let (obj, mut grads) = actor_objective_and_grad(actor, critic, states)?;
    for s in grads.slices_mut() {
        for v in s.iter_mut() {
            *v = -*v;
        }
    }
    opt.step(&mut actor.net, &grads);
    Ok(obj)
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<[f32]>,
    pub action: Vec<f64>,
    pub cost: f64,
    pub next_state: Arc<[f32]>,
}

/// Fixed-capacity ring of transitions. Consecutive transitions share their
/// state buffers, so a full buffer holds roughly one state per entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            data: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Distinct uniformly chosen transitions, or `None` while fewer than `batch` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if self.data.len() < batch {
            return None;
        }
        Some(sample(rng, self.data.len(), batch).iter().map(|i| &self.data[i]).collect())
    }
}

fn to_f32(v: &DVector<f64>) -> Arc<[f32]> {
    v.iter().map(|x| *x as f32).collect()
}

fn batch_matrix<'a>(rows: usize, cols: impl ExactSizeIterator<Item = &'a [f32]>) -> DMatrix<f64> {
    let n = cols.len();
    let mut m = DMatrix::zeros(rows, n);
    for (c, col) in cols.enumerate() {
        for (r, v) in col.iter().enumerate() {
            m[(r, c)] = *v as f64;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub noise_std: f64,
    pub discount: f64,
    pub soft_update_rate: f64,
    pub batch: usize,
    pub buffer: usize,
    pub hidden: usize,
    /// Multiplier on the reward fed to the critic; 1 leaves costs raw.
    pub reward_scale: f64,
    /// Set by the caller, never read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps: 1000,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            noise_std: 0.02,
            discount: 0.99,
            soft_update_rate: 0.001,
            batch: 64,
            buffer: 100_000,
            hidden: 1024,
            reward_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("training {what}")));
        if self.episodes == 0 || self.steps == 0 || self.batch == 0 || self.buffer == 0 || self.hidden == 0 {
            return bad("counts must be positive");
        }
        if self.buffer < self.batch {
            return bad("buffer must hold at least one batch");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        if !(self.soft_update_rate > 0.0 && self.soft_update_rate < 1.0) {
            return bad("soft update rate must lie in (0, 1)");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0 && self.noise_std >= 0.0 && self.reward_scale > 0.0) {
            return bad("rates must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_cost: f64,
    pub mean_power: f64,
    pub mean_accuracy: f64,
    /// Mean executed action entry, after exploration noise.
    pub mean_action: f64,
    pub episode_return: f64,
    pub buffer_len: usize,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeStats>,
}

impl TrainingLog {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.episodes {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Online networks, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_target: Actor,
    pub critic_target: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl Agent {
    pub fn new(state_dim: usize, action_dim: usize, bounds: ActionBounds, cfg: &TrainConfig, rng: &mut SimRng) -> Self {
        let actor = Actor::new(state_dim, cfg.hidden, action_dim, bounds, rng);
        let critic = Critic::new(state_dim, action_dim, cfg.hidden, rng);
        Self {
            actor_opt: Adam::new(cfg.lr_actor, actor.net.parameter_count()),
            critic_opt: Adam::new(cfg.lr_critic, critic.net.parameter_count()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        }
    }

    /// Critic step toward `r + discount * Q'(s', pi'(s'))`, actor step, then soft updates.
    pub fn learn(&mut self, batch: &[&Transition], cfg: &TrainConfig) -> Result<()> {
        let sd = self.critic.state_dim;
        let ad = self.actor.net.output_dim();
        let states = batch_matrix(sd, batch.iter().map(|t| &t.state[..]));
        let next = batch_matrix(sd, batch.iter().map(|t| &t.next_state[..]));
        let actions = DMatrix::from_fn(ad, batch.len(), |r, c| batch[c].action[r]);
        let (next_acts, _) = self.actor_target.act_batch(&next)?;
        let q_next = self.critic_target.values(&next, &next_acts)?;
        let targets = DVector::from_fn(batch.len(), |i, _| {
            -cfg.reward_scale * batch[i].cost + cfg.discount * q_next[i]
        });
        update_critic(&mut self.critic, &mut self.critic_opt, &states, &actions, &targets)?;
        update_actor(&mut self.actor, &self.critic, &mut self.actor_opt, &states)?;
        soft_update(&mut self.actor_target.net, &self.actor.net, cfg.soft_update_rate);
        soft_update(&mut self.critic_target.net, &self.critic.net, cfg.soft_update_rate);
        if !self.actor.net.is_finite() || !self.critic.net.is_finite() {
            return Err(Error::NonFiniteActivation("network parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub actor: Actor,
    pub log: TrainingLog,
    pub updates: usize,
}

/// Trains a policy on `env` inside `bounds`. Exploration adds Gaussian noise
/// with standard deviation `noise_std` to each action entry and clamps the
/// result into the interval.
pub fn train<E: Environment>(env: &mut E, bounds: ActionBounds, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = crate::rng::stream(cfg.seed, 0);
    let mut agent = Agent::new(env.state_dim(), env.action_dim(), bounds, cfg, &mut rng);
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut log = TrainingLog::default();
    let mut updates = 0;
    for episode in 0..cfg.episodes {
        let mut features = env.reset_features(&mut rng)?;
        let mut state = to_f32(&features);
        let (mut cost_sum, mut acc_sum, mut pow_sum, mut act_sum) = (0.0, 0.0, 0.0, 0.0);
        for step in 0..cfg.steps {
            let mut action: Vec<f64> = agent
                .actor
                .act(&features)
                .map_err(|e| dump(e, episode, step, &features))?
                .iter()
                .copied()
                .collect();
            for a in action.iter_mut() {
                *a = (*a + noise.sample(&mut rng)).clamp(bounds.mu_lo, bounds.mu_hi);
            }
            act_sum += action.iter().sum::<f64>() / action.len() as f64;
            let (next, cost) = env.step_features(&action, &mut rng)?;
            let next_state = to_f32(&next);
            buffer.push(Transition {
                state: state.clone(),
                action,
                cost: cost.total,
                next_state: next_state.clone(),
            });
            cost_sum += cost.total;
            acc_sum += cost.accuracy;
            pow_sum += cost.power;
            if let Some(batch) = buffer.sample(cfg.batch, &mut rng) {
                agent.learn(&batch, cfg).map_err(|e| dump(e, episode, step, &next))?;
                updates += 1;
            }
            features = next;
            state = next_state;
        }
        let t = cfg.steps as f64;
        log.episodes.push(EpisodeStats {
            episode,
            mean_cost: cost_sum / t,
            mean_power: pow_sum / t,
            mean_accuracy: acc_sum / t,
            mean_action: act_sum / t,
            episode_return: -cost_sum,
            buffer_len: buffer.len(),
            updates,
        });
    }
    Ok(TrainOutcome {
        actor: agent.actor,
        log,
        updates,
    })
}

fn dump(e: Error, episode: usize, step: usize, state: &DVector<f64>) -> Error {
    match e {
        Error::NonFiniteActivation(what) => Error::NonFiniteActivation(format!(
            "{what} at episode {episode}, step {step}; state norm {:e}, max |entry| {:e}",
            state.norm(),
            state.amax()
        )),
        other => other,
    }
}

const CHECKPOINT_MAGIC: &str = "edgesense-actor 1";

/// Plain-text actor dump: a magic line, the action interval, then each tensor
/// as `name rows cols` followed by its row-major values.
pub fn format_checkpoint(actor: &Actor) -> String {
    let b = &actor.bounds;
    let mut out = format!("{CHECKPOINT_MAGIC}\nbounds {:?} {:?} {:?} {}\n", b.mu_lo, b.mu_hi, b.p0, b.window);
    let tensors: [(&str, DMatrix<f64>); 4] = [
        ("w1", actor.net.w1.clone()),
        ("b1", DMatrix::from_column_slice(actor.net.b1.len(), 1, actor.net.b1.as_slice())),
        ("w2", actor.net.w2.clone()),
        ("b2", DMatrix::from_column_slice(actor.net.b2.len(), 1, actor.net.b2.as_slice())),
    ];
    for (name, m) in tensors {
        let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<Actor> {
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::Parse("not an actor checkpoint".into()));
    }
    let bad = |m: &str| Error::Parse(format!("checkpoint: {m}"));
    let bl = lines.next().ok_or_else(|| bad("missing bounds"))?;
    let f: Vec<&str> = bl.split_whitespace().collect();
    if f.len() != 5 || f[0] != "bounds" {
        return Err(bad("malformed bounds line"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
    let window = f[4].parse::<usize>().map_err(|e| bad(&e.to_string()))?;
    let bounds = ActionBounds::new(num(f[1])?, num(f[2])?, num(f[3])?, window)?;
    let mut read = |name: &str| -> Result<DMatrix<f64>> {
        let head = lines.next().ok_or_else(|| bad("truncated"))?;
        let h: Vec<&str> = head.split_whitespace().collect();
        if h.len() != 3 || h[0] != name {
            return Err(bad(&format!("expected tensor {name}")));
        }
        let rows: usize = h[1].parse().map_err(|_| bad("bad rows"))?;
        let cols: usize = h[2].parse().map_err(|_| bad("bad cols"))?;
        let mut vals = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            for tok in line.split_whitespace() {
                vals.push(num(tok)?);
            }
        }
        if vals.len() != rows * cols {
            return Err(bad(&format!("tensor {name} has {} values", vals.len())));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    };
    let w1 = read("w1")?;
    let b1 = read("b1")?;
    let w2 = read("w2")?;
    let b2 = read("b2")?;
    if b1.nrows() != w1.nrows() || w2.ncols() != w1.nrows() || b2.nrows() != w2.nrows() {
        return Err(dim_mismatch("checkpoint tensors", "consistent shapes", "mismatch"));
    }
    Ok(Actor {
        net: Mlp {
            w1,
            b1: b1.column(0).into_owned(),
            w2,
            b2: b2.column(0).into_owned(),
        },
        bounds,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, actor: &Actor) -> Result<()> {
    fs::write(path, format_checkpoint(actor))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Actor> {
    parse_checkpoint(&fs::read_to_string(path)?)
}
