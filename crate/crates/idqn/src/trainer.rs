//! The training loop: collect with the uncertainty bonus, store, sample,
//! update, sync the frozen target, evaluate.
//!
//! Everything is deterministic given the root seed. Episode layouts come
//! from `derive_seed2(seed, EPISODE, episode_index)`, evaluation episodes
//! from the `EVAL` stream, replay sampling from the buffer's own stream,
//! and the (optional, ablation-only) epsilon-greedy draws from `EPSILON`.
//! Two runs with the same seed produce byte-identical logs.
//!
//! The metrics log is an append-only CSV with one row per finished episode
//! (losses empty) and one row per gradient update (return empty):
//!
//! ```text
//! step,episode,return,bellman,distrib,reconstruct,diversity,total,grad_scale
//! ```
//!
//! Evaluation runs greedily (no bonus) on held-out seeds; the rolling mean
//! of the most recent `stop_window` evaluation returns drives optional
//! early stopping.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::clip_gradients_by_global_norm;
use crate::env::{Action, GridState, Observation, PelletWorld};
use crate::error::{Error, Result};
use crate::loss::{build_targets, total_loss, LossReport, LossWeights};
use crate::model::{IDQNModel, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{chacha, derive_seed2, stream};

pub const METRICS_HEADER: &str =
    "step,episode,return,bellman,distrib,reconstruct,diversity,total,grad_scale";
pub const EVAL_HEADER: &str = "step,episode,return";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps collected before the first gradient update.
    pub warmup_steps: usize,
    /// Gradient update every this many environment steps.
    pub train_every: usize,
    /// Hard target-network sync every this many environment steps.
    pub target_sync_every: usize,
    /// Environment-step budget per run.
    pub max_steps: usize,
    /// Evaluate every this many environment steps (0 disables evaluation).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Early-stop once the rolling mean of the last `stop_window`
    /// evaluation returns reaches this value.
    pub stop_return: Option<f64>,
    pub stop_window: usize,
    pub max_grad_norm: f64,
    /// Probability of a uniformly random action; 0 means exploration is
    /// purely the uncertainty bonus. Kept for ablations.
    pub epsilon: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Root seeds; the CLI trains one run per seed.
    pub seeds: Vec<u64>,
}

impl Default for TrainerConfig {
    fn default() -> TrainerConfig {
        TrainerConfig {
            gamma: 0.99,
            batch_size: 32,
            buffer_capacity: 10_000,
            warmup_steps: 500,
            train_every: 4,
            target_sync_every: 1000,
            max_steps: 200_000,
            eval_interval: 5000,
            eval_episodes: 10,
            stop_return: None,
            stop_window: 100,
            max_grad_norm: 10.0,
            epsilon: 0.0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            seeds: vec![0],
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::config("batch_size and max_steps must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config(
                "buffer_capacity must be at least batch_size",
            ));
        }
        if self.train_every == 0 || self.target_sync_every == 0 {
            return Err(Error::config(
                "train_every and target_sync_every must be positive",
            ));
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return Err(Error::config(
                "eval_episodes must be positive when evaluation is enabled",
            ));
        }
        if self.stop_window == 0 {
            return Err(Error::config("stop_window must be positive"));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(Error::config("max_grad_norm must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon must lie in [0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        self.adam.validate()
    }
}

/// Bookkeeping handed back when an environment step finishes an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub episode: usize,
    pub ret: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub episodes: usize,
    pub train_updates: usize,
    /// Mean of the evaluation window (up to the last `stop_window`
    /// evaluation-episode returns) at the end of the run.
    pub final_eval_mean: Option<f64>,
    pub eval_episodes_run: usize,
    pub stopped_early: bool,
}

#[derive(Debug)]
pub struct Trainer {
    pub config: TrainerConfig,
    model: IDQNModel,
    target: IDQNModel,
    optimizer: Adam,
    buffer: ReplayBuffer,
    env: PelletWorld,
    eps_rng: ChaCha8Rng,
    root_seed: u64,
    global_step: usize,
    episode_index: usize,
    eval_episode_index: u64,
    train_updates: usize,
    eval_window: VecDeque<f64>,
    // live episode
    state: GridState,
    obs: Observation,
    episode_return: f64,
}

impl Trainer {
    pub fn new(
        model_config: ModelConfig,
        env: PelletWorld,
        config: TrainerConfig,
        seed: u64,
    ) -> Result<Trainer> {
        config.validate()?;
        let obs_shape = env.obs_shape();
        if model_config.obs_shape != obs_shape {
            return Err(Error::config(format!(
                "model expects observations {:?} but the environment produces {:?}",
                model_config.obs_shape, obs_shape
            )));
        }
        let model = IDQNModel::init(model_config, seed)?;
        let target = model.clone();
        let optimizer = Adam::new(config.adam, model.params())?;
        let buffer = ReplayBuffer::new(config.buffer_capacity, seed)?;
        let (state, obs) = env.reset(derive_seed2(seed, stream::EPISODE, 0))?;
        Ok(Trainer {
            eps_rng: chacha(seed, stream::EPSILON),
            config,
            model,
            target,
            optimizer,
            buffer,
            env,
            root_seed: seed,
            global_step: 0,
            episode_index: 0,
            eval_episode_index: 0,
            train_updates: 0,
            eval_window: VecDeque::new(),
            state,
            obs,
            episode_return: 0.0,
        })
    }

    pub fn model(&self) -> &IDQNModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut IDQNModel {
        &mut self.model
    }

    pub fn target(&self) -> &IDQNModel {
        &self.target
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn global_step(&self) -> usize {
        self.global_step
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// (replay sampler, epsilon stream) RNG states for checkpointing.
    pub fn rng_states(&self) -> [([u8; 32], u128); 2] {
        [
            self.buffer.rng_state(),
            (self.eps_rng.get_seed(), self.eps_rng.get_word_pos()),
        ]
    }

    /// (episode index, eval episode index, train updates).
    pub fn counters(&self) -> (usize, u64, usize) {
        (self.episode_index, self.eval_episode_index, self.train_updates)
    }

    /// Hard sync: the target becomes a bit-exact copy of the online net.
    pub fn sync_target(&mut self) {
        self.target = self.model.clone();
    }

    /// One environment step with the exploration policy; stores the
    /// transition and, at episode end, resets with the next episode seed.
    pub fn step_env(&mut self) -> Result<Option<EpisodeEnd>> {
        let action = if self.config.epsilon > 0.0
            && self.eps_rng.random_range(0.0..1.0) < self.config.epsilon
        {
            Action::from_index(self.eps_rng.random_range(0..Action::COUNT))?
        } else {
            self.model
                .select_action(&self.obs, self.model.config().exploration_factor)?
                .0
        };
        let (next_state, next_obs, reward, done) = self.env.step(&self.state, action, &self.obs)?;
        self.buffer.push(Transition {
            obs: self.obs.clone(),
            action,
            reward,
            next_obs: next_obs.clone(),
            done,
        });
        self.global_step += 1;
        self.episode_return += reward;

        if done {
            let end = EpisodeEnd {
                episode: self.episode_index,
                ret: self.episode_return,
                step: self.global_step,
            };
            self.episode_index += 1;
            let seed = derive_seed2(self.root_seed, stream::EPISODE, self.episode_index as u64);
            let (state, obs) = self.env.reset(seed)?;
            self.state = state;
            self.obs = obs;
            self.episode_return = 0.0;
            Ok(Some(end))
        } else {
            self.state = next_state;
            self.obs = next_obs;
            Ok(None)
        }
    }

    /// Samples a batch and applies one gradient update. Returns the loss
    /// report and the clipping factor actually applied (1 when the global
    /// norm was already within bounds).
    pub fn train_step(&mut self) -> Result<(LossReport, f64)> {
        let batch = self.buffer.sample(self.config.batch_size)?;
        let out = update_params(
            &mut self.model,
            &self.target,
            &mut self.optimizer,
            &batch,
            self.config.gamma,
            &self.config.weights,
            self.config.max_grad_norm,
        )?;
        self.train_updates += 1;
        Ok(out)
    }

    /// One gradient update on a caller-supplied batch (no sampling); the
    /// overfit-one-batch oracle drives this directly.
    pub fn train_on_batch(&mut self, batch: &[&Transition]) -> Result<(LossReport, f64)> {
        let out = update_params(
            &mut self.model,
            &self.target,
            &mut self.optimizer,
            batch,
            self.config.gamma,
            &self.config.weights,
            self.config.max_grad_norm,
        )?;
        self.train_updates += 1;
        Ok(out)
    }

    /// Runs one evaluation round (greedy policy, fresh held-out seeds) and
    /// feeds the rolling window. Returns the per-episode returns.
    pub fn eval_round(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.config.eval_episodes);
        for _ in 0..self.config.eval_episodes {
            let seed = derive_seed2(self.root_seed, stream::EVAL, self.eval_episode_index);
            self.eval_episode_index += 1;
            let ret = eval_episode(&self.model, &self.env, 0.0, seed)?;
            self.eval_window.push_back(ret);
            while self.eval_window.len() > self.config.stop_window {
                self.eval_window.pop_front();
            }
            out.push(ret);
        }
        Ok(out)
    }

    pub fn eval_window_mean(&self) -> Option<f64> {
        if self.eval_window.is_empty() {
            None
        } else {
            Some(self.eval_window.iter().sum::<f64>() / self.eval_window.len() as f64)
        }
    }

    /// The full loop: collect, train every `train_every` steps after
    /// warmup, sync every `target_sync_every`, evaluate every
    /// `eval_interval`, stop early once the evaluation window fills and
    /// its mean reaches `stop_return`.
    pub fn run<M: Write, E: Write>(&mut self, metrics: &mut M, eval_log: &mut E) -> Result<RunSummary> {
        writeln!(metrics, "{}", METRICS_HEADER)?;
        writeln!(eval_log, "{}", EVAL_HEADER)?;
        let mut stopped_early = false;

        while self.global_step < self.config.max_steps {
            if let Some(end) = self.step_env()? {
                writeln!(metrics, "{},{},{},,,,,,", end.step, end.episode, end.ret)?;
            }
            if self.global_step >= self.config.warmup_steps
                && self.global_step % self.config.train_every == 0
                && self.buffer.len() >= self.config.batch_size
            {
                let (report, scale) = self.train_step()?;
                writeln!(
                    metrics,
                    "{},,,{},{},{},{},{},{}",
                    self.global_step,
                    report.bellman,
                    report.distributional,
                    report.reconstruction,
                    report.diversity,
                    report.total,
                    scale
                )?;
            }
            if self.global_step % self.config.target_sync_every == 0 {
                self.sync_target();
            }
            if self.config.eval_interval > 0 && self.global_step % self.config.eval_interval == 0 {
                let step = self.global_step;
                let base = self.eval_episode_index;
                for (i, ret) in self.eval_round()?.iter().enumerate() {
                    writeln!(eval_log, "{},{},{}", step, base + i as u64, ret)?;
                }
                // Eval rows are sparse; flush so progress is visible while
                // a long run is still going.
                eval_log.flush()?;
                if let Some(threshold) = self.config.stop_return {
                    if self.eval_window.len() >= self.config.stop_window {
                        if let Some(mean) = self.eval_window_mean() {
                            if mean >= threshold {
                                stopped_early = true;
                                break;
                            }
                        }
                    }
                }
            }
        }

        Ok(RunSummary {
            steps: self.global_step,
            episodes: self.episode_index,
            train_updates: self.train_updates,
            final_eval_mean: self.eval_window_mean(),
            eval_episodes_run: self.eval_episode_index as usize,
            stopped_early,
        })
    }
}

/// The gradient update shared by `train_step` and `train_on_batch`:
/// frozen-network targets, four-part loss, backward, global-norm clip,
/// Adam. Free-standing so the trainer can borrow its fields disjointly.
fn update_params(
    model: &mut IDQNModel,
    target: &IDQNModel,
    optimizer: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
    weights: &LossWeights,
    max_grad_norm: f64,
) -> Result<(LossReport, f64)> {
    let targets = build_targets(target, batch, gamma)?;
    let mut tape = crate::autodiff::Tape::new();
    let mv = model.vars_on(&mut tape, true);
    let (total, report) = total_loss(&mut tape, model, &mv, batch, &targets, weights)?;
    tape.backward(total)?;
    model.zero_grads();
    model.accumulate_grads(&tape, &mv);
    let scale = clip_gradients_by_global_norm(model.params_mut(), max_grad_norm)?;
    optimizer.step(model.params_mut())?;
    model.zero_grads();
    Ok((report, scale))
}

/// One greedy(-plus-bonus) episode; no learning, deterministic given seed.
pub fn eval_episode(
    model: &IDQNModel,
    env: &PelletWorld,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let (mut state, mut obs) = env.reset(seed)?;
    let mut total = 0.0;
    while !env.is_done(&state) {
        let (action, _) = model.select_action(&obs, lambda)?;
        let (s, o, reward, _) = env.step(&state, action, &obs)?;
        total += reward;
        state = s;
        obs = o;
    }
    Ok(total)
}

/// Mean and per-episode returns over `episodes` evaluation episodes with
/// seeds derived from `seed`.
pub fn evaluate(
    model: &IDQNModel,
    env: &PelletWorld,
    episodes: usize,
    lambda: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if episodes == 0 {
        return Err(Error::config("evaluate needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        returns.push(eval_episode(
            model,
            env,
            lambda,
            derive_seed2(seed, stream::EVAL, i as u64),
        )?);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    Ok((mean, returns))
}
