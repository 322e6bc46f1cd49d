//! Run configuration: one declarative `key = value` text file whose dotted
//! keys map one-to-one onto CLI flags. Unknown keys are rejected, `#`
//! starts a comment, and every key has a default, so an empty file is a
//! valid desk-scale configuration.

use crate::env::{parse_layout, EnvConfig, LayoutConfig};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{ConvSpec, ModelConfig, ValueLayout};
use crate::optim::AdamConfig;
use crate::trainer::TrainerConfig;

/// Every configuration key, in canonical (serialization) order.
pub const KEYS: &[&str] = &[
    "env.width",
    "env.height",
    "env.pellets",
    "env.cell_pixels",
    "env.frame_stack",
    "env.step_cap",
    "env.layout_file",
    "model.keys_per_action",
    "model.embedding_dim",
    "model.v_min",
    "model.v_max",
    "model.value_layout",
    "model.conv_layers",
    "model.deconv_layers",
    "model.decoder_channels",
    "model.exploration_factor",
    "train.gamma",
    "train.batch_size",
    "train.buffer_capacity",
    "train.warmup_steps",
    "train.train_every",
    "train.target_sync_every",
    "train.max_steps",
    "train.eval_interval",
    "train.eval_episodes",
    "train.stop_return",
    "train.stop_window",
    "train.max_grad_norm",
    "train.epsilon",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.adam_eps",
    "train.decay",
    "train.seeds",
    "loss.l1",
    "loss.l2",
    "loss.l3",
    "loss.l4",
    "interpret.temperature",
    "interpret.rollouts",
    "interpret.blur_sigma",
    "interpret.mask_sigma",
    "interpret.stride",
    "interpret.amplitude",
];

/// The flat, typed mirror of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env_width: usize,
    pub env_height: usize,
    pub env_pellets: usize,
    pub env_cell_pixels: usize,
    pub env_frame_stack: usize,
    pub env_step_cap: usize,
    /// Empty string means a procedural layout.
    pub env_layout_file: String,

    pub model_keys_per_action: usize,
    pub model_embedding_dim: usize,
    pub model_v_min: f64,
    pub model_v_max: f64,
    pub model_value_layout: ValueLayout,
    pub model_conv_layers: Vec<ConvSpec>,
    pub model_deconv_layers: Vec<ConvSpec>,
    pub model_decoder_channels: usize,
    pub model_exploration_factor: f64,

    pub train_gamma: f64,
    pub train_batch_size: usize,
    pub train_buffer_capacity: usize,
    pub train_warmup_steps: usize,
    pub train_train_every: usize,
    pub train_target_sync_every: usize,
    pub train_max_steps: usize,
    pub train_eval_interval: usize,
    pub train_eval_episodes: usize,
    pub train_stop_return: Option<f64>,
    pub train_stop_window: usize,
    pub train_max_grad_norm: f64,
    pub train_epsilon: f64,
    pub train_lr: f64,
    pub train_beta1: f64,
    pub train_beta2: f64,
    pub train_adam_eps: f64,
    pub train_decay: f64,
    pub train_seeds: Vec<u64>,

    pub loss_l1: f64,
    pub loss_l2: f64,
    pub loss_l3: f64,
    pub loss_l4: f64,

    pub interpret_temperature: f64,
    pub interpret_rollouts: usize,
    pub interpret_blur_sigma: f64,
    pub interpret_mask_sigma: f64,
    pub interpret_stride: usize,
    pub interpret_amplitude: f64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            env_width: 8,
            env_height: 8,
            env_pellets: 8,
            env_cell_pixels: 4,
            env_frame_stack: 2,
            env_step_cap: 200,
            env_layout_file: String::new(),
            model_keys_per_action: 8,
            model_embedding_dim: 64,
            model_v_min: -25.0,
            model_v_max: 25.0,
            model_value_layout: ValueLayout::RandomUniform,
            model_conv_layers: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2)],
            model_deconv_layers: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(2, 4, 2)],
            model_decoder_channels: 16,
            model_exploration_factor: 0.01,
            train_gamma: 0.99,
            train_batch_size: 32,
            train_buffer_capacity: 10_000,
            train_warmup_steps: 500,
            train_train_every: 4,
            train_target_sync_every: 1000,
            train_max_steps: 200_000,
            train_eval_interval: 5000,
            train_eval_episodes: 10,
            train_stop_return: None,
            train_stop_window: 100,
            train_max_grad_norm: 10.0,
            train_epsilon: 0.0,
            train_lr: 0.00025,
            train_beta1: 0.9,
            train_beta2: 0.999,
            train_adam_eps: 1e-8,
            train_decay: 0.0,
            train_seeds: vec![0],
            loss_l1: 1.0,
            loss_l2: 1.0,
            loss_l3: 0.05,
            loss_l4: 0.01,
            interpret_temperature: 0.1,
            interpret_rollouts: 5,
            interpret_blur_sigma: 3.0,
            interpret_mask_sigma: 2.0,
            interpret_stride: 2,
            interpret_amplitude: 1.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{}: cannot parse `{}`", key, value)))
}

fn parse_conv_list(key: &str, value: &str) -> Result<Vec<ConvSpec>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(vec![]);
    }
    value
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            let bad = || {
                Error::config(format!(
                    "{}: `{}` is not of the form FILTERSxKERNELsSTRIDE (e.g. 8x3s2)",
                    key, tok
                ))
            };
            let (f, rest) = tok.split_once('x').ok_or_else(bad)?;
            let (k, s) = rest.split_once('s').ok_or_else(bad)?;
            Ok(ConvSpec::new(
                f.parse().map_err(|_| bad())?,
                k.parse().map_err(|_| bad())?,
                s.parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn conv_list_to_string(layers: &[ConvSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{}x{}s{}", l.filters, l.kernel, l.stride))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(|s| parse_num::<u64>(key, s))
        .collect()
}

impl RunConfig {
    /// Sets one key from its textual value; unknown keys are errors that
    /// name the key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "env.width" => self.env_width = parse_num(key, v)?,
            "env.height" => self.env_height = parse_num(key, v)?,
            "env.pellets" => self.env_pellets = parse_num(key, v)?,
            "env.cell_pixels" => self.env_cell_pixels = parse_num(key, v)?,
            "env.frame_stack" => self.env_frame_stack = parse_num(key, v)?,
            "env.step_cap" => self.env_step_cap = parse_num(key, v)?,
            "env.layout_file" => self.env_layout_file = v.to_string(),
            "model.keys_per_action" => self.model_keys_per_action = parse_num(key, v)?,
            "model.embedding_dim" => self.model_embedding_dim = parse_num(key, v)?,
            "model.v_min" => self.model_v_min = parse_num(key, v)?,
            "model.v_max" => self.model_v_max = parse_num(key, v)?,
            "model.value_layout" => {
                self.model_value_layout = match v {
                    "random_uniform" => ValueLayout::RandomUniform,
                    "evenly_spaced" => ValueLayout::EvenlySpaced,
                    other => {
                        return Err(Error::config(format!(
                            "model.value_layout: `{}` is not random_uniform or evenly_spaced",
                            other
                        )))
                    }
                }
            }
            "model.conv_layers" => self.model_conv_layers = parse_conv_list(key, v)?,
            "model.deconv_layers" => self.model_deconv_layers = parse_conv_list(key, v)?,
            "model.decoder_channels" => self.model_decoder_channels = parse_num(key, v)?,
            "model.exploration_factor" => self.model_exploration_factor = parse_num(key, v)?,
            "train.gamma" => self.train_gamma = parse_num(key, v)?,
            "train.batch_size" => self.train_batch_size = parse_num(key, v)?,
            "train.buffer_capacity" => self.train_buffer_capacity = parse_num(key, v)?,
            "train.warmup_steps" => self.train_warmup_steps = parse_num(key, v)?,
            "train.train_every" => self.train_train_every = parse_num(key, v)?,
            "train.target_sync_every" => self.train_target_sync_every = parse_num(key, v)?,
            "train.max_steps" => self.train_max_steps = parse_num(key, v)?,
            "train.eval_interval" => self.train_eval_interval = parse_num(key, v)?,
            "train.eval_episodes" => self.train_eval_episodes = parse_num(key, v)?,
            "train.stop_return" => {
                self.train_stop_return = if v == "none" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "train.stop_window" => self.train_stop_window = parse_num(key, v)?,
            "train.max_grad_norm" => self.train_max_grad_norm = parse_num(key, v)?,
            "train.epsilon" => self.train_epsilon = parse_num(key, v)?,
            "train.lr" => self.train_lr = parse_num(key, v)?,
            "train.beta1" => self.train_beta1 = parse_num(key, v)?,
            "train.beta2" => self.train_beta2 = parse_num(key, v)?,
            "train.adam_eps" => self.train_adam_eps = parse_num(key, v)?,
            "train.decay" => self.train_decay = parse_num(key, v)?,
            "train.seeds" => self.train_seeds = parse_seeds(key, v)?,
            "loss.l1" => self.loss_l1 = parse_num(key, v)?,
            "loss.l2" => self.loss_l2 = parse_num(key, v)?,
            "loss.l3" => self.loss_l3 = parse_num(key, v)?,
            "loss.l4" => self.loss_l4 = parse_num(key, v)?,
            "interpret.temperature" => self.interpret_temperature = parse_num(key, v)?,
            "interpret.rollouts" => self.interpret_rollouts = parse_num(key, v)?,
            "interpret.blur_sigma" => self.interpret_blur_sigma = parse_num(key, v)?,
            "interpret.mask_sigma" => self.interpret_mask_sigma = parse_num(key, v)?,
            "interpret.stride" => self.interpret_stride = parse_num(key, v)?,
            "interpret.amplitude" => self.interpret_amplitude = parse_num(key, v)?,
            other => {
                return Err(Error::config(format!("unknown configuration key `{}`", other)))
            }
        }
        Ok(())
    }

    /// Reads the current value of one key as text (exact inverse of
    /// [`RunConfig::apply`]).
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "env.width" => self.env_width.to_string(),
            "env.height" => self.env_height.to_string(),
            "env.pellets" => self.env_pellets.to_string(),
            "env.cell_pixels" => self.env_cell_pixels.to_string(),
            "env.frame_stack" => self.env_frame_stack.to_string(),
            "env.step_cap" => self.env_step_cap.to_string(),
            "env.layout_file" => self.env_layout_file.clone(),
            "model.keys_per_action" => self.model_keys_per_action.to_string(),
            "model.embedding_dim" => self.model_embedding_dim.to_string(),
            "model.v_min" => self.model_v_min.to_string(),
            "model.v_max" => self.model_v_max.to_string(),
            "model.value_layout" => match self.model_value_layout {
                ValueLayout::RandomUniform => "random_uniform".to_string(),
                ValueLayout::EvenlySpaced => "evenly_spaced".to_string(),
            },
            "model.conv_layers" => conv_list_to_string(&self.model_conv_layers),
            "model.deconv_layers" => conv_list_to_string(&self.model_deconv_layers),
            "model.decoder_channels" => self.model_decoder_channels.to_string(),
            "model.exploration_factor" => self.model_exploration_factor.to_string(),
            "train.gamma" => self.train_gamma.to_string(),
            "train.batch_size" => self.train_batch_size.to_string(),
            "train.buffer_capacity" => self.train_buffer_capacity.to_string(),
            "train.warmup_steps" => self.train_warmup_steps.to_string(),
            "train.train_every" => self.train_train_every.to_string(),
            "train.target_sync_every" => self.train_target_sync_every.to_string(),
            "train.max_steps" => self.train_max_steps.to_string(),
            "train.eval_interval" => self.train_eval_interval.to_string(),
            "train.eval_episodes" => self.train_eval_episodes.to_string(),
            "train.stop_return" => match self.train_stop_return {
                None => "none".to_string(),
                Some(x) => x.to_string(),
            },
            "train.stop_window" => self.train_stop_window.to_string(),
            "train.max_grad_norm" => self.train_max_grad_norm.to_string(),
            "train.epsilon" => self.train_epsilon.to_string(),
            "train.lr" => self.train_lr.to_string(),
            "train.beta1" => self.train_beta1.to_string(),
            "train.beta2" => self.train_beta2.to_string(),
            "train.adam_eps" => self.train_adam_eps.to_string(),
            "train.decay" => self.train_decay.to_string(),
            "train.seeds" => self
                .train_seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "loss.l1" => self.loss_l1.to_string(),
            "loss.l2" => self.loss_l2.to_string(),
            "loss.l3" => self.loss_l3.to_string(),
            "loss.l4" => self.loss_l4.to_string(),
            "interpret.temperature" => self.interpret_temperature.to_string(),
            "interpret.rollouts" => self.interpret_rollouts.to_string(),
            "interpret.blur_sigma" => self.interpret_blur_sigma.to_string(),
            "interpret.mask_sigma" => self.interpret_mask_sigma.to_string(),
            "interpret.stride" => self.interpret_stride.to_string(),
            "interpret.amplitude" => self.interpret_amplitude.to_string(),
            other => {
                return Err(Error::config(format!(
                    "unknown configuration key `{}`",
                    other
                )))
            }
        })
    }

    /// Parses a whole config file on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.apply(key.trim(), value)?;
        }
        Ok(cfg)
    }

    /// Canonical serialization: every key, schema order, `key = value`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("schema key"));
            out.push('\n');
        }
        out
    }

    // ── Builders for the component configs ──────────────────────────────

    /// Observation shape implied by the environment keys. For explicit
    /// layouts the dimensions come from the layout file's text.
    pub fn obs_shape(&self, layout: &LayoutConfig) -> (usize, usize, usize) {
        let (w, h) = layout.dimensions();
        (
            self.env_frame_stack,
            h * self.env_cell_pixels,
            w * self.env_cell_pixels,
        )
    }

    /// Resolves the layout: reads and parses `env.layout_file` when set,
    /// otherwise the procedural layout from the env keys.
    pub fn layout(&self) -> Result<LayoutConfig> {
        if self.env_layout_file.is_empty() {
            Ok(LayoutConfig::Procedural {
                width: self.env_width,
                height: self.env_height,
                pellets: self.env_pellets,
            })
        } else {
            let text = std::fs::read_to_string(&self.env_layout_file)?;
            Ok(LayoutConfig::Explicit(parse_layout(&text)?))
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        Ok(EnvConfig {
            layout: self.layout()?,
            cell_pixels: self.env_cell_pixels,
            frame_stack: self.env_frame_stack,
            step_cap: self.env_step_cap,
        })
    }

    pub fn model_config(&self, obs_shape: (usize, usize, usize)) -> ModelConfig {
        ModelConfig {
            actions: crate::env::Action::COUNT,
            keys_per_action: self.model_keys_per_action,
            embedding_dim: self.model_embedding_dim,
            v_min: self.model_v_min,
            v_max: self.model_v_max,
            value_layout: self.model_value_layout,
            conv_layers: self.model_conv_layers.clone(),
            deconv_layers: self.model_deconv_layers.clone(),
            decoder_channels: self.model_decoder_channels,
            obs_shape,
            exploration_factor: self.model_exploration_factor,
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            gamma: self.train_gamma,
            batch_size: self.train_batch_size,
            buffer_capacity: self.train_buffer_capacity,
            warmup_steps: self.train_warmup_steps,
            train_every: self.train_train_every,
            target_sync_every: self.train_target_sync_every,
            max_steps: self.train_max_steps,
            eval_interval: self.train_eval_interval,
            eval_episodes: self.train_eval_episodes,
            stop_return: self.train_stop_return,
            stop_window: self.train_stop_window,
            max_grad_norm: self.train_max_grad_norm,
            epsilon: self.train_epsilon,
            adam: AdamConfig {
                lr: self.train_lr,
                beta1: self.train_beta1,
                beta2: self.train_beta2,
                eps: self.train_adam_eps,
                decay: self.train_decay,
            },
            weights: LossWeights {
                l1: self.loss_l1,
                l2: self.loss_l2,
                l3: self.loss_l3,
                l4: self.loss_l4,
            },
            seeds: self.train_seeds.clone(),
        }
    }
}
