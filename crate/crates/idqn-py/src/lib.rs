//! Python bindings for the `idqn` crate.
//!
//! Exposes the pellet-world environment, the key-value memory Q-network,
//! checkpoint loading, and the distributional projection as a thin layer
//! over the Rust API. Observations and embeddings cross the boundary as
//! flat `list[float]` plus explicit shape tuples; no array dependency.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use idqn::env::{Action, EnvConfig, GridState, LayoutConfig, Observation, PelletWorld};
use idqn::model::{IDQNModel, ModelConfig};
use idqn::tensor::Tensor;
use idqn::{checkpoint, loss};

fn err(e: idqn::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_action(s: &str) -> PyResult<Action> {
    match s.to_ascii_lowercase().as_str() {
        "u" | "up" => Ok(Action::Up),
        "d" | "down" => Ok(Action::Down),
        "l" | "left" => Ok(Action::Left),
        "r" | "right" => Ok(Action::Right),
        other => Err(PyValueError::new_err(format!(
            "unknown action {:?} (expected one of u, d, l, r)",
            other
        ))),
    }
}

/// Deterministic pellet gridworld. Mutating wrapper over the functional
/// Rust environment: holds the current state and frame-stacked observation.
#[pyclass]
struct Env {
    world: PelletWorld,
    state: Option<GridState>,
    obs: Option<Observation>,
}

impl Env {
    fn from_config(config: EnvConfig) -> PyResult<Env> {
        Ok(Env {
            world: PelletWorld::new(config).map_err(err)?,
            state: None,
            obs: None,
        })
    }

    fn state_ref(&self) -> PyResult<&GridState> {
        self.state
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("environment not reset yet"))
    }
}

#[pymethods]
impl Env {
    /// Procedural open grid with `pellets` pellets placed by the reset seed.
    #[new]
    #[pyo3(signature = (width=8, height=8, pellets=8, cell_pixels=4, frame_stack=2, step_cap=200))]
    fn new(
        width: usize,
        height: usize,
        pellets: usize,
        cell_pixels: usize,
        frame_stack: usize,
        step_cap: usize,
    ) -> PyResult<Env> {
        Env::from_config(EnvConfig {
            layout: LayoutConfig::Procedural {
                width,
                height,
                pellets,
            },
            cell_pixels,
            frame_stack,
            step_cap,
        })
    }

    /// Fixed map parsed from layout text (`#` wall, `.` pellet, `A` agent,
    /// space for empty floor; rows of equal width).
    #[staticmethod]
    #[pyo3(signature = (text, cell_pixels=4, frame_stack=2, step_cap=200))]
    fn from_layout(
        text: &str,
        cell_pixels: usize,
        frame_stack: usize,
        step_cap: usize,
    ) -> PyResult<Env> {
        let map = idqn::env::parse_layout(text).map_err(err)?;
        Env::from_config(EnvConfig {
            layout: LayoutConfig::Explicit(map),
            cell_pixels,
            frame_stack,
            step_cap,
        })
    }

    /// Observation shape `(frame_stack, height_px, width_px)`.
    fn obs_shape(&self) -> (usize, usize, usize) {
        self.world.obs_shape()
    }

    /// Starts an episode; returns the flat initial observation.
    fn reset(&mut self, seed: u64) -> PyResult<Vec<f64>> {
        let (state, obs) = self.world.reset(seed).map_err(err)?;
        let flat = obs.tensor().data().to_vec();
        self.state = Some(state);
        self.obs = Some(obs);
        Ok(flat)
    }

    /// Applies one action (`"u" | "d" | "l" | "r"`, full names accepted);
    /// returns `(observation, reward, done)`.
    fn step(&mut self, action: &str) -> PyResult<(Vec<f64>, f64, bool)> {
        let a = parse_action(action)?;
        let state = self.state_ref()?;
        let obs = self.obs.as_ref().expect("state and obs set together");
        let (next, obs, reward, done) = self.world.step(state, a, obs).map_err(err)?;
        let flat = obs.tensor().data().to_vec();
        self.state = Some(next);
        self.obs = Some(obs);
        Ok((flat, reward, done))
    }

    /// Agent position `(row, col)`.
    fn agent(&self) -> PyResult<(usize, usize)> {
        Ok(self.state_ref()?.agent)
    }

    /// Remaining pellet cells, sorted.
    fn pellets(&self) -> PyResult<Vec<(usize, usize)>> {
        Ok(self.state_ref()?.pellets.iter().copied().collect())
    }

    /// Whether the episode has ended (all pellets cleared or step cap hit).
    fn done(&self) -> PyResult<bool> {
        Ok(self.world.is_done(self.state_ref()?))
    }

    /// Steps taken in the current episode.
    fn steps(&self) -> PyResult<usize> {
        Ok(self.state_ref()?.steps)
    }

    /// Action letters in index order.
    #[staticmethod]
    fn actions() -> Vec<String> {
        (0..4)
            .map(|i| Action::from_index(i).expect("four actions").letter().to_string())
            .collect()
    }
}

/// Key-value memory Q-network with per-action trainable keys and fixed
/// sorted value supports.
#[pyclass]
struct Model {
    inner: IDQNModel,
}

impl Model {
    fn obs_from_flat(&self, obs: Vec<f64>) -> PyResult<Observation> {
        let (k, h, w) = self.inner.config().obs_shape;
        let t = Tensor::new(vec![k, h, w], obs).map_err(err)?;
        Observation::from_tensor(t).map_err(err)
    }
}

#[pymethods]
impl Model {
    /// Fresh desk-scale model for observations of `obs_shape`, seeded.
    #[new]
    fn new(obs_shape: (usize, usize, usize), seed: u64) -> PyResult<Model> {
        let config = ModelConfig::desk(obs_shape);
        Ok(Model {
            inner: IDQNModel::init(config, seed).map_err(err)?,
        })
    }

    /// Loads the online network from a training checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        let ck = checkpoint::load(&path).map_err(err)?;
        Ok(Model { inner: ck.model })
    }

    fn obs_shape(&self) -> (usize, usize, usize) {
        self.inner.config().obs_shape
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.config().actions
    }

    #[getter]
    fn keys_per_action(&self) -> usize {
        self.inner.config().keys_per_action
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.config().embedding_dim
    }

    /// Fixed value supports (sorted, shared across actions).
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// Key `i` of action `a` as a D-vector.
    fn key(&self, action: usize, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.key(action, i).map_err(err)?.to_vec())
    }

    /// Embedding of a flat observation.
    fn encode(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        let o = self.obs_from_flat(obs)?;
        self.inner.encode(&o).map_err(err)
    }

    /// Attention row (sums to 1) for one action given an embedding.
    fn attention(&self, h: Vec<f64>, action: usize) -> PyResult<Vec<f64>> {
        self.inner.attention_weights(&h, action).map_err(err)
    }

    /// Q-values for every action from an embedding.
    fn q_values(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.q_values(&h).map_err(err)
    }

    /// Full diagnostic pass: `(embedding, q, u, attention_rows)`.
    fn forward(
        &self,
        obs: Vec<f64>,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        let o = self.obs_from_flat(obs)?;
        let d = self.inner.forward(&o).map_err(err)?;
        Ok((d.embedding, d.q, d.u, d.attention))
    }

    /// Greedy action with UCB bonus weight `lam` (the exploration
    /// lambda; named `lam` because `lambda` is reserved in Python);
    /// returns `(letter, q, u)` for inspection.
    #[pyo3(signature = (obs, lam=0.0))]
    fn select_action(
        &self,
        obs: Vec<f64>,
        lam: f64,
    ) -> PyResult<(String, Vec<f64>, Vec<f64>)> {
        let o = self.obs_from_flat(obs)?;
        let (a, d) = self.inner.select_action(&o, lam).map_err(err)?;
        Ok((a.letter().to_string(), d.q, d.u))
    }

    /// Decodes an embedding to image space; returns `(shape, flat_pixels)`.
    fn decode(&self, h: Vec<f64>) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self.inner.decode(&h).map_err(err)?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    /// Decodes key `i` of action `a`; returns `(shape, flat_pixels)`.
    fn invert_key(&self, action: usize, i: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self.inner.invert_key(action, i).map_err(err)?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }
}

/// Projects `w` over `supports` through `z = clip(reward + gamma * v)`
/// back onto the supports (linear two-neighbor mass splitting).
#[pyfunction]
fn project_distribution(
    w: Vec<f64>,
    supports: Vec<f64>,
    reward: f64,
    gamma: f64,
) -> PyResult<Vec<f64>> {
    loss::project_distribution(&w, &supports, reward, gamma).map_err(err)
}

/// Terminal projection: unit mass at `clip(reward)`.
#[pyfunction]
fn project_terminal(supports: Vec<f64>, reward: f64) -> PyResult<Vec<f64>> {
    loss::project_terminal(&supports, reward).map_err(err)
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(project_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(project_terminal, m)?)?;
    Ok(())
}
