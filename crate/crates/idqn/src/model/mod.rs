//! The interpretable Q-network.
//!
//! An encoder (valid convolutions + one dense layer) maps an observation to
//! an embedding `h`. Each action owns `keys_per_action` trainable keys; the
//! attention over action `a`'s keys is `w_i = softmax_i(h . k_i^a)`, and the
//! Q-value is the attention-weighted sum of a *fixed* shared support vector
//! `values`: `Q(s,a) = sum_i w_i v_i`. Because the supports never train,
//! `w` doubles as a categorical distribution over returns, which is what
//! the distributional loss shapes and the uncertainty bonus reads:
//! `U = sqrt(max(0, sum_i w_i v_i^2 - Q^2))`, the standard deviation under
//! `w`. Actions are picked by `argmax_a Q + lambda_exp * U`, ties to the
//! lowest index.
//!
//! A decoder (dense + transposed convolutions) maps embeddings back to
//! observation space; it serves the reconstruction loss and, pointed at a
//! key instead of a state embedding, inverts keys into images.

mod init;

use crate::autodiff::{kernels, Parameter, Tape, Var};
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueLayout {
    /// Supports drawn uniformly at random from the open interval, then
    /// sorted (the default).
    RandomUniform,
    /// Interval midpoints: `v_i = v_min + (v_max - v_min) * (2i+1) / 2N`.
    EvenlySpaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// Output channels.
    pub filters: usize,
    /// Square kernel extent.
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(filters: usize, kernel: usize, stride: usize) -> ConvSpec {
        ConvSpec {
            filters,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub actions: usize,
    /// Keys per action (N).
    pub keys_per_action: usize,
    /// Embedding width (D).
    pub embedding_dim: usize,
    /// Open support interval.
    pub v_min: f64,
    pub v_max: f64,
    pub value_layout: ValueLayout,
    /// Encoder convolutions, applied in order before the dense layer.
    pub conv_layers: Vec<ConvSpec>,
    /// Decoder transposed convolutions; `filters` is each layer's *output*
    /// channels and the last must equal the observation's frame count.
    pub deconv_layers: Vec<ConvSpec>,
    /// Channels the decoder dense layer reshapes to before the deconvs.
    pub decoder_channels: usize,
    /// Observation shape `[frames, h_px, w_px]`.
    pub obs_shape: (usize, usize, usize),
    /// Exploration bonus weight (lambda_exp).
    pub exploration_factor: f64,
}

impl ModelConfig {
    /// Desk-scale defaults for a given observation shape: two small convs
    /// down, mirrored transposed convs up (the final kernel is 4 so the
    /// strided chain closes exactly on even image sizes), D=64, N=8.
    pub fn desk(obs_shape: (usize, usize, usize)) -> ModelConfig {
        ModelConfig {
            actions: Action::COUNT,
            keys_per_action: 8,
            embedding_dim: 64,
            v_min: -25.0,
            v_max: 25.0,
            value_layout: ValueLayout::RandomUniform,
            conv_layers: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2)],
            deconv_layers: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(obs_shape.0, 4, 2)],
            decoder_channels: 16,
            obs_shape,
            exploration_factor: 0.01,
        }
    }

    /// Full-scale configuration (84x84 inputs): three convs, D=256, N=20.
    pub fn full_scale(obs_shape: (usize, usize, usize)) -> ModelConfig {
        ModelConfig {
            actions: Action::COUNT,
            keys_per_action: 20,
            embedding_dim: 256,
            v_min: -25.0,
            v_max: 25.0,
            value_layout: ValueLayout::RandomUniform,
            conv_layers: vec![
                ConvSpec::new(32, 8, 4),
                ConvSpec::new(64, 4, 2),
                ConvSpec::new(64, 3, 1),
            ],
            deconv_layers: vec![
                ConvSpec::new(64, 3, 1),
                ConvSpec::new(32, 4, 2),
                ConvSpec::new(obs_shape.0, 8, 4),
            ],
            decoder_channels: 64,
            obs_shape,
            exploration_factor: 0.01,
        }
    }

    /// Validates the configuration and derives the internal shapes:
    /// encoder flat width and the decoder's reshape target.
    pub fn trace_shapes(&self) -> Result<DerivedShapes> {
        if self.actions == 0 || self.keys_per_action == 0 || self.embedding_dim == 0 {
            return Err(Error::config(
                "actions, keys_per_action, and embedding_dim must be positive",
            ));
        }
        if !(self.v_min < self.v_max) {
            return Err(Error::config(format!(
                "support interval ({}, {}) is empty",
                self.v_min, self.v_max
            )));
        }
        if self.exploration_factor < 0.0 {
            return Err(Error::config("exploration_factor must be non-negative"));
        }

        // encoder: forward trace
        let (k, hh, ww) = self.obs_shape;
        if k == 0 || hh == 0 || ww == 0 {
            return Err(Error::config("observation shape must be positive"));
        }
        let (mut c, mut h, mut w) = (k, hh, ww);
        for (i, spec) in self.conv_layers.iter().enumerate() {
            if spec.filters == 0 || spec.kernel == 0 || spec.stride == 0 {
                return Err(Error::config(format!(
                    "conv layer {}: filters, kernel, and stride must be positive",
                    i
                )));
            }
            if spec.kernel > h || spec.kernel > w {
                return Err(Error::config(format!(
                    "conv layer {}: kernel {} exceeds input {}x{}",
                    i, spec.kernel, h, w
                )));
            }
            c = spec.filters;
            h = (h - spec.kernel) / spec.stride + 1;
            w = (w - spec.kernel) / spec.stride + 1;
        }
        let enc_flat = c * h * w;

        // decoder: backward trace from the observation shape
        let (mut dc, mut dh, mut dw) = (k, hh, ww);
        for (i, spec) in self.deconv_layers.iter().enumerate().rev() {
            if spec.filters == 0 || spec.kernel == 0 || spec.stride == 0 {
                return Err(Error::config(format!(
                    "deconv layer {}: filters, kernel, and stride must be positive",
                    i
                )));
            }
            if spec.filters != dc {
                return Err(Error::config(format!(
                    "deconv layer {} outputs {} channels but {} are required",
                    i, spec.filters, dc
                )));
            }
            let invert = |out: usize, kk: usize, s: usize| -> Result<usize> {
                if out < kk || (out - kk) % s != 0 {
                    return Err(Error::config(format!(
                        "deconv layer {} cannot produce extent {} with kernel {} stride {}",
                        i, out, kk, s
                    )));
                }
                Ok((out - kk) / s + 1)
            };
            dh = invert(dh, spec.kernel, spec.stride)?;
            dw = invert(dw, spec.kernel, spec.stride)?;
            dc = if i == 0 {
                self.decoder_channels
            } else {
                self.deconv_layers[i - 1].filters
            };
        }
        if self.deconv_layers.is_empty() {
            // dense-only decoder straight to observation pixels
            dc = k;
        } else if dc != self.decoder_channels {
            return Err(Error::config(
                "decoder_channels does not match the first deconv layer",
            ));
        }
        if dc == 0 {
            return Err(Error::config("decoder_channels must be positive"));
        }
        Ok(DerivedShapes {
            enc_flat,
            enc_out: (c, h, w),
            dec_in: (dc, dh, dw),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivedShapes {
    pub enc_flat: usize,
    pub enc_out: (usize, usize, usize),
    pub dec_in: (usize, usize, usize),
}

/// Per-action diagnostics from one forward pass over all actions.
#[derive(Debug, Clone)]
pub struct ForwardDiagnostics {
    pub embedding: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    /// `attention[a]` is action `a`'s attention row (sums to 1).
    pub attention: Vec<Vec<f64>>,
}

/// The model: trainable parameters plus the fixed value supports.
#[derive(Debug, Clone)]
pub struct IDQNModel {
    config: ModelConfig,
    shapes: DerivedShapes,
    params: Vec<Parameter>,
    values: Vec<f64>,
    idx_conv: Vec<usize>,
    idx_dense_w: usize,
    idx_dense_b: usize,
    idx_keys: Vec<usize>,
    idx_dec_w: usize,
    idx_dec_b: usize,
    idx_deconv: Vec<usize>,
}

/// Parameter leaves registered on a tape, either trainable or frozen.
pub struct ModelVars {
    vars: Vec<Var>,
    values_var: Var,
}

impl IDQNModel {
    /// Initializes a model from config and seed; see [`init`] for the
    /// drawing order (values first, then parameters in declaration order).
    pub fn init(config: ModelConfig, seed: u64) -> Result<IDQNModel> {
        init::init(config, seed)
    }

    /// Rebuilds a model from raw parts (checkpoint load, tests). Parameter
    /// names, shapes, and value supports are all validated.
    pub fn from_parts(
        config: ModelConfig,
        params: Vec<Parameter>,
        values: Vec<f64>,
    ) -> Result<IDQNModel> {
        let shapes = config.trace_shapes()?;
        let expect = expected_parameters(&config, &shapes);
        if params.len() != expect.len() {
            return Err(Error::checkpoint(format!(
                "expected {} parameters, got {}",
                expect.len(),
                params.len()
            )));
        }
        for (p, (name, shape)) in params.iter().zip(&expect) {
            if &p.name != name {
                return Err(Error::checkpoint(format!(
                    "parameter {} out of order (expected {})",
                    p.name, name
                )));
            }
            if p.tensor.shape() != &shape[..] {
                return Err(Error::checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    name,
                    p.tensor.shape(),
                    shape
                )));
            }
        }
        validate_values(&config, &values)?;
        Ok(assemble(config, shapes, params, values))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shapes(&self) -> &DerivedShapes {
        &self.shapes
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Fixed value supports, sorted strictly increasing, shared by actions.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replaces the value supports (ablations and tests); same invariants
    /// as at init.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        validate_values(&self.config, &values)?;
        self.values = values;
        Ok(())
    }

    /// Key `i` of action `a` as a D-slice.
    pub fn key(&self, action: usize, i: usize) -> Result<&[f64]> {
        let n = self.config.keys_per_action;
        let d = self.config.embedding_dim;
        if action >= self.config.actions || i >= n {
            return Err(Error::contract(format!(
                "key ({}, {}) out of range ({} actions x {} keys)",
                action, i, self.config.actions, n
            )));
        }
        let t = &self.params[self.idx_keys[action]].tensor;
        Ok(&t.data()[i * d..(i + 1) * d])
    }

    // ── Tape-level forward pieces (shared by training and inference) ────

    /// Registers every parameter on `tape`. With `trainable = false` the
    /// leaves are constants, which is how the target network runs.
    pub fn vars_on(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p)
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        let values_var = tape.constant(
            Tensor::new(vec![self.values.len()], self.values.clone()).expect("values shape"),
        );
        ModelVars { vars, values_var }
    }

    pub fn var_of(&self, mv: &ModelVars, param_index: usize) -> Var {
        mv.vars[param_index]
    }

    /// Wraps externally created leaves (one per parameter, in canonical
    /// order) into a [`ModelVars`]; used by gradient checks that need to
    /// own the leaf registration.
    pub fn vars_from(&self, tape: &mut Tape, vars: Vec<Var>) -> ModelVars {
        debug_assert_eq!(vars.len(), self.params.len());
        let values_var = tape.constant(
            Tensor::new(vec![self.values.len()], self.values.clone()).expect("values shape"),
        );
        ModelVars { vars, values_var }
    }

    /// Encoder: obs `[K,H,W]` -> embedding `[D]`.
    pub fn encode_on(&self, tape: &mut Tape, mv: &ModelVars, obs: Var) -> Result<Var> {
        let mut x = obs;
        for (li, spec) in self.config.conv_layers.iter().enumerate() {
            x = tape.conv2d(x, mv.vars[self.idx_conv[li]], spec.stride)?;
            x = tape.relu(x)?;
        }
        let flat = tape.reshape(x, vec![1, self.shapes.enc_flat])?;
        let pre = tape.matmul(flat, mv.vars[self.idx_dense_w])?;
        let h = tape.add(pre, mv.vars[self.idx_dense_b])?;
        tape.reshape(h, vec![self.config.embedding_dim])
    }

    /// Attention over action `a`'s keys: `[D]` -> `[N]` (sums to 1).
    pub fn attention_on(
        &self,
        tape: &mut Tape,
        mv: &ModelVars,
        h: Var,
        action: usize,
    ) -> Result<Var> {
        if action >= self.config.actions {
            return Err(Error::contract(format!(
                "action {} out of range ({} actions)",
                action, self.config.actions
            )));
        }
        let hcol = tape.reshape(h, vec![self.config.embedding_dim, 1])?;
        let logits = tape.matmul(mv.vars[self.idx_keys[action]], hcol)?;
        let lrow = tape.reshape(logits, vec![self.config.keys_per_action])?;
        tape.softmax_rows(lrow)
    }

    /// Q from an attention row: `dot(w, values)`.
    pub fn q_on(&self, tape: &mut Tape, mv: &ModelVars, w: Var) -> Result<Var> {
        tape.dot(w, mv.values_var)
    }

    /// Decoder: `[D]` -> `[K,H,W]`.
    pub fn decode_on(&self, tape: &mut Tape, mv: &ModelVars, h: Var) -> Result<Var> {
        let hrow = tape.reshape(h, vec![1, self.config.embedding_dim])?;
        let pre = tape.matmul(hrow, mv.vars[self.idx_dec_w])?;
        let mut x = tape.add(pre, mv.vars[self.idx_dec_b])?;
        let (c0, h0, w0) = self.shapes.dec_in;
        if self.config.deconv_layers.is_empty() {
            let (k, hh, ww) = self.config.obs_shape;
            return tape.reshape(x, vec![k, hh, ww]);
        }
        x = tape.relu(x)?;
        x = tape.reshape(x, vec![c0, h0, w0])?;
        let last = self.config.deconv_layers.len() - 1;
        for (li, spec) in self.config.deconv_layers.iter().enumerate() {
            x = tape.deconv2d(x, mv.vars[self.idx_deconv[li]], spec.stride)?;
            if li < last {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Copies the tape's gradients for this model's leaves into the
    /// parameters' grad buffers (accumulating, like backward itself).
    pub fn accumulate_grads(&mut self, tape: &Tape, mv: &ModelVars) {
        for (p, v) in self.params.iter_mut().zip(&mv.vars) {
            p.tensor
                .accumulate_grad(tape.grad(*v))
                .expect("leaf shape matches parameter");
        }
    }

    /// Clears every parameter's grad buffer.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    // ── Inference wrappers ───────────────────────────────────────────────

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        let (k, h, w) = self.config.obs_shape;
        if obs.shape() != [k, h, w] {
            return Err(Error::Dimension {
                op: "encode",
                lhs: obs.shape().to_vec(),
                rhs: vec![k, h, w],
            });
        }
        Ok(())
    }

    fn check_embedding(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.config.embedding_dim {
            return Err(Error::Dimension {
                op: "embedding",
                lhs: vec![h.len()],
                rhs: vec![self.config.embedding_dim],
            });
        }
        Ok(())
    }

    /// Embedding of an observation.
    ///
    /// Inference runs the same kernels in the same order as the tape path
    /// (`encode_on`), so the two agree bit for bit; skipping the tape just
    /// avoids recording nodes and copying parameters on every call.
    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let (k, hh, ww) = self.config.obs_shape;
        let (mut c, mut h, mut w) = (k, hh, ww);
        let mut cur = obs.tensor().data().to_vec();
        for (li, spec) in self.config.conv_layers.iter().enumerate() {
            let oh = (h - spec.kernel) / spec.stride + 1;
            let ow = (w - spec.kernel) / spec.stride + 1;
            let mut out = vec![0.0; spec.filters * oh * ow];
            kernels::conv2d(
                &cur,
                self.params[self.idx_conv[li]].tensor.data(),
                c,
                h,
                w,
                spec.filters,
                spec.kernel,
                spec.kernel,
                spec.stride,
                &mut out,
            );
            for v in &mut out {
                *v = v.max(0.0);
            }
            (cur, c, h, w) = (out, spec.filters, oh, ow);
        }
        let d = self.config.embedding_dim;
        let mut emb = vec![0.0; d];
        kernels::matmul(
            &cur,
            self.params[self.idx_dense_w].tensor.data(),
            1,
            self.shapes.enc_flat,
            d,
            &mut emb,
        );
        for (v, b) in emb.iter_mut().zip(self.params[self.idx_dense_b].tensor.data()) {
            *v += b;
        }
        Ok(emb)
    }

    /// Attention row for one action given an embedding.
    pub fn attention_weights(&self, h: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check_embedding(h)?;
        if action >= self.config.actions {
            return Err(Error::contract(format!(
                "action {} out of range ({} actions)",
                action, self.config.actions
            )));
        }
        let n = self.config.keys_per_action;
        let mut logits = vec![0.0; n];
        kernels::matmul(
            self.params[self.idx_keys[action]].tensor.data(),
            h,
            n,
            self.config.embedding_dim,
            1,
            &mut logits,
        );
        let mut out = vec![0.0; n];
        kernels::softmax_row(&logits, &mut out);
        Ok(out)
    }

    /// Q and uncertainty for one action from its attention row.
    pub fn q_u_from_attention(&self, w: &[f64]) -> (f64, f64) {
        let q: f64 = w.iter().zip(&self.values).map(|(wi, vi)| wi * vi).sum();
        let second: f64 = w
            .iter()
            .zip(&self.values)
            .map(|(wi, vi)| wi * vi * vi)
            .sum();
        (q, (second - q * q).max(0.0).sqrt())
    }

    pub fn q_value(&self, h: &[f64], action: usize) -> Result<f64> {
        Ok(self.q_u_from_attention(&self.attention_weights(h, action)?).0)
    }

    /// Q for every action from one embedding.
    pub fn q_values(&self, h: &[f64]) -> Result<Vec<f64>> {
        (0..self.config.actions)
            .map(|a| self.q_value(h, a))
            .collect()
    }

    pub fn uncertainty(&self, h: &[f64], action: usize) -> Result<f64> {
        Ok(self.q_u_from_attention(&self.attention_weights(h, action)?).1)
    }

    /// One full pass: embedding, per-action attention, Q, and U.
    pub fn forward(&self, obs: &Observation) -> Result<ForwardDiagnostics> {
        let h = self.encode(obs)?;
        let mut q = Vec::with_capacity(self.config.actions);
        let mut u = Vec::with_capacity(self.config.actions);
        let mut attention = Vec::with_capacity(self.config.actions);
        for a in 0..self.config.actions {
            let w = self.attention_weights(&h, a)?;
            let (qa, ua) = self.q_u_from_attention(&w);
            q.push(qa);
            u.push(ua);
            attention.push(w);
        }
        Ok(ForwardDiagnostics {
            embedding: h,
            q,
            u,
            attention,
        })
    }

    /// `argmax_a Q(s,a) + lambda * U(s,a)`, ties to the lowest index.
    pub fn select_action(
        &self,
        obs: &Observation,
        lambda: f64,
    ) -> Result<(Action, ForwardDiagnostics)> {
        let diag = self.forward(obs)?;
        let a = select_from_scores(&diag.q, &diag.u, lambda);
        Ok((Action::from_index(a)?, diag))
    }

    /// Decodes an embedding back to observation space.
    pub fn decode(&self, h: &[f64]) -> Result<Tensor> {
        self.check_embedding(h)?;
        let (c0, h0, w0) = self.shapes.dec_in;
        let dec_flat = c0 * h0 * w0;
        let mut x = vec![0.0; dec_flat];
        kernels::matmul(
            h,
            self.params[self.idx_dec_w].tensor.data(),
            1,
            self.config.embedding_dim,
            dec_flat,
            &mut x,
        );
        for (v, b) in x.iter_mut().zip(self.params[self.idx_dec_b].tensor.data()) {
            *v += b;
        }
        if self.config.deconv_layers.is_empty() {
            let (k, hh, ww) = self.config.obs_shape;
            return Tensor::new(vec![k, hh, ww], x);
        }
        for v in &mut x {
            *v = v.max(0.0);
        }
        let (mut c, mut ch, mut cw) = (c0, h0, w0);
        let last = self.config.deconv_layers.len() - 1;
        for (li, spec) in self.config.deconv_layers.iter().enumerate() {
            let oh = (ch - 1) * spec.stride + spec.kernel;
            let ow = (cw - 1) * spec.stride + spec.kernel;
            let mut out = vec![0.0; spec.filters * oh * ow];
            kernels::deconv2d(
                &x,
                self.params[self.idx_deconv[li]].tensor.data(),
                c,
                ch,
                cw,
                spec.filters,
                spec.kernel,
                spec.kernel,
                spec.stride,
                &mut out,
            );
            if li < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            (x, c, ch, cw) = (out, spec.filters, oh, ow);
        }
        Tensor::new(vec![c, ch, cw], x)
    }

    /// Decodes key `i` of action `a` into an image.
    pub fn invert_key(&self, action: usize, i: usize) -> Result<Tensor> {
        let key = self.key(action, i)?.to_vec();
        self.decode(&key)
    }

    /// Decodes points on the segment `start + lambda * (final - start)`.
    /// `lambda == 0.0` and `lambda == 1.0` reproduce the endpoint decodes
    /// exactly (bit for bit).
    pub fn interpolate_embeddings(
        &self,
        start: &[f64],
        end: &[f64],
        lambdas: &[f64],
    ) -> Result<Vec<Tensor>> {
        if start.len() != end.len() {
            return Err(Error::Dimension {
                op: "interpolate_embeddings",
                lhs: vec![start.len()],
                rhs: vec![end.len()],
            });
        }
        lambdas
            .iter()
            .map(|&l| {
                let point: Vec<f64> = if l == 0.0 {
                    start.to_vec()
                } else if l == 1.0 {
                    end.to_vec()
                } else {
                    start
                        .iter()
                        .zip(end)
                        .map(|(s, e)| s + l * (e - s))
                        .collect()
                };
                self.decode(&point)
            })
            .collect()
    }
}

/// `argmax_a q[a] + lambda * u[a]`; ties break to the lowest index.
pub fn select_from_scores(q: &[f64], u: &[f64], lambda: f64) -> usize {
    debug_assert_eq!(q.len(), u.len());
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for a in 0..q.len() {
        let score = q[a] + lambda * u[a];
        if score > best_score {
            best = a;
            best_score = score;
        }
    }
    best
}

/// Canonical parameter list (name, shape) for a config.
pub(crate) fn expected_parameters(
    config: &ModelConfig,
    shapes: &DerivedShapes,
) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let (k, _, _) = config.obs_shape;
    let mut c = k;
    for (i, spec) in config.conv_layers.iter().enumerate() {
        out.push((
            format!("enc.conv{}", i),
            vec![spec.filters, c, spec.kernel, spec.kernel],
        ));
        c = spec.filters;
    }
    out.push((
        "enc.dense.w".to_string(),
        vec![shapes.enc_flat, config.embedding_dim],
    ));
    out.push(("enc.dense.b".to_string(), vec![1, config.embedding_dim]));
    for a in 0..config.actions {
        out.push((
            format!("keys.a{}", a),
            vec![config.keys_per_action, config.embedding_dim],
        ));
    }
    let dec_flat = shapes.dec_in.0 * shapes.dec_in.1 * shapes.dec_in.2;
    out.push((
        "dec.dense.w".to_string(),
        vec![config.embedding_dim, dec_flat],
    ));
    out.push(("dec.dense.b".to_string(), vec![1, dec_flat]));
    let mut dc = shapes.dec_in.0;
    for (i, spec) in config.deconv_layers.iter().enumerate() {
        out.push((
            format!("dec.deconv{}", i),
            vec![dc, spec.filters, spec.kernel, spec.kernel],
        ));
        dc = spec.filters;
    }
    out
}

pub(crate) fn validate_values(config: &ModelConfig, values: &[f64]) -> Result<()> {
    if values.len() != config.keys_per_action {
        return Err(Error::contract(format!(
            "expected {} value supports, got {}",
            config.keys_per_action,
            values.len()
        )));
    }
    for pair in values.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::contract(format!(
                "value supports must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if values[0] <= config.v_min || *values.last().unwrap() >= config.v_max {
        return Err(Error::contract(format!(
            "value supports must lie strictly inside ({}, {})",
            config.v_min, config.v_max
        )));
    }
    Ok(())
}

fn assemble(
    config: ModelConfig,
    shapes: DerivedShapes,
    params: Vec<Parameter>,
    values: Vec<f64>,
) -> IDQNModel {
    let n_conv = config.conv_layers.len();
    let idx_conv: Vec<usize> = (0..n_conv).collect();
    let idx_dense_w = n_conv;
    let idx_dense_b = n_conv + 1;
    let idx_keys: Vec<usize> = (0..config.actions).map(|a| n_conv + 2 + a).collect();
    let idx_dec_w = n_conv + 2 + config.actions;
    let idx_dec_b = idx_dec_w + 1;
    let idx_deconv: Vec<usize> = (0..config.deconv_layers.len())
        .map(|i| idx_dec_b + 1 + i)
        .collect();
    IDQNModel {
        config,
        shapes,
        params,
        values,
        idx_conv,
        idx_dense_w,
        idx_dense_b,
        idx_keys,
        idx_dec_w,
        idx_dec_b,
        idx_deconv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{chacha, stream};
    use rand::Rng;

    const DESK_OBS: (usize, usize, usize) = (2, 32, 32);

    fn obs_from_seed(shape: (usize, usize, usize), seed: u64) -> Observation {
        let (k, h, w) = shape;
        let mut rng = chacha(seed, stream::EPISODE);
        let data: Vec<f64> = (0..k * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Observation::from_tensor(Tensor::new(vec![k, h, w], data).unwrap()).unwrap()
    }

    /// A tiny config (no convs, dense-only decoder) for fast exact tests.
    fn tiny_config(n: usize, d: usize) -> ModelConfig {
        ModelConfig {
            actions: 2,
            keys_per_action: n,
            embedding_dim: d,
            v_min: -26.0,
            v_max: 26.0,
            value_layout: ValueLayout::RandomUniform,
            conv_layers: vec![],
            deconv_layers: vec![],
            decoder_channels: 1,
            obs_shape: (1, 2, 2),
            exploration_factor: 0.01,
        }
    }

    #[test]
    fn desk_config_traces_shapes() {
        let shapes = ModelConfig::desk(DESK_OBS).trace_shapes().unwrap();
        assert_eq!(shapes.enc_out, (16, 7, 7));
        assert_eq!(shapes.enc_flat, 784);
        assert_eq!(shapes.dec_in, (16, 7, 7));
    }

    #[test]
    fn full_scale_config_closes_exactly() {
        let shapes = ModelConfig::full_scale((4, 84, 84)).trace_shapes().unwrap();
        assert_eq!(shapes.enc_out, (64, 7, 7));
        assert_eq!(shapes.enc_flat, 3136);
        assert_eq!(shapes.dec_in, (64, 7, 7));
    }

    #[test]
    fn config_rejects_unclosable_decoder() {
        // 31 - 4 is odd, so the stride-2 final deconv cannot land on 31.
        let err = ModelConfig::desk((2, 31, 31)).trace_shapes().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    #[test]
    fn config_rejects_oversized_kernel() {
        let mut cfg = ModelConfig::desk((2, 32, 32));
        cfg.conv_layers[0].kernel = 40;
        assert!(cfg.trace_shapes().is_err());
    }

    #[test]
    fn config_rejects_channel_mismatch() {
        let mut cfg = ModelConfig::desk(DESK_OBS);
        cfg.deconv_layers[1].filters = 3; // obs has 2 frames
        assert!(cfg.trace_shapes().is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = IDQNModel::init(ModelConfig::desk(DESK_OBS), 11).unwrap();
        let b = IDQNModel::init(ModelConfig::desk(DESK_OBS), 11).unwrap();
        let c = IDQNModel::init(ModelConfig::desk(DESK_OBS), 12).unwrap();
        assert_eq!(a.values(), b.values());
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.tensor.data(), pb.tensor.data());
        }
        assert_ne!(a.values(), c.values());
        let differs = a
            .params()
            .iter()
            .zip(c.params())
            .any(|(pa, pc)| pa.tensor.data() != pc.tensor.data());
        assert!(differs);
    }

    #[test]
    fn initial_values_sorted_strictly_inside_range() {
        for seed in 0..20 {
            let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), seed).unwrap();
            let v = m.values();
            assert_eq!(v.len(), 8);
            for pair in v.windows(2) {
                assert!(pair[0] < pair[1], "seed {seed}: {v:?} not increasing");
            }
            assert!(v[0] > -25.0 && v[7] < 25.0, "seed {seed}: {v:?} on boundary");
        }
    }

    #[test]
    fn evenly_spaced_values_are_interval_midpoints() {
        let mut cfg = ModelConfig::desk(DESK_OBS);
        cfg.keys_per_action = 3;
        cfg.value_layout = ValueLayout::EvenlySpaced;
        let m = IDQNModel::init(cfg, 0).unwrap();
        let v = m.values();
        assert!((v[0] - (-50.0 / 3.0)).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 50.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn biases_start_at_zero() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 5).unwrap();
        for p in m.params() {
            if p.name.ends_with(".b") {
                assert!(p.tensor.data().iter().all(|&x| x == 0.0), "{}", p.name);
            }
        }
    }

    #[test]
    fn parameter_names_follow_canonical_order() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 0).unwrap();
        let names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "enc.conv0",
                "enc.conv1",
                "enc.dense.w",
                "enc.dense.b",
                "keys.a0",
                "keys.a1",
                "keys.a2",
                "keys.a3",
                "dec.dense.w",
                "dec.dense.b",
                "dec.deconv0",
                "dec.deconv1",
            ]
        );
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 3).unwrap();
        let obs = obs_from_seed(DESK_OBS, 9);
        let diag = m.forward(&obs).unwrap();
        for w in &diag.attention {
            assert_eq!(w.len(), 8);
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row sums to {s}");
            assert!(w.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn equal_keys_give_uniform_attention() {
        let mut m = IDQNModel::init(tiny_config(4, 3), 0).unwrap();
        for a in 0..2 {
            let idx = m.idx_keys[a];
            let t = &mut m.params_mut()[idx].tensor;
            let d = t.data_mut();
            for row in 0..4 {
                for col in 0..3 {
                    d[row * 3 + col] = [0.3, -0.7, 1.1][col];
                }
            }
        }
        let w = m.attention_weights(&[0.5, -2.0, 0.25], 0).unwrap();
        for &wi in &w {
            assert!((wi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn q_u_identities_hold_exactly() {
        let mut m = IDQNModel::init(tiny_config(2, 3), 0).unwrap();
        m.set_values(vec![-25.0, 25.0]).unwrap();
        // a one-hot attention row sits on its support with zero spread
        let (q, u) = m.q_u_from_attention(&[1.0, 0.0]);
        assert_eq!(q, -25.0);
        assert_eq!(u, 0.0);
        // an even split across +/-25 has mean 0 and deviation 25
        let (q, u) = m.q_u_from_attention(&[0.5, 0.5]);
        assert_eq!(q, 0.0);
        assert_eq!(u, 25.0);
        // a 0.2/0.8 split: Q = 15, U = sqrt(625 - 225) = 20
        let (q, u) = m.q_u_from_attention(&[0.2, 0.8]);
        assert!((q - 15.0).abs() < 1e-12);
        assert!((u - 20.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_key_saturates_attention() {
        let mut m = IDQNModel::init(tiny_config(4, 2), 0).unwrap();
        // dot products [50, 0, 0, 0] for h = [1, 0]
        let idx = m.idx_keys[0];
        let t = &mut m.params_mut()[idx].tensor;
        t.data_mut().copy_from_slice(&[50.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = m.attention_weights(&[1.0, 0.0], 0).unwrap();
        assert!(w[0] > 1.0 - 1e-9, "w0 = {}", w[0]);
    }

    #[test]
    fn single_key_attention_is_one() {
        let m = IDQNModel::init(tiny_config(1, 3), 0).unwrap();
        let w = m.attention_weights(&[0.4, -0.2, 1.0], 1).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn q_stays_inside_support_hull() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 21).unwrap();
        let v = m.values();
        let (lo, hi) = (v[0], v[v.len() - 1]);
        for seed in 0..5 {
            let diag = m.forward(&obs_from_seed(DESK_OBS, seed)).unwrap();
            for a in 0..4 {
                assert!(diag.q[a] >= lo && diag.q[a] <= hi);
                assert!(diag.u[a] >= 0.0);
                // u^2 + q^2 equals the attention-weighted second moment
                let second: f64 = diag.attention[a]
                    .iter()
                    .zip(v)
                    .map(|(wi, vi)| wi * vi * vi)
                    .sum();
                assert!((diag.u[a] * diag.u[a] + diag.q[a] * diag.q[a] - second).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn select_from_scores_prefers_uncertain_then_breaks_ties_low() {
        let q = [1.0, 2.0];
        let u = [100.0, 0.0];
        // bonus exactly closes the gap: tie, lowest index wins
        assert_eq!(select_from_scores(&q, &u, 0.01), 0);
        // a larger bonus flips the choice to the uncertain action
        assert_eq!(select_from_scores(&q, &u, 0.02), 0);
        assert_eq!(select_from_scores(&q, &u, 0.0), 1);
        assert_eq!(select_from_scores(&[2.0, 2.0, 1.0], &[0.0; 3], 0.5), 0);
    }

    #[test]
    fn attention_argmax_is_scale_invariant() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 7).unwrap();
        let h = m.encode(&obs_from_seed(DESK_OBS, 31)).unwrap();
        let h3: Vec<f64> = h.iter().map(|x| 3.0 * x).collect();
        for a in 0..4 {
            let w1 = m.attention_weights(&h, a).unwrap();
            let w3 = m.attention_weights(&h3, a).unwrap();
            let arg = |w: &[f64]| {
                w.iter()
                    .enumerate()
                    .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(arg(&w1), arg(&w3));
        }
    }

    #[test]
    fn decode_and_invert_key_match_observation_shape() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 2).unwrap();
        let h = m.encode(&obs_from_seed(DESK_OBS, 1)).unwrap();
        assert_eq!(m.decode(&h).unwrap().shape(), &[2, 32, 32]);
        assert_eq!(m.invert_key(3, 5).unwrap().shape(), &[2, 32, 32]);
        assert!(m.invert_key(4, 0).is_err());
        assert!(m.invert_key(0, 8).is_err());
    }

    #[test]
    fn interpolation_endpoints_are_bit_exact() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 13).unwrap();
        let start = m.encode(&obs_from_seed(DESK_OBS, 100)).unwrap();
        let end = m.encode(&obs_from_seed(DESK_OBS, 101)).unwrap();
        let frames = m
            .interpolate_embeddings(&start, &end, &[0.0, 0.5, 1.0])
            .unwrap();
        assert_eq!(frames[0].data(), m.decode(&start).unwrap().data());
        assert_eq!(frames[2].data(), m.decode(&end).unwrap().data());
        assert_ne!(frames[1].data(), frames[0].data());
        assert_ne!(frames[1].data(), frames[2].data());
    }

    #[test]
    fn gradients_reach_selected_action_keys_only() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 4).unwrap();
        let obs = obs_from_seed(DESK_OBS, 55);
        let mut tape = Tape::new();
        let mv = m.vars_on(&mut tape, true);
        let o = tape.constant(obs.tensor().clone());
        let h = m.encode_on(&mut tape, &mv, o).unwrap();
        let w = m.attention_on(&mut tape, &mv, h, 1).unwrap();
        let q = m.q_on(&mut tape, &mv, w).unwrap();
        tape.backward(q).unwrap();
        let grad_norm = |idx: usize| -> f64 {
            tape.grad(mv.vars[idx]).iter().map(|g| g * g).sum::<f64>()
        };
        assert!(grad_norm(m.idx_keys[1]) > 0.0);
        assert_eq!(grad_norm(m.idx_keys[0]), 0.0);
        assert_eq!(grad_norm(m.idx_keys[2]), 0.0);
        // the encoder feeds the logits, so its weights get gradient too
        assert!(grad_norm(m.idx_dense_w) > 0.0);
    }

    #[test]
    fn frozen_vars_receive_no_gradient() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 4).unwrap();
        let obs = obs_from_seed(DESK_OBS, 55);
        let mut tape = Tape::new();
        let mv = m.vars_on(&mut tape, false);
        let o = tape.constant(obs.tensor().clone());
        let h = m.encode_on(&mut tape, &mv, o).unwrap();
        let w = m.attention_on(&mut tape, &mv, h, 0).unwrap();
        let q = m.q_on(&mut tape, &mv, w).unwrap();
        tape.backward(q).unwrap();
        for v in &mv.vars {
            assert!(tape.grad(*v).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn encode_is_bit_deterministic() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 6).unwrap();
        let obs = obs_from_seed(DESK_OBS, 77);
        assert_eq!(m.encode(&obs).unwrap(), m.encode(&obs).unwrap());
    }

    #[test]
    fn from_parts_validates_layout() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 8).unwrap();
        let params = m.params().to_vec();
        let values = m.values().to_vec();
        // intact parts round-trip
        let rebuilt =
            IDQNModel::from_parts(ModelConfig::desk(DESK_OBS), params.clone(), values.clone())
                .unwrap();
        assert_eq!(rebuilt.values(), m.values());

        let mut renamed = params.clone();
        renamed[0].name = "enc.conv9".to_string();
        assert!(IDQNModel::from_parts(ModelConfig::desk(DESK_OBS), renamed, values.clone())
            .is_err());

        let mut short = params.clone();
        short.pop();
        assert!(IDQNModel::from_parts(ModelConfig::desk(DESK_OBS), short, values.clone()).is_err());

        // unsorted or out-of-range supports are rejected
        assert!(
            IDQNModel::from_parts(ModelConfig::desk(DESK_OBS), params.clone(), vec![1.0; 8])
                .is_err()
        );
        let mut wide = values;
        wide[7] = 25.0;
        assert!(IDQNModel::from_parts(ModelConfig::desk(DESK_OBS), params, wide).is_err());
    }

    #[test]
    fn select_action_returns_diagnostics() {
        let m = IDQNModel::init(ModelConfig::desk(DESK_OBS), 14).unwrap();
        let obs = obs_from_seed(DESK_OBS, 3);
        let (action, diag) = m
            .select_action(&obs, m.config().exploration_factor)
            .unwrap();
        let scores: Vec<f64> = diag
            .q
            .iter()
            .zip(&diag.u)
            .map(|(q, u)| q + m.config().exploration_factor * u)
            .collect();
        let best = scores
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(action.index(), best);
        assert_eq!(diag.embedding.len(), 64);
    }
}
