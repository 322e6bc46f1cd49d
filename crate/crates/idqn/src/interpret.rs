//! Interpretability toolkit: the key/policy agreement metric, perturbation
//! saliency maps, attention-map and embedding exports, key-inversion
//! galleries, and the adversarial state-edit probe.
//!
//! Everything here is a deterministic, read-only function of a model,
//! an environment, and explicit configuration.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::env::{Action, Edit, GridState, Observation, PelletWorld};
use crate::error::{Error, Result};
use crate::model::{select_from_scores, IDQNModel};
use crate::pgm;
use crate::rng::{derive_seed2, stream};
use crate::tensor::Tensor;

// ── Agreement ───────────────────────────────────────────────────────────

/// Outcome of the agreement measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementResult {
    /// Pooled `matched / total` over all rollouts.
    pub agreement: f64,
    pub per_rollout: Vec<f64>,
    pub matched: usize,
    pub total: usize,
    pub temperature: f64,
}

/// Cosine similarity of two equally long vectors; 0 when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Decodes every key once: `inversions[a][i]` is the flattened image of
/// key `i` of action `a`.
pub fn invert_all_keys(model: &IDQNModel) -> Result<Vec<Vec<Vec<f64>>>> {
    let cfg = model.config();
    (0..cfg.actions)
        .map(|a| {
            (0..cfg.keys_per_action)
                .map(|i| Ok(model.invert_key(a, i)?.data().to_vec()))
                .collect()
        })
        .collect()
}

/// The image-space policy: attention from cosine similarity between the
/// observation and each inverted key (softmax at `temperature`), Q' and U'
/// from the same fixed supports, then the usual bonus argmax.
pub fn image_space_action(
    inversions: &[Vec<Vec<f64>>],
    values: &[f64],
    obs: &Observation,
    temperature: f64,
    lambda: f64,
) -> usize {
    let flat = obs.tensor().data();
    let mut q = Vec::with_capacity(inversions.len());
    let mut u = Vec::with_capacity(inversions.len());
    for keys in inversions {
        let logits: Vec<f64> = keys
            .iter()
            .map(|img| cosine(flat, img) / temperature)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let w: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let qa: f64 = w.iter().zip(values).map(|(wi, vi)| wi * vi).sum();
        let second: f64 = w.iter().zip(values).map(|(wi, vi)| wi * vi * vi).sum();
        q.push(qa);
        u.push((second - qa * qa).max(0.0).sqrt());
    }
    select_from_scores(&q, &u, lambda)
}

/// Core agreement loop: steps the environment with the model's own action
/// `a_t` while comparing against `reference`'s pick each step. Rollout
/// episode seeds derive from `(seed, ROLLOUT, rollout_index)`.
pub fn agreement_with_reference<F>(
    model: &IDQNModel,
    env: &PelletWorld,
    rollouts: usize,
    lambda: f64,
    temperature: f64,
    seed: u64,
    mut reference: F,
) -> Result<AgreementResult>
where
    F: FnMut(&Observation) -> Result<usize>,
{
    if rollouts == 0 {
        return Err(Error::config("agreement needs at least one rollout"));
    }
    let mut matched = 0usize;
    let mut total = 0usize;
    let mut per_rollout = Vec::with_capacity(rollouts);
    for r in 0..rollouts {
        let (mut state, mut obs) = env.reset(derive_seed2(seed, stream::ROLLOUT, r as u64))?;
        let mut r_matched = 0usize;
        let mut r_total = 0usize;
        while !env.is_done(&state) {
            let (a_t, _) = model.select_action(&obs, lambda)?;
            let a_ref = reference(&obs)?;
            if a_t.index() == a_ref {
                r_matched += 1;
            }
            r_total += 1;
            let (s, o, _, _) = env.step(&state, a_t, &obs)?;
            state = s;
            obs = o;
        }
        matched += r_matched;
        total += r_total;
        per_rollout.push(if r_total == 0 {
            0.0
        } else {
            r_matched as f64 / r_total as f64
        });
    }
    Ok(AgreementResult {
        agreement: if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        },
        per_rollout,
        matched,
        total,
        temperature,
    })
}

/// The paper-shaped agreement: reference = image-space policy over the
/// model's own key inversions.
pub fn agreement(
    model: &IDQNModel,
    env: &PelletWorld,
    rollouts: usize,
    lambda: f64,
    temperature: f64,
    seed: u64,
) -> Result<AgreementResult> {
    if temperature <= 0.0 {
        return Err(Error::config("agreement temperature must be positive"));
    }
    let inversions = invert_all_keys(model)?;
    let values = model.values().to_vec();
    agreement_with_reference(model, env, rollouts, lambda, temperature, seed, |obs| {
        Ok(image_space_action(&inversions, &values, obs, temperature, lambda))
    })
}

// ── Saliency ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyConfig {
    /// Gaussian blur width (pixels) for the perturbation source image.
    pub blur_sigma: f64,
    /// Gaussian mask width (pixels); masks are truncated at radius
    /// `ceil(3 * sigma)`, outside which the image is untouched bit-for-bit.
    pub mask_sigma: f64,
    /// Grid stride (pixels); off-grid pixels copy their nearest grid value.
    pub stride: usize,
    /// Mask peak height; 0 disables the perturbation entirely.
    pub amplitude: f64,
}

impl Default for SaliencyConfig {
    fn default() -> SaliencyConfig {
        SaliencyConfig {
            blur_sigma: 3.0,
            mask_sigma: 2.0,
            stride: 2,
            amplitude: 1.0,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma <= 0.0 || self.mask_sigma <= 0.0 {
            return Err(Error::config("saliency sigmas must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::config("saliency stride must be positive"));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::config("saliency amplitude must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Separable truncated-Gaussian blur of one `h x w` image; taps are
/// renormalized over the in-bounds window so flat images stay flat.
pub fn blur_2d(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                let jj = j as isize + (t as isize - r);
                if jj >= 0 && (jj as usize) < w {
                    acc += tap * img[i * w + jj as usize];
                    norm += tap;
                }
            }
            tmp[i * w + j] = acc / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                let ii = i as isize + (t as isize - r);
                if ii >= 0 && (ii as usize) < h {
                    acc += tap * tmp[ii as usize * w + j];
                    norm += tap;
                }
            }
            out[i * w + j] = acc / norm;
        }
    }
    out
}

/// Truncated Gaussian mask centered at `(ci, cj)`: exactly zero beyond
/// radius `ceil(3 * sigma)`.
pub fn gaussian_mask(
    h: usize,
    w: usize,
    ci: usize,
    cj: usize,
    sigma: f64,
    amplitude: f64,
) -> Vec<f64> {
    let mut mask = vec![0.0; h * w];
    let r = (3.0 * sigma).ceil() as isize;
    for di in -r..=r {
        for dj in -r..=r {
            let i = ci as isize + di;
            let j = cj as isize + dj;
            if i < 0 || j < 0 || i as usize >= h || j as usize >= w {
                continue;
            }
            let d2 = (di * di + dj * dj) as f64;
            let v = amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            mask[i as usize * w + j as usize] = v.min(1.0);
        }
    }
    mask
}

/// Blends `blurred` into `obs` under `mask` (per frame): where the mask is
/// zero the output equals the input bit-for-bit.
pub fn perturbed_obs(obs: &Observation, blurred: &[f64], mask: &[f64]) -> Result<Observation> {
    let shape = obs.shape().to_vec();
    let (k, h, w) = (shape[0], shape[1], shape[2]);
    if blurred.len() != k * h * w || mask.len() != h * w {
        return Err(Error::contract("perturbed_obs: buffer sizes do not match"));
    }
    let src = obs.tensor().data();
    let mut out = vec![0.0; k * h * w];
    for f in 0..k {
        for p in 0..h * w {
            let idx = f * h * w + p;
            let m = mask[p];
            out[idx] = if m == 0.0 {
                src[idx]
            } else {
                src[idx] * (1.0 - m) + blurred[idx] * m
            };
        }
    }
    Observation::from_tensor(Tensor::new(vec![k, h, w], out)?)
}

/// Perturbation saliency: `S(i,j) = 0.5 * (Q(phi(s,i,j), a) - Q(s, a))^2`
/// on the stride grid, nearest-grid fill elsewhere.
pub fn saliency_map(
    model: &IDQNModel,
    obs: &Observation,
    action: Action,
    cfg: &SaliencyConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let shape = obs.shape().to_vec();
    let (k, h, w) = (shape[0], shape[1], shape[2]);

    let h0 = model.encode(obs)?;
    let q0 = model.q_value(&h0, action.index())?;

    let src = obs.tensor().data();
    let mut blurred = vec![0.0; k * h * w];
    for f in 0..k {
        let frame = &src[f * h * w..(f + 1) * h * w];
        blurred[f * h * w..(f + 1) * h * w].copy_from_slice(&blur_2d(frame, h, w, cfg.blur_sigma));
    }

    let gh = (h + cfg.stride - 1) / cfg.stride;
    let gw = (w + cfg.stride - 1) / cfg.stride;
    let mut grid = vec![0.0; gh * gw];
    for gi in 0..gh {
        for gj in 0..gw {
            let (ci, cj) = (gi * cfg.stride, gj * cfg.stride);
            let mask = gaussian_mask(h, w, ci, cj, cfg.mask_sigma, cfg.amplitude);
            let phi = perturbed_obs(obs, &blurred, &mask)?;
            let hq = model.encode(&phi)?;
            let q = model.q_value(&hq, action.index())?;
            grid[gi * gw + gj] = 0.5 * (q - q0) * (q - q0);
        }
    }

    // nearest grid point per pixel, ties toward the lower index
    let nearest = |i: usize, g: usize| -> usize {
        let lo = i / cfg.stride;
        let hi = (lo + 1).min(g - 1);
        let d_lo = i - lo * cfg.stride;
        let d_hi = (hi * cfg.stride).saturating_sub(i);
        if hi > lo && d_hi < d_lo {
            hi
        } else {
            lo
        }
    };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = grid[nearest(i, gh) * gw + nearest(j, gw)];
        }
    }
    Tensor::new(vec![h, w], out)
}

// ── Attention maps ──────────────────────────────────────────────────────

/// Pixels per heat-map cell.
const ATTN_CELL: usize = 16;

/// Per-action attention rows for one observation plus a rendered heat map
/// (absolute scale: weight 1 is black, weight 0 is white).
pub fn attention_map(model: &IDQNModel, obs: &Observation) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let diag = model.forward(obs)?;
    let rows = diag.attention;
    let (a, n) = (rows.len(), rows[0].len());
    let (hp, wp) = (a * ATTN_CELL, n * ATTN_CELL);
    let mut img = vec![0.0; hp * wp];
    for (ai, row) in rows.iter().enumerate() {
        for (ni, &wgt) in row.iter().enumerate() {
            let v = 1.0 - wgt;
            for di in 0..ATTN_CELL {
                for dj in 0..ATTN_CELL {
                    img[(ai * ATTN_CELL + di) * wp + ni * ATTN_CELL + dj] = v;
                }
            }
        }
    }
    Ok((rows, pgm::encode(wp, hp, &img)))
}

// ── Embedding export ────────────────────────────────────────────────────

/// Writes one CSV row per state embedding and per key. Columns:
/// `kind,action,key_index,e0..e{D-1}`. Key rows carry the stored key
/// exactly; state rows leave `action` empty and number `key_index`.
pub fn export_embeddings<W: Write>(
    model: &IDQNModel,
    states: &[Observation],
    out: &mut W,
) -> Result<usize> {
    let d = model.config().embedding_dim;
    write!(out, "kind,action,key_index")?;
    for i in 0..d {
        write!(out, ",e{}", i)?;
    }
    writeln!(out)?;

    let mut rows = 0;
    for (si, s) in states.iter().enumerate() {
        let h = model.encode(s)?;
        write!(out, "state,,{}", si)?;
        for x in &h {
            write!(out, ",{}", x)?;
        }
        writeln!(out)?;
        rows += 1;
    }
    for a in 0..model.config().actions {
        for i in 0..model.config().keys_per_action {
            write!(out, "key,{},{}", a, i)?;
            for x in model.key(a, i)? {
                write!(out, ",{}", x)?;
            }
            writeln!(out)?;
            rows += 1;
        }
    }
    Ok(rows)
}

// ── Key gallery ─────────────────────────────────────────────────────────

/// Decodes every key to a PGM named `act{a}_val{v:+.2f}.pgm` (the decoded
/// stack's most recent frame). If two supports round to the same two
/// decimals, the colliding files gain a `_k{i}` suffix so the gallery
/// always holds exactly `A * N` images.
pub fn key_gallery(model: &IDQNModel, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = model.config();
    let values = model.values();
    let mut names: Vec<Vec<String>> = Vec::with_capacity(cfg.actions);
    for a in 0..cfg.actions {
        let base: Vec<String> = (0..cfg.keys_per_action)
            .map(|i| format!("act{}_val{:+.2}", a, values[i]))
            .collect();
        let row = (0..cfg.keys_per_action)
            .map(|i| {
                if base.iter().filter(|b| **b == base[i]).count() > 1 {
                    format!("{}_k{}.pgm", base[i], i)
                } else {
                    format!("{}.pgm", base[i])
                }
            })
            .collect();
        names.push(row);
    }

    let mut paths = Vec::new();
    for a in 0..cfg.actions {
        for i in 0..cfg.keys_per_action {
            let img = model.invert_key(a, i)?;
            let shape = img.shape().to_vec();
            let (k, h, w) = (shape[0], shape[1], shape[2]);
            let last = &img.data()[(k - 1) * h * w..];
            let path = out_dir.join(&names[a][i]);
            pgm::write(&path, w, h, last)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

// ── Adversarial probe ───────────────────────────────────────────────────

/// One greedy rollout plus everything the probe report needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub trace: Vec<Action>,
    /// `attention[step][action]` is that step's full attention table.
    pub attention: Vec<Vec<Vec<f64>>>,
    pub ret: f64,
    pub pellets_available: usize,
    pub pellets_cleared: usize,
    pub uncleared: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub edits: Vec<Edit>,
    pub base: ProbeRun,
    pub edited: ProbeRun,
    /// First step at which the action traces differ; `None` when the
    /// edited run is identical to the base run.
    pub divergence: Option<usize>,
}

/// Greedy (`lambda = 0`) rollout from `start` for at most `steps` steps.
pub fn greedy_rollout(
    model: &IDQNModel,
    env: &PelletWorld,
    start: &GridState,
    steps: usize,
) -> Result<ProbeRun> {
    let pellets_available = start.pellets.len();
    let mut state = start.clone();
    let mut obs = env.observe_static(&state);
    let mut trace = Vec::new();
    let mut attention = Vec::new();
    let mut ret = 0.0;
    while trace.len() < steps && !env.is_done(&state) {
        let (action, diag) = model.select_action(&obs, 0.0)?;
        trace.push(action);
        attention.push(diag.attention);
        let (s, o, r, _) = env.step(&state, action, &obs)?;
        ret += r;
        state = s;
        obs = o;
    }
    let uncleared: Vec<(usize, usize)> = state.pellets.iter().copied().collect();
    Ok(ProbeRun {
        trace,
        attention,
        ret,
        pellets_available,
        pellets_cleared: pellets_available - uncleared.len(),
        uncleared,
    })
}

/// Runs the greedy policy from the base state and from the edited state,
/// reporting traces, attention, pellet outcomes, and the divergence step.
pub fn adversarial_probe(
    model: &IDQNModel,
    env: &PelletWorld,
    base: &GridState,
    edits: &[Edit],
    steps: usize,
) -> Result<ProbeReport> {
    let mut edited_state = base.clone();
    for e in edits {
        edited_state = crate::env::edit(&edited_state, e)?;
    }
    let base_run = greedy_rollout(model, env, base, steps)?;
    let edited_run = greedy_rollout(model, env, &edited_state, steps)?;

    let divergence = first_divergence(&base_run.trace, &edited_run.trace);
    Ok(ProbeReport {
        edits: edits.to_vec(),
        base: base_run,
        edited: edited_run,
        divergence,
    })
}

/// First index where two traces differ; a shared prefix with different
/// lengths diverges at the shorter length; identical traces never diverge.
pub fn first_divergence(a: &[Action], b: &[Action]) -> Option<usize> {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Some(i);
        }
    }
    if a.len() != b.len() {
        Some(a.len().min(b.len()))
    } else {
        None
    }
}

fn trace_letters(trace: &[Action]) -> String {
    trace.iter().map(|a| a.letter()).collect()
}

fn cells(cells: &[(usize, usize)]) -> String {
    if cells.is_empty() {
        return "none".to_string();
    }
    cells
        .iter()
        .map(|(r, c)| format!("({},{})", r, c))
        .collect::<Vec<_>>()
        .join(" ")
}

impl ProbeReport {
    /// Line-oriented `key: value` report; byte-stable for fixed inputs.
    pub fn to_text(&self) -> String {
        let edits = if self.edits.is_empty() {
            "none".to_string()
        } else {
            self.edits
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        };
        let mut s = String::new();
        s.push_str(&format!("edits: {}\n", edits));
        s.push_str(&format!(
            "divergence: {}\n",
            match self.divergence {
                None => "none".to_string(),
                Some(i) => i.to_string(),
            }
        ));
        s.push_str(&format!("base_actions: {}\n", trace_letters(&self.base.trace)));
        s.push_str(&format!(
            "edited_actions: {}\n",
            trace_letters(&self.edited.trace)
        ));
        s.push_str(&format!("base_return: {}\n", self.base.ret));
        s.push_str(&format!("edited_return: {}\n", self.edited.ret));
        s.push_str(&format!(
            "base_pellets: {} cleared of {} available\n",
            self.base.pellets_cleared, self.base.pellets_available
        ));
        s.push_str(&format!(
            "edited_pellets: {} cleared of {} available\n",
            self.edited.pellets_cleared, self.edited.pellets_available
        ));
        s.push_str(&format!(
            "base_uncleared: {}\n",
            cells(&self.base.uncleared)
        ));
        s.push_str(&format!(
            "edited_uncleared: {}\n",
            cells(&self.edited.uncleared)
        ));
        s
    }

    /// Per-step attention tables for both runs as CSV:
    /// `run,step,action,w0..w{N-1}`.
    pub fn attention_csv(&self) -> String {
        let mut s = String::new();
        let n = self
            .base
            .attention
            .first()
            .or_else(|| self.edited.attention.first())
            .map(|t| t[0].len())
            .unwrap_or(0);
        s.push_str("run,step,action");
        for i in 0..n {
            s.push_str(&format!(",w{}", i));
        }
        s.push('\n');
        for (run, steps) in [("base", &self.base.attention), ("edited", &self.edited.attention)] {
            for (step, table) in steps.iter().enumerate() {
                for (a, row) in table.iter().enumerate() {
                    s.push_str(&format!("{},{},{}", run, step, a));
                    for w in row {
                        s.push_str(&format!(",{}", w));
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// Collects a deterministic set of observations for embedding exports by
/// stepping the greedy policy over `episodes` rollouts.
pub fn collect_states(
    model: &IDQNModel,
    env: &PelletWorld,
    episodes: usize,
    max_states: usize,
    seed: u64,
) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for e in 0..episodes {
        let (mut state, mut obs) = env.reset(derive_seed2(seed, stream::ROLLOUT, e as u64))?;
        while !env.is_done(&state) && out.len() < max_states {
            out.push(obs.clone());
            let (a, _) = model.select_action(&obs, 0.0)?;
            let (s, o, _, _) = env.step(&state, a, &obs)?;
            state = s;
            obs = o;
        }
        if out.len() >= max_states {
            break;
        }
    }
    Ok(out)
}

/// Convenience for probes: the set of pellet cells that exist in the
/// edited start state but were never visited by the edited trace.
pub fn unvisited_cells(start: &GridState, trace: &[Action]) -> BTreeSet<(usize, usize)> {
    let mut visited = BTreeSet::new();
    let mut pos = start.agent;
    visited.insert(pos);
    for a in trace {
        let (dr, dc) = a.delta();
        let nr = pos.0 as isize + dr;
        let nc = pos.1 as isize + dc;
        if start.in_bounds(nr, nc) && !start.walls.contains(&(nr as usize, nc as usize)) {
            pos = (nr as usize, nc as usize);
        }
        visited.insert(pos);
    }
    start
        .pellets
        .iter()
        .filter(|cell| !visited.contains(cell))
        .copied()
        .collect()
}
