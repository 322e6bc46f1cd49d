//! The four-part training loss and the categorical projection behind it.
//!
//! For a batch of transitions the total objective is
//!
//! ```text
//! L = l1 * Bellman + l2 * Distributional + l3 * Reconstruction + l4 * Diversity
//! ```
//!
//! * **Bellman**: mean squared TD error `(Q(s,a) - Y)^2` with
//!   `Y = r + gamma * max_a' Q_target(s', a')` (just `r` on terminals).
//! * **Distributional**: cross-entropy between the taken action's
//!   attention row and the target distribution `w_target(s', a*)` pushed
//!   through the reward/discount map and projected back onto the supports.
//! * **Reconstruction**: mean `0.5 * ||decode(h) - s||^2`.
//! * **Diversity**: `||A A^T - I||_F^2` where `A` stacks the batch's
//!   attention rows; identical rows are penalized, near-orthogonal (i.e.
//!   specialized) rows are not. This term is *not* averaged over the batch.
//!
//! Targets come from a frozen copy of the network and carry no gradient;
//! everything else is differentiated on one tape.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{select_from_scores, IDQNModel, ModelVars};
use crate::replay::Transition;
use crate::tensor::Tensor;

/// Loss term weights `l1..l4` (Bellman, distributional, reconstruction,
/// diversity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            l1: 1.0,
            l2: 1.0,
            l3: 0.05,
            l4: 0.01,
        }
    }
}

/// Scalar values of each term (unweighted) plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub bellman: f64,
    pub distributional: f64,
    pub reconstruction: f64,
    pub diversity: f64,
    pub total: f64,
}

/// Per-transition training target, produced by the frozen network.
#[derive(Debug, Clone)]
pub struct BatchTarget {
    /// Bellman regression target `Y`.
    pub y: f64,
    /// Projected categorical target over the value supports.
    pub projected: Vec<f64>,
}

// ── Categorical projection ──────────────────────────────────────────────

fn check_supports(supports: &[f64]) -> Result<()> {
    if supports.is_empty() {
        return Err(Error::contract("projection needs at least one support"));
    }
    for pair in supports.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::contract(
                "projection supports must be strictly increasing",
            ));
        }
    }
    Ok(())
}

fn check_distribution(w: &[f64], supports: &[f64]) -> Result<()> {
    if w.len() != supports.len() {
        return Err(Error::Dimension {
            op: "project_distribution",
            lhs: vec![w.len()],
            rhs: vec![supports.len()],
        });
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || w.iter().any(|&x| x < -1e-12) {
        return Err(Error::contract(format!(
            "projection input is not a distribution (sum {})",
            sum
        )));
    }
    Ok(())
}

/// Deposits `mass` at position `z` (already clipped into the support
/// hull), splitting it linearly between the two bracketing supports.
fn place_mass(out: &mut [f64], supports: &[f64], z: f64, mass: f64) {
    // index of the first support >= z
    let hi = supports.partition_point(|&v| v < z);
    if hi == 0 {
        out[0] += mass; // z at or below the lowest support
        return;
    }
    if hi == supports.len() {
        out[hi - 1] += mass; // z at or above the highest support
        return;
    }
    if supports[hi] == z {
        out[hi] += mass; // exact atom hit: no splitting
        return;
    }
    let lo = hi - 1;
    let width = supports[hi] - supports[lo];
    out[lo] += mass * (supports[hi] - z) / width;
    out[hi] += mass * (z - supports[lo]) / width;
}

/// Projects the distribution `w` over `supports`, shifted through
/// `z_j = clip(reward + gamma * v_j)`, back onto the same supports.
/// Supports may be non-uniformly spaced; mass splits linearly between
/// the two neighbors of each shifted atom.
pub fn project_distribution(
    w: &[f64],
    supports: &[f64],
    reward: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_supports(supports)?;
    check_distribution(w, supports)?;
    let (lo, hi) = (supports[0], supports[supports.len() - 1]);
    let mut out = vec![0.0; supports.len()];
    for (j, &wj) in w.iter().enumerate() {
        let z = (reward + gamma * supports[j]).clamp(lo, hi);
        place_mass(&mut out, supports, z, wj);
    }
    Ok(out)
}

/// Terminal projection: the whole unit mass lands at `clip(reward)`.
pub fn project_terminal(supports: &[f64], reward: f64) -> Result<Vec<f64>> {
    check_supports(supports)?;
    let (lo, hi) = (supports[0], supports[supports.len() - 1]);
    let mut out = vec![0.0; supports.len()];
    place_mass(&mut out, supports, reward.clamp(lo, hi), 1.0);
    Ok(out)
}

// ── Individual loss terms (tape-level) ──────────────────────────────────

/// Mean squared TD error over per-sample scalar Q vars.
pub fn bellman_loss(tape: &mut Tape, q: &[Var], y: &[f64]) -> Result<Var> {
    if q.is_empty() || q.len() != y.len() {
        return Err(Error::contract(format!(
            "bellman_loss needs matching non-empty inputs ({} q, {} y)",
            q.len(),
            y.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (qi, yi) in q.iter().zip(y) {
        let target = tape.constant(Tensor::scalar(*yi));
        let term = tape.mse_sum(*qi, target)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    tape.scale(acc.unwrap(), 1.0 / q.len() as f64)
}

/// Mean cross-entropy between attention rows and projected targets.
pub fn distributional_loss(tape: &mut Tape, w: &[Var], projected: &[Vec<f64>]) -> Result<Var> {
    if w.is_empty() || w.len() != projected.len() {
        return Err(Error::contract(format!(
            "distributional_loss needs matching non-empty inputs ({} rows, {} targets)",
            w.len(),
            projected.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (wi, pi) in w.iter().zip(projected) {
        let target = tape.constant(Tensor::new(vec![pi.len()], pi.clone())?);
        let term = tape.cross_entropy(target, *wi)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    tape.scale(acc.unwrap(), 1.0 / w.len() as f64)
}

/// Mean `0.5 * ||recon - obs||^2`.
pub fn reconstruction_loss(tape: &mut Tape, recon: &[Var], obs: &[Var]) -> Result<Var> {
    if recon.is_empty() || recon.len() != obs.len() {
        return Err(Error::contract(format!(
            "reconstruction_loss needs matching non-empty inputs ({} recon, {} obs)",
            recon.len(),
            obs.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (ri, oi) in recon.iter().zip(obs) {
        let term = tape.mse_sum(*ri, *oi)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    tape.scale(acc.unwrap(), 0.5 / recon.len() as f64)
}

/// `||A A^T - I||_F^2` over the batch's attention rows. Rows must each be
/// a distribution; the result is intentionally not divided by the batch
/// size, matching the objective's definition.
pub fn diversity_loss(tape: &mut Tape, rows: &[Var]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::contract("diversity_loss needs at least one row"));
    }
    for &r in rows {
        let sum: f64 = tape.data(r).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "diversity_loss row sums to {}, not 1",
                sum
            )));
        }
    }
    let a = tape.stack_rows(rows)?;
    let at = tape.transpose(a)?;
    let gram = tape.matmul(a, at)?;
    let eye = tape.constant(Tensor::identity(rows.len()));
    let diff = tape.sub(gram, eye)?;
    tape.l2_frobenius(diff)
}

// ── Batch assembly ──────────────────────────────────────────────────────

/// Computes `Y` and the projected categorical target for every transition
/// using the frozen target network. The greedy next action `a*`, the
/// bootstrap value, and the next-state attention row all come from the
/// target network; nothing here touches a tape.
pub fn build_targets(
    target: &IDQNModel,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<BatchTarget>> {
    let supports = target.values();
    batch
        .iter()
        .map(|t| {
            if t.done {
                Ok(BatchTarget {
                    y: t.reward,
                    projected: project_terminal(supports, t.reward)?,
                })
            } else {
                let diag = target.forward(&t.next_obs)?;
                let zero = vec![0.0; diag.q.len()];
                let a_star = select_from_scores(&diag.q, &zero, 0.0);
                Ok(BatchTarget {
                    y: t.reward + gamma * diag.q[a_star],
                    projected: project_distribution(
                        &diag.attention[a_star],
                        supports,
                        t.reward,
                        gamma,
                    )?,
                })
            }
        })
        .collect()
}

/// Builds the weighted four-part loss for a batch on `tape`. Returns the
/// total-loss var (backward through it trains the online network) plus the
/// unweighted per-term scalars.
pub fn total_loss(
    tape: &mut Tape,
    model: &IDQNModel,
    mv: &ModelVars,
    batch: &[&Transition],
    targets: &[BatchTarget],
    weights: &LossWeights,
) -> Result<(Var, LossReport)> {
    if batch.is_empty() {
        return Err(Error::contract("total_loss needs a non-empty batch"));
    }
    if batch.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} transitions but {} targets",
            batch.len(),
            targets.len()
        )));
    }

    let mut q_vars = Vec::with_capacity(batch.len());
    let mut w_vars = Vec::with_capacity(batch.len());
    let mut recon_vars = Vec::with_capacity(batch.len());
    let mut obs_vars = Vec::with_capacity(batch.len());
    for t in batch {
        let o = tape.constant(t.obs.tensor().clone());
        let h = model.encode_on(tape, mv, o)?;
        let w = model.attention_on(tape, mv, h, t.action.index())?;
        let q = model.q_on(tape, mv, w)?;
        let recon = model.decode_on(tape, mv, h)?;
        obs_vars.push(o);
        w_vars.push(w);
        q_vars.push(q);
        recon_vars.push(recon);
    }

    let ys: Vec<f64> = targets.iter().map(|t| t.y).collect();
    let projected: Vec<Vec<f64>> = targets.iter().map(|t| t.projected.clone()).collect();

    let bellman = bellman_loss(tape, &q_vars, &ys)?;
    let distributional = distributional_loss(tape, &w_vars, &projected)?;
    let reconstruction = reconstruction_loss(tape, &recon_vars, &obs_vars)?;
    let diversity = diversity_loss(tape, &w_vars)?;

    let report = LossReport {
        bellman: tape.scalar(bellman),
        distributional: tape.scalar(distributional),
        reconstruction: tape.scalar(reconstruction),
        diversity: tape.scalar(diversity),
        total: 0.0, // filled below
    };

    let t1 = tape.scale(bellman, weights.l1)?;
    let t2 = tape.scale(distributional, weights.l2)?;
    let t3 = tape.scale(reconstruction, weights.l3)?;
    let t4 = tape.scale(diversity, weights.l4)?;
    let s12 = tape.add(t1, t2)?;
    let s34 = tape.add(t3, t4)?;
    let total = tape.add(s12, s34)?;

    Ok((
        total,
        LossReport {
            total: tape.scalar(total),
            ..report
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::env::{Action, Observation};
    use crate::model::{ConvSpec, ModelConfig, ValueLayout};
    use crate::rng::{chacha, stream};
    use rand::Rng;

    // Linear-scan reference: same contract as `project_distribution`,
    // written independently (explicit bracket search, no partition_point).
    fn reference_project(w: &[f64], v: &[f64], reward: f64, gamma: f64) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut z = reward + gamma * v[j];
            if z < v[0] {
                z = v[0];
            }
            if z > v[n - 1] {
                z = v[n - 1];
            }
            let mut placed = false;
            for k in 0..n {
                if v[k] == z {
                    out[k] += w[j];
                    placed = true;
                    break;
                }
            }
            if !placed {
                for k in 0..n - 1 {
                    if v[k] < z && z < v[k + 1] {
                        let frac = (z - v[k]) / (v[k + 1] - v[k]);
                        out[k] += w[j] * (1.0 - frac);
                        out[k + 1] += w[j] * frac;
                        break;
                    }
                }
            }
        }
        out
    }

    fn random_instance(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let n = rng.random_range(2..=6);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let mut w: Vec<f64> = (0..v.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let reward = rng.random_range(-30.0..30.0);
        let gamma = [0.0, 0.5, 0.99, 1.0][rng.random_range(0..4)];
        (w, v, reward, gamma)
    }

    #[test]
    fn projection_matches_linear_scan_reference() {
        let mut rng = chacha(1, stream::EPISODE);
        for _ in 0..1000 {
            let (w, v, r, g) = random_instance(&mut rng);
            let got = project_distribution(&w, &v, r, g).unwrap();
            let want = reference_project(&w, &v, r, g);
            let total: f64 = got.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "mass {total}");
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn projection_preserves_expectation_when_unclipped() {
        let mut rng = chacha(2, stream::EPISODE);
        let mut checked = 0;
        for _ in 0..2000 {
            let (w, v, r, g) = random_instance(&mut rng);
            let inside = v
                .iter()
                .all(|&vj| r + g * vj >= v[0] && r + g * vj <= v[v.len() - 1]);
            if !inside {
                continue;
            }
            checked += 1;
            let proj = project_distribution(&w, &v, r, g).unwrap();
            let mean_proj: f64 = proj.iter().zip(&v).map(|(p, vj)| p * vj).sum();
            let mean_src: f64 = w.iter().zip(&v).map(|(wj, vj)| wj * (r + g * vj)).sum();
            assert!(
                (mean_proj - mean_src).abs() < 1e-9,
                "{mean_proj} vs {mean_src}"
            );
        }
        assert!(checked > 50, "only {checked} unclipped instances");
    }

    #[test]
    fn projection_hits_exact_atoms_without_splitting() {
        // gamma=1, reward=1 shifts each atom onto its right neighbor
        let v = [0.0, 1.0, 2.0];
        let w = [1.0, 0.0, 0.0];
        let p = project_distribution(&w, &v, 1.0, 1.0).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn projection_clips_to_hull_edges() {
        let v = [-1.0, 0.0, 1.0];
        let w = [0.0, 0.0, 1.0];
        // far positive reward: everything piles on the top atom
        let p = project_distribution(&w, &v, 100.0, 0.99).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        let p = project_terminal(&v, -50.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_splits_between_nonuniform_neighbors() {
        let v = [0.0, 1.0, 4.0];
        let p = project_terminal(&v, 3.0).unwrap();
        // 3 sits 2/3 of the way from 1 to 4
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[2] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn projection_rejects_bad_inputs() {
        assert!(project_distribution(&[0.5, 0.6], &[0.0, 1.0], 0.0, 0.9).is_err());
        assert!(project_distribution(&[0.5, 0.5], &[1.0, 1.0], 0.0, 0.9).is_err());
        assert!(project_distribution(&[1.0], &[0.0, 1.0], 0.0, 0.9).is_err());
        assert!(project_terminal(&[], 0.0).is_err());
    }

    // ── term-level checks ────────────────────────────────────────────────

    #[test]
    fn bellman_known_value() {
        let mut tape = Tape::new();
        let q1 = tape.constant(Tensor::scalar(1.0));
        let q2 = tape.constant(Tensor::scalar(3.0));
        let loss = bellman_loss(&mut tape, &[q1, q2], &[0.0, 1.0]).unwrap();
        assert!((tape.scalar(loss) - 2.5).abs() < 1e-12); // (1 + 4) / 2
    }

    #[test]
    fn distributional_known_value() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::new(vec![2], vec![0.5, 0.5]).unwrap());
        let loss = distributional_loss(&mut tape, &[w], &[vec![1.0, 0.0]]).unwrap();
        assert!((tape.scalar(loss) - 0.5_f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_known_value() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let o = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let loss = reconstruction_loss(&mut tape, &[r], &[o]).unwrap();
        assert!((tape.scalar(loss) - 2.5).abs() < 1e-12); // 0.5 * (1 + 4)
    }

    #[test]
    fn diversity_analytic_values() {
        let case = |rows: Vec<Vec<f64>>| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = rows
                .into_iter()
                .map(|r| {
                    let n = r.len();
                    tape.constant(Tensor::new(vec![n], r).unwrap())
                })
                .collect();
            let loss = diversity_loss(&mut tape, &vars).unwrap();
            tape.scalar(loss)
        };
        // one-hot row: the Gram matrix is already the identity
        assert!((case(vec![vec![1.0, 0.0]]) - 0.0).abs() < 1e-12);
        // two identical one-hot rows: off-diagonal ones
        assert!((case(vec![vec![1.0, 0.0], vec![1.0, 0.0]]) - 2.0).abs() < 1e-12);
        // a single uniform row over 4 atoms: (1/4 - 1)^2
        assert!((case(vec![vec![0.25; 4]]) - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn diversity_rejects_unnormalized_rows() {
        let mut tape = Tape::new();
        let bad = tape.constant(Tensor::new(vec![2], vec![0.9, 0.3]).unwrap());
        assert!(diversity_loss(&mut tape, &[bad]).is_err());
        assert!(diversity_loss(&mut tape, &[]).is_err());
    }

    // ── batch-level checks ───────────────────────────────────────────────

    /// No-conv model over 2x2 single-frame observations: fast enough for
    /// finite differences over every parameter.
    fn tiny_model(seed: u64) -> IDQNModel {
        let cfg = ModelConfig {
            actions: 2,
            keys_per_action: 3,
            embedding_dim: 4,
            v_min: -5.0,
            v_max: 5.0,
            value_layout: ValueLayout::RandomUniform,
            conv_layers: vec![],
            deconv_layers: vec![],
            decoder_channels: 1,
            obs_shape: (1, 2, 2),
            exploration_factor: 0.0,
        };
        IDQNModel::init(cfg, seed).unwrap()
    }

    fn tiny_conv_model(seed: u64) -> IDQNModel {
        let cfg = ModelConfig {
            actions: 2,
            keys_per_action: 3,
            embedding_dim: 4,
            v_min: -5.0,
            v_max: 5.0,
            value_layout: ValueLayout::RandomUniform,
            conv_layers: vec![ConvSpec::new(2, 2, 1)],
            deconv_layers: vec![ConvSpec::new(1, 2, 1)],
            decoder_channels: 2,
            obs_shape: (1, 3, 3),
            exploration_factor: 0.0,
        };
        IDQNModel::init(cfg, seed).unwrap()
    }

    fn tiny_transition(
        rng: &mut impl Rng,
        shape: (usize, usize, usize),
        action: Action,
        reward: f64,
        done: bool,
    ) -> Transition {
        let numel = shape.0 * shape.1 * shape.2;
        let mut draw = || -> Observation {
            let data: Vec<f64> = (0..numel).map(|_| rng.random_range(0.0..1.0)).collect();
            Observation::from_tensor(Tensor::new(vec![shape.0, shape.1, shape.2], data).unwrap())
                .unwrap()
        };
        Transition {
            obs: draw(),
            action,
            reward,
            next_obs: draw(),
            done,
        }
    }

    #[test]
    fn targets_use_reward_only_on_terminals() {
        let model = tiny_model(3);
        let mut rng = chacha(10, stream::EPISODE);
        let t_done = tiny_transition(&mut rng, (1, 2, 2), Action::Up, 1.5, true);
        let t_live = tiny_transition(&mut rng, (1, 2, 2), Action::Down, -0.5, false);
        let targets = build_targets(&model, &[&t_done, &t_live], 0.9).unwrap();

        assert_eq!(targets[0].y, 1.5);
        assert_eq!(
            targets[0].projected,
            project_terminal(model.values(), 1.5).unwrap()
        );

        let diag = model.forward(&t_live.next_obs).unwrap();
        let best = diag.q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((targets[1].y - (-0.5 + 0.9 * best)).abs() < 1e-12);
        let mass: f64 = targets[1].projected.iter().sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn total_recomposes_from_weighted_terms() {
        let model = tiny_model(4);
        let mut rng = chacha(11, stream::EPISODE);
        let trans: Vec<Transition> = (0..3)
            .map(|i| {
                tiny_transition(
                    &mut rng,
                    (1, 2, 2),
                    if i % 2 == 0 { Action::Up } else { Action::Down },
                    i as f64 - 1.0,
                    i == 2,
                )
            })
            .collect();
        let batch: Vec<&Transition> = trans.iter().collect();
        let targets = build_targets(&model, &batch, 0.99).unwrap();
        let weights = LossWeights::default();

        let mut tape = Tape::new();
        let mv = model.vars_on(&mut tape, true);
        let (_, report) = total_loss(&mut tape, &model, &mv, &batch, &targets, &weights).unwrap();

        let recomposed = weights.l1 * report.bellman
            + weights.l2 * report.distributional
            + weights.l3 * report.reconstruction
            + weights.l4 * report.diversity;
        assert!((report.total - recomposed).abs() < 1e-12);
        assert!(report.bellman >= 0.0);
        assert!(report.reconstruction >= 0.0);
        assert!(report.distributional > 0.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = tiny_model(5);
        let mut tape = Tape::new();
        let mv = model.vars_on(&mut tape, true);
        let err = total_loss(
            &mut tape,
            &model,
            &mv,
            &[],
            &[],
            &LossWeights::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let mut model = tiny_model(6);
        let mut rng = chacha(12, stream::EPISODE);
        let trans = vec![tiny_transition(&mut rng, (1, 2, 2), Action::Up, 0.5, false)];
        let batch: Vec<&Transition> = trans.iter().collect();
        let targets = build_targets(&model, &batch, 0.99).unwrap();
        let weights = LossWeights {
            l1: 0.0,
            l2: 0.0,
            l3: 0.0,
            l4: 0.0,
        };

        let mut tape = Tape::new();
        let mv = model.vars_on(&mut tape, true);
        let (total, report) =
            total_loss(&mut tape, &model, &mv, &batch, &targets, &weights).unwrap();
        assert_eq!(report.total, 0.0);
        tape.backward(total).unwrap();
        model.accumulate_grads(&tape, &mv);
        for p in model.params() {
            assert!(p.tensor.grad().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    /// Finite-difference check of the full four-part objective through
    /// encoder, attention, decoder, and every loss term.
    #[test]
    fn total_loss_matches_finite_differences() {
        for (tag, model) in [(0, tiny_model(7)), (1, tiny_conv_model(8))] {
            let shape = model.config().obs_shape;
            let mut rng = chacha(13 + tag, stream::EPISODE);
            let trans = vec![
                tiny_transition(&mut rng, shape, Action::Up, 0.5, false),
                tiny_transition(&mut rng, shape, Action::Down, -1.0, true),
            ];
            let batch: Vec<&Transition> = trans.iter().collect();
            let targets = build_targets(&model, &batch, 0.9).unwrap();
            let weights = LossWeights::default();

            let mut params = model.params().to_vec();
            let worst = grad_check(&mut params, |tape, vars| {
                let mv = model.vars_from(tape, vars.to_vec());
                let (total, _) = total_loss(tape, &model, &mv, &batch, &targets, &weights)?;
                Ok(total)
            })
            .unwrap();
            assert!(worst < 1e-4, "model {tag}: worst relative error {worst}");
        }
    }
}
