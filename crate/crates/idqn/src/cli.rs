//! Command-line interface: `train`, `eval`, `keys`, `attn`, `saliency`,
//! `agree`, `probe`, and `embed` subcommands.
//!
//! Training is configured by a `key = value` file plus flags named
//! one-to-one after the config keys (flags win). Every other subcommand
//! is a thin, deterministic wrapper over a checkpoint: identical inputs
//! produce byte-identical artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or checkpoint error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgMatches, Command};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{RunConfig, KEYS};
use crate::env::{parse_layout, Action, Edit, EnvConfig, LayoutConfig, PelletWorld};
use crate::error::{Error, Result};
use crate::interpret::{
    adversarial_probe, agreement, attention_map, collect_states, export_embeddings, key_gallery,
    saliency_map, SaliencyConfig,
};
use crate::model::IDQNModel;
use crate::pgm;
use crate::trainer::{evaluate, Trainer};

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let matches = match build().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("train", sm)) => cmd_train(sm),
        Some(("eval", sm)) => cmd_eval(sm),
        Some(("keys", sm)) => cmd_keys(sm),
        Some(("attn", sm)) => cmd_attn(sm),
        Some(("saliency", sm)) => cmd_saliency(sm),
        Some(("agree", sm)) => cmd_agree(sm),
        Some(("probe", sm)) => cmd_probe(sm),
        Some(("embed", sm)) => cmd_embed(sm),
        _ => Err(Error::config("a subcommand is required; see --help")),
    }
}

// ── command tree ────────────────────────────────────────────────────────

fn build() -> Command {
    Command::new("idqn")
        .about("Interpretable key-value DQN: training, evaluation, and analysis")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(train_command())
        .subcommand(
            checkpoint_command("eval", "Evaluate a checkpoint greedily over fresh episodes")
                .arg(opt("episodes", "N", "number of evaluation episodes").default_value("10"))
                .arg(opt("seed", "SEED", "root seed for episode generation").default_value("0")),
        )
        .subcommand(
            checkpoint_command("keys", "Decode every key of a checkpoint to a PGM gallery")
                .arg(req("out", "DIR", "output directory for the gallery")),
        )
        .subcommand(
            checkpoint_command("attn", "Attention table and heat map for a layout's start state")
                .arg(req("layout", "FILE", "layout file ('#' wall, '.' pellet, 'A' agent)"))
                .arg(req("out", "DIR", "output directory for attention.csv and attention.pgm")),
        )
        .subcommand(
            checkpoint_command("saliency", "Perturbation saliency map for a layout's start state")
                .arg(req("layout", "FILE", "layout file ('#' wall, '.' pellet, 'A' agent)"))
                .arg(req("action", "ACTION", "action whose Q-value is probed (U, D, L, or R)"))
                .arg(req("out", "DIR", "output directory for saliency.csv and saliency.pgm"))
                .arg(opt("interpret.blur_sigma", "SIGMA", "blur width override"))
                .arg(opt("interpret.mask_sigma", "SIGMA", "mask width override"))
                .arg(opt("interpret.stride", "N", "grid stride override"))
                .arg(opt("interpret.amplitude", "A", "mask amplitude override")),
        )
        .subcommand(
            checkpoint_command("agree", "Key/policy agreement between latent and image-space policies")
                .arg(opt("rollouts", "N", "number of greedy rollouts (default from checkpoint)"))
                .arg(opt("temperature", "T", "softmax temperature (default from checkpoint)"))
                .arg(opt("lambda", "L", "exploration bonus weight").default_value("0"))
                .arg(opt("seed", "SEED", "root seed for rollouts").default_value("0")),
        )
        .subcommand(
            checkpoint_command("probe", "Greedy rollouts on a layout before and after edits")
                .arg(req("layout", "FILE", "base layout file"))
                .arg(req("edits", "FILE", "edit list, one per line (e.g. 'add_pellet 3 4')"))
                .arg(opt("steps", "N", "step budget per rollout").default_value("200"))
                .arg(opt("out", "DIR", "also write report.txt and attention.csv here")),
        )
        .subcommand(
            checkpoint_command("embed", "Export state and key embeddings as CSV")
                .arg(opt("n-states", "N", "number of greedy-policy states to embed").default_value("64"))
                .arg(req("out", "FILE", "output CSV path"))
                .arg(opt("seed", "SEED", "root seed for state collection").default_value("0")),
        )
}

fn req(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name(value).help(help).required(true)
}

fn opt(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name(value).help(help)
}

fn checkpoint_command(name: &'static str, about: &'static str) -> Command {
    Command::new(name)
        .about(about)
        .arg(req("checkpoint", "FILE", "checkpoint to load"))
}

fn train_command() -> Command {
    let mut c = Command::new("train")
        .about("Train one run per seed; writes per-seed checkpoints, metrics, and a summary")
        .arg(opt("config", "FILE", "config file of 'key = value' lines; flags override it"))
        .arg(opt("out", "DIR", "output directory (per-seed artifacts in <out>/seed<N>/)").default_value("runs"))
        .arg(opt("steps", "N", "alias for --train.max_steps"))
        .arg(opt("seeds", "LIST", "alias for --train.seeds (comma-separated)"));
    for key in KEYS {
        c = c.arg(opt(key, "VALUE", key_help(key)));
    }
    c
}

fn key_help(key: &str) -> &'static str {
    match key {
        "env.width" => "grid width in cells",
        "env.height" => "grid height in cells",
        "env.pellets" => "pellet count for procedural layouts",
        "env.cell_pixels" => "rendered pixels per cell",
        "env.frame_stack" => "frames stacked per observation",
        "env.step_cap" => "episode step cap",
        "env.layout_file" => "explicit layout file (empty = procedural)",
        "model.keys_per_action" => "memory keys per action (N)",
        "model.embedding_dim" => "embedding width (D)",
        "model.v_min" => "lowest value support",
        "model.v_max" => "highest value support",
        "model.value_layout" => "'random_uniform' or 'evenly_spaced'",
        "model.conv_layers" => "encoder conv stack, e.g. '8x3s2,16x3s2'",
        "model.deconv_layers" => "decoder deconv stack, e.g. '8x3s2,1x4s2'",
        "model.decoder_channels" => "channels entering the first deconv",
        "model.exploration_factor" => "UCB bonus weight during training",
        "train.gamma" => "discount factor",
        "train.batch_size" => "sampled batch size",
        "train.buffer_capacity" => "replay buffer capacity",
        "train.warmup_steps" => "steps before learning starts",
        "train.train_every" => "env steps per gradient update",
        "train.target_sync_every" => "steps between target syncs",
        "train.max_steps" => "total environment steps",
        "train.eval_interval" => "steps between evaluation rounds (0 = never)",
        "train.eval_episodes" => "episodes per evaluation round",
        "train.stop_return" => "early-stop return threshold or 'none'",
        "train.stop_window" => "evaluation episodes averaged for early stop",
        "train.max_grad_norm" => "global gradient norm clip",
        "train.epsilon" => "epsilon-greedy rate (0 = pure UCB)",
        "train.lr" => "Adam step size",
        "train.beta1" => "Adam first-moment decay",
        "train.beta2" => "Adam second-moment decay",
        "train.adam_eps" => "Adam numerical epsilon",
        "train.decay" => "L2 weight decay",
        "train.seeds" => "comma-separated distinct run seeds",
        "loss.l1" => "Bellman term weight",
        "loss.l2" => "distributional term weight",
        "loss.l3" => "reconstruction term weight",
        "loss.l4" => "key diversity term weight",
        "interpret.temperature" => "agreement softmax temperature",
        "interpret.rollouts" => "agreement rollout count",
        "interpret.blur_sigma" => "saliency blur width",
        "interpret.mask_sigma" => "saliency mask width",
        "interpret.stride" => "saliency grid stride",
        "interpret.amplitude" => "saliency mask amplitude",
        _ => "configuration override",
    }
}

// ── shared helpers ──────────────────────────────────────────────────────

fn flag<'a>(m: &'a ArgMatches, name: &str) -> Option<&'a String> {
    m.get_one::<String>(name)
}

fn parse_flag<T>(m: &ArgMatches, name: &str) -> Result<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    let s = flag(m, name).expect("flag has a default");
    s.parse()
        .map_err(|e| Error::config(format!("--{} {}: {}", name, s, e)))
}

fn parse_opt_flag<T>(m: &ArgMatches, name: &str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    match flag(m, name) {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|e| Error::config(format!("--{} {}: {}", name, s, e))),
    }
}

fn parse_action(s: &str) -> Result<Action> {
    match s.to_ascii_lowercase().as_str() {
        "u" | "up" => Ok(Action::Up),
        "d" | "down" => Ok(Action::Down),
        "l" | "left" => Ok(Action::Left),
        "r" | "right" => Ok(Action::Right),
        other => Err(Error::config(format!(
            "unknown action '{}' (use U, D, L, or R)",
            other
        ))),
    }
}

fn load_checkpoint(m: &ArgMatches) -> Result<Checkpoint> {
    checkpoint::load(Path::new(flag(m, "checkpoint").expect("required flag")))
}

fn ensure_shape(ck: &Checkpoint, env: &PelletWorld) -> Result<()> {
    if env.obs_shape() != ck.obs_shape {
        return Err(Error::config(format!(
            "environment produces observations {:?} but the checkpointed model expects {:?}",
            env.obs_shape(),
            ck.obs_shape
        )));
    }
    Ok(())
}

/// Environment as configured at training time.
fn stored_env(ck: &Checkpoint) -> Result<PelletWorld> {
    let env = PelletWorld::new(ck.config.env_config()?)?;
    ensure_shape(ck, &env)?;
    Ok(env)
}

/// Environment over an explicit layout file, rendered like the
/// checkpointed run.
fn layout_env(ck: &Checkpoint, layout_path: &str) -> Result<PelletWorld> {
    let text = std::fs::read_to_string(layout_path)?;
    let env = PelletWorld::new(EnvConfig {
        layout: LayoutConfig::Explicit(parse_layout(&text)?),
        cell_pixels: ck.config.env_cell_pixels,
        frame_stack: ck.config.env_frame_stack,
        step_cap: ck.config.env_step_cap,
    })?;
    ensure_shape(ck, &env)?;
    Ok(env)
}

fn out_dir(m: &ArgMatches) -> Result<PathBuf> {
    let dir = PathBuf::from(flag(m, "out").expect("required flag"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let mut rc = match flag(m, "config") {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    for key in KEYS {
        if let Some(v) = flag(m, key) {
            rc.apply(key, v)?;
        }
    }
    if let Some(v) = flag(m, "steps") {
        rc.apply("train.max_steps", v)?;
    }
    if let Some(v) = flag(m, "seeds") {
        rc.apply("train.seeds", v)?;
    }
    let out = PathBuf::from(flag(m, "out").expect("flag has a default"));

    // fail fast on bad configuration before touching the filesystem
    rc.trainer_config().validate()?;
    let probe_env = PelletWorld::new(rc.env_config()?)?;
    rc.model_config(probe_env.obs_shape()).trace_shapes()?;

    std::fs::create_dir_all(&out)?;
    let mut finals = Vec::with_capacity(rc.train_seeds.len());
    for &seed in &rc.train_seeds {
        let dir = out.join(format!("seed{}", seed));
        std::fs::create_dir_all(&dir)?;
        let env = PelletWorld::new(rc.env_config()?)?;
        let model_config = rc.model_config(env.obs_shape());
        let mut trainer = Trainer::new(model_config, env, rc.trainer_config(), seed)?;

        let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        let mut eval_log = BufWriter::new(File::create(dir.join("eval.csv"))?);
        let summary = trainer.run(&mut metrics, &mut eval_log)?;
        metrics.flush()?;
        eval_log.flush()?;

        // smoke runs can finish before any evaluation round; score the
        // final policy directly so the summary always has a number
        let final_mean = match summary.final_eval_mean {
            Some(v) => v,
            None => {
                let env = PelletWorld::new(rc.env_config()?)?;
                evaluate(trainer.model(), &env, rc.train_eval_episodes, 0.0, seed)?.0
            }
        };
        checkpoint::save(&dir.join("checkpoint.ckpt"), &trainer, &rc)?;
        println!(
            "seed {}: steps={} episodes={} updates={} final_eval_mean={}{}",
            seed,
            summary.steps,
            summary.episodes,
            summary.train_updates,
            final_mean,
            if summary.stopped_early { " (stopped early)" } else { "" }
        );
        finals.push((seed, final_mean));
    }

    let n = finals.len() as f64;
    let mean = finals.iter().map(|(_, v)| v).sum::<f64>() / n;
    let variance = finals.iter().map(|(_, v)| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut text = String::new();
    text.push_str(&format!(
        "seeds: {}\n",
        rc.train_seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    for (seed, v) in &finals {
        text.push_str(&format!("seed{}_final_eval_mean: {}\n", seed, v));
    }
    text.push_str(&format!("final_eval_mean: {}\n", mean));
    text.push_str(&format!("final_eval_variance: {}\n", variance));
    write_text(&out.join("summary.txt"), &text)?;
    print!("{}", text);
    Ok(())
}

// ── checkpoint-driven commands ──────────────────────────────────────────

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let env = stored_env(&ck)?;
    let episodes: usize = parse_flag(m, "episodes")?;
    let seed: u64 = parse_flag(m, "seed")?;
    let (mean, returns) = evaluate(&ck.model, &env, episodes, 0.0, seed)?;
    println!("episode,return");
    for (i, r) in returns.iter().enumerate() {
        println!("{},{}", i, r);
    }
    println!("mean_return={}", mean);
    Ok(())
}

fn cmd_keys(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let dir = out_dir(m)?;
    let paths = key_gallery(&ck.model, &dir)?;
    println!("files={}", paths.len());
    println!("dir={}", dir.display());
    Ok(())
}

fn cmd_attn(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let env = layout_env(&ck, flag(m, "layout").expect("required flag"))?;
    let dir = out_dir(m)?;
    let (_, obs) = env.reset(0)?;
    let (rows, pgm_bytes) = attention_map(&ck.model, &obs)?;

    let mut csv = String::from("action");
    for i in 0..rows[0].len() {
        csv.push_str(&format!(",w{}", i));
    }
    csv.push('\n');
    for (a, row) in rows.iter().enumerate() {
        csv.push_str(&a.to_string());
        for w in row {
            csv.push_str(&format!(",{}", w));
        }
        csv.push('\n');
    }
    write_text(&dir.join("attention.csv"), &csv)?;
    std::fs::write(dir.join("attention.pgm"), &pgm_bytes)?;
    println!("wrote {}", dir.join("attention.csv").display());
    println!("wrote {}", dir.join("attention.pgm").display());
    Ok(())
}

fn cmd_saliency(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let env = layout_env(&ck, flag(m, "layout").expect("required flag"))?;
    let action = parse_action(flag(m, "action").expect("required flag"))?;
    let dir = out_dir(m)?;
    let cfg = SaliencyConfig {
        blur_sigma: parse_opt_flag(m, "interpret.blur_sigma", ck.config.interpret_blur_sigma)?,
        mask_sigma: parse_opt_flag(m, "interpret.mask_sigma", ck.config.interpret_mask_sigma)?,
        stride: parse_opt_flag(m, "interpret.stride", ck.config.interpret_stride)?,
        amplitude: parse_opt_flag(m, "interpret.amplitude", ck.config.interpret_amplitude)?,
    };
    let (_, obs) = env.reset(0)?;
    let map = saliency_map(&ck.model, &obs, action, &cfg)?;
    let (h, w) = (map.shape()[0], map.shape()[1]);

    let mut csv = String::new();
    for i in 0..h {
        let row: Vec<String> = (0..w).map(|j| map.data()[i * w + j].to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_text(&dir.join("saliency.csv"), &csv)?;

    let max = map.data().iter().cloned().fold(0.0, f64::max);
    let img: Vec<f64> = if max > 0.0 {
        map.data().iter().map(|x| x / max).collect()
    } else {
        vec![0.0; h * w]
    };
    pgm::write(&dir.join("saliency.pgm"), w, h, &img)?;
    println!("action={}", action.letter());
    println!("max_saliency={}", max);
    println!("wrote {}", dir.join("saliency.csv").display());
    println!("wrote {}", dir.join("saliency.pgm").display());
    Ok(())
}

fn cmd_agree(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let env = stored_env(&ck)?;
    let rollouts = parse_opt_flag(m, "rollouts", ck.config.interpret_rollouts)?;
    let temperature = parse_opt_flag(m, "temperature", ck.config.interpret_temperature)?;
    let lambda: f64 = parse_flag(m, "lambda")?;
    let seed: u64 = parse_flag(m, "seed")?;
    let res = agreement(&ck.model, &env, rollouts, lambda, temperature, seed)?;
    println!("agreement={}", res.agreement);
    println!("matched={}", res.matched);
    println!("total={}", res.total);
    println!("temperature={}", res.temperature);
    for (i, a) in res.per_rollout.iter().enumerate() {
        println!("rollout{}={}", i, a);
    }
    Ok(())
}

fn cmd_probe(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let env = layout_env(&ck, flag(m, "layout").expect("required flag"))?;
    let edits = Edit::parse_file(&std::fs::read_to_string(
        flag(m, "edits").expect("required flag"),
    )?)?;
    let steps: usize = parse_flag(m, "steps")?;
    let (base_state, _) = env.reset(0)?;
    let report = adversarial_probe(&ck.model, &env, &base_state, &edits, steps)?;
    print!("{}", report.to_text());
    if let Some(dir) = flag(m, "out") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        write_text(&dir.join("report.txt"), &report.to_text())?;
        write_text(&dir.join("attention.csv"), &report.attention_csv())?;
    }
    Ok(())
}

fn cmd_embed(m: &ArgMatches) -> Result<()> {
    let ck = load_checkpoint(m)?;
    let env = stored_env(&ck)?;
    let n_states: usize = parse_flag(m, "n-states")?;
    let seed: u64 = parse_flag(m, "seed")?;
    let out = PathBuf::from(flag(m, "out").expect("required flag"));
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let states = collect_states(&ck.model, &env, n_states.max(1), n_states, seed)?;
    let mut f = BufWriter::new(File::create(&out)?);
    let rows = export_embeddings(&ck.model, &states, &mut f)?;
    f.flush()?;
    println!("rows={}", rows);
    println!("wrote {}", out.display());
    Ok(())
}

// expose the model type so `--help` examples in module docs stay honest
#[allow(unused)]
fn _assert_api(model: &IDQNModel) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_builds_and_debug_asserts_hold() {
        build().debug_assert();
    }

    #[test]
    fn every_config_key_is_a_train_flag() {
        let train = build()
            .get_subcommands()
            .find(|c| c.get_name() == "train")
            .cloned()
            .unwrap();
        let longs: Vec<String> = train
            .get_arguments()
            .filter_map(|a| a.get_long().map(|s| s.to_string()))
            .collect();
        for key in KEYS {
            assert!(longs.contains(&key.to_string()), "missing flag --{}", key);
        }
        for extra in ["config", "out", "steps", "seeds"] {
            assert!(longs.contains(&extra.to_string()), "missing --{}", extra);
        }
    }

    #[test]
    fn action_parsing() {
        assert_eq!(parse_action("U").unwrap(), Action::Up);
        assert_eq!(parse_action("down").unwrap(), Action::Down);
        assert_eq!(parse_action("l").unwrap(), Action::Left);
        assert_eq!(parse_action("Right").unwrap(), Action::Right);
        assert!(parse_action("x").is_err());
    }

    #[test]
    fn unknown_subcommand_is_a_config_error() {
        assert_eq!(run(vec!["idqn".into(), "bogus".into()]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(vec!["idqn".into(), "--help".into()]), 0);
        assert_eq!(run(vec!["idqn".into(), "train".into(), "--help".into()]), 0);
    }
}
