//! `quadjump`: command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid config or scenario,
//! 4 missing or unreadable file, 5 simulation or training failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use quadjump_core::config::{load_design, load_grid, RunConfig};
use quadjump_core::designopt::{enumerate_grid, run_grid, write_outputs};
use quadjump_core::eval::{evaluate_free_float, paw_mass_sweep, paw_mass_trials, run_scenario, Scenario, BUILTIN};
use quadjump_core::rlenv::NoiseSpec;
use quadjump_core::flight::Axis;
use quadjump_core::jump::{leg_scales, simulate_jump, write_flight_csv, JumpSequence, PlanarBody};
use quadjump_core::ppo::{train, Checkpoint};
use quadjump_core::primitives::{run_reorientation, Primitive};
use quadjump_core::robot::{build_model, mass_report, NUM_LEGS};
use quadjump_core::trace::save_trace;
use quadjump_core::Error;

const EXIT_CONFIG: u8 = 3;
const EXIT_MISSING: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

#[derive(Parser)]
#[command(name = "quadjump", version, about = "Jumping-quadruped design search and attitude control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print or check run configuration files.
    Config {
        /// Print the complete default configuration as TOML.
        #[arg(long)]
        dump_defaults: bool,
        /// Parse and validate a config file, then print it fully resolved.
        #[arg(long, value_name = "FILE")]
        check: Option<PathBuf>,
    },
    /// Print the mass and inertia report of a design.
    Inspect {
        /// Design TOML (a bare design table or a run config); defaults to the built robot.
        #[arg(long, value_name = "FILE")]
        design: Option<PathBuf>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Simulate a vertical or forward jump under Martian gravity.
    Jump {
        kind: JumpKind,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Forward-jump lean in degrees (overrides the config).
        #[arg(long)]
        lean: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics, flight samples and the resolved config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run an open-loop reorientation primitive in free flight.
    Primitive {
        axis: AxisArg,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Seconds to run (overrides the config).
        #[arg(long)]
        duration: Option<f64>,
        /// Stroke period in seconds.
        #[arg(long)]
        period: Option<f64>,
        /// Output directory for the trace, summary and resolved config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate and score a grid of designs.
    Gridsearch {
        /// Grid TOML (a bare grid table or a run config); defaults to the config's grid.
        #[arg(long, value_name = "FILE")]
        grid: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for results, heat maps and the resolved config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// JSON-lines journal; finished points are skipped when re-run.
        #[arg(long, value_name = "FILE")]
        journal: Option<PathBuf>,
    },
    /// Train the attitude policy with PPO.
    Train {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Environment steps in total (overrides the config).
        #[arg(long)]
        total_steps: Option<u64>,
        /// Number of parallel environments (overrides the config).
        #[arg(long)]
        envs: Option<usize>,
        /// Output directory for checkpoints, metrics and the resolved config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained policy on a scenario or on random free-float spawns.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Scenario JSON file or builtin name.
        #[arg(long, value_name = "FILE|NAME", conflicts_with = "free_float")]
        scenario: Option<String>,
        /// Run this many free-float episodes from uniform spawns instead.
        #[arg(long, value_name = "EPISODES")]
        free_float: Option<usize>,
        /// Repeat the scenario for each extra paw mass, grams (comma separated).
        #[arg(long, value_delimiter = ',', value_name = "GRAMS")]
        paw_masses: Option<Vec<f64>>,
        /// With --paw-masses: average this many runs with observation noise per mass.
        #[arg(long, requires = "paw_masses")]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for trace, summary and run description.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum JumpKind {
    Vertical,
    Forward,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Roll,
    Pitch,
    Yaw,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Roll => Axis::Roll,
            AxisArg::Pitch => Axis::Pitch,
            AxisArg::Yaw => Axis::Yaw,
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig, out: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    cfg.save_resolved(&dir)?;
    Ok(dir)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Config { dump_defaults, check } => {
            if let Some(p) = check {
                print!("{}", RunConfig::load(&p)?.to_toml()?);
            } else if dump_defaults {
                print!("{}", RunConfig::default().to_toml()?);
            } else {
                anyhow::bail!(Error::Config("pass --dump-defaults or --check FILE".into()));
            }
        }
        Command::Inspect { design, json } => {
            let d = match design {
                Some(p) => load_design(&p)?,
                None => RunConfig::default().design,
            };
            let r = mass_report(&build_model(&d)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("total mass     {:.3} kg", r.total_mass);
                println!("body mass      {:.3} kg", r.body_mass);
                println!("leg mass       {:.3} kg per leg", r.leg_mass);
                println!("com            [{:.4}, {:.4}, {:.4}] m", r.com[0], r.com[1], r.com[2]);
                println!(
                    "inertia diag   [{:.4}, {:.4}, {:.4}] kg m^2",
                    r.inertia_diag[0], r.inertia_diag[1], r.inertia_diag[2]
                );
            }
        }
        Command::Jump { kind, config, lean, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(l) = lean {
                cfg.lean_deg = l;
            }
            cfg.validate()?;
            let model = build_model(&cfg.design)?;
            let body = PlanarBody::from_model(&model)?;
            let jc = cfg.sims().jump;
            let (seq, scales) = match kind {
                JumpKind::Vertical => (JumpSequence::vertical(), [1.0; NUM_LEGS]),
                JumpKind::Forward => (JumpSequence::forward(cfg.lean_deg.to_radians()), leg_scales(&jc)),
            };
            let run = simulate_jump(&body, &seq, scales, &jc)?;
            println!("{}", serde_json::to_string_pretty(&run.metrics)?);
            if let Some(dir) = out {
                let dir = prepare_out(&cfg, Some(dir))?;
                write_json(&dir.join("jump.json"), &run.metrics)?;
                let p = dir.join("flight.csv");
                write_flight_csv(BufWriter::new(File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?), &run.flight)?;
            }
        }
        Command::Primitive { axis, config, duration, period, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = duration {
                cfg.reorientation.duration = d;
            }
            cfg.reorientation.record_trace = out.is_some();
            cfg.validate()?;
            let model = build_model(&cfg.design)?;
            let mut p = Primitive::for_model(axis.into(), &model)?;
            if let Some(t) = period {
                p.period = t;
            }
            let r = run_reorientation(&model, &p, &cfg.reorientation)?;
            #[derive(Serialize)]
            struct Summary {
                axis: Axis,
                period: f64,
                duration: f64,
                theta_deg: f64,
                collided: bool,
                momentum_drift: f64,
            }
            let s = Summary {
                axis: p.axis,
                period: p.period,
                duration: cfg.reorientation.duration,
                theta_deg: r.theta.to_degrees(),
                collided: r.collided,
                momentum_drift: r.momentum_drift,
            };
            println!("{}", serde_json::to_string_pretty(&s)?);
            if let Some(dir) = out {
                let dir = prepare_out(&cfg, Some(dir))?;
                write_json(&dir.join("summary.json"), &s)?;
                save_trace(&dir.join("trace.csv"), &r.trace)?;
            }
        }
        Command::Gridsearch { grid, config, seed, out, journal } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(g) = grid {
                cfg.grid = load_grid(&g)?;
            }
            cfg.validate()?;
            let points = enumerate_grid(&cfg.grid, &cfg.design)?;
            eprintln!("evaluating {} design points", points.len());
            let t = Instant::now();
            let results = run_grid(&points, &cfg.sims(), &cfg.weights, journal.as_deref())?;
            let dir = prepare_out(&cfg, out)?;
            write_outputs(&dir, &results)?;
            let failed = results.iter().filter(|r| r.raw.is_none()).count();
            let best = results
                .iter()
                .filter_map(|r| r.score.map(|s| (s, r)))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.index.cmp(&a.1.index)));
            eprintln!("done in {:.1}s, {failed} failed, results in {}", t.elapsed().as_secs_f64(), dir.display());
            if let Some((s, r)) = best {
                println!(
                    "best #{}: score {:.4} l_body {} w_body_f {} w_body_b {} l1 {} l3 {} k {}",
                    r.index, s, r.params.l_body, r.params.w_body_f, r.params.w_body_b, r.params.leg.l1,
                    r.params.leg.l3, r.params.leg.spring_k
                );
            }
        }
        Command::Train { config, seed, total_steps, envs, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = total_steps {
                cfg.ppo.total_steps = n;
            }
            if let Some(n) = envs {
                cfg.ppo.num_envs = n;
            }
            cfg.validate()?;
            let dir = prepare_out(&cfg, out)?;
            let ppo = cfg.ppo();
            eprintln!(
                "training {} updates of {} x {} steps into {}",
                ppo.num_updates(),
                ppo.num_envs,
                ppo.horizon,
                dir.display()
            );
            let t = Instant::now();
            let outcome = train(&ppo, &cfg.env(), Some(&dir), &mut |m| {
                eprintln!(
                    "update {:>4} steps {:>9} episodes {:>4} reward {:>8.2} final angle {:>6.1} deg collisions {:>5.3} kl {:.4} [{:.0}s]",
                    m.update, m.env_steps, m.episodes, m.mean_episode_reward, m.mean_final_angle_deg,
                    m.collision_rate, m.approx_kl, t.elapsed().as_secs_f64()
                );
            })?;
            println!("{}", dir.join("checkpoint.json").display());
            if let Some(m) = outcome.metrics.last() {
                eprintln!("final mean episode reward {:.2}", m.mean_episode_reward);
            }
        }
        Command::Eval { checkpoint, scenario, free_float, paw_masses, trials, seed, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            #[derive(Serialize)]
            struct RunInfo<'a> {
                checkpoint: &'a Path,
                scenario: Option<&'a Scenario>,
                free_float_episodes: Option<usize>,
                paw_masses_g: Option<&'a [f64]>,
                trials: Option<usize>,
                seed: u64,
            }
            if let Some(n) = free_float {
                let r = evaluate_free_float(&ck, n, seed)?;
                println!(
                    "median final angle {:.2} deg, mean {:.2} deg, p90 {:.2} deg, collision rate {:.3}",
                    r.median_final_angle_deg, r.mean_final_angle_deg, r.p90_final_angle_deg, r.collision_rate
                );
                if let Some(dir) = out {
                    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    let info = RunInfo { checkpoint: &checkpoint, scenario: None, free_float_episodes: Some(n), paw_masses_g: None, trials: None, seed };
                    write_json(&dir.join("run.json"), &info)?;
                    write_json(&dir.join("summary.json"), &r)?;
                }
                return Ok(());
            }
            let name = scenario.ok_or_else(|| Error::Config("pass --scenario or --free-float".into()))?;
            let sc = if BUILTIN.contains(&name.as_str()) && !Path::new(&name).exists() {
                Scenario::builtin(&name)?
            } else {
                Scenario::load(Path::new(&name))?
            };
            if let Some(grams) = &paw_masses {
                let kg: Vec<f64> = grams.iter().map(|g| g / 1000.0).collect();
                if let Some(n) = trials {
                    let pts = paw_mass_trials(&ck, &sc, &kg, &NoiseSpec::default(), n, seed)?;
                    for p in &pts {
                        println!(
                            "paw +{:>5.0} g: mean settle {:.2}s, settled {}/{}, mean final error {:.2} deg, {} collided",
                            p.paw_extra_mass * 1000.0,
                            p.mean_settle_time,
                            p.settled,
                            p.trials,
                            p.mean_final_error_deg,
                            p.collisions
                        );
                    }
                    if let Some(dir) = out {
                        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                        let info = RunInfo { checkpoint: &checkpoint, scenario: Some(&sc), free_float_episodes: None, paw_masses_g: Some(grams), trials, seed };
                        write_json(&dir.join("run.json"), &info)?;
                        write_json(&dir.join("summary.json"), &pts)?;
                    }
                    return Ok(());
                }
                let pts = paw_mass_sweep(&ck, &sc, &kg)?;
                for p in &pts {
                    println!(
                        "paw +{:>5.0} g: settle {} rise {} final error {:.2} deg{}",
                        p.paw_extra_mass * 1000.0,
                        p.settle_time.map_or("never".into(), |t| format!("{t:.2}s")),
                        p.rise_time.map_or("never".into(), |t| format!("{t:.2}s")),
                        p.final_error_deg,
                        if p.collided { " (collided)" } else { "" }
                    );
                }
                if let Some(dir) = out {
                    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    let info = RunInfo { checkpoint: &checkpoint, scenario: Some(&sc), free_float_episodes: None, paw_masses_g: Some(grams), trials, seed };
                    write_json(&dir.join("run.json"), &info)?;
                    write_json(&dir.join("summary.json"), &pts)?;
                }
                return Ok(());
            }
            let r = run_scenario(&ck, &sc, None)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let info = RunInfo { checkpoint: &checkpoint, scenario: Some(&sc), free_float_episodes: None, paw_masses_g: None, trials: None, seed };
                write_json(&dir.join("run.json"), &info)?;
                write_json(&dir.join("summary.json"), &r)?;
                save_trace(&dir.join("trace.csv"), &r.trace)?;
            }
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io { .. } => EXIT_MISSING,
                Error::Config(_) | Error::InvalidParam(_) | Error::Json(_) | Error::Shape { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_MISSING;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
