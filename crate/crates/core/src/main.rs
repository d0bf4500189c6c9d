use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use slide_core::config::{FileDigest, RunConfig, RunManifest};
use slide_core::datagen::{anchors, build_samples, generate_dataset, load_dataset, save_dataset};
use slide_core::eval::{
    completion_histogram, eval_predictors, histogram_svg, ood_sweep, read_trials_csv, run_trial, run_trials, write_predictor_csv,
    write_summary_csv, write_trials_csv, Controller, PolicyKind, SummaryRow, TrialConfig, TrialStats,
};
use slide_core::human_sim::HumanMode;
use slide_core::predictor::{train, Predictor, PredictorKind};
use slide_core::reachavoid::distill::{distill_toy, evaluate_toy, DistillConfig};
use slide_core::reachavoid::env::Variant;
use slide_core::reachavoid::grid::{agreement, backup, game_tree_win_set, value_iteration, GridGame, ToySpec};
use slide_core::reachavoid::policy::RaPolicy;
use slide_core::reachavoid::sac::{train_isaacs, write_telemetry_csv};

const SEED_ENV: &str = "SLIDE_LAB_SEED";

#[derive(Parser)]
#[command(name = "slide-lab", version, about = "Two-arm interaction workbench: data, predictors, reach-avoid policies, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file, or a run manifest to reuse its config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Base seed; defaults to $SLIDE_LAB_SEED, then the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSONL dataset of scripted two-arm episodes.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value = "influenceable")]
        human: HumanMode,
        #[command(flatten)]
        common: Common,
    },
    /// Train a marginal or plan-conditioned predictor.
    TrainPred {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        kind: PredictorKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// ADE/FDE and bound widths of both predictors on a held-out dataset.
    EvalPred {
        #[arg(long)]
        marginal: PathBuf,
        #[arg(long)]
        cbp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a reach-avoid policy.
    TrainPolicy {
        #[arg(long)]
        variant: Variant,
        /// Predictor checkpoint (slide needs cbp, marginal needs marginal).
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        telemetry: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop trials of one controller.
    EvalPolicy {
        #[arg(long)]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long, default_value = "influenceable")]
        human: HumanMode,
        /// Run against all three human types instead of `--human`.
        #[arg(long)]
        ood: bool,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// One trial with a per-tick JSONL trace.
    Rollout {
        #[arg(long)]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long, default_value = "influenceable")]
        human: HumanMode,
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check the tabular game solver against its oracles.
    OracleVerify {
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long, default_value_t = 0.999)]
        gamma: f64,
        #[arg(long, default_value_t = 60)]
        depth: usize,
        /// Also distill the toy solution into networks and check them.
        #[arg(long)]
        distill: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Completion-time histogram SVG from per-trial CSVs.
    Plot {
        /// `label=path.csv` pairs.
        #[arg(long = "trials", value_name = "LABEL=CSV", required = true)]
        trials: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Res<T> = Result<T, Failure>;

fn require(path: &Path, what: &str) -> Res<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn resolve_config(c: &Common) -> Res<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s.trim().parse().map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?;
    }
    if let Some(p) = &c.config {
        require(p, "config")?;
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        if text.trim_start().starts_with('{') {
            cfg = RunConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
        } else {
            cfg.apply_text(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
        }
    }
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn write_manifest(command: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[&Path], manifest_at: &Path) -> Res<()> {
    let mut m = RunManifest::new(command, std::env::args().skip(1).collect(), cfg);
    for p in inputs {
        m.inputs.push(FileDigest::of(p).with_context(|| format!("hashing {}", p.display()))?);
    }
    for p in outputs {
        m.outputs.push(FileDigest::of(p).with_context(|| format!("hashing {}", p.display()))?);
    }
    m.save(manifest_at).with_context(|| format!("writing {}", manifest_at.display()))?;
    Ok(())
}

fn load_predictor(path: Option<&PathBuf>, needed: Option<PredictorKind>) -> Res<Option<Arc<Predictor>>> {
    let Some(kind) = needed else { return Ok(None) };
    let path = path.ok_or_else(|| Failure::Usage(format!("a {kind} predictor checkpoint is required (--predictor)")))?;
    require(path, "checkpoint")?;
    let p = Predictor::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    if p.kind != kind {
        return Err(Failure::Usage(format!("{} holds a {} predictor, expected {kind}", path.display(), p.kind)));
    }
    Ok(Some(Arc::new(p)))
}

fn controller(cfg: &RunConfig, kind: PolicyKind, checkpoint: Option<&PathBuf>, predictor: Option<&PathBuf>) -> Res<(Controller, Vec<PathBuf>)> {
    Ok(match kind.variant() {
        None if kind == PolicyKind::NoSafety => (Controller::NoSafety, vec![]),
        None => (Controller::Ssa(cfg.ssa), vec![]),
        Some(variant) => {
            let ck = checkpoint.ok_or_else(|| Failure::Usage(format!("policy {kind} needs --checkpoint")))?;
            require(ck, "checkpoint")?;
            let policy = RaPolicy::load(ck).map_err(|e| anyhow!("{}: {e}", ck.display()))?;
            if policy.variant != variant {
                return Err(Failure::Usage(format!("{} holds a {} policy, expected {variant}", ck.display(), policy.variant)));
            }
            let pred = load_predictor(predictor, variant.predictor_kind())?;
            let mut inputs = vec![ck.clone()];
            inputs.extend(predictor.cloned().filter(|_| pred.is_some()));
            (Controller::ReachAvoid { policy: Arc::new(policy), predictor: pred, bound: cfg.bound }, inputs)
        }
    })
}

fn trial_cfg(cfg: &RunConfig) -> TrialConfig {
    TrialConfig { scene: cfg.scene.clone(), gains: cfg.robot_gains, max_ticks: cfg.max_ticks }
}

fn print_stats(label: &str, s: &TrialStats) {
    println!(
        "{label}: n={} collision={:.3} completion={:.3} time={:.2}±{:.2}s",
        s.trials.len(),
        s.collision_rate,
        s.completion_rate,
        s.mean_time,
        s.std_time
    );
}

fn run(cli: Cli) -> Res<()> {
    let common = match &cli.command {
        Command::GenData { common, .. }
        | Command::TrainPred { common, .. }
        | Command::EvalPred { common, .. }
        | Command::TrainPolicy { common, .. }
        | Command::EvalPolicy { common, .. }
        | Command::Rollout { common, .. }
        | Command::OracleVerify { common, .. }
        | Command::Plot { common, .. } => common.clone(),
    };
    let cfg = resolve_config(&common)?;
    if common.dump_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match cli.command {
        Command::GenData { out, episodes, human, .. } => {
            if episodes == 0 {
                return Err(Failure::Usage("--episodes must be at least 1".into()));
            }
            let dc = cfg.datagen(human);
            let eps = generate_dataset(cfg.seed, episodes, &dc, cfg.workers).map_err(|e| anyhow!(e))?;
            save_dataset(&out, &eps, cfg.seed, &dc).map_err(|e| anyhow!(e))?;
            let n_anchors = anchors(&eps).len();
            write_manifest("gen-data", &cfg, &[], &[&out], &run_path(&out))?;
            println!("wrote {} episodes ({} anchors) to {}", eps.len(), n_anchors, out.display());
        }
        Command::TrainPred { data, kind, out, epochs, .. } => {
            require(&data, "dataset")?;
            let eps = load_dataset(&data).map_err(|e| anyhow!("{}: {e}", data.display()))?;
            let samples = build_samples(&eps, &anchors(&eps), kind).map_err(|e| anyhow!(e))?;
            let mut tc = cfg.predictor.clone();
            tc.seed = cfg.seed;
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let mut p = Predictor::new(kind, cfg.seed);
            let report = train(&mut p, &samples, &tc).map_err(|e| anyhow!(e))?;
            p.save(&out).map_err(|e| anyhow!(e))?;
            write_manifest("train-pred", &cfg, &[&data], &[&out], &run_path(&out))?;
            println!(
                "trained {kind} on {} samples: best epoch {}, val nll {:?}",
                samples.len(),
                report.best_epoch,
                report.val_nll.get(report.best_epoch).copied()
            );
        }
        Command::EvalPred { marginal, cbp, data, out, .. } => {
            for p in [&marginal, &cbp] {
                require(p, "checkpoint")?;
            }
            require(&data, "dataset")?;
            let m = load_predictor(Some(&marginal), Some(PredictorKind::Marginal))?.expect("requested");
            let c = load_predictor(Some(&cbp), Some(PredictorKind::Cbp))?.expect("requested");
            let eps = load_dataset(&data).map_err(|e| anyhow!("{}: {e}", data.display()))?;
            let rows = eval_predictors(&m, &c, &eps, &cfg.bound).map_err(|e| anyhow!(e))?;
            write_predictor_csv(&rows, &out).context("writing metrics")?;
            for r in &rows {
                println!("{:>8} {:>15} n={:<6} ade={:.4} fde={:.4} width=[{:.3}, {:.3}]", r.predictor, r.split, r.n, r.ade, r.fde, r.width[0], r.width[1]);
            }
            write_manifest("eval-pred", &cfg, &[&marginal, &cbp, &data], &[&out], &run_path(&out))?;
        }
        Command::TrainPolicy { variant, predictor, out, steps, telemetry, .. } => {
            let pred = load_predictor(predictor.as_ref(), variant.predictor_kind())?;
            let mut rl = cfg.rl.clone();
            rl.seed = cfg.seed;
            rl.workers = cfg.workers;
            if let Some(s) = steps {
                rl.total_steps = s;
            }
            let outcome = train_isaacs(&cfg.env(), variant, pred.clone(), &rl, |r| {
                let eval = match (r.eval_collision_rate, r.eval_completion_rate) {
                    (Some(c), Some(k)) => format!(" eval_collision={c:.3} eval_completion={k:.3}"),
                    _ => String::new(),
                };
                eprintln!("step {} phase {} gamma {:.4} critic {:.4e}{eval}", r.step, r.phase, r.gamma, r.critic_loss);
            })
            .map_err(|e| anyhow!(e))?;
            outcome.policy.save(&out).map_err(|e| anyhow!(e))?;
            let tel = telemetry.unwrap_or_else(|| out.with_extension("telemetry.csv"));
            write_telemetry_csv(&outcome.telemetry, &tel).context("writing telemetry")?;
            let inputs: Vec<&Path> = predictor.iter().filter(|_| pred.is_some()).map(|p| p.as_path()).collect();
            write_manifest("train-policy", &cfg, &inputs, &[&out, &tel], &run_path(&out))?;
            println!(
                "trained {variant}: {} env steps, {} updates, snapshot from step {} -> {}",
                outcome.env_steps,
                outcome.updates,
                outcome.selected_step,
                out.display()
            );
        }
        Command::EvalPolicy { policy, checkpoint, predictor, human, ood, trials, out_dir, .. } => {
            if trials == 0 {
                return Err(Failure::Usage("--trials must be at least 1".into()));
            }
            let (ctl, inputs) = controller(&cfg, policy, checkpoint.as_ref(), predictor.as_ref())?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let tc = trial_cfg(&cfg);
            let results = if ood {
                ood_sweep(&ctl, trials, cfg.seed, &tc, cfg.workers).map_err(|e| anyhow!(e))?
            } else {
                vec![(human, run_trials(&ctl, &cfg.human_cfg(human), trials, cfg.seed, &tc, cfg.workers).map_err(|e| anyhow!(e))?)]
            };
            let mut rows = Vec::new();
            let mut outputs = Vec::new();
            for (mode, stats) in &results {
                let p = out_dir.join(format!("trials_{policy}_{mode}.csv"));
                write_trials_csv(stats, &p).context("writing trials")?;
                outputs.push(p);
                print_stats(&format!("{policy} vs {mode}"), stats);
                rows.push(SummaryRow::new(policy, mode, stats));
            }
            let summary = out_dir.join(format!("summary_{policy}.csv"));
            write_summary_csv(&rows, &summary).context("writing summary")?;
            outputs.push(summary.clone());
            let ins: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
            let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
            write_manifest("eval-policy", &cfg, &ins, &outs, &run_path(&summary))?;
        }
        Command::Rollout { policy, checkpoint, predictor, human, trace, .. } => {
            let (ctl, inputs) = controller(&cfg, policy, checkpoint.as_ref(), predictor.as_ref())?;
            let mut steps = Vec::new();
            let r = run_trial(&ctl, &cfg.human_cfg(human), cfg.seed, &trial_cfg(&cfg), Some(&mut steps)).map_err(|e| anyhow!(e))?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(&trace).with_context(|| format!("creating {}", trace.display()))?);
            for s in &steps {
                serde_json::to_writer(&mut f, s).context("writing trace")?;
                f.write_all(b"\n").context("writing trace")?;
            }
            f.flush().context("writing trace")?;
            drop(f);
            let ins: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
            write_manifest("rollout", &cfg, &ins, &[&trace], &run_path(&trace))?;
            println!("seed {}: {} after {:.1}s, min clearance {:.4}", r.seed, r.outcome, r.time, r.min_margin);
        }
        Command::OracleVerify { grid, gamma, depth, distill, .. } => {
            let game = GridGame::new(ToySpec { n: grid, ..ToySpec::default() });
            let mut failures = Vec::new();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                use rand::Rng;
                let a: Vec<f64> = (0..game.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let b: Vec<f64> = (0..game.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (ba, bb) = (backup(&game, &a, gamma), backup(&game, &b, gamma));
                let lhs = ba.iter().zip(&bb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let rhs = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                worst = worst.max(lhs / rhs);
            }
            let contraction = worst <= gamma + 1e-12;
            println!("{} contraction: worst ratio {worst:.6} (gamma {gamma})", if contraction { "PASS" } else { "FAIL" });
            if !contraction {
                failures.push("contraction");
            }
            let vi = value_iteration(&game, gamma, 1e-7).map_err(|e| anyhow!(e))?;
            let residual = *vi.residuals.last().expect("at least one sweep");
            let converged = residual < 1e-6;
            println!("{} value iteration: {} sweeps, residual {residual:.3e}", if converged { "PASS" } else { "FAIL" }, vi.sweeps());
            if !converged {
                failures.push("convergence");
            }
            let agree = agreement(&vi.win_set(), &game_tree_win_set(&game, depth));
            let ok = agree >= 0.98;
            println!("{} game-tree agreement at depth {depth}: {:.4}", if ok { "PASS" } else { "FAIL" }, agree);
            if !ok {
                failures.push("agreement");
            }
            if distill {
                let nets = distill_toy(&game, &vi, &DistillConfig { seed: cfg.seed, ..DistillConfig::default() });
                let r = evaluate_toy(&game, &vi, &nets);
                let ok_c = r.balanced_accuracy >= 0.95;
                let ok_a = r.action_match >= 0.90;
                println!("{} distilled critic balanced accuracy {:.4}", if ok_c { "PASS" } else { "FAIL" }, r.balanced_accuracy);
                println!("{} distilled actor action match {:.4}", if ok_a { "PASS" } else { "FAIL" }, r.action_match);
                if !ok_c {
                    failures.push("distilled critic");
                }
                if !ok_a {
                    failures.push("distilled actor");
                }
            }
            if !failures.is_empty() {
                return Err(Failure::Runtime(anyhow!("oracle checks failed: {}", failures.join(", "))));
            }
        }
        Command::Plot { trials, out, .. } => {
            let mut series = Vec::new();
            let mut inputs = Vec::new();
            for t in &trials {
                let (label, path) = t.split_once('=').ok_or_else(|| Failure::Usage(format!("--trials expects LABEL=CSV, got `{t}`")))?;
                let path = PathBuf::from(path);
                require(&path, "trials file")?;
                let rows = read_trials_csv(&path).map_err(|e| anyhow!(e))?;
                series.push((label.to_string(), completion_histogram(&TrialStats::from_trials(rows))));
                inputs.push(path);
            }
            std::fs::write(&out, histogram_svg(&series)).with_context(|| format!("writing {}", out.display()))?;
            let ins: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
            write_manifest("plot", &cfg, &ins, &[&out], &run_path(&out))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
