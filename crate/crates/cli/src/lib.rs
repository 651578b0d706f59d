//! The `adr` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

pub mod plot;

use adr_core::env::{episode_log_csv, format_trace, MissionState};
use adr_core::harness::{
    self, format_report, modes_in, rows_from_csv, summarize, summary_from_csv, EvaluationMode, SuiteConfig,
};
use adr_core::planners::MctsConfig;
use adr_core::ppo::{self, PPOHyperparams, PolicyParameters, PpoError, TrainConfig};
use adr_core::scenario::{generate_scenario, load_scenario, save_scenario, MissionParams, Scenario};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "adr", version, about = "Multi-debris rendezvous planning: scenarios, training, evaluation")]
pub struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output root for default file locations.
    #[arg(long, global = true, env = "ADR_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// key=value mission parameter overrides (see README for keys).
    #[arg(long, global = true)]
    pub params_file: Option<PathBuf>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Parallel rollout/evaluation workers; 1 keeps runs reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random debris scenario CSV.
    Generate(GenerateArgs),
    /// Train a masked PPO policy.
    Train(TrainArgs),
    /// Run the evaluation modes over random test cases.
    Evaluate(EvaluateArgs),
    /// Print the action trace of one episode.
    Trace(TraceArgs),
    /// Render a training log or evaluation summary as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct MissionFlags {
    /// Number of debris objects.
    #[arg(long = "n-debris", alias = "n")]
    pub n_debris: Option<usize>,
    /// Zone trigger probability per debris selection.
    #[arg(long)]
    pub collision_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub mission: MissionFlags,
    /// Destination CSV (default: <out-dir>/scenario.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub mission: MissionFlags,
    #[arg(long, default_value_t = 10_000_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 5e-6)]
    pub lr: f64,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 256)]
    pub minibatch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.95)]
    pub gae_lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    pub ent_coef: f64,
    #[arg(long, default_value_t = 0.5)]
    pub vf_coef: f64,
    #[arg(long, default_value_t = 0.5)]
    pub max_grad_norm: f64,
    /// Width of both hidden layers.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Checkpoint path (default: <out-dir>/policy.json).
    #[arg(long)]
    pub out_policy: Option<PathBuf>,
    /// Training log CSV (default: <out-dir>/train_log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub mission: MissionFlags,
    /// Comma-separated: rl-rl, rl-greedy, greedy-rl, greedy-greedy, mcts, all.
    #[arg(long, default_value = "all")]
    pub modes: String,
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Policy checkpoint, required by RL modes.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Evaluate this scenario file as the only test case.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory for rows.csv and summary.csv (default: <out-dir>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub mcts: MctsFlags,
}

#[derive(Debug, Args)]
pub struct MctsFlags {
    #[arg(long, default_value_t = 200)]
    pub mcts_sims: usize,
    #[arg(long, default_value_t = 15)]
    pub mcts_depth: usize,
    #[arg(long, default_value_t = 1.5)]
    pub mcts_c: f64,
}

impl MctsFlags {
    fn config(&self) -> MctsConfig {
        MctsConfig {
            exploration_constant: self.mcts_c,
            simulations_per_step: self.mcts_sims,
            rollout_depth: self.mcts_depth,
        }
    }
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub mission: MissionFlags,
    /// Scenario CSV; generated from --seed when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// One of rl-rl, rl-greedy, greedy-rl, greedy-greedy, mcts.
    #[arg(long, default_value = "greedy-greedy")]
    pub mode: String,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Also write the per-step episode log CSV here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub mcts: MctsFlags,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Training log CSV to plot as a smoothed reward curve.
    #[arg(long, conflicts_with = "report", required_unless_present = "report")]
    pub log: Option<PathBuf>,
    /// Evaluation summary.csv or rows.csv to plot as bars.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// SVG destination; the plotted data is written next to it as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

struct Ctx<'a> {
    cli: &'a Cli,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn note(&mut self, msg: &str) {
        if !self.cli.quiet {
            let _ = writeln!(self.stderr, "{msg}");
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    let mut ctx = Ctx { cli: &cli, stdout, stderr };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Trace(a) => cmd_trace(&mut ctx, a),
        Command::Plot(a) => cmd_plot(&mut ctx, a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(ctx.stderr, "error: {m}");
            2
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(ctx.stderr, "error: {e:#}");
            1
        }
    }
}

fn mission_params(cli: &Cli, flags: &MissionFlags) -> CliResult<MissionParams> {
    let mut p = MissionParams::default();
    if let Some(path) = &cli.params_file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading params file {}", path.display()))?;
        if let Err(e) = p.apply_kv_text(&text) {
            return usage(format!("{}: {e}", path.display()));
        }
    }
    if let Some(n) = flags.n_debris {
        p.n_debris = n;
    }
    if let Some(c) = flags.collision_prob {
        p.collision_probability = c;
    }
    if let Err(e) = p.validate() {
        return usage(e.to_string());
    }
    Ok(p)
}

fn parse_mode(s: &str) -> CliResult<EvaluationMode> {
    let norm = s.trim().replace('-', "_");
    norm.parse::<EvaluationMode>().or_else(usage)
}

fn parse_modes(s: &str) -> CliResult<Vec<EvaluationMode>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            for m in EvaluationMode::PAIRINGS {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        } else {
            let m = parse_mode(part)?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return usage("no evaluation modes given");
    }
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Every run records the values it actually used.
fn echo_config(ctx: &mut Ctx, command: &str, entries: &[(String, String)]) -> anyhow::Result<PathBuf> {
    let mut text = String::new();
    let _ = writeln!(text, "command={command}");
    let _ = writeln!(text, "seed={}", ctx.cli.seed);
    let _ = writeln!(text, "out_dir={}", ctx.cli.out_dir.display());
    let pf = ctx.cli.params_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let _ = writeln!(text, "params_file={pf}");
    let _ = writeln!(text, "workers={}", ctx.cli.workers);
    for (k, v) in entries {
        let _ = writeln!(text, "{k}={v}");
    }
    let path = ctx.cli.out_dir.join(format!("{command}.config.txt"));
    write_file(&path, &text)?;
    Ok(path)
}

fn mission_entries(p: &MissionParams) -> Vec<(String, String)> {
    p.to_pairs().into_iter().map(|(k, v)| (format!("mission.{k}"), v)).collect()
}

fn path_entry(key: &str, p: &Path) -> (String, String) {
    (key.to_string(), p.display().to_string())
}

fn cmd_generate(ctx: &mut Ctx, a: &GenerateArgs) -> CliResult<()> {
    let params = mission_params(ctx.cli, &a.mission)?;
    let out = a.out.clone().unwrap_or_else(|| ctx.cli.out_dir.join("scenario.csv"));
    let scenario = generate_scenario(ctx.cli.seed, &params).map_err(|e| anyhow!(e))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_scenario(&scenario, &out).map_err(|e| anyhow!(e))?;
    let mut entries = vec![path_entry("out", &out)];
    entries.extend(mission_entries(&params));
    echo_config(ctx, "generate", &entries)?;
    ctx.note(&format!("wrote {} debris to {}", scenario.n(), out.display()));
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> CliResult<()> {
    let mission = mission_params(ctx.cli, &a.mission)?;
    let hp = PPOHyperparams {
        learning_rate: a.lr,
        total_steps: a.steps,
        batch_size: a.batch_size,
        gamma: a.gamma,
        clip_epsilon: a.clip,
        gae_lambda: a.gae_lambda,
        entropy_coefficient: a.ent_coef,
        epochs_per_batch: a.epochs,
        minibatch_size: a.minibatch_size,
        value_loss_coefficient: a.vf_coef,
        max_gradient_norm: a.max_grad_norm,
        ..Default::default()
    };
    if let Err(e) = hp.validate() {
        return usage(e.to_string());
    }
    if ctx.cli.workers == 0 || a.hidden == 0 {
        return usage("--workers and --hidden must be at least 1");
    }
    let out_policy = a.out_policy.clone().unwrap_or_else(|| ctx.cli.out_dir.join("policy.json"));
    let log_path = a.log.clone().unwrap_or_else(|| ctx.cli.out_dir.join("train_log.csv"));
    let mut entries = vec![path_entry("out_policy", &out_policy), path_entry("log", &log_path)];
    entries.push(("hidden".into(), format!("{0},{0}", a.hidden)));
    let hp_json = serde_json::to_value(&hp).map_err(|e| anyhow!(e))?;
    if let Some(obj) = hp_json.as_object() {
        for (k, v) in obj {
            entries.push((format!("ppo.{k}"), v.to_string()));
        }
    }
    entries.extend(mission_entries(&mission));
    echo_config(ctx, "train", &entries)?;

    let config = TrainConfig {
        hyperparams: hp.clone(),
        mission: mission.clone(),
        hidden: [a.hidden, a.hidden],
        seed: ctx.cli.seed,
        workers: ctx.cli.workers,
    };
    let quiet = ctx.cli.quiet;
    let total = hp.update_count();
    let every = (total / 20).max(1);
    let stderr = &mut *ctx.stderr;
    let generate = |seed: u64| Ok(generate_scenario(seed, &mission)?);
    let result = ppo::train_with(&config, generate, |row| {
        if !quiet && (row.batch_index % every == 0 || row.batch_index + 1 == total) {
            let _ = writeln!(
                stderr,
                "batch {}/{} steps {} mean_return {:.3} entropy {:.3}",
                row.batch_index + 1,
                total,
                row.steps,
                row.mean_return,
                row.entropy
            );
        }
    });
    match result {
        Ok(out) => {
            if let Some(dir) = out_policy.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            ppo::save_policy(&out.policy, &out_policy).map_err(|e| anyhow!(e))?;
            write_file(&log_path, &ppo::train_log_csv(&out.log))?;
            ctx.note(&format!("wrote {} and {}", out_policy.display(), log_path.display()));
            Ok(())
        }
        Err(PpoError::NonFinite { batch_index, snapshot }) => {
            let diag = out_policy.with_extension("diagnostic.json");
            let saved = ppo::save_policy(&snapshot, &diag).map(|_| diag.display().to_string());
            Err(CliError::Runtime(anyhow!(
                "non-finite loss at batch {batch_index}; diagnostic checkpoint: {}",
                saved.unwrap_or_else(|e| format!("<could not be written: {e}>"))
            )))
        }
        Err(PpoError::InvalidHyperparams(m)) => usage(m),
        Err(e) => Err(CliError::Runtime(anyhow!(e))),
    }
}

fn load_policy_for(path: Option<&PathBuf>, modes: &[EvaluationMode], n: usize) -> CliResult<Option<PolicyParameters>> {
    let needs = modes.iter().any(|m| m.needs_policy());
    match path {
        None if needs => {
            let m = modes.iter().find(|m| m.needs_policy()).expect("some mode needs a policy");
            usage(format!("mode {m} needs --policy"))
        }
        None => Ok(None),
        Some(p) => match ppo::load_policy(p, Some(n)) {
            Ok(policy) => Ok(Some(policy)),
            Err(PpoError::Refused(m)) => usage(format!("{}: {m}", p.display())),
            Err(e) => Err(CliError::Runtime(anyhow!(e).context(format!("loading {}", p.display())))),
        },
    }
}

fn load_scenario_file(path: &Path) -> CliResult<Scenario> {
    load_scenario(path).map_err(|e| CliError::Runtime(anyhow!(e)))
}

fn cmd_evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> CliResult<()> {
    let modes = parse_modes(&a.modes)?;
    let mut mission = mission_params(ctx.cli, &a.mission)?;
    let given = a.scenario.as_deref().map(load_scenario_file).transpose()?;
    if let Some(s) = &given {
        mission = s.params.clone();
    }
    if a.cases == 0 || a.iterations == 0 {
        return usage("--cases and --iterations must be at least 1");
    }
    if ctx.cli.workers == 0 {
        return usage("--workers must be at least 1");
    }
    let mcts = a.mcts.config();
    if let Err(e) = mcts.validate() {
        return usage(e.to_string());
    }
    let policy = load_policy_for(a.policy.as_ref(), &modes, mission.n_debris)?;
    let out_dir = a.out.clone().unwrap_or_else(|| ctx.cli.out_dir.clone());
    let config = SuiteConfig {
        modes: modes.clone(),
        n_test_cases: if given.is_some() { 1 } else { a.cases },
        iterations: a.iterations,
        seed: ctx.cli.seed,
        mission: mission.clone(),
        mcts: mcts.clone(),
        workers: ctx.cli.workers,
    };
    let mut entries = vec![
        ("modes".to_string(), modes.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")),
        ("cases".into(), config.n_test_cases.to_string()),
        ("iterations".into(), a.iterations.to_string()),
        ("policy".into(), a.policy.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        ("scenario".into(), a.scenario.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        path_entry("out", &out_dir),
        ("mcts.exploration_constant".into(), mcts.exploration_constant.to_string()),
        ("mcts.simulations_per_step".into(), mcts.simulations_per_step.to_string()),
        ("mcts.rollout_depth".into(), mcts.rollout_depth.to_string()),
    ];
    entries.extend(mission_entries(&mission));
    echo_config(ctx, "evaluate", &entries)?;

    let report = match &given {
        Some(s) => harness::run_suite_on(&config, std::slice::from_ref(s), policy.as_ref()),
        None => harness::run_suite(&config, policy.as_ref()),
    }
    .map_err(|e| anyhow!(e))?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let rows = out_dir.join("rows.csv");
    let summary = out_dir.join("summary.csv");
    harness::write_report(&report, &rows, &summary).map_err(|e| anyhow!(e))?;
    if !ctx.cli.quiet {
        let _ = write!(ctx.stdout, "{}", format_report(&report.summary));
    }
    ctx.note(&format!("wrote {} rows to {}", report.rows.len(), rows.display()));
    Ok(())
}

fn cmd_trace(ctx: &mut Ctx, a: &TraceArgs) -> CliResult<()> {
    let mode = parse_mode(&a.mode)?;
    let scenario = match &a.scenario {
        Some(p) => load_scenario_file(p)?,
        None => {
            let params = mission_params(ctx.cli, &a.mission)?;
            generate_scenario(ctx.cli.seed, &params).map_err(|e| anyhow!(e))?
        }
    };
    let mcts = a.mcts.config();
    if let Err(e) = mcts.validate() {
        return usage(e.to_string());
    }
    let policy = load_policy_for(a.policy.as_ref(), &[mode], scenario.n())?;
    let mut entries = vec![
        ("mode".to_string(), mode.as_str().to_string()),
        ("scenario".into(), a.scenario.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        ("policy".into(), a.policy.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
    ];
    entries.extend(mission_entries(&scenario.params));
    echo_config(ctx, "trace", &entries)?;

    let st: MissionState = harness::run_episode(mode, &scenario, policy.as_ref(), ctx.cli.seed, &mcts)
        .map_err(|e| anyhow!(e))?;
    let _ = writeln!(ctx.stdout, "{}", format_trace(&st.trace));
    let reason = st.termination.map(|t| t.as_str()).unwrap_or("None");
    let _ = writeln!(
        ctx.stdout,
        "visited={}/{} fuel={:.4} time_h={:.3} refuels={} replans={} dv_total_km_s={:.6} termination={}",
        st.visited_count(),
        scenario.n(),
        st.fuel,
        st.elapsed_s / 3600.0,
        st.refuel_count(),
        st.replan_count(),
        st.delta_v_total_km_s,
        reason
    );
    if let Some(log) = &a.log {
        write_file(log, &episode_log_csv(&st.trace))?;
    }
    Ok(())
}

fn cmd_plot(ctx: &mut Ctx, a: &PlotArgs) -> CliResult<()> {
    let (svg, csv, default_name) = if let Some(log) = &a.log {
        let text = std::fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
        let rows = ppo::parse_train_log(&text).map_err(|m| anyhow!("{}: {m}", log.display()))?;
        let steps: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
        let raw: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
        let smooth = plot::exponential_smoothing(&raw, plot::SMOOTHING_ALPHA);
        let mut csv = String::from("batch_index,steps,mean_return,smoothed_return\n");
        for (r, s) in rows.iter().zip(&smooth) {
            let _ = writeln!(csv, "{},{},{},{}", r.batch_index, r.steps, r.mean_return, s);
        }
        let title = format!("Masked PPO training reward (smoothing α = {})", plot::SMOOTHING_ALPHA);
        (plot::line_chart_svg(&title, &steps, &raw, &smooth), csv, "train_curve.svg")
    } else {
        let path = a.report.as_ref().expect("clap enforces one input");
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let first = text.lines().next().unwrap_or_default().trim();
        let summary = if first == harness::ROWS_HEADER {
            let rows = rows_from_csv(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
            summarize(&rows, &modes_in(&rows))
        } else {
            summary_from_csv(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
        };
        let labels: Vec<String> = summary.iter().map(|s| s.mode.as_str().to_string()).collect();
        let values: Vec<f64> = summary.iter().map(|s| s.avg).collect();
        let mut csv = String::from("mode,avg\n");
        for (l, v) in labels.iter().zip(&values) {
            let _ = writeln!(csv, "{l},{v}");
        }
        (plot::bar_chart_svg("Average debris visited per mode", &labels, &values), csv, "summary_bars.svg")
    };
    let out = a.out.clone().unwrap_or_else(|| ctx.cli.out_dir.join(default_name));
    let data = out.with_extension("csv");
    write_file(&out, &svg)?;
    write_file(&data, &csv)?;
    let input = a.log.as_ref().or(a.report.as_ref()).expect("one input");
    let entries = vec![
        ("input".to_string(), input.display().to_string()),
        path_entry("out", &out),
        path_entry("data", &data),
        ("smoothing_alpha".into(), plot::SMOOTHING_ALPHA.to_string()),
    ];
    echo_config(ctx, "plot", &entries)?;
    ctx.note(&format!("wrote {} and {}", out.display(), data.display()));
    Ok(())
}
