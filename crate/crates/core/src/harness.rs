//! Evaluation protocol: sequencer × collision-avoidance handler pairings,
//! multi-iteration sweeps over random test cases, and summary tables.
//!
//! Every iteration of a test case uses one episode seed shared by all
//! modes, so zone triggers line up position by position across modes.

use crate::env::{Action, EnvError, MissionState, TerminationReason};
use crate::planners::{greedy_ca_min_time, greedy_min_dv, mcts_select_action, MctsConfig, PlannerError};
use crate::ppo::{PolicyParameters, PpoError};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scenario::{generate_scenario, MissionParams, Scenario, ScenarioError};
use rayon::prelude::*;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

pub const ROWS_HEADER: &str =
    "case_id,iteration,mode,debris_visited,mission_time_s,collided,refuels,replans,dv_spent_total";
pub const SUMMARY_HEADER: &str = "mode,avg,max,min,amt_s,collision_rate";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("mode {0} needs a policy")]
    MissingPolicy(EvaluationMode),
    #[error("policy refused: {0}")]
    PolicyMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("row CSV line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvaluationMode {
    RlRl,
    RlGreedy,
    GreedyRl,
    GreedyGreedy,
    /// Tree search for both decisions; reported alongside the four pairings.
    Mcts,
}

impl EvaluationMode {
    /// The four sequencer × handler pairings.
    pub const PAIRINGS: [EvaluationMode; 4] =
        [EvaluationMode::RlRl, EvaluationMode::RlGreedy, EvaluationMode::GreedyRl, EvaluationMode::GreedyGreedy];

    pub fn as_str(self) -> &'static str {
        match self {
            EvaluationMode::RlRl => "RL_RL",
            EvaluationMode::RlGreedy => "RL_Greedy",
            EvaluationMode::GreedyRl => "Greedy_RL",
            EvaluationMode::GreedyGreedy => "Greedy_Greedy",
            EvaluationMode::Mcts => "MCTS",
        }
    }

    pub fn rl_sequencer(self) -> bool {
        matches!(self, EvaluationMode::RlRl | EvaluationMode::RlGreedy)
    }

    pub fn rl_avoidance(self) -> bool {
        matches!(self, EvaluationMode::RlRl | EvaluationMode::GreedyRl)
    }

    pub fn needs_policy(self) -> bool {
        self.rl_sequencer() || self.rl_avoidance()
    }
}

impl fmt::Display for EvaluationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvaluationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let all = [
            EvaluationMode::RlRl,
            EvaluationMode::RlGreedy,
            EvaluationMode::GreedyRl,
            EvaluationMode::GreedyGreedy,
            EvaluationMode::Mcts,
        ];
        all.into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub case_id: usize,
    pub iteration: usize,
    pub mode: EvaluationMode,
    pub debris_visited: usize,
    pub mission_time_s: f64,
    pub collided: bool,
    pub refuels: usize,
    pub replans: usize,
    pub dv_spent_total: f64,
}

impl EvaluationRow {
    fn from_state(case_id: usize, iteration: usize, mode: EvaluationMode, st: &MissionState) -> Self {
        Self {
            case_id,
            iteration,
            mode,
            debris_visited: st.visited_count(),
            mission_time_s: st.elapsed_s,
            collided: st.termination == Some(TerminationReason::Collision),
            refuels: st.refuel_count(),
            replans: st.replan_count(),
            dv_spent_total: st.delta_v_total_km_s,
        }
    }
}

/// Per-mode aggregates. `amt_s` is the mean elapsed time over all episodes,
/// whatever ended them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: EvaluationMode,
    pub avg: f64,
    pub max: usize,
    pub min: usize,
    pub amt_s: f64,
    pub collision_rate: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
    pub summary: Vec<ModeSummary>,
}

fn check_policy(mode: EvaluationMode, scenario: &Scenario, policy: Option<&PolicyParameters>) -> Result<()> {
    if !mode.needs_policy() {
        return Ok(());
    }
    let p = policy.ok_or(HarnessError::MissingPolicy(mode))?;
    if p.n_debris != scenario.n() {
        return Err(HarnessError::PolicyMismatch(format!(
            "policy was built for {} debris, scenario has {}",
            p.n_debris,
            scenario.n()
        )));
    }
    Ok(())
}

fn rl_action(policy: &PolicyParameters, state: &MissionState, scenario: &Scenario) -> Result<Action> {
    let obs = state.observation(scenario);
    let mask = state.action_mask(scenario)?;
    let idx = policy.greedy_action(&obs.values, &mask)?;
    Ok(Action::from_index(idx, scenario.n()).expect("policy head matches action space"))
}

/// Play one episode to termination and return the final state.
pub fn run_episode(
    mode: EvaluationMode,
    scenario: &Scenario,
    policy: Option<&PolicyParameters>,
    episode_seed: u64,
    mcts: &MctsConfig,
) -> Result<MissionState> {
    check_policy(mode, scenario, policy)?;
    let mut state = MissionState::reset(scenario, episode_seed);
    // search randomness is kept apart from the zone stream
    let mut search_rng = rng_from_seed(derive_seed(episode_seed, &[0x4d43_5453]));
    while !state.is_terminal() {
        let pending = state.pending_target.is_some();
        let action = match mode {
            EvaluationMode::Mcts => mcts_select_action(&state, scenario, mcts, &mut search_rng)?,
            m if pending && m.rl_avoidance() => rl_action(policy.expect("checked"), &state, scenario)?,
            m if !pending && m.rl_sequencer() => rl_action(policy.expect("checked"), &state, scenario)?,
            _ if pending => greedy_ca_min_time(&state, scenario)?,
            _ => greedy_min_dv(&state, scenario)?,
        };
        state.step(scenario, action)?;
    }
    Ok(state)
}

/// Episode seed for iteration `iteration` under a mode-level `seed`.
pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    derive_seed(seed, &[iteration as u64])
}

pub fn run_mode(
    mode: EvaluationMode,
    scenario: &Scenario,
    case_id: usize,
    iterations: usize,
    policy: Option<&PolicyParameters>,
    seed: u64,
    mcts: &MctsConfig,
) -> Result<Vec<EvaluationRow>> {
    check_policy(mode, scenario, policy)?;
    (0..iterations)
        .map(|it| {
            let st = run_episode(mode, scenario, policy, iteration_seed(seed, it), mcts)?;
            Ok(EvaluationRow::from_state(case_id, it, mode, &st))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub modes: Vec<EvaluationMode>,
    pub n_test_cases: usize,
    pub iterations: usize,
    pub seed: u64,
    pub mission: MissionParams,
    pub mcts: MctsConfig,
    pub workers: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            modes: EvaluationMode::PAIRINGS.to_vec(),
            n_test_cases: 100,
            iterations: 10,
            seed: 0,
            mission: MissionParams::default(),
            mcts: MctsConfig::default(),
            workers: 1,
        }
    }
}

/// Scenario used for test case `case_id`.
pub fn case_scenario(seed: u64, case_id: usize, mission: &MissionParams) -> Result<Scenario> {
    Ok(generate_scenario(derive_seed(seed, &[0, case_id as u64]), mission)?)
}

/// Mode-level seed for test case `case_id`; shared by every mode.
pub fn case_seed(seed: u64, case_id: usize) -> u64 {
    derive_seed(seed, &[1, case_id as u64])
}

/// Run every mode on `n_test_cases` generated scenarios.
pub fn run_suite(config: &SuiteConfig, policy: Option<&PolicyParameters>) -> Result<EvaluationReport> {
    let scenarios = (0..config.n_test_cases)
        .map(|c| case_scenario(config.seed, c, &config.mission))
        .collect::<Result<Vec<_>>>()?;
    run_suite_on(config, &scenarios, policy)
}

/// Run every mode on the given scenarios (case id = position).
pub fn run_suite_on(config: &SuiteConfig, scenarios: &[Scenario], policy: Option<&PolicyParameters>) -> Result<EvaluationReport> {
    if config.modes.is_empty() {
        return Err(HarnessError::Config("no evaluation modes selected".into()));
    }
    if config.workers == 0 {
        return Err(HarnessError::Config("workers must be at least 1".into()));
    }
    for s in scenarios {
        for &m in &config.modes {
            check_policy(m, s, policy)?;
        }
    }
    let run_case = |(case_id, scenario): (usize, &Scenario)| -> Result<Vec<EvaluationRow>> {
        let seed = case_seed(config.seed, case_id);
        let mut per_mode = Vec::with_capacity(config.modes.len());
        for &mode in &config.modes {
            per_mode.push(run_mode(mode, scenario, case_id, config.iterations, policy, seed, &config.mcts)?);
        }
        // interleave into (iteration, mode) order
        let mut rows = Vec::with_capacity(config.iterations * config.modes.len());
        for it in 0..config.iterations {
            for m in &per_mode {
                rows.push(m[it].clone());
            }
        }
        Ok(rows)
    };
    let cases: Vec<Result<Vec<EvaluationRow>>> = if config.workers == 1 {
        scenarios.iter().enumerate().map(run_case).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| scenarios.par_iter().enumerate().map(run_case).collect())
    };
    let mut rows = Vec::new();
    for c in cases {
        rows.extend(c?);
    }
    let summary = summarize(&rows, &config.modes);
    Ok(EvaluationReport { rows, summary })
}

/// Aggregate rows per mode, in the order given (modes without rows are skipped).
pub fn summarize(rows: &[EvaluationRow], modes: &[EvaluationMode]) -> Vec<ModeSummary> {
    modes
        .iter()
        .filter_map(|&mode| {
            let sel: Vec<&EvaluationRow> = rows.iter().filter(|r| r.mode == mode).collect();
            if sel.is_empty() {
                return None;
            }
            let k = sel.len() as f64;
            Some(ModeSummary {
                mode,
                avg: sel.iter().map(|r| r.debris_visited as f64).sum::<f64>() / k,
                max: sel.iter().map(|r| r.debris_visited).max().unwrap(),
                min: sel.iter().map(|r| r.debris_visited).min().unwrap(),
                amt_s: sel.iter().map(|r| r.mission_time_s).sum::<f64>() / k,
                collision_rate: sel.iter().filter(|r| r.collided).count() as f64 / k,
                episodes: sel.len(),
            })
        })
        .collect()
}

/// Modes in order of first appearance.
pub fn modes_in(rows: &[EvaluationRow]) -> Vec<EvaluationMode> {
    let mut out = Vec::new();
    for r in rows {
        if !out.contains(&r.mode) {
            out.push(r.mode);
        }
    }
    out
}

pub fn rows_to_csv(rows: &[EvaluationRow]) -> String {
    let mut out = String::from(ROWS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.case_id,
            r.iteration,
            r.mode,
            r.debris_visited,
            r.mission_time_s,
            r.collided,
            r.refuels,
            r.replans,
            r.dv_spent_total
        );
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<EvaluationRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == ROWS_HEADER => {}
        _ => return Err(HarnessError::Parse { line: 1, message: "missing row header".into() }),
    }
    lines
        .map(|(i, line)| {
            let err = |message: String| HarnessError::Parse { line: i + 1, message };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let float = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            Ok(EvaluationRow {
                case_id: int(f[0])?,
                iteration: int(f[1])?,
                mode: f[2].parse().map_err(err)?,
                debris_visited: int(f[3])?,
                mission_time_s: float(f[4])?,
                collided: f[5].parse().map_err(|e| err(format!("{:?}: {e}", f[5])))?,
                refuels: int(f[6])?,
                replans: int(f[7])?,
                dv_spent_total: float(f[8])?,
            })
        })
        .collect()
}

pub fn summary_to_csv(summary: &[ModeSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summary {
        let _ = writeln!(out, "{},{},{},{},{},{}", s.mode, s.avg, s.max, s.min, s.amt_s, s.collision_rate);
    }
    out
}

/// Parse a summary CSV back into `(mode, avg, max, min, amt_s, collision_rate)` records.
pub fn summary_from_csv(text: &str) -> Result<Vec<ModeSummary>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
        _ => return Err(HarnessError::Parse { line: 1, message: "missing summary header".into() }),
    }
    lines
        .map(|(i, line)| {
            let err = |message: String| HarnessError::Parse { line: i + 1, message };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let float = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            Ok(ModeSummary {
                mode: f[0].parse().map_err(err)?,
                avg: float(f[1])?,
                max: int(f[2])?,
                min: int(f[3])?,
                amt_s: float(f[4])?,
                collision_rate: float(f[5])?,
                episodes: 0,
            })
        })
        .collect()
}

/// Rebuild the summary CSV from a row CSV.
pub fn summary_from_rows_csv(text: &str) -> Result<String> {
    let rows = rows_from_csv(text)?;
    Ok(summary_to_csv(&summarize(&rows, &modes_in(&rows))))
}

/// Human-readable table with average mission time and collision rate.
pub fn format_report(summary: &[ModeSummary]) -> String {
    let mut out = format!("{:<14} {:>8} {:>5} {:>5} {:>12} {:>10}\n", "mode", "avg", "max", "min", "AMT [h]", "collision");
    for s in summary {
        let _ = writeln!(
            out,
            "{:<14} {:>8.2} {:>5} {:>5} {:>12.2} {:>9.1}%",
            s.mode.as_str(),
            s.avg,
            s.max,
            s.min,
            s.amt_s / 3600.0,
            100.0 * s.collision_rate
        );
    }
    out
}

pub fn write_report(report: &EvaluationReport, rows_path: &Path, summary_path: &Path) -> Result<()> {
    for (path, text) in [(rows_path, rows_to_csv(&report.rows)), (summary_path, summary_to_csv(&report.summary))] {
        std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    }
    Ok(())
}
