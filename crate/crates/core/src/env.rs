//! The rendezvous decision process.
//!
//! An episode starts in the parking orbit with a full tank. Each step either
//! flies to an unvisited debris object, detours around a collision zone that
//! blocked the previous selection, or returns to the refuel orbit.
//!
//! Step reward is `visit − collision − exhaustion`, each term 0 or 1.
//!
//! Flat action encoding for `n` debris objects:
//!
//! | index        | action          |
//! |--------------|-----------------|
//! | `0..n`       | `Debris(i)`     |
//! | `n`          | `Refuel`        |
//! | `n+1..=2n`   | `CaAbove(i)`    |
//! | `2n+1..=3n`  | `CaBelow(i)`    |
//!
//! ## Observation layout `obs-v1` (length `8n + 5`)
//!
//! | offset        | width | content                                         |
//! |---------------|-------|-------------------------------------------------|
//! | 0             | 1     | fuel fraction                                   |
//! | 1             | 1     | remaining time / max duration                   |
//! | 2             | 1     | (altitude − 700 km) / 100 km                    |
//! | 3             | n     | visited mask                                    |
//! | 3+n           | 6n    | per debris: alt/shell, e, i/π, Ω/2π, ω/2π, ν/2π |
//! | 3+7n          | 1     | refuel eligibility                              |
//! | 4+7n          | 1     | \|r − r_refuel\| / 100 km                       |
//! | 5+7n          | n     | collision risk flag (pending target)            |
//!
//! Every component is clamped to `[0, 1]`. Debris anomalies are advanced by
//! mean motion over the elapsed mission time.

use crate::astro::{
    self, altitude_to_radius, ca_adjusted_plan, hohmann_plan, normalize_angle, plane_to_inertial,
    transfer_arc_points, AstroError, DetourDirection, TransferPlan, Vec3,
};
use crate::rng::{rng_from_seed, uniform01, uniform_index, SimRng};
use crate::scenario::{MissionParams, Scenario, DEBRIS_SHELL_KM};
use std::f64::consts::{PI, TAU};
use std::fmt;
use thiserror::Error;

pub const OBS_LAYOUT_VERSION: &str = "obs-v1";

pub fn observation_len(n: usize) -> usize {
    8 * n + 5
}

pub fn action_count(n: usize) -> usize {
    3 * n + 1
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already terminated ({0})")]
    Terminal(TerminationReason),
    #[error("action {action} is not valid in the current state")]
    InvalidAction { action: String },
    #[error("action index {index} out of range for {n} debris")]
    BadIndex { index: usize, n: usize },
    #[error(transparent)]
    Astro(#[from] AstroError),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Debris(usize),
    Refuel,
    CaAbove(usize),
    CaBelow(usize),
}

impl Action {
    pub fn to_index(self, n: usize) -> usize {
        match self {
            Action::Debris(i) => i,
            Action::Refuel => n,
            Action::CaAbove(i) => n + 1 + i,
            Action::CaBelow(i) => 2 * n + 1 + i,
        }
    }

    pub fn from_index(index: usize, n: usize) -> Option<Action> {
        match index {
            i if i < n => Some(Action::Debris(i)),
            i if i == n => Some(Action::Refuel),
            i if i <= 2 * n => Some(Action::CaAbove(i - n - 1)),
            i if i <= 3 * n => Some(Action::CaBelow(i - 2 * n - 1)),
            _ => None,
        }
    }

    pub fn target(self) -> Option<usize> {
        match self {
            Action::Debris(i) | Action::CaAbove(i) | Action::CaBelow(i) => Some(i),
            Action::Refuel => None,
        }
    }

    pub fn is_detour(self) -> bool {
        matches!(self, Action::CaAbove(_) | Action::CaBelow(_))
    }

    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Debris(i) => write!(f, "DEBRIS_{i}"),
            Action::Refuel => write!(f, "Refuel"),
            Action::CaAbove(i) => write!(f, "CA_ABOVE_DEBRIS_{i}"),
            Action::CaBelow(i) => write!(f, "CA_BELOW_DEBRIS_{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationReason {
    AllVisited,
    FuelExhausted,
    TimeExhausted,
    Collision,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::AllVisited => "AllVisited",
            TerminationReason::FuelExhausted => "FuelExhausted",
            TerminationReason::TimeExhausted => "TimeExhausted",
            TerminationReason::Collision => "Collision",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "AllVisited" => Some(TerminationReason::AllVisited),
            "FuelExhausted" => Some(TerminationReason::FuelExhausted),
            "TimeExhausted" => Some(TerminationReason::TimeExhausted),
            "Collision" => Some(TerminationReason::Collision),
            _ => None,
        }
    }

    pub fn is_exhaustion(self) -> bool {
        matches!(self, TerminationReason::FuelExhausted | TerminationReason::TimeExhausted)
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned danger cuboid in inertial coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionZone {
    pub center_km: Vec3,
    pub half_extents_km: Vec3,
}

impl CollisionZone {
    /// Closed-box membership: a point on a face is inside.
    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.center_km;
        (0..3).all(|k| d[k].abs() <= self.half_extents_km[k])
    }

    /// Euclidean distance to the box surface; negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let q = (p - self.center_km).abs() - self.half_extents_km;
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.max().min(0.0);
        outside + inside
    }
}

/// True if any sampled point lies inside the closed cuboid.
pub fn arc_intersects_zone(points: &[Vec3], zone: &CollisionZone) -> bool {
    points.iter().any(|p| zone.contains(p))
}

/// Smallest signed surface distance over the sampled points.
pub fn min_clearance(points: &[Vec3], zone: &CollisionZone) -> f64 {
    points.iter().map(|p| zone.signed_distance(p)).fold(f64::INFINITY, f64::min)
}

/// Place a zone on an interior sample of the nominal arc, chosen uniformly.
/// Arcs with fewer than three samples get a zone at the midpoint of their
/// endpoints.
pub fn spawn_zone(rng: &mut SimRng, nominal_arc: &[Vec3], params: &MissionParams) -> CollisionZone {
    let h = params.zone_half_extent_km;
    let center = if nominal_arc.len() >= 3 {
        nominal_arc[1 + uniform_index(rng, nominal_arc.len() - 2)]
    } else {
        let first = nominal_arc.first().copied().unwrap_or_else(Vec3::zeros);
        let last = nominal_arc.last().copied().unwrap_or(first);
        0.5 * (first + last)
    };
    CollisionZone { center_km: center, half_extents_km: Vec3::new(h[0], h[1], h[2]) }
}

/// Per-step accounting reported alongside the reward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub delta_v_km_s: f64,
    pub time_s: f64,
    pub replanned: bool,
    pub refueled: bool,
    pub zone_triggered: bool,
    pub visited: Option<usize>,
    pub detour_offset_km: Option<f64>,
    pub clearance_km: Option<f64>,
    /// Inertial samples of the flown detour arc (empty for other maneuvers).
    pub flown_arc: Vec<Vec3>,
    /// The zone the detour was checked against.
    pub zone: Option<CollisionZone>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub termination: Option<TerminationReason>,
    pub info: StepInfo,
}

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub action: Action,
    pub delta_v_km_s: f64,
    pub tof_s: f64,
    pub reward: f64,
    pub fuel_after: f64,
    pub elapsed_after_s: f64,
    pub replanned: bool,
    pub refueled: bool,
    pub zone_triggered: bool,
    pub termination: Option<TerminationReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Result of trying the detour ladder in one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DetourAssessment {
    pub direction: DetourDirection,
    /// First plan whose arc certifies the clearance, if any.
    pub plan: Option<TransferPlan>,
    pub offset_km: Option<f64>,
    /// Clearance of the certified arc, or the best clearance seen.
    pub clearance_km: f64,
    pub arc: Vec<Vec3>,
    /// The smallest offset already violates the altitude floor.
    pub floor_blocked: bool,
}

impl DetourAssessment {
    pub fn certified(&self) -> bool {
        self.plan.is_some()
    }
}

/// Full simulator state. Cloning it forks the episode, RNG included.
#[derive(Debug, Clone)]
pub struct MissionState {
    pub elapsed_s: f64,
    pub fuel: f64,
    pub current_radius_km: f64,
    /// Argument of latitude in the common mission plane.
    pub current_anomaly_rad: f64,
    pub visited_mask: Vec<bool>,
    pub refuel_eligible: bool,
    pub pending_target: Option<usize>,
    pub active_zone: Option<CollisionZone>,
    pub rng: SimRng,
    pub trace: Vec<TraceEntry>,
    pub delta_v_since_refuel_km_s: f64,
    pub delta_v_total_km_s: f64,
    pub termination: Option<TerminationReason>,
    pub step_count: usize,
    pub episode_return: f64,
}

impl MissionState {
    pub fn reset(scenario: &Scenario, episode_seed: u64) -> Self {
        let n = scenario.n();
        Self {
            elapsed_s: 0.0,
            fuel: 1.0,
            current_radius_km: scenario.initial_orbit.semi_major_axis_km,
            current_anomaly_rad: scenario.initial_orbit.argument_of_latitude_rad(),
            visited_mask: vec![false; n],
            refuel_eligible: false,
            pending_target: None,
            active_zone: None,
            rng: rng_from_seed(episode_seed),
            trace: Vec::new(),
            delta_v_since_refuel_km_s: 0.0,
            delta_v_total_km_s: 0.0,
            termination: None,
            step_count: 0,
            episode_return: 0.0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.termination.is_some()
    }

    pub fn visited_count(&self) -> usize {
        self.visited_mask.iter().filter(|&&v| v).count()
    }

    pub fn refuel_count(&self) -> usize {
        self.trace.iter().filter(|t| t.action == Action::Refuel).count()
    }

    pub fn replan_count(&self) -> usize {
        self.trace.iter().filter(|t| t.action.is_detour()).count()
    }

    fn floor_radius(scenario: &Scenario) -> f64 {
        altitude_to_radius(scenario.params.min_altitude_km)
    }

    fn below_allowed(&self, scenario: &Scenario, target: usize) -> bool {
        scenario.debris_radius_km(target) - scenario.params.detour_step_km > Self::floor_radius(scenario)
    }

    /// Validity of every flat action index.
    pub fn action_mask(&self, scenario: &Scenario) -> Result<Vec<bool>> {
        if let Some(reason) = self.termination {
            return Err(EnvError::Terminal(reason));
        }
        let n = scenario.n();
        let mut mask = vec![false; action_count(n)];
        match self.pending_target {
            Some(i) => {
                mask[Action::CaAbove(i).to_index(n)] = true;
                mask[Action::CaBelow(i).to_index(n)] = self.below_allowed(scenario, i);
            }
            None => {
                for (j, &v) in self.visited_mask.iter().enumerate() {
                    mask[j] = !v;
                }
                mask[n] = self.refuel_eligible;
            }
        }
        Ok(mask)
    }

    pub fn valid_actions(&self, scenario: &Scenario) -> Result<Vec<Action>> {
        let n = scenario.n();
        Ok(self
            .action_mask(scenario)?
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .filter_map(|(k, _)| Action::from_index(k, n))
            .collect())
    }

    pub fn observation(&self, scenario: &Scenario) -> Observation {
        let n = scenario.n();
        let p = &scenario.params;
        let (lo, hi) = DEBRIS_SHELL_KM;
        let shell = hi - lo;
        let unit = |v: f64| v.clamp(0.0, 1.0);
        let mut v = Vec::with_capacity(observation_len(n));
        v.push(unit(self.fuel));
        v.push(unit(1.0 - self.elapsed_s / p.max_duration_s));
        v.push(unit((self.current_radius_km - altitude_to_radius(lo)) / shell));
        v.extend(self.visited_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        for d in &scenario.debris {
            let el = &d.elements;
            let nu = if el.eccentricity == 0.0 {
                normalize_angle(el.true_anomaly_rad + (el.mean_motion_rad_s() * self.elapsed_s).rem_euclid(TAU))
            } else {
                el.true_anomaly_rad
            };
            v.push(unit((el.altitude_km() - lo) / shell));
            v.push(unit(el.eccentricity));
            v.push(unit(el.inclination_rad / PI));
            v.push(unit(el.raan_rad / TAU));
            v.push(unit(el.arg_perigee_rad / TAU));
            v.push(unit(nu / TAU));
        }
        v.push(if self.refuel_eligible { 1.0 } else { 0.0 });
        v.push(unit((self.current_radius_km - p.refuel_radius_km()).abs() / shell));
        v.extend((0..n).map(|i| if self.pending_target == Some(i) { 1.0 } else { 0.0 }));
        debug_assert_eq!(v.len(), observation_len(n));
        Observation { values: v }
    }

    /// Inertial samples of `plan` departing from the current position.
    pub fn inertial_arc(&self, scenario: &Scenario, plan: &TransferPlan) -> Result<Vec<Vec3>> {
        let orbit = &scenario.initial_orbit;
        let local = transfer_arc_points(plan, scenario.params.sample_interval_s)?;
        Ok(local
            .iter()
            .map(|p| plane_to_inertial(p, orbit.raan_rad, orbit.inclination_rad, self.current_anomaly_rad))
            .collect())
    }

    /// Walk the detour ladder in `direction` against the active zone.
    pub fn assess_detour(
        &self,
        scenario: &Scenario,
        target: usize,
        direction: DetourDirection,
    ) -> Result<DetourAssessment> {
        let zone = self.active_zone.ok_or_else(|| EnvError::InvalidAction {
            action: format!("detour toward DEBRIS_{target} without an active zone"),
        })?;
        let params = &scenario.params;
        let r2 = scenario.debris_radius_km(target);
        let floor = Self::floor_radius(scenario);
        let mut out = DetourAssessment {
            direction,
            plan: None,
            offset_km: None,
            clearance_km: f64::NEG_INFINITY,
            arc: Vec::new(),
            floor_blocked: false,
        };
        for (k, dr) in params.detour_ladder_km().enumerate() {
            if direction == DetourDirection::Below && r2 - dr <= floor {
                out.floor_blocked = k == 0;
                break;
            }
            let plan = ca_adjusted_plan(self.current_radius_km, r2, dr, direction)?;
            let arc = self.inertial_arc(scenario, &plan)?;
            let clearance = min_clearance(&arc, &zone);
            if clearance >= params.clearance_km {
                out.plan = Some(plan);
                out.offset_km = Some(dr);
                out.clearance_km = clearance;
                out.arc = arc;
                return Ok(out);
            }
            if clearance > out.clearance_km {
                out.clearance_km = clearance;
                out.arc = arc;
            }
        }
        Ok(out)
    }

    /// Charge a flown plan and move to `end_radius`.
    fn fly(&mut self, plan: &TransferPlan, end_radius: f64) {
        self.delta_v_since_refuel_km_s += plan.delta_v_total_km_s;
        self.delta_v_total_km_s += plan.delta_v_total_km_s;
        self.elapsed_s += plan.time_of_flight_s;
        self.current_radius_km = end_radius;
        self.current_anomaly_rad = normalize_angle(self.current_anomaly_rad + PI);
    }

    fn refresh_fuel(&mut self, params: &MissionParams) {
        self.fuel = 1.0 - self.delta_v_since_refuel_km_s / params.max_delta_v_km_s;
    }

    fn exhaustion(&self, params: &MissionParams) -> Option<TerminationReason> {
        if self.fuel < 0.0 {
            Some(TerminationReason::FuelExhausted)
        } else if self.elapsed_s > params.max_duration_s {
            Some(TerminationReason::TimeExhausted)
        } else {
            None
        }
    }

    fn mark_visit(&mut self, target: usize) {
        self.visited_mask[target] = true;
        self.refuel_eligible = true;
    }

    /// Apply one action. Invalid actions are rejected without touching state.
    pub fn step(&mut self, scenario: &Scenario, action: Action) -> Result<StepOutcome> {
        let n = scenario.n();
        let mask = self.action_mask(scenario)?;
        let idx = action.to_index(n);
        if idx >= mask.len() || action.target().is_some_and(|t| t >= n) {
            return Err(EnvError::BadIndex { index: idx, n });
        }
        if !mask[idx] {
            return Err(EnvError::InvalidAction { action: action.label() });
        }
        let params = &scenario.params;
        let mut info = StepInfo::default();
        let mut reward = 0.0;
        let mut termination = None;

        match action {
            Action::Debris(i) => {
                let plan = hohmann_plan(self.current_radius_km, scenario.debris_radius_km(i))?;
                if uniform01(&mut self.rng) < params.collision_probability {
                    let arc = self.inertial_arc(scenario, &plan)?;
                    let zone = spawn_zone(&mut self.rng, &arc, params);
                    self.active_zone = Some(zone);
                    self.pending_target = Some(i);
                    info.zone_triggered = true;
                    info.zone = Some(zone);
                } else {
                    self.fly(&plan, plan.r2_km);
                    self.mark_visit(i);
                    info.delta_v_km_s = plan.delta_v_total_km_s;
                    info.time_s = plan.time_of_flight_s;
                    info.visited = Some(i);
                    reward += 1.0;
                }
            }
            Action::CaAbove(i) | Action::CaBelow(i) => {
                let direction = if matches!(action, Action::CaAbove(_)) {
                    DetourDirection::Above
                } else {
                    DetourDirection::Below
                };
                let assessment = self.assess_detour(scenario, i, direction)?;
                info.zone = self.active_zone;
                info.replanned = true;
                info.clearance_km = Some(assessment.clearance_km);
                self.active_zone = None;
                self.pending_target = None;
                match assessment.plan {
                    Some(plan) => {
                        self.fly(&plan, plan.r2_km);
                        self.mark_visit(i);
                        info.delta_v_km_s = plan.delta_v_total_km_s;
                        info.time_s = plan.time_of_flight_s;
                        info.visited = Some(i);
                        info.detour_offset_km = assessment.offset_km;
                        info.flown_arc = assessment.arc;
                        reward += 1.0;
                    }
                    None => {
                        reward -= 1.0;
                        termination = Some(TerminationReason::Collision);
                    }
                }
            }
            Action::Refuel => {
                let plan = hohmann_plan(self.current_radius_km, params.refuel_radius_km())?;
                self.fly(&plan, plan.r2_km);
                info.delta_v_km_s = plan.delta_v_total_km_s;
                info.time_s = plan.time_of_flight_s;
                self.refresh_fuel(params);
                if self.fuel >= 0.0 {
                    self.delta_v_since_refuel_km_s = 0.0;
                    self.elapsed_s += params.refuel_service_penalty_s;
                    info.time_s += params.refuel_service_penalty_s;
                    let coast = astro::KeplerianElements::circular(self.current_radius_km, 0.0, 0.0, 0.0, self.current_anomaly_rad)?;
                    self.current_anomaly_rad =
                        astro::propagate_circular(&coast, params.refuel_service_penalty_s)?.true_anomaly_rad;
                    self.refuel_eligible = false;
                    info.refueled = true;
                }
            }
        }

        self.refresh_fuel(params);
        if termination.is_none() {
            if let Some(reason) = self.exhaustion(params) {
                reward -= 1.0;
                termination = Some(reason);
            } else if self.visited_mask.iter().all(|&v| v) {
                termination = Some(TerminationReason::AllVisited);
            }
        }
        self.termination = termination;
        self.episode_return += reward;
        self.trace.push(TraceEntry {
            step: self.step_count,
            action,
            delta_v_km_s: info.delta_v_km_s,
            tof_s: info.time_s,
            reward,
            fuel_after: self.fuel,
            elapsed_after_s: self.elapsed_s,
            replanned: info.replanned,
            refueled: info.refueled,
            zone_triggered: info.zone_triggered,
            termination,
        });
        self.step_count += 1;
        Ok(StepOutcome { reward, terminal: termination.is_some(), termination, info })
    }
}

/// A scenario paired with a running episode.
#[derive(Debug, Clone)]
pub struct MissionEnv {
    scenario: Scenario,
    state: MissionState,
}

impl MissionEnv {
    pub fn new(scenario: Scenario, episode_seed: u64) -> Self {
        let state = MissionState::reset(&scenario, episode_seed);
        Self { scenario, state }
    }

    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        self.state = MissionState::reset(&self.scenario, episode_seed);
        self.observation()
    }

    pub fn step(&mut self, action: Action) -> Result<(Observation, StepOutcome)> {
        let outcome = self.state.step(&self.scenario, action)?;
        Ok((self.observation(), outcome))
    }

    pub fn step_index(&mut self, index: usize) -> Result<(Observation, StepOutcome)> {
        let n = self.scenario.n();
        let action = Action::from_index(index, n).ok_or(EnvError::BadIndex { index, n })?;
        self.step(action)
    }

    pub fn observation(&self) -> Observation {
        self.state.observation(&self.scenario)
    }

    pub fn action_mask(&self) -> Result<Vec<bool>> {
        self.state.action_mask(&self.scenario)
    }

    pub fn state(&self) -> &MissionState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

pub const EPISODE_LOG_HEADER: &str =
    "step,action_label,dv_spent,tof_s,reward,fuel_after,elapsed_after,replanned,refueled,terminal_reason";

pub fn episode_log_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from(EPISODE_LOG_HEADER);
    out.push('\n');
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            t.step,
            t.action,
            t.delta_v_km_s,
            t.tof_s,
            t.reward,
            t.fuel_after,
            t.elapsed_after_s,
            t.replanned,
            t.refueled,
            t.termination.map(|r| r.as_str()).unwrap_or("")
        ));
    }
    out
}

/// Arrow-joined labels of the maneuvers actually attempted. Selections that
/// only spawned a zone are omitted; a failed detour carries `[COLLISION]`.
pub fn format_trace(trace: &[TraceEntry]) -> String {
    trace
        .iter()
        .filter(|t| !t.zone_triggered)
        .map(|t| match t.termination {
            Some(TerminationReason::Collision) => format!("{}[COLLISION]", t.action),
            _ => t.action.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" → ")
}
