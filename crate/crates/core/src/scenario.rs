//! Debris fields and mission parameters.
//!
//! ## Scenario CSV
//!
//! UTF-8, LF line endings. A block of `# key=value` lines carries the seed,
//! every [`MissionParams`] field and the parking orbit, followed by one
//! header row and one row per debris object:
//!
//! ```text
//! # seed=42
//! # n_debris=3
//! # ...
//! # initial_orbit=7078.137,0,96,0,0,0
//! id,sma_km,ecc,inc_deg,raan_deg,argp_deg,nu_deg
//! 0,7123.5,0,96,0,0,211.25
//! ```
//!
//! Floats are written in shortest round-trip form. Angles are stored in
//! degrees; the writer picks the decimal that converts back to the exact
//! in-memory radian value.

use crate::astro::{altitude_to_radius, AstroError, KeplerianElements};
use crate::rng::{rng_from_seed, uniform01};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Altitude band of generated debris, km.
pub const DEBRIS_SHELL_KM: (f64, f64) = (700.0, 800.0);
/// Inclination of the parking orbit and of every generated debris object.
pub const MISSION_INCLINATION_DEG: f64 = 96.0;

pub const CSV_HEADER: &str = "id,sma_km,ecc,inc_deg,raan_deg,argp_deg,nu_deg";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid mission parameter: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Astro(#[from] AstroError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebrisObject {
    pub id: usize,
    pub elements: KeplerianElements,
}

impl DebrisObject {
    pub fn radius_km(&self) -> f64 {
        self.elements.semi_major_axis_km
    }
}

/// Mission-level constants. Defaults follow the reference mission.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionParams {
    pub n_debris: usize,
    pub collision_probability: f64,
    pub zone_half_extent_km: [f64; 3],
    pub clearance_km: f64,
    pub max_delta_v_km_s: f64,
    pub max_duration_s: f64,
    pub refuel_service_penalty_s: f64,
    pub refuel_orbit_altitude_km: f64,
    pub sample_interval_s: f64,
    /// Spacing of the detour offset ladder, km.
    pub detour_step_km: f64,
    /// Largest detour offset tried before a CA maneuver counts as a collision.
    pub detour_max_km: f64,
    /// Lowest altitude a CA_Below detour apse may reach.
    pub min_altitude_km: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            n_debris: 50,
            collision_probability: 1.0 / 3.0,
            zone_half_extent_km: [2.5, 2.5, 2.5],
            clearance_km: 5.0,
            max_delta_v_km_s: 3.0,
            max_duration_s: 7.0 * 86_400.0,
            refuel_service_penalty_s: 2.5 * 3600.0,
            refuel_orbit_altitude_km: 700.0,
            sample_interval_s: 60.0,
            detour_step_km: 5.0,
            detour_max_km: 50.0,
            min_altitude_km: 200.0,
        }
    }
}

impl MissionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScenarioError::InvalidParams(m));
        if self.n_debris == 0 {
            return bad("n_debris must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.collision_probability) {
            return bad(format!(
                "collision_probability must lie in [0, 1], got {}",
                self.collision_probability
            ));
        }
        let positive = [
            ("zone_half_extent_km[0]", self.zone_half_extent_km[0]),
            ("zone_half_extent_km[1]", self.zone_half_extent_km[1]),
            ("zone_half_extent_km[2]", self.zone_half_extent_km[2]),
            ("clearance_km", self.clearance_km),
            ("max_delta_v_km_s", self.max_delta_v_km_s),
            ("max_duration_s", self.max_duration_s),
            ("refuel_service_penalty_s", self.refuel_service_penalty_s),
            ("refuel_orbit_altitude_km", self.refuel_orbit_altitude_km),
            ("sample_interval_s", self.sample_interval_s),
            ("detour_step_km", self.detour_step_km),
            ("detour_max_km", self.detour_max_km),
            ("min_altitude_km", self.min_altitude_km),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if self.detour_max_km < self.detour_step_km {
            return bad("detour_max_km must be at least detour_step_km".into());
        }
        Ok(())
    }

    pub fn refuel_radius_km(&self) -> f64 {
        altitude_to_radius(self.refuel_orbit_altitude_km)
    }

    /// Offsets tried for a detour, smallest first.
    pub fn detour_ladder_km(&self) -> impl Iterator<Item = f64> + '_ {
        let steps = (self.detour_max_km / self.detour_step_km + 1e-9).floor() as usize;
        (1..=steps).map(move |k| k as f64 * self.detour_step_km)
    }

    /// `(key, value)` pairs in a fixed order, shared by the scenario header,
    /// `--params-file` and resolved-config echoes.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let h = self.zone_half_extent_km;
        vec![
            ("n_debris", self.n_debris.to_string()),
            ("collision_probability", fmt_f64(self.collision_probability)),
            ("zone_half_extent_km", format!("{},{},{}", fmt_f64(h[0]), fmt_f64(h[1]), fmt_f64(h[2]))),
            ("clearance_km", fmt_f64(self.clearance_km)),
            ("max_delta_v_km_s", fmt_f64(self.max_delta_v_km_s)),
            ("max_duration_s", fmt_f64(self.max_duration_s)),
            ("refuel_service_penalty_s", fmt_f64(self.refuel_service_penalty_s)),
            ("refuel_orbit_altitude_km", fmt_f64(self.refuel_orbit_altitude_km)),
            ("sample_interval_s", fmt_f64(self.sample_interval_s)),
            ("detour_step_km", fmt_f64(self.detour_step_km)),
            ("detour_max_km", fmt_f64(self.detour_max_km)),
            ("min_altitude_km", fmt_f64(self.min_altitude_km)),
        ]
    }

    /// Apply one `key=value` override. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{key}: {e}"));
        match key.trim() {
            "n_debris" => self.n_debris = value.trim().parse().map_err(|e| format!("{key}: {e}"))?,
            "collision_probability" => self.collision_probability = num(value)?,
            "zone_half_extent_km" => {
                let parts: Vec<&str> = value.split(',').collect();
                match parts.as_slice() {
                    [one] => self.zone_half_extent_km = [num(one)?; 3],
                    [x, y, z] => self.zone_half_extent_km = [num(x)?, num(y)?, num(z)?],
                    _ => return Err(format!("{key}: expected 1 or 3 values")),
                }
            }
            "clearance_km" => self.clearance_km = num(value)?,
            "max_delta_v_km_s" => self.max_delta_v_km_s = num(value)?,
            "max_duration_s" => self.max_duration_s = num(value)?,
            "refuel_service_penalty_s" => self.refuel_service_penalty_s = num(value)?,
            "refuel_orbit_altitude_km" => self.refuel_orbit_altitude_km = num(value)?,
            "sample_interval_s" => self.sample_interval_s = num(value)?,
            "detour_step_km" => self.detour_step_km = num(value)?,
            "detour_max_km" => self.detour_max_km = num(value)?,
            "min_altitude_km" => self.min_altitude_km = num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parse a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ScenarioError::Parse {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            match self.set(k, v) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(ScenarioError::Parse { line: idx + 1, message: format!("unknown parameter {k:?}") })
                }
                Err(message) => return Err(ScenarioError::Parse { line: idx + 1, message }),
            }
        }
        self.validate()
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// A debris field together with the parameters it was generated under.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub debris: Vec<DebrisObject>,
    pub params: MissionParams,
    pub initial_orbit: KeplerianElements,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.debris.len()
    }

    pub fn debris_radius_km(&self, id: usize) -> f64 {
        self.debris[id].radius_km()
    }
}

/// Circular parking orbit at the refuel altitude.
pub fn parking_orbit(params: &MissionParams) -> Result<KeplerianElements> {
    Ok(KeplerianElements::circular(
        params.refuel_radius_km(),
        MISSION_INCLINATION_DEG.to_radians(),
        0.0,
        0.0,
        0.0,
    )?)
}

/// Sample `n_debris` circular, coplanar objects with altitude uniform in the
/// debris shell and true anomaly uniform over the circle.
///
/// Draw order per object: altitude, then anomaly. Anomalies are drawn in
/// degrees so the stored radians survive a CSV round trip.
pub fn generate_scenario(seed: u64, params: &MissionParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let (lo, hi) = DEBRIS_SHELL_KM;
    let inc = MISSION_INCLINATION_DEG.to_radians();
    let debris = (0..params.n_debris)
        .map(|id| {
            let altitude = lo + (hi - lo) * uniform01(&mut rng);
            let nu_deg = 360.0 * uniform01(&mut rng);
            let elements =
                KeplerianElements::circular(altitude_to_radius(altitude), inc, 0.0, 0.0, nu_deg.to_radians())?;
            Ok(DebrisObject { id, elements })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        seed,
        debris,
        params: params.clone(),
        initial_orbit: parking_orbit(params)?,
    })
}

/// Shortest decimal degree string that maps back to `rad` exactly.
fn fmt_angle_deg(rad: f64) -> String {
    let mut deg = rad.to_degrees();
    if deg.to_radians() == rad {
        return fmt_f64(deg);
    }
    for _ in 0..8 {
        let up = f64::from_bits(deg.to_bits() + 1);
        if up.to_radians() == rad {
            return fmt_f64(up);
        }
        let down = f64::from_bits(deg.to_bits() - 1);
        if down.to_radians() == rad {
            return fmt_f64(down);
        }
        deg = if up.to_radians() < rad { up } else { down };
    }
    fmt_f64(rad.to_degrees())
}

fn fmt_elements(el: &KeplerianElements) -> String {
    format!(
        "{},{},{},{},{},{}",
        fmt_f64(el.semi_major_axis_km),
        fmt_f64(el.eccentricity),
        fmt_angle_deg(el.inclination_rad),
        fmt_angle_deg(el.raan_rad),
        fmt_angle_deg(el.arg_perigee_rad),
        fmt_angle_deg(el.true_anomaly_rad)
    )
}

pub fn scenario_to_csv(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed={}", s.seed);
    for (k, v) in s.params.to_pairs() {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "# initial_orbit={}", fmt_elements(&s.initial_orbit));
    let _ = writeln!(out, "{CSV_HEADER}");
    for d in &s.debris {
        let _ = writeln!(out, "{},{}", d.id, fmt_elements(&d.elements));
    }
    out
}

fn parse_elements(fields: &[&str], line: usize) -> Result<KeplerianElements> {
    let nums = fields
        .iter()
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| ScenarioError::Parse {
                line,
                message: format!("bad number {f:?}: {e}"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    KeplerianElements::new(
        nums[0],
        nums[1],
        nums[2].to_radians(),
        nums[3].to_radians(),
        nums[4].to_radians(),
        nums[5].to_radians(),
    )
    .map_err(|e| ScenarioError::Parse { line, message: e.to_string() })
}

/// Parse the scenario CSV format. Rows may appear in any id order; the
/// result is sorted by id and must cover `0..n` exactly.
///
/// Missing header keys fall back to [`MissionParams::default`]; `n_debris`
/// always follows the number of rows.
pub fn scenario_from_csv(text: &str) -> Result<Scenario> {
    let mut params = MissionParams::default();
    let mut seed = 0u64;
    let mut initial: Option<KeplerianElements> = None;
    let mut saw_header = false;
    let mut debris: Vec<DebrisObject> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            let Some((k, v)) = meta.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seed" => {
                    seed = v.parse().map_err(|e| ScenarioError::Parse {
                        line: line_no,
                        message: format!("bad seed {v:?}: {e}"),
                    })?
                }
                "initial_orbit" => {
                    let fields: Vec<&str> = v.split(',').collect();
                    if fields.len() != 6 {
                        return Err(ScenarioError::Parse {
                            line: line_no,
                            message: "initial_orbit needs 6 values".into(),
                        });
                    }
                    initial = Some(parse_elements(&fields, line_no)?);
                }
                _ => match params.set(k, v) {
                    Ok(_) => {}
                    Err(message) => return Err(ScenarioError::Parse { line: line_no, message }),
                },
            }
            continue;
        }
        if !saw_header {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.join(",") != CSV_HEADER {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("expected header {CSV_HEADER:?}, got {line:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(ScenarioError::Parse {
                line: line_no,
                message: format!("expected 7 columns, got {}", fields.len()),
            });
        }
        let id: usize = fields[0].trim().parse().map_err(|e| ScenarioError::Parse {
            line: line_no,
            message: format!("bad id {:?}: {e}", fields[0]),
        })?;
        if !seen.insert(id) {
            return Err(ScenarioError::Parse { line: line_no, message: format!("duplicate id {id}") });
        }
        let elements = parse_elements(&fields[1..], line_no)?;
        debris.push(DebrisObject { id, elements });
    }
    if !saw_header {
        return Err(ScenarioError::Parse { line: text.lines().count().max(1), message: "missing CSV header".into() });
    }
    debris.sort_by_key(|d| d.id);
    if let Some(pos) = debris.iter().enumerate().position(|(k, d)| d.id != k) {
        return Err(ScenarioError::Parse {
            line: 0,
            message: format!("debris ids must be exactly 0..{}, id {pos} is missing", debris.len()),
        });
    }
    params.n_debris = debris.len();
    params.validate()?;
    let initial_orbit = match initial {
        Some(el) => el,
        None => parking_orbit(&params)?,
    };
    Ok(Scenario { seed, debris, params, initial_orbit })
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<()> {
    fs::write(path, scenario_to_csv(s)).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    scenario_from_csv(&text)
}
