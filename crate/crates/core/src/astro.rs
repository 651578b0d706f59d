//! Two-body mechanics for coplanar circular mission orbits.
//!
//! Distances are in kilometres, speeds in km/s, times in seconds and angles
//! in radians. Transfers are modelled as Hohmann half-ellipses between
//! circular orbits; collision-avoidance detours re-target the half-ellipse to
//! a radially displaced apse and pay a closure burn to match the true target.

use nalgebra::{Rotation3, Vector3};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Earth gravitational parameter (WGS-84), km^3/s^2.
pub const MU_KM3_S2: f64 = 398_600.441_8;
/// Earth equatorial radius (WGS-84), km.
pub const EARTH_RADIUS_KM: f64 = 6378.137;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AstroError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, AstroError>;

/// Wrap an angle into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

pub fn altitude_to_radius(altitude_km: f64) -> f64 {
    EARTH_RADIUS_KM + altitude_km
}

fn check_radius(what: &str, radius_km: f64) -> Result<()> {
    if !radius_km.is_finite() || radius_km <= 0.0 {
        return Err(AstroError::Domain(format!("{what} must be finite and positive, got {radius_km}")));
    }
    if radius_km <= EARTH_RADIUS_KM {
        return Err(AstroError::Domain(format!(
            "{what} {radius_km} km is inside the Earth ({EARTH_RADIUS_KM} km)"
        )));
    }
    Ok(())
}

/// Classical orbital elements of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerianElements {
    pub semi_major_axis_km: f64,
    pub eccentricity: f64,
    pub inclination_rad: f64,
    pub raan_rad: f64,
    pub arg_perigee_rad: f64,
    pub true_anomaly_rad: f64,
}

impl KeplerianElements {
    /// Validating constructor. Angles are normalised into `[0, 2π)`.
    pub fn new(
        semi_major_axis_km: f64,
        eccentricity: f64,
        inclination_rad: f64,
        raan_rad: f64,
        arg_perigee_rad: f64,
        true_anomaly_rad: f64,
    ) -> Result<Self> {
        check_radius("semi-major axis", semi_major_axis_km)?;
        if !(0.0..1.0).contains(&eccentricity) {
            return Err(AstroError::Domain(format!(
                "eccentricity must lie in [0, 1), got {eccentricity}"
            )));
        }
        for (name, v) in [
            ("inclination", inclination_rad),
            ("raan", raan_rad),
            ("argument of perigee", arg_perigee_rad),
            ("true anomaly", true_anomaly_rad),
        ] {
            if !v.is_finite() {
                return Err(AstroError::Domain(format!("{name} must be finite")));
            }
        }
        Ok(Self {
            semi_major_axis_km,
            eccentricity,
            inclination_rad: normalize_angle(inclination_rad),
            raan_rad: normalize_angle(raan_rad),
            arg_perigee_rad: normalize_angle(arg_perigee_rad),
            true_anomaly_rad: normalize_angle(true_anomaly_rad),
        })
    }

    pub fn circular(
        radius_km: f64,
        inclination_rad: f64,
        raan_rad: f64,
        arg_perigee_rad: f64,
        true_anomaly_rad: f64,
    ) -> Result<Self> {
        Self::new(radius_km, 0.0, inclination_rad, raan_rad, arg_perigee_rad, true_anomaly_rad)
    }

    pub fn altitude_km(&self) -> f64 {
        self.semi_major_axis_km - EARTH_RADIUS_KM
    }

    pub fn mean_motion_rad_s(&self) -> f64 {
        (MU_KM3_S2 / self.semi_major_axis_km.powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        TAU / self.mean_motion_rad_s()
    }

    /// Argument of latitude `ω + ν`, normalised.
    pub fn argument_of_latitude_rad(&self) -> f64 {
        normalize_angle(self.arg_perigee_rad + self.true_anomaly_rad)
    }
}

/// Inertial position and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub position_km: Vec3,
    pub velocity_km_s: Vec3,
}

/// Rotation from the perifocal frame (x toward perigee, z along the orbit
/// normal) to the inertial frame: `R3(Ω) R1(i) R3(ω)`.
fn perifocal_to_inertial(raan: f64, inc: f64, argp: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), raan)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), inc)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), argp)
}

/// Map a point given in an orbital plane (x toward the reference direction at
/// argument of latitude `arg_lat`, z along the normal) into inertial axes.
pub fn plane_to_inertial(point: &Vec3, raan_rad: f64, inclination_rad: f64, arg_lat_rad: f64) -> Vec3 {
    perifocal_to_inertial(raan_rad, inclination_rad, arg_lat_rad) * point
}

pub fn elements_to_state(el: &KeplerianElements) -> StateVector {
    let a = el.semi_major_axis_km;
    let e = el.eccentricity;
    let nu = el.true_anomaly_rad;
    let p = a * (1.0 - e * e);
    let r = p / (1.0 + e * nu.cos());
    let pos_pf = Vec3::new(r * nu.cos(), r * nu.sin(), 0.0);
    let h = (MU_KM3_S2 / p).sqrt();
    let vel_pf = Vec3::new(-h * nu.sin(), h * (e + nu.cos()), 0.0);
    let rot = perifocal_to_inertial(el.raan_rad, el.inclination_rad, el.arg_perigee_rad);
    StateVector {
        position_km: rot * pos_pf,
        velocity_km_s: rot * vel_pf,
    }
}

/// Inverse of [`elements_to_state`] for bound, non-equatorial orbits.
///
/// For circular orbits the argument of perigee is reported as zero and the
/// true anomaly carries the argument of latitude.
pub fn state_to_elements(sv: &StateVector) -> Result<KeplerianElements> {
    let r = sv.position_km;
    let v = sv.velocity_km_s;
    let rmag = r.norm();
    check_radius("position magnitude", rmag)?;
    let h = r.cross(&v);
    let hmag = h.norm();
    if hmag <= 0.0 {
        return Err(AstroError::Domain("degenerate (rectilinear) state".into()));
    }
    let energy = v.norm_squared() / 2.0 - MU_KM3_S2 / rmag;
    if energy >= 0.0 {
        return Err(AstroError::Domain("state is not on a bound orbit".into()));
    }
    let a = -MU_KM3_S2 / (2.0 * energy);
    let e_vec = v.cross(&h) / MU_KM3_S2 - r / rmag;
    let mut e = e_vec.norm();
    let inc = (h.z / hmag).clamp(-1.0, 1.0).acos();
    let node = Vector3::z().cross(&h);
    let node_mag = node.norm();
    if node_mag < 1e-12 * hmag {
        return Err(AstroError::Domain("equatorial orbit: RAAN undefined".into()));
    }
    let mut raan = (node.x / node_mag).clamp(-1.0, 1.0).acos();
    if node.y < 0.0 {
        raan = TAU - raan;
    }
    let (argp, nu);
    if e < 1e-11 {
        e = 0.0;
        let mut u = (node.dot(&r) / (node_mag * rmag)).clamp(-1.0, 1.0).acos();
        if r.z < 0.0 {
            u = TAU - u;
        }
        argp = 0.0;
        nu = u;
    } else {
        let mut w = (node.dot(&e_vec) / (node_mag * e)).clamp(-1.0, 1.0).acos();
        if e_vec.z < 0.0 {
            w = TAU - w;
        }
        let mut f = (e_vec.dot(&r) / (e * rmag)).clamp(-1.0, 1.0).acos();
        if r.dot(&v) < 0.0 {
            f = TAU - f;
        }
        argp = w;
        nu = f;
    }
    KeplerianElements::new(a, e, inc, raan, argp, nu)
}

/// Circular orbital speed `√(μ/r)`.
pub fn circular_velocity(radius_km: f64) -> Result<f64> {
    check_radius("radius", radius_km)?;
    Ok((MU_KM3_S2 / radius_km).sqrt())
}

/// Vis-viva speed at radius `r` on an orbit of semi-major axis `a`.
pub fn vis_viva_speed(radius_km: f64, semi_major_axis_km: f64) -> f64 {
    (MU_KM3_S2 * (2.0 / radius_km - 1.0 / semi_major_axis_km)).sqrt()
}

/// Half the period of an orbit with semi-major axis `a`.
pub fn half_period_s(semi_major_axis_km: f64) -> f64 {
    PI * (semi_major_axis_km.powi(3) / MU_KM3_S2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetourDirection {
    Above,
    Below,
}

impl DetourDirection {
    pub fn sign(self) -> f64 {
        match self {
            DetourDirection::Above => 1.0,
            DetourDirection::Below => -1.0,
        }
    }
}

/// One maneuver: a half-ellipse from `r1` to `r2 + radial_offset`, with the
/// Δv of each burn.
///
/// `closure_delta_v_km_s` is nonzero only for detours; it is the
/// circular-speed correction from the displaced apse to the true target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferPlan {
    pub r1_km: f64,
    pub r2_km: f64,
    pub delta_v_depart_km_s: f64,
    pub delta_v_arrive_km_s: f64,
    pub closure_delta_v_km_s: f64,
    pub delta_v_total_km_s: f64,
    pub time_of_flight_s: f64,
    pub transfer_semi_major_axis_km: f64,
    pub radial_offset_km: f64,
}

impl TransferPlan {
    /// Radius of the apse where the half-ellipse ends.
    pub fn arc_end_radius_km(&self) -> f64 {
        self.r2_km + self.radial_offset_km
    }

    /// Transfer-ellipse speed at departure and at the far apse.
    pub fn apse_speeds_km_s(&self) -> (f64, f64) {
        let a = self.transfer_semi_major_axis_km;
        (vis_viva_speed(self.r1_km, a), vis_viva_speed(self.arc_end_radius_km(), a))
    }
}

fn half_ellipse(r1: f64, r_end: f64) -> (f64, f64, f64, f64) {
    let a = 0.5 * (r1 + r_end);
    let depart = (vis_viva_speed(r1, a) - (MU_KM3_S2 / r1).sqrt()).abs();
    let arrive = ((MU_KM3_S2 / r_end).sqrt() - vis_viva_speed(r_end, a)).abs();
    (a, depart, arrive, half_period_s(a))
}

/// Two-burn Hohmann transfer between circular orbits of radius `r1` and `r2`.
pub fn hohmann_plan(r1_km: f64, r2_km: f64) -> Result<TransferPlan> {
    check_radius("r1", r1_km)?;
    check_radius("r2", r2_km)?;
    let (a, depart, arrive, tof) = half_ellipse(r1_km, r2_km);
    Ok(TransferPlan {
        r1_km,
        r2_km,
        delta_v_depart_km_s: depart,
        delta_v_arrive_km_s: arrive,
        closure_delta_v_km_s: 0.0,
        delta_v_total_km_s: depart + arrive,
        time_of_flight_s: tof,
        transfer_semi_major_axis_km: a,
        radial_offset_km: 0.0,
    })
}

/// Hohmann transfer re-targeted to `r2 ± Δr`, plus the circular-speed closure
/// `|v_c(r2) − v_c(r2 ± Δr)|` charged at arrival.
pub fn ca_adjusted_plan(
    r1_km: f64,
    r2_km: f64,
    delta_r_km: f64,
    direction: DetourDirection,
) -> Result<TransferPlan> {
    check_radius("r1", r1_km)?;
    check_radius("r2", r2_km)?;
    if !(delta_r_km.is_finite() && delta_r_km > 0.0) {
        return Err(AstroError::Domain(format!("detour offset must be positive, got {delta_r_km}")));
    }
    let offset = direction.sign() * delta_r_km;
    let r_end = r2_km + offset;
    if r_end <= EARTH_RADIUS_KM {
        return Err(AstroError::Domain(format!(
            "detour apse {r_end} km dips below the surface"
        )));
    }
    let (a, depart, arrive, tof) = half_ellipse(r1_km, r_end);
    let closure = ((MU_KM3_S2 / r2_km).sqrt() - (MU_KM3_S2 / r_end).sqrt()).abs();
    Ok(TransferPlan {
        r1_km,
        r2_km,
        delta_v_depart_km_s: depart,
        delta_v_arrive_km_s: arrive,
        closure_delta_v_km_s: closure,
        delta_v_total_km_s: depart + arrive + closure,
        time_of_flight_s: tof,
        transfer_semi_major_axis_km: a,
        radial_offset_km: offset,
    })
}

/// Advance a circular orbit by `dt_s` of mean motion.
pub fn propagate_circular(elements: &KeplerianElements, dt_s: f64) -> Result<KeplerianElements> {
    if elements.eccentricity != 0.0 {
        return Err(AstroError::Contract(format!(
            "circular propagation requires e = 0, got {}",
            elements.eccentricity
        )));
    }
    if !dt_s.is_finite() {
        return Err(AstroError::Domain("time step must be finite".into()));
    }
    let mut out = *elements;
    // reduce the phase advance before adding so long horizons keep precision
    let advance = (elements.mean_motion_rad_s() * dt_s).rem_euclid(TAU);
    out.true_anomaly_rad = normalize_angle(elements.true_anomaly_rad + advance);
    Ok(out)
}

/// Solve Kepler's equation `M = E − e sin E` by Newton iteration.
pub fn eccentric_anomaly(mean_anomaly: f64, e: f64) -> f64 {
    let mut ecc = if e < 0.8 { mean_anomaly } else { PI };
    for _ in 0..60 {
        let f = ecc - e * ecc.sin() - mean_anomaly;
        let step = f / (1.0 - e * ecc.cos());
        ecc -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    ecc
}

/// Time-uniform samples along the transfer half-ellipse.
///
/// Points are expressed in the departure frame: the departure point lies on
/// the +x axis, motion is counter-clockwise about +z, and the arc ends on the
/// −x axis after half a revolution. A plan with zero time of flight yields the
/// two coincident endpoints.
pub fn transfer_arc_points(plan: &TransferPlan, sample_interval_s: f64) -> Result<Vec<Vec3>> {
    if !(sample_interval_s.is_finite() && sample_interval_s > 0.0) {
        return Err(AstroError::Domain(format!(
            "sample interval must be positive, got {sample_interval_s}"
        )));
    }
    let r1 = plan.r1_km;
    let r_end = plan.arc_end_radius_km();
    let tof = plan.time_of_flight_s;
    if tof <= 0.0 {
        let p = Vec3::new(r1, 0.0, 0.0);
        return Ok(vec![p, p]);
    }
    let a = plan.transfer_semi_major_axis_km;
    let (rp, ra) = if r_end >= r1 { (r1, r_end) } else { (r_end, r1) };
    let e = (ra - rp) / (ra + rp);
    // raising transfers leave from perigee, lowering ones from apogee
    let m0 = if r_end >= r1 { 0.0 } else { PI };
    let n = PI / tof;
    let count = (tof / sample_interval_s).ceil() as usize + 1;
    let mut points = Vec::with_capacity(count);
    let beta = ((1.0 + e) / (1.0 - e)).sqrt();
    for k in 0..count {
        let t = (k as f64 * sample_interval_s).min(tof);
        let m = m0 + n * t;
        let ecc = eccentric_anomaly(m, e);
        let radius = a * (1.0 - e * ecc.cos());
        // true anomaly measured continuously from the departure apse
        let half = ecc / 2.0;
        let turns = (half / PI).round();
        let nu = 2.0 * ((beta * (half - turns * PI).tan()).atan() + turns * PI);
        let phi = nu - m0;
        points.push(Vec3::new(radius * phi.cos(), radius * phi.sin(), 0.0));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const R700: f64 = EARTH_RADIUS_KM + 700.0;
    const R800: f64 = EARTH_RADIUS_KM + 800.0;

    // 40-digit values from tests/oracles/transfer_oracle.py
    const V_CIRC_700: f64 = 7.504286490416994280572616593635629315466;
    const HOH_DEPART: f64 = 0.02627324931425008047132993867134930729828;
    const HOH_ARRIVE: f64 = 0.02618126237420897662011308139573915917163;
    const HOH_TOTAL: f64 = 0.05245451168845905709144302006708846646992;
    const HOH_TOF: f64 = 2994.642900920710417775384160681562302796;
    const SAME_RADIUS_TOF: f64 = 2963.189535567220229478219235690438278297;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn circular_velocity_matches_oracle() {
        assert!(rel(circular_velocity(R700).unwrap(), V_CIRC_700) < 1e-14);
        assert_eq!(circular_velocity(MU_KM3_S2).unwrap(), 1.0);
        let r = 7300.0;
        assert_relative_eq!(
            circular_velocity(4.0 * r).unwrap(),
            circular_velocity(r).unwrap() / 2.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn circular_velocity_rejects_bad_radii() {
        for r in [0.0, -1.0, f64::NAN, f64::INFINITY, 6000.0] {
            assert!(matches!(circular_velocity(r), Err(AstroError::Domain(_))), "{r}");
        }
    }

    #[test]
    fn hohmann_700_to_800_matches_oracle() {
        let plan = hohmann_plan(R700, R800).unwrap();
        assert!(rel(plan.delta_v_depart_km_s, HOH_DEPART) < 1e-9);
        assert!(rel(plan.delta_v_arrive_km_s, HOH_ARRIVE) < 1e-9);
        assert!(rel(plan.delta_v_total_km_s, HOH_TOTAL) < 1e-9);
        assert!(rel(plan.time_of_flight_s, HOH_TOF) < 1e-12);
        assert_eq!(plan.transfer_semi_major_axis_km, 0.5 * (R700 + R800));
        assert_eq!(plan.radial_offset_km, 0.0);
    }

    #[test]
    fn hohmann_degenerate_transfer_is_free() {
        let plan = hohmann_plan(R700, R700).unwrap();
        assert_eq!(plan.delta_v_total_km_s, 0.0);
        assert!(rel(plan.time_of_flight_s, SAME_RADIUS_TOF) < 1e-12);
    }

    #[test]
    fn hohmann_reversal_symmetry() {
        let up = hohmann_plan(R700, R800).unwrap();
        let down = hohmann_plan(R800, R700).unwrap();
        assert_relative_eq!(up.delta_v_total_km_s, down.delta_v_total_km_s, max_relative = 1e-12);
        assert_eq!(up.time_of_flight_s, down.time_of_flight_s);
    }

    #[test]
    fn detour_above_costs_more_than_nominal() {
        let nominal = hohmann_plan(R700, R800).unwrap();
        let above = ca_adjusted_plan(R700, R800, 10.0, DetourDirection::Above).unwrap();
        assert!(above.delta_v_total_km_s > nominal.delta_v_total_km_s);
        assert!(rel(above.delta_v_total_km_s, 0.06282475482095243789604702774123195959984) < 1e-9);
        assert!(rel(above.closure_delta_v_km_s, 0.005185227305396009568273531514359572161805) < 1e-9);
        assert_eq!(above.radial_offset_km, 10.0);
        let below = ca_adjusted_plan(R700, R800, 10.0, DetourDirection::Below).unwrap();
        assert!(rel(below.delta_v_total_km_s, 0.05245468539658220522912980274161920160193) < 1e-9);
        assert_eq!(below.radial_offset_km, -10.0);
    }

    #[test]
    fn detour_converges_to_hohmann_at_zero_offset() {
        let nominal = hohmann_plan(R700, R800).unwrap();
        let tiny = ca_adjusted_plan(R700, R800, 1e-9, DetourDirection::Above).unwrap();
        assert_relative_eq!(tiny.delta_v_depart_km_s, nominal.delta_v_depart_km_s, max_relative = 1e-6);
        assert_relative_eq!(tiny.delta_v_arrive_km_s, nominal.delta_v_arrive_km_s, max_relative = 1e-6);
        assert!(tiny.closure_delta_v_km_s < 1e-9);
        assert_relative_eq!(tiny.time_of_flight_s, nominal.time_of_flight_s, max_relative = 1e-12);
    }

    #[test]
    fn same_radius_detours_are_first_order_symmetric() {
        // Exact magnitudes differ at second order in Δr/r.
        let above = ca_adjusted_plan(R700, R700, 10.0, DetourDirection::Above).unwrap();
        let below = ca_adjusted_plan(R700, R700, 10.0, DetourDirection::Below).unwrap();
        assert!(rel(above.delta_v_total_km_s, 0.01059084307805801617012459193993556635051) < 1e-9);
        assert!(rel(below.delta_v_total_km_s, 0.01061331102062246994776365798478834450177) < 1e-9);
        let gap = rel(above.delta_v_total_km_s, below.delta_v_total_km_s);
        assert!(gap < 2.0 * 10.0 / R700, "gap {gap}");
    }

    #[test]
    fn detour_rejects_bad_offsets() {
        assert!(ca_adjusted_plan(R700, R800, 0.0, DetourDirection::Above).is_err());
        assert!(ca_adjusted_plan(R700, R800, -3.0, DetourDirection::Above).is_err());
        assert!(ca_adjusted_plan(R700, 6400.0, 30.0, DetourDirection::Below).is_err());
    }

    #[test]
    fn propagation_identity_period_and_quarter() {
        let el = KeplerianElements::circular(R700, 96f64.to_radians(), 0.0, 0.0, 1.0).unwrap();
        assert_eq!(propagate_circular(&el, 0.0).unwrap(), el);
        let full = propagate_circular(&el, el.period_s()).unwrap();
        let d = (full.true_anomaly_rad - el.true_anomaly_rad).abs();
        assert!(d < 1e-9 || (TAU - d) < 1e-9);
        let quarter = propagate_circular(&el, el.period_s() / 4.0).unwrap();
        assert!((quarter.true_anomaly_rad - el.true_anomaly_rad - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn propagation_requires_circular_orbit() {
        let el = KeplerianElements::new(R700, 0.01, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(propagate_circular(&el, 10.0), Err(AstroError::Contract(_))));
    }

    #[test]
    fn arc_point_count_and_endpoints() {
        let plan = TransferPlan {
            time_of_flight_s: 3000.0,
            ..hohmann_plan(R700, R800).unwrap()
        };
        assert_eq!(transfer_arc_points(&plan, 60.0).unwrap().len(), 51);

        let plan = hohmann_plan(R700, R800).unwrap();
        let pts = transfer_arc_points(&plan, 60.0).unwrap();
        assert_eq!(pts.len(), (plan.time_of_flight_s / 60.0).ceil() as usize + 1);
        assert!((pts[0].norm() - R700).abs() < 1e-6);
        assert!((pts.last().unwrap().norm() - R800).abs() < 1e-6);
        assert!(pts.last().unwrap().x < 0.0);

        let below = ca_adjusted_plan(R800, R700, 20.0, DetourDirection::Below).unwrap();
        let pts = transfer_arc_points(&below, 60.0).unwrap();
        assert!((pts[0].norm() - R800).abs() < 1e-6);
        assert!((pts.last().unwrap().norm() - (R700 - 20.0)).abs() < 1e-6);
    }

    #[test]
    fn arc_rejects_bad_interval_and_handles_zero_tof() {
        let plan = hohmann_plan(R700, R800).unwrap();
        assert!(transfer_arc_points(&plan, 0.0).is_err());
        let degenerate = TransferPlan { time_of_flight_s: 0.0, ..plan };
        let pts = transfer_arc_points(&degenerate, 60.0).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], pts[1]);
    }

    #[test]
    fn arc_samples_are_time_uniform() {
        // equal time steps sweep equal areas (Kepler's second law)
        let plan = hohmann_plan(R700, EARTH_RADIUS_KM + 2000.0).unwrap();
        let pts = transfer_arc_points(&plan, 60.0).unwrap();
        let area = |a: &Vec3, b: &Vec3| 0.5 * a.cross(b).norm();
        let first = area(&pts[0], &pts[1]);
        for w in pts.windows(2).take(pts.len() - 2) {
            assert_relative_eq!(area(&w[0], &w[1]), first, max_relative = 1e-3);
        }
    }

    #[test]
    fn state_round_trip_and_vis_viva() {
        let el = KeplerianElements::new(7200.0, 0.05, 1.2, 0.3, 0.7, 2.0).unwrap();
        let sv = elements_to_state(&el);
        let r = sv.position_km.norm();
        assert_relative_eq!(
            sv.velocity_km_s.norm_squared(),
            MU_KM3_S2 * (2.0 / r - 1.0 / el.semi_major_axis_km),
            max_relative = 1e-9
        );
        let back = state_to_elements(&sv).unwrap();
        assert_relative_eq!(back.semi_major_axis_km, el.semi_major_axis_km, max_relative = 1e-9);
        assert_relative_eq!(back.eccentricity, el.eccentricity, max_relative = 1e-9);
        assert_relative_eq!(back.inclination_rad, el.inclination_rad, epsilon = 1e-9);
        assert_relative_eq!(back.raan_rad, el.raan_rad, epsilon = 1e-9);
        assert_relative_eq!(back.arg_perigee_rad, el.arg_perigee_rad, epsilon = 1e-9);
        assert_relative_eq!(back.true_anomaly_rad, el.true_anomaly_rad, epsilon = 1e-9);
    }

    #[test]
    fn circular_state_matches_plane_rotation() {
        let el = KeplerianElements::circular(R700, 96f64.to_radians(), 0.4, 0.0, 1.1).unwrap();
        let sv = elements_to_state(&el);
        let p = plane_to_inertial(&Vec3::new(R700, 0.0, 0.0), 0.4, 96f64.to_radians(), 1.1);
        assert!((sv.position_km - p).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn plans_satisfy_vis_viva(alt1 in 300.0..2000.0f64, alt2 in 300.0..2000.0f64, dr in 0.1..60.0f64, above in any::<bool>()) {
            let (r1, r2) = (altitude_to_radius(alt1), altitude_to_radius(alt2));
            let dir = if above { DetourDirection::Above } else { DetourDirection::Below };
            for plan in [hohmann_plan(r1, r2).unwrap(), ca_adjusted_plan(r1, r2, dr, dir).unwrap()] {
                let a = plan.transfer_semi_major_axis_km;
                let (v_dep, v_arr) = plan.apse_speeds_km_s();
                for (r, v) in [(plan.r1_km, v_dep), (plan.arc_end_radius_km(), v_arr)] {
                    let lhs = v * v;
                    let rhs = MU_KM3_S2 * (2.0 / r - 1.0 / a);
                    prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs);
                }
                prop_assert!(plan.delta_v_depart_km_s >= 0.0 && plan.delta_v_arrive_km_s >= 0.0);
                let sum = plan.delta_v_depart_km_s + plan.delta_v_arrive_km_s + plan.closure_delta_v_km_s;
                prop_assert_eq!(plan.delta_v_total_km_s, sum);
                prop_assert!((plan.time_of_flight_s - PI * (a.powi(3) / MU_KM3_S2).sqrt()).abs() < 1e-9);
            }
        }

        #[test]
        fn hohmann_is_cheapest(alt1 in 300.0..2000.0f64, alt2 in 300.0..2000.0f64, dr in 0.01..80.0f64) {
            let (r1, r2) = (altitude_to_radius(alt1), altitude_to_radius(alt2));
            let nominal = hohmann_plan(r1, r2).unwrap().delta_v_total_km_s;
            for dir in [DetourDirection::Above, DetourDirection::Below] {
                let ca = ca_adjusted_plan(r1, r2, dr, dir).unwrap().delta_v_total_km_s;
                prop_assert!(ca >= nominal - 1e-15, "{dir:?} {ca} < {nominal}");
            }
        }

        #[test]
        fn tof_increases_with_transfer_axis(a in 6500.0..20000.0f64, da in 1e-3..500.0f64) {
            prop_assert!(half_period_s(a + da) > half_period_s(a));
        }

        #[test]
        fn propagation_composes(t1 in -1e5..1e5f64, t2 in -1e5..1e5f64, nu in 0.0..TAU) {
            let el = KeplerianElements::circular(R800, 1.0, 0.0, 0.0, nu).unwrap();
            let two = propagate_circular(&propagate_circular(&el, t1).unwrap(), t2).unwrap();
            let one = propagate_circular(&el, t1 + t2).unwrap();
            let d = (two.true_anomaly_rad - one.true_anomaly_rad).abs();
            prop_assert!(d.min(TAU - d) < 1e-9);
        }

        #[test]
        fn arc_radii_stay_between_apses(alt1 in 650.0..850.0f64, alt2 in 650.0..850.0f64) {
            let (r1, r2) = (altitude_to_radius(alt1), altitude_to_radius(alt2));
            let plan = hohmann_plan(r1, r2).unwrap();
            let (lo, hi) = (r1.min(r2), r1.max(r2));
            for p in transfer_arc_points(&plan, 60.0).unwrap() {
                let r = p.norm();
                prop_assert!(r >= lo - 1e-6 && r <= hi + 1e-6);
            }
        }
    }
}
