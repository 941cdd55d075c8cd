//! Static sizing of the magnets and actuators, and the tip-over margin used
//! live by the simulator.
//!
//! The three sizing inequalities are implemented exactly as the robot's
//! design analysis states them, including the `(F + P) / k` friction term.
//! Note that this term divides by the friction coefficient where a Coulomb
//! model would multiply; it is kept verbatim and should not be "corrected"
//! here, since the published actuator sizing was derived from it.

use std::fmt;

use nalgebra::{Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity used for all mass to weight conversions, m/s².
pub const G: f64 = 9.81;

/// Safety factor applied to the adhesion requirement (lifting-equipment practice).
pub const SF_ADHESION: f64 = 5.0;
/// Safety factor applied to motor and servo torque requirements.
pub const SF_TORQUE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StaticsError {
    #[error("{0}")]
    Domain(String),
}

fn domain(msg: impl Into<String>) -> StaticsError {
    StaticsError::Domain(msg.into())
}

/// Converts a hobby-servo style kg·cm torque rating to N·m.
pub fn kgcm_to_nm(kgcm: f64) -> f64 {
    kgcm * G / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    /// Robot mass without sensors, kg.
    pub mass: f64,
    /// Carried sensors and equipment, kg.
    pub payload: f64,
    pub wheel_radius: f64,
    /// Contact-to-contact distance in the straight pose.
    pub wheelbase: f64,
    /// Clearance between the two wheels.
    pub wheel_gap: f64,
    /// Offset of the center of mass from the contact line along the normal.
    pub com_height: f64,
    /// Static friction coefficient of the tire on steel.
    pub friction_k: f64,
    /// Nominal per-wheel adhesion on flat thick steel, N.
    pub magnet_force: f64,
    /// Adhesive pull of one wheel on the other, N.
    pub inter_wheel_force: f64,
    /// Drive motor stall torque, N·m.
    pub motor_torque: f64,
    /// Steering servo torque, N·m.
    pub servo_torque: f64,
    pub sf_adhesion: f64,
    pub sf_torque: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            payload: 0.6,
            wheel_radius: 0.03,
            wheelbase: 0.11,
            wheel_gap: 0.04,
            com_height: 0.035,
            friction_k: 0.6,
            magnet_force: 80.0,
            inter_wheel_force: 5.0,
            motor_torque: kgcm_to_nm(100.0),
            servo_torque: kgcm_to_nm(32.0),
            sf_adhesion: SF_ADHESION,
            sf_torque: SF_TORQUE,
        }
    }
}

impl RobotParams {
    /// Total weight `P` of robot plus payload, N.
    pub fn weight(&self) -> f64 {
        (self.mass + self.payload) * G
    }

    pub fn validate(&self) -> Result<(), StaticsError> {
        let positive = [
            ("mass", self.mass),
            ("wheel_radius", self.wheel_radius),
            ("wheelbase", self.wheelbase),
            ("wheel_gap", self.wheel_gap),
            ("com_height", self.com_height),
            ("magnet_force", self.magnet_force),
            ("inter_wheel_force", self.inter_wheel_force),
            ("motor_torque", self.motor_torque),
            ("servo_torque", self.servo_torque),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(domain(format!("{name} must be > 0 (got {value})")));
            }
        }
        if !(self.payload >= 0.0) {
            return Err(domain("payload must be >= 0"));
        }
        if !(self.friction_k > 0.0 && self.friction_k <= 2.0) {
            return Err(domain(format!(
                "friction_k must be in (0, 2] (got {})",
                self.friction_k
            )));
        }
        if !(self.sf_adhesion >= 1.0 && self.sf_torque >= 1.0) {
            return Err(domain("safety factors must be >= 1"));
        }
        Ok(())
    }
}

/// Forces on the front wheel while it is wedged in an internal corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerLoadCase {
    /// Front-wheel adhesion to the surface it is leaving, N.
    pub f_2_1: f64,
    /// Front-wheel adhesion to the surface ahead, N.
    pub f_2_2: f64,
    /// Robot weight, N.
    pub weight: f64,
}

/// Minimum front-wheel adhesion so that its moment about the back contact
/// outweighs the weight moment: `sf · P · h / lever`.
pub fn required_adhesion(
    weight: f64,
    com_height: f64,
    lever: f64,
    sf: f64,
) -> Result<f64, StaticsError> {
    if !(lever > 0.0) {
        return Err(domain(format!("lever arm must be > 0 (got {lever})")));
    }
    if weight < 0.0 || com_height < 0.0 {
        return Err(domain("weight and com height must be >= 0"));
    }
    Ok(sf * weight * com_height / lever)
}

fn check_radius_k(r: f64, k: f64) -> Result<(), StaticsError> {
    if !(k > 0.0) {
        return Err(domain(format!(
            "friction coefficient must be > 0 (got {k})"
        )));
    }
    if !(r > 0.0) {
        return Err(domain(format!("wheel radius must be > 0 (got {r})")));
    }
    Ok(())
}

/// Drive torque needed to push the front wheel out of an internal corner:
/// `sf · r · (F₂.₁ + (F₂.₂ + P) / k)`.
pub fn required_moving_torque(
    r: f64,
    case: &CornerLoadCase,
    k: f64,
    sf: f64,
) -> Result<f64, StaticsError> {
    check_radius_k(r, k)?;
    // Friction term divides by k; see module docs.
    Ok(sf * r * (case.f_2_1 + (case.f_2_2 + case.weight) / k))
}

/// Servo torque needed to turn a wheel against the other wheel's pull and
/// tire friction: `sf · r · (F₁₂ + (F₂ + P) / k)`.
pub fn required_steering_torque(
    r: f64,
    f12: f64,
    f2: f64,
    weight: f64,
    k: f64,
    sf: f64,
) -> Result<f64, StaticsError> {
    check_radius_k(r, k)?;
    Ok(sf * r * (f12 + (f2 + weight) / k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point: Point3<f64>,
    /// Adhesive pull available at this contact, N (acts along `-normal`).
    pub adhesion: f64,
    /// Surface normal pointing away from the steel.
    pub normal: Unit<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
    pub center_of_mass: Point3<f64>,
    pub weight: f64,
    /// Direction of gravity. When absent, every tipping axis is loaded by
    /// the weight in its least favourable direction.
    #[serde(default)]
    pub gravity: Option<Unit<Vector3<f64>>>,
}

impl ContactSet {
    pub fn transformed(&self, iso: &nalgebra::Isometry3<f64>) -> Self {
        Self {
            contacts: self
                .contacts
                .iter()
                .map(|c| Contact {
                    point: iso * c.point,
                    adhesion: c.adhesion,
                    normal: iso * c.normal,
                })
                .collect(),
            center_of_mass: iso * self.center_of_mass,
            weight: self.weight,
            gravity: self.gravity.map(|g| iso * g),
        }
    }
}

/// Ratio of the adhesion moment resisting a tip to the weight moment
/// driving it, minimised over candidate tipping axes.
///
/// Candidate axes pass through each contact `i`, perpendicular to the
/// direction towards each other contact `j` and to `i`'s normal. For each
/// axis both rotation senses are tried; a sense is admissible only if no
/// contact would be pushed into its surface. Contacts that would peel off
/// resist with `adhesion · peel arm`. Returns `+∞` when no admissible tip is
/// driven by the weight, and `0` for fewer than two contacts.
pub fn tip_over_margin(set: &ContactSet) -> Result<f64, StaticsError> {
    let contacts = &set.contacts;
    if contacts.iter().any(|c| c.adhesion < 0.0) {
        return Err(domain("adhesion must be >= 0"));
    }
    if contacts.len() < 2 {
        return Ok(0.0);
    }
    let scale = contacts
        .iter()
        .map(|c| (c.point - set.center_of_mass).norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    for (i, a) in contacts.iter().enumerate() {
        for b in &contacts[i + 1..] {
            if (a.point - b.point).norm() <= 1e-12 * scale {
                return Err(domain("coincident contact points"));
            }
        }
    }

    let tol = 1e-12 * scale;
    let mut margin = f64::INFINITY;
    for (i, pivot) in contacts.iter().enumerate() {
        for (j, other) in contacts.iter().enumerate() {
            if i == j {
                continue;
            }
            let axis = pivot.normal.cross(&(other.point - pivot.point));
            let Some(axis) = Unit::try_new(axis, 1e-12 * scale) else {
                continue;
            };
            // Rate at which each contact leaves its surface under a unit
            // positive rotation about the axis.
            let peel: Vec<f64> = contacts
                .iter()
                .map(|c| axis.cross(&(c.point - pivot.point)).dot(&c.normal))
                .collect();
            let r_com = set.center_of_mass - pivot.point;
            for sense in [1.0, -1.0] {
                if peel.iter().any(|&w| sense * w < -tol) {
                    continue;
                }
                let overturning = match set.gravity {
                    None => set.weight * r_com.cross(&axis).norm(),
                    Some(g) => {
                        (sense * r_com.cross(&(g.into_inner() * set.weight)).dot(&axis)).max(0.0)
                    }
                };
                if overturning <= 1e-15 * set.weight.max(1.0) * scale {
                    continue;
                }
                let restoring: f64 = contacts
                    .iter()
                    .zip(&peel)
                    .map(|(c, &w)| c.adhesion * (sense * w).max(0.0))
                    .sum();
                margin = margin.min(restoring / overturning);
            }
        }
    }
    Ok(margin)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requirement {
    Adhesion,
    MovingTorque,
    SteeringTorque,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Requirement::Adhesion => "adhesion",
            Requirement::MovingTorque => "moving torque",
            Requirement::SteeringTorque => "steering torque",
        })
    }
}

impl Requirement {
    /// Stable identifier of the sizing formula.
    pub fn id(self) -> &'static str {
        match self {
            Requirement::Adhesion => "adhesion_moment",
            Requirement::MovingTorque => "corner_moving_torque",
            Requirement::SteeringTorque => "steering_torque",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            Requirement::Adhesion => "F2 > P*h/L",
            Requirement::MovingTorque => "M_moving > r*(F2.1 + (F2.2 + P)/k)",
            Requirement::SteeringTorque => "M_steering > r*(F12 + (F2 + P)/k)",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Requirement::Adhesion => "N",
            _ => "N·m",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub requirement: Requirement,
    pub formula_id: String,
    /// Human-readable case label, e.g. `nominal` or `corner[0]`.
    pub case: String,
    pub formula: String,
    pub theoretical: f64,
    pub safety_factor: f64,
    pub required: f64,
    pub available: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(
        requirement: Requirement,
        case: String,
        theoretical: f64,
        sf: f64,
        available: f64,
    ) -> Self {
        let required = theoretical * sf;
        Self {
            requirement,
            formula_id: requirement.id().into(),
            case,
            formula: requirement.formula().into(),
            theoretical,
            safety_factor: sf,
            required,
            available,
            pass: available >= required,
        }
    }

    /// Check whose inputs were rejected by the formula's domain.
    fn invalid(requirement: Requirement, case: String, sf: f64, available: f64) -> Self {
        Self {
            requirement,
            case,
            formula_id: requirement.id().into(),
            formula: requirement.formula().into(),
            theoretical: f64::NAN,
            safety_factor: sf,
            required: f64::NAN,
            available,
            pass: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:<10} {:>12} {:>4} {:>12} {:>12}  result",
            "requirement", "case", "theoretical", "sf", "required", "available"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<16} {:<10} {:>12.4} {:>4} {:>12.4} {:>12.4}  {} [{}]  {}",
                c.requirement.to_string(),
                c.case,
                c.theoretical,
                c.safety_factor,
                c.required,
                c.available,
                if c.pass { "PASS" } else { "FAIL" },
                c.requirement.unit(),
                c.formula,
            )?;
        }
        write!(f, "overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Sizing report: nominal flat-surface checks followed by one moving and one
/// steering check per corner load case.
///
/// The nominal case carries no external loads: the torque formulas are
/// evaluated with the robot's weight and, for steering, the inter-wheel pull
/// only. Adhesion is checked against `magnet_force` at the straight-pose
/// wheelbase.
pub fn actuator_feasibility(
    params: &RobotParams,
    worst_cases: &[CornerLoadCase],
) -> FeasibilityReport {
    let p = params;
    let weight = p.weight();
    let mut checks = Vec::new();

    let adhesion = required_adhesion(weight, p.com_height, p.wheelbase, 1.0);
    checks.push(match adhesion {
        Ok(t) => Check::new(
            Requirement::Adhesion,
            "nominal".into(),
            t,
            p.sf_adhesion,
            p.magnet_force,
        ),
        Err(_) => Check::invalid(
            Requirement::Adhesion,
            "nominal".into(),
            p.sf_adhesion,
            p.magnet_force,
        ),
    });

    let nominal = CornerLoadCase {
        f_2_1: 0.0,
        f_2_2: 0.0,
        weight,
    };
    let mut torque_checks = |label: String, case: &CornerLoadCase, f2: f64| {
        let moving = required_moving_torque(p.wheel_radius, case, p.friction_k, 1.0);
        checks.push(match moving {
            Ok(t) => Check::new(
                Requirement::MovingTorque,
                label.clone(),
                t,
                p.sf_torque,
                p.motor_torque,
            ),
            Err(_) => Check::invalid(
                Requirement::MovingTorque,
                label.clone(),
                p.sf_torque,
                p.motor_torque,
            ),
        });
        let steering = required_steering_torque(
            p.wheel_radius,
            p.inter_wheel_force,
            f2,
            case.weight,
            p.friction_k,
            1.0,
        );
        checks.push(match steering {
            Ok(t) => Check::new(
                Requirement::SteeringTorque,
                label,
                t,
                p.sf_torque,
                p.servo_torque,
            ),
            Err(_) => Check::invalid(
                Requirement::SteeringTorque,
                label,
                p.sf_torque,
                p.servo_torque,
            ),
        });
    };
    torque_checks("nominal".into(), &nominal, 0.0);
    for (i, case) in worst_cases.iter().enumerate() {
        torque_checks(format!("corner[{i}]"), case, case.f_2_1);
    }

    let pass = checks.iter().all(|c| c.pass);
    FeasibilityReport { checks, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Hand-evaluated moment balance: F2·lever = sf·P·h.
    #[test]
    fn adhesion_example() {
        let f = required_adhesion(9.81, 0.035, 0.11, 5.0).unwrap();
        assert_relative_eq!(f, 15.606818181818184, max_relative = 1e-12);
        assert_eq!(required_adhesion(0.0, 0.035, 0.11, 5.0).unwrap(), 0.0);
        assert_eq!(required_adhesion(9.81, 0.0, 0.11, 5.0).unwrap(), 0.0);
        assert!(required_adhesion(9.81, 0.035, 0.0, 5.0).is_err());
    }

    #[test]
    fn moving_torque_example() {
        let case = CornerLoadCase {
            f_2_1: 20.0,
            f_2_2: 20.0,
            weight: 9.81,
        };
        let m = required_moving_torque(0.03, &case, 0.6, 2.0).unwrap();
        assert_relative_eq!(m, 4.181, max_relative = 1e-12);
        assert!(m < kgcm_to_nm(100.0));
        let zero = CornerLoadCase {
            f_2_1: 0.0,
            f_2_2: 0.0,
            weight: 0.0,
        };
        assert_eq!(required_moving_torque(0.03, &zero, 0.6, 2.0).unwrap(), 0.0);
        assert_relative_eq!(
            required_moving_torque(0.03, &case, 0.6, 4.0).unwrap(),
            2.0 * m,
            max_relative = 1e-15
        );
        assert!(required_moving_torque(0.03, &case, 0.0, 2.0).is_err());
    }

    #[test]
    fn steering_torque_example() {
        let m = required_steering_torque(0.03, 5.0, 30.0, 9.81, 0.6, 2.0).unwrap();
        assert_relative_eq!(m, 4.281, max_relative = 1e-12);
        assert!(m > kgcm_to_nm(32.0), "this load case exceeds the servo");
        assert_eq!(
            required_steering_torque(0.03, 0.0, 0.0, 0.0, 0.6, 2.0).unwrap(),
            0.0
        );
        assert!(required_steering_torque(0.03, 5.0, 30.0, 9.81, -0.1, 2.0).is_err());
    }

    #[test]
    fn steering_torque_monotone() {
        let base = required_steering_torque(0.03, 5.0, 30.0, 9.81, 0.6, 2.0).unwrap();
        assert!(required_steering_torque(0.03, 5.1, 30.0, 9.81, 0.6, 2.0).unwrap() > base);
        assert!(required_steering_torque(0.03, 5.0, 30.1, 9.81, 0.6, 2.0).unwrap() > base);
        assert!(required_steering_torque(0.03, 5.0, 30.0, 9.91, 0.6, 2.0).unwrap() > base);
    }

    #[test]
    fn unit_conversion() {
        assert_relative_eq!(kgcm_to_nm(100.0), 9.81, max_relative = 1e-15);
        assert_relative_eq!(kgcm_to_nm(32.0), 3.1392, max_relative = 1e-15);
    }

    fn wall_pair(front_adhesion: f64) -> ContactSet {
        // Climbing a vertical wall (x = 0, free space x < 0) with gravity along -z.
        let n = Unit::new_normalize(-Vector3::x());
        let p = RobotParams::default();
        ContactSet {
            contacts: vec![
                Contact {
                    point: Point3::origin(),
                    adhesion: 1e6,
                    normal: n,
                },
                Contact {
                    point: Point3::new(0.0, 0.0, p.wheelbase),
                    adhesion: front_adhesion,
                    normal: n,
                },
            ],
            center_of_mass: Point3::new(-p.com_height, 0.0, 0.5 * p.wheelbase),
            weight: p.weight(),
            gravity: Some(Unit::new_normalize(-Vector3::z())),
        }
    }

    #[test]
    fn margin_reduces_to_moment_ratio() {
        let p = RobotParams::default();
        let theo = p.weight() * p.com_height / p.wheelbase;
        assert_relative_eq!(
            tip_over_margin(&wall_pair(5.0 * theo)).unwrap(),
            5.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            tip_over_margin(&wall_pair(theo)).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn margin_degenerate_inputs() {
        let mut set = wall_pair(10.0);
        set.contacts[1].point = set.contacts[0].point;
        assert!(tip_over_margin(&set).is_err());
        set.contacts.truncate(1);
        assert_eq!(tip_over_margin(&set).unwrap(), 0.0);
    }

    #[test]
    fn floor_with_gravity_pressing_down_cannot_tip() {
        let n = Unit::new_normalize(Vector3::z());
        let set = ContactSet {
            contacts: vec![
                Contact {
                    point: Point3::origin(),
                    adhesion: 1.0,
                    normal: n,
                },
                Contact {
                    point: Point3::new(0.11, 0.0, 0.0),
                    adhesion: 1.0,
                    normal: n,
                },
            ],
            center_of_mass: Point3::new(0.055, 0.0, 0.035),
            weight: 15.0,
            gravity: Some(Unit::new_normalize(-Vector3::z())),
        };
        assert_eq!(tip_over_margin(&set).unwrap(), f64::INFINITY);
        // Upside down on a ceiling the same robot tips.
        let hanging = ContactSet {
            gravity: Some(Unit::new_normalize(Vector3::z())),
            ..set
        };
        assert!(tip_over_margin(&hanging).unwrap().is_finite());
    }

    #[test]
    fn default_params_nominal_pass() {
        let report = actuator_feasibility(&RobotParams::default(), &[]);
        assert!(report.pass, "{report}");
        assert_eq!(report.checks.len(), 3);
        let adhesion = &report.checks[0];
        assert_relative_eq!(adhesion.required, 24.970909090909092, max_relative = 1e-12);
        assert_relative_eq!(report.checks[1].required, 1.5696, max_relative = 1e-12);
        assert_relative_eq!(report.checks[2].required, 1.8696, max_relative = 1e-12);
    }

    #[test]
    fn zero_motor_fails_moving_check() {
        let params = RobotParams {
            motor_torque: 0.0,
            ..RobotParams::default()
        };
        let report = actuator_feasibility(&params, &[]);
        assert!(!report.pass);
        let failed: Vec<_> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.requirement)
            .collect();
        assert_eq!(failed, vec![Requirement::MovingTorque]);
    }

    #[test]
    fn corner_cases_add_checks() {
        let p = RobotParams::default();
        let case = CornerLoadCase {
            f_2_1: 24.0,
            f_2_2: 24.0,
            weight: p.weight(),
        };
        let report = actuator_feasibility(&p, &[case]);
        assert_eq!(report.checks.len(), 5);
        assert!(report.to_string().contains("corner[0]"));
    }

    #[test]
    fn params_validation() {
        assert!(RobotParams::default().validate().is_ok());
        assert!(RobotParams {
            friction_k: 2.5,
            ..RobotParams::default()
        }
        .validate()
        .is_err());
        assert!(RobotParams {
            sf_torque: 0.5,
            ..RobotParams::default()
        }
        .validate()
        .is_err());
    }
}
