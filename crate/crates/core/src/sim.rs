//! Synthetic counterfactual rear-end simulator.
//!
//! A lead vehicle (LV) brakes at a constant rate from `t = 0` until it stops.
//! The following vehicle (FV) holds its speed until the driver looks back at
//! the road: the glance anchor is the first instant where closing speed over
//! gap reaches 0.2 s⁻¹, and braking begins `oeoff` seconds later. Driver
//! deceleration ramps at a fixed jerk to the cell's maximum. The countermeasure
//! run adds an automated emergency brake that latches on once time-to-collision
//! drops below its threshold; the applied deceleration is the larger of the two
//! commands.
//!
//! All state updates are compositions of monotone floating point operations, so
//! a pointwise larger deceleration schedule never yields a faster or closer FV.
//! That is what makes the monotone deductions in [`crate::assr`] exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::PrototypeEvent;

const MPS_TO_KMH: f64 = 3.6;

/// Automated emergency braking law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AebParams {
    pub enabled: bool,
    /// Time-to-collision trigger, seconds.
    pub ttc_threshold: f64,
    /// Commanded deceleration magnitude, m/s².
    pub max_decel: f64,
    /// Ramp rate, m/s³.
    pub jerk: f64,
}

impl Default for AebParams {
    fn default() -> Self {
        Self {
            enabled: true,
            ttc_threshold: 0.8,
            max_decel: 10.0,
            jerk: 20.0,
        }
    }
}

/// Logistic injury risk over Δv (km/h), `risk = 1 / (1 + exp(-(beta0 + beta1 Δv)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjuryRiskParams {
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for InjuryRiskParams {
    fn default() -> Self {
        Self {
            beta0: -6.0,
            beta1: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Integration step, seconds.
    pub dt: f64,
    /// Inverse time-to-collision at which the off-road glance is anchored, 1/s.
    pub anchor_inverse_ttc: f64,
    /// Driver deceleration ramp rate, m/s³.
    pub driver_jerk: f64,
    /// Hard stop for the integrator, seconds.
    pub max_time: f64,
    pub aeb: AebParams,
    pub injury: InjuryRiskParams,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.005,
            anchor_inverse_ttc: 0.2,
            driver_jerk: 20.0,
            max_time: 120.0,
            aeb: AebParams::default(),
            injury: InjuryRiskParams::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("anchor_inverse_ttc", self.anchor_inverse_ttc),
            ("driver_jerk", self.driver_jerk),
            ("max_time", self.max_time),
            ("aeb.ttc_threshold", self.aeb.ttc_threshold),
            ("aeb.max_decel", self.aeb.max_decel),
            ("aeb.jerk", self.aeb.jerk),
            ("injury.beta1", self.injury.beta1),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.injury.beta0.is_finite() {
            return Err(Error::Config("injury.beta0 must be finite".into()));
        }
        Ok(())
    }
}

/// Result of one simulator invocation (or of an inference standing in for one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    pub crashed: bool,
    /// Relative speed at contact, km/h. Zero when no crash occurred.
    pub impact_speed: f64,
    /// 1 when the simulator actually ran, 0 when the outcome was inferred.
    pub sim_invocations: u32,
}

impl SimOutcome {
    pub fn no_crash() -> Self {
        Self {
            crashed: false,
            impact_speed: 0.0,
            sim_invocations: 1,
        }
    }

    pub fn crash(impact_speed: f64) -> Self {
        Self {
            crashed: impact_speed > 0.0,
            impact_speed,
            sim_invocations: 1,
        }
    }

    pub fn inferred(mut self) -> Self {
        self.sim_invocations = 0;
        self
    }
}

/// Target characteristic of a baseline crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    SpeedReduction,
    CrashAvoidance,
    InjuryRiskReduction,
}

impl Target {
    pub const ALL: [Target; 3] = [
        Target::SpeedReduction,
        Target::CrashAvoidance,
        Target::InjuryRiskReduction,
    ];

    pub fn index(self) -> usize {
        match self {
            Target::SpeedReduction => 0,
            Target::CrashAvoidance => 1,
            Target::InjuryRiskReduction => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::SpeedReduction => "speed_reduction",
            Target::CrashAvoidance => "crash_avoidance",
            Target::InjuryRiskReduction => "injury_risk_reduction",
        }
    }

    /// Outcome is 0/1.
    pub fn is_binary(self) -> bool {
        self == Target::CrashAvoidance
    }

    pub fn value(self, triple: &OutcomeTriple) -> f64 {
        match self {
            Target::SpeedReduction => triple.impact_speed_reduction,
            Target::CrashAvoidance => triple.crash_avoided,
            Target::InjuryRiskReduction => triple.injury_risk_reduction,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speed_reduction" => Ok(Target::SpeedReduction),
            "crash_avoidance" => Ok(Target::CrashAvoidance),
            "injury_risk_reduction" => Ok(Target::InjuryRiskReduction),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Countermeasure effect for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeTriple {
    /// km/h
    pub impact_speed_reduction: f64,
    pub injury_risk_reduction: f64,
    /// 1.0 when the baseline crash was avoided with the countermeasure.
    pub crash_avoided: f64,
}

impl OutcomeTriple {
    pub fn from_speeds(base_speed: f64, cm_speed: f64, injury: &InjuryRiskParams) -> Self {
        Self {
            impact_speed_reduction: base_speed - cm_speed,
            injury_risk_reduction: injury_risk(base_speed, injury) - injury_risk(cm_speed, injury),
            crash_avoided: if base_speed > 0.0 && cm_speed <= 0.0 {
                1.0
            } else {
                0.0
            },
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [
            self.impact_speed_reduction,
            self.crash_avoided,
            self.injury_risk_reduction,
        ]
    }
}

/// MAIS2+-style logistic risk with Δv taken as half the impact speed.
pub fn injury_risk(impact_speed: f64, params: &InjuryRiskParams) -> f64 {
    if impact_speed <= 0.0 {
        return 0.0;
    }
    let delta_v = impact_speed / 2.0;
    1.0 / (1.0 + (-(params.beta0 + params.beta1 * delta_v)).exp())
}

pub fn simulate_baseline(
    event: &PrototypeEvent,
    oeoff: f64,
    decel: f64,
    params: &SimParams,
) -> Result<SimOutcome> {
    integrate(event, oeoff, decel, params, None)
}

/// Same scenario with the emergency brake active. When the brake is disabled
/// in `params` this is exactly [`simulate_baseline`].
pub fn simulate_countermeasure(
    event: &PrototypeEvent,
    oeoff: f64,
    decel: f64,
    params: &SimParams,
) -> Result<SimOutcome> {
    let aeb = params.aeb.enabled.then_some(&params.aeb);
    integrate(event, oeoff, decel, params, aeb)
}

#[inline]
fn ramp(steps_since_onset: u64, jerk: f64, cap: f64, dt: f64) -> f64 {
    (jerk * ((steps_since_onset as f64 + 0.5) * dt)).min(cap)
}

fn integrate(
    event: &PrototypeEvent,
    oeoff: f64,
    decel: f64,
    params: &SimParams,
    aeb: Option<&AebParams>,
) -> Result<SimOutcome> {
    if !(oeoff.is_finite() && oeoff >= 0.0 && decel.is_finite() && decel > 0.0) {
        return Err(Error::SimulationFault(format!(
            "invalid cell parameters oeoff={oeoff} decel={decel}"
        )));
    }
    let dt = params.dt;
    let delay_steps = (oeoff / dt).round() as u64;
    let max_steps = (params.max_time / dt).ceil() as u64;
    let lv_decel = event.lv_decel;

    // Positions: FV front bumper at 0, LV rear bumper at gap0.
    let (mut x_lv, mut v_lv) = (event.gap0, event.lv_speed0);
    let (mut x_fv, mut v_fv) = (0.0_f64, event.fv_speed0);
    let mut anchor: Option<u64> = None;
    let mut aeb_onset: Option<u64> = None;

    for n in 0..max_steps {
        let gap = x_lv - x_fv;
        let closing = v_fv - v_lv;
        if anchor.is_none() && closing > 0.0 && closing >= params.anchor_inverse_ttc * gap {
            anchor = Some(n);
        }
        if let Some(a) = aeb {
            if aeb_onset.is_none() && closing > 0.0 && gap <= a.ttc_threshold * closing {
                aeb_onset = Some(n);
            }
        }

        let driver = match anchor {
            Some(na) if n >= na + delay_steps => {
                ramp(n - na - delay_steps, params.driver_jerk, decel, dt)
            }
            _ => 0.0,
        };
        let automatic = match (aeb, aeb_onset) {
            (Some(a), Some(onset)) => ramp(n - onset, a.jerk, a.max_decel, dt),
            _ => 0.0,
        };
        let command = driver.max(automatic);

        let v_lv_next = (v_lv - lv_decel * dt).max(0.0);
        let v_fv_next = (v_fv - command * dt).max(0.0);
        let x_lv_next = x_lv + 0.5 * (v_lv + v_lv_next) * dt;
        let x_fv_next = x_fv + 0.5 * (v_fv + v_fv_next) * dt;
        let gap_next = x_lv_next - x_fv_next;

        if !gap_next.is_finite() || !v_fv_next.is_finite() {
            return Err(Error::SimulationFault(format!(
                "non-finite state at step {n} (event {})",
                event.id
            )));
        }

        if gap_next <= 0.0 {
            // Contact inside this step; interpolate to the zero crossing.
            let theta = gap / (gap - gap_next);
            let v_f = v_fv + theta * (v_fv_next - v_fv);
            let v_l = v_lv + theta * (v_lv_next - v_lv);
            let speed = ((v_f - v_l) * MPS_TO_KMH).max(0.0);
            return Ok(if speed > 0.0 {
                SimOutcome::crash(speed)
            } else {
                SimOutcome::no_crash()
            });
        }
        if v_fv_next == 0.0 {
            return Ok(SimOutcome::no_crash());
        }

        x_lv = x_lv_next;
        v_lv = v_lv_next;
        x_fv = x_fv_next;
        v_fv = v_fv_next;
    }
    Err(Error::SimulationFault(format!(
        "event {} did not resolve within {} s",
        event.id, params.max_time
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(fv: f64, lv: f64, gap: f64, lv_decel: f64) -> PrototypeEvent {
        PrototypeEvent {
            id: 0,
            fv_speed0: fv,
            lv_speed0: lv,
            gap0: gap,
            lv_decel,
        }
    }

    #[test]
    fn no_braking_matches_closed_form() {
        // gap(t) = 30 - 3t², contact at t = √10 with closing speed 6√10 m/s.
        let e = event(30.0, 30.0, 30.0, 6.0);
        let out = simulate_baseline(&e, 6.6, 3.75, &SimParams::default()).unwrap();
        let expected = 6.0 * 10f64.sqrt() * 3.6;
        assert!(out.crashed);
        assert!((out.impact_speed - expected).abs() < 0.5, "{}", out.impact_speed);
        assert_eq!(out.sim_invocations, 1);
    }

    #[test]
    fn hard_early_braking_avoids() {
        let e = event(25.0, 25.0, 45.0, 3.0);
        let out = simulate_baseline(&e, 0.0, 10.75, &SimParams::default()).unwrap();
        assert!(!out.crashed);
        assert_eq!(out.impact_speed, 0.0);
    }

    #[test]
    fn disabled_aeb_is_identity() {
        let mut p = SimParams::default();
        p.aeb.enabled = false;
        let e = event(28.0, 28.0, 25.0, 7.0);
        for &(o, d) in &[(0.0, 3.75), (1.0, 5.0), (3.0, 9.0), (6.6, 3.75)] {
            let b = simulate_baseline(&e, o, d, &p).unwrap();
            let c = simulate_countermeasure(&e, o, d, &p).unwrap();
            assert_eq!(b, c);
        }
    }

    #[test]
    fn countermeasure_never_worse() {
        let p = SimParams::default();
        let e = event(31.0, 31.0, 20.0, 7.5);
        for oi in 0..=66 {
            let o = oi as f64 / 10.0;
            for &d in &[3.75, 6.25, 9.75] {
                let b = simulate_baseline(&e, o, d, &p).unwrap();
                let c = simulate_countermeasure(&e, o, d, &p).unwrap();
                assert!(c.impact_speed <= b.impact_speed);
                if !b.crashed {
                    assert!(!c.crashed);
                }
            }
        }
    }

    #[test]
    fn injury_risk_values() {
        let p = InjuryRiskParams::default();
        assert_eq!(injury_risk(0.0, &p), 0.0);
        assert!((injury_risk(120.0, &p) - 0.5).abs() < 1e-15);
        let mut last = 0.0;
        for s in 0..200 {
            let r = injury_risk(s as f64, &p);
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn non_finite_inputs_fault() {
        let e = event(30.0, 30.0, 30.0, 6.0);
        assert!(matches!(
            simulate_baseline(&e, f64::NAN, 4.0, &SimParams::default()),
            Err(Error::SimulationFault(_))
        ));
    }
}
