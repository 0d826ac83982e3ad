//! Power-based instantaneous fuel-rate model and trajectory fuel
//! integration.
//!
//! The fuel rate is a quadratic in wheel power, floored at the idle rate
//! whenever power is negative. Power follows from the resistance force
//! (aerodynamic + rolling + grade) plus the inertial term, with speeds in
//! km/h as the underlying model convention requires; see [`crate::units`]
//! for the boundary convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicle-specific fuel-rate coefficients and physical constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelParams {
    /// Idle fuel rate, L/s.
    pub alpha0: f64,
    /// Linear power coefficient, L/(kW·s).
    pub alpha1: f64,
    /// Quadratic power coefficient, L/(kW²·s).
    pub alpha2: f64,
    /// Vehicle mass, kg.
    pub mass_kg: f64,
    /// Air density, kg/m³ (1.2256 at sea level, 15 °C).
    pub air_density: f64,
    /// Aerodynamic drag coefficient.
    pub drag_coeff: f64,
    /// Altitude correction factor.
    pub altitude_correction: f64,
    /// Frontal area, m².
    pub frontal_area_m2: f64,
    /// Rolling resistance surface coefficient.
    pub rolling_coeff: f64,
    /// Rolling resistance speed coefficient (per km/h).
    pub rolling_c1: f64,
    /// Rolling resistance constant term.
    pub rolling_c2: f64,
    /// Driveline efficiency, (0, 1].
    pub eta_d: f64,
    /// Gear ratio, held constant over a trajectory.
    pub gear_ratio_xi: f64,
}

impl FuelParams {
    /// Calibrated light-duty sedan parameter set; the default for every
    /// shipped scenario.
    pub fn light_duty() -> Self {
        FuelParams {
            alpha0: 0.000341,
            alpha1: 0.0000583,
            alpha2: 0.000001,
            mass_kg: 1469.0,
            air_density: 1.2256,
            drag_coeff: 0.30,
            altitude_correction: 1.0,
            frontal_area_m2: 2.28,
            rolling_coeff: 1.75,
            rolling_c1: 0.0328,
            rolling_c2: 4.575,
            eta_d: 0.92,
            gear_ratio_xi: 1.0,
        }
    }

    /// Looks up a named preset. `"ldv"` is the calibrated light-duty sedan.
    pub fn preset(key: &str) -> Result<Self> {
        match key {
            "ldv" => Ok(Self::light_duty()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha0 <= 0.0 {
            return Err(Error::Config("fuel: alpha0 must be > 0".into()));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::Config("fuel: alpha1, alpha2 must be >= 0".into()));
        }
        if !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return Err(Error::Config("fuel: eta_d must be in (0, 1]".into()));
        }
        if self.mass_kg <= 0.0 || self.frontal_area_m2 <= 0.0 {
            return Err(Error::Config(
                "fuel: mass_kg and frontal_area_m2 must be > 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for FuelParams {
    fn default() -> Self {
        Self::light_duty()
    }
}

/// One instant of a trajectory as the fuel model sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicSample {
    /// Speed, km/h (>= 0).
    pub speed_kmh: f64,
    /// Acceleration, m/s².
    pub accel_ms2: f64,
    /// Road grade as a fraction (0 on all shipped scenarios).
    pub grade: f64,
}

impl KinematicSample {
    pub fn new(speed_kmh: f64, accel_ms2: f64) -> Self {
        KinematicSample {
            speed_kmh,
            accel_ms2,
            grade: 0.0,
        }
    }
}

const GRAVITY: f64 = 9.8066;

/// Resistance force on the vehicle, Newtons. Speed enters in km/h.
pub fn resistance(sample: &KinematicSample, params: &FuelParams) -> f64 {
    let v = sample.speed_kmh;
    let aero = params.air_density / 25.92
        * params.drag_coeff
        * params.altitude_correction
        * params.frontal_area_m2
        * v
        * v;
    let rolling = GRAVITY
        * params.mass_kg
        * (params.rolling_coeff / 1000.0)
        * (params.rolling_c1 * v + params.rolling_c2);
    let grade = GRAVITY * params.mass_kg * sample.grade;
    aero + rolling + grade
}

/// Instantaneous power at the wheels, kW. Negative under strong enough
/// deceleration; zero whenever the vehicle is stopped.
pub fn power(sample: &KinematicSample, params: &FuelParams) -> f64 {
    let inertial = params.mass_kg
        * sample.accel_ms2
        * (1.04 + 0.0025 * params.gear_ratio_xi * params.gear_ratio_xi);
    (resistance(sample, params) + inertial) * sample.speed_kmh / (3600.0 * params.eta_d)
}

/// Instantaneous fuel rate, L/s. Quadratic in power for P >= 0, idle rate
/// otherwise; never below `alpha0`.
pub fn fuel_rate(sample: &KinematicSample, params: &FuelParams) -> f64 {
    let p = power(sample, params);
    if p >= 0.0 {
        params.alpha0 + params.alpha1 * p + params.alpha2 * p * p
    } else {
        params.alpha0
    }
}

/// A trajectory sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    /// Sample spacing, s (> 0).
    pub dt_s: f64,
    pub samples: Vec<KinematicSample>,
}

impl SampledTrajectory {
    pub fn new(dt_s: f64, samples: Vec<KinematicSample>) -> Self {
        SampledTrajectory { dt_s, samples }
    }

    pub fn duration_s(&self) -> f64 {
        self.dt_s * (self.samples.len().saturating_sub(1)) as f64
    }
}

/// Total fuel over a sampled trajectory, litres, by the trapezoidal rule at
/// the trajectory's own timestep. A single sample integrates to zero; an
/// empty trajectory is rejected.
pub fn integrate_fuel(profile: &SampledTrajectory, params: &FuelParams) -> Result<f64> {
    if profile.samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if !(profile.dt_s > 0.0) {
        return Err(Error::Config("integrate_fuel: dt must be > 0".into()));
    }
    let mut total = 0.0;
    let mut prev = fuel_rate(&profile.samples[0], params);
    for s in &profile.samples[1..] {
        let cur = fuel_rate(s, params);
        total += 0.5 * (prev + cur) * profile.dt_s;
        prev = cur;
    }
    Ok(total)
}
