//! Single-device thermal dynamics.
//!
//! A cooling TCL relaxes toward the ambient temperature while OFF and toward
//! `theta_amb - P*R` while ON, with time constant `C*R`. Both branches are
//! linear, so a step is advanced with the exact exponential solution rather
//! than an explicit scheme. Additive Gaussian noise enters Euler–Maruyama style.
//!
//! Units: `C` in kWh/°C and `R` in °C/kW, so `C*R` is in hours. Time is in
//! minutes everywhere else in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

const MINUTES_PER_HOUR: f64 = 60.0;

/// Per-device physical constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclParams<F> {
    /// Thermal capacitance, kWh/°C.
    pub c: F,
    /// Thermal resistance, °C/kW.
    pub r: F,
    /// Cooling power while ON, kW.
    pub p: F,
    /// Ratio of cooling power to grid power.
    pub eta: F,
    /// Ambient temperature, °C.
    pub theta_amb: F,
    /// Temperature noise intensity, °C/min^0.5.
    pub noise_sigma: F,
}

impl<F: Scalar> TclParams<F> {
    pub fn validate(&self) -> Result<()> {
        let positive = [("C", self.c), ("R", self.r), ("P", self.p), ("eta", self.eta)];
        for (name, v) in positive {
            if !(v > F::zero() && v.is_finite()) {
                return Err(Error::validation(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !self.theta_amb.is_finite() {
            return Err(Error::validation("theta_amb", "must be finite"));
        }
        if !(self.noise_sigma >= F::zero() && self.noise_sigma.is_finite()) {
            return Err(Error::validation("noise_sigma", "must be non-negative"));
        }
        Ok(())
    }

    /// `C*R` expressed in minutes.
    #[inline]
    pub fn time_constant(&self) -> F {
        F::lit(MINUTES_PER_HOUR) * self.c * self.r
    }

    /// Temperature the device relaxes toward in the given mode.
    #[inline]
    pub fn fixed_point(&self, mode: Mode) -> F {
        match mode {
            Mode::Off => self.theta_amb,
            Mode::On => self.theta_amb - self.p * self.r,
        }
    }

    /// True when the band admits a duty cycle strictly between 0 and 1.
    pub fn supports_band(&self, band: &Deadband<F>) -> bool {
        self.fixed_point(Mode::On) < band.lower && band.upper < self.theta_amb
    }

    pub fn check_band(&self, band: &Deadband<F>) -> Result<()> {
        if self.supports_band(band) {
            Ok(())
        } else {
            Err(Error::validation(
                "deadband",
                format!(
                    "band [{}, {}] needs theta_amb - P*R ({}) < lower and upper < theta_amb ({})",
                    band.lower,
                    band.upper,
                    self.fixed_point(Mode::On),
                    self.theta_amb
                ),
            ))
        }
    }
}

/// Hysteresis limits `[lower, upper]` of a thermostat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deadband<F> {
    pub lower: F,
    pub upper: F,
}

impl<F: Scalar> Deadband<F> {
    pub fn new(lower: F, upper: F) -> Result<Self> {
        if lower < upper && lower.is_finite() && upper.is_finite() {
            Ok(Self { lower, upper })
        } else {
            Err(Error::validation("deadband", format!("need lower < upper, got [{lower}, {upper}]")))
        }
    }

    /// Band of the given width centred on `setpoint`.
    pub fn around(setpoint: F, width: F) -> Result<Self> {
        let half = width / F::lit(2.0);
        Self::new(setpoint - half, setpoint + half)
    }

    #[inline]
    pub fn width(&self) -> F {
        self.upper - self.lower
    }

    #[inline]
    pub fn setpoint(&self) -> F {
        (self.lower + self.upper) / F::lit(2.0)
    }

    #[inline]
    pub fn shifted(&self, delta: F) -> Self {
        Self { lower: self.lower + delta, upper: self.upper + delta }
    }

    #[inline]
    pub fn contains(&self, theta: F) -> bool {
        theta >= self.lower && theta <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Off,
    On,
}

impl Mode {
    #[inline]
    pub fn is_on(self) -> bool {
        self == Mode::On
    }

    #[inline]
    pub fn toggled(self) -> Self {
        match self {
            Mode::Off => Mode::On,
            Mode::On => Mode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclState<F> {
    pub theta: F,
    pub mode: Mode,
}

impl<F> TclState<F> {
    pub fn new(theta: F, mode: Mode) -> Self {
        Self { theta, mode }
    }
}

/// Exact solution of the branch ODE over `dt` minutes. No switching.
#[inline]
pub fn drift<F: Scalar>(theta: F, mode: Mode, params: &TclParams<F>, dt: F) -> F {
    let target = params.fixed_point(mode);
    target + (theta - target) * (-dt / params.time_constant()).exp()
}

/// Instantaneous temperature rate, °C/min.
#[inline]
pub fn rate<F: Scalar>(theta: F, mode: Mode, params: &TclParams<F>) -> F {
    -(theta - params.fixed_point(mode)) / params.time_constant()
}

/// Thermostat rule: OFF→ON at or above `upper`, ON→OFF at or below `lower`.
#[inline]
pub fn hysteresis<F: Scalar>(theta: F, mode: Mode, band: &Deadband<F>) -> Mode {
    match mode {
        Mode::Off if theta >= band.upper => Mode::On,
        Mode::On if theta <= band.lower => Mode::Off,
        m => m,
    }
}

/// One baseline update: exact drift, additive noise, then hysteresis.
///
/// `noise` is a standard normal sample.
pub fn step<F: Scalar>(
    state: TclState<F>,
    params: &TclParams<F>,
    band: &Deadband<F>,
    dt: F,
    noise: F,
) -> TclState<F> {
    let theta = drift(state.theta, state.mode, params, dt) + params.noise_sigma * dt.sqrt() * noise;
    TclState { theta, mode: hysteresis(theta, state.mode, band) }
}

/// Grid power drawn in kW.
#[inline]
pub fn grid_power<F: Scalar>(state: &TclState<F>, params: &TclParams<F>) -> F {
    if state.mode.is_on() {
        params.p / params.eta
    } else {
        F::zero()
    }
}

/// Minutes needed to travel from `from` to `to` along one branch.
///
/// Infinite (or NaN) when `to` is not reachable on that branch.
pub fn travel_time<F: Scalar>(params: &TclParams<F>, mode: Mode, from: F, to: F) -> F {
    let target = params.fixed_point(mode);
    params.time_constant() * ((from - target) / (to - target)).ln()
}

/// Noise-free cycle characteristics in minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleTimes<F> {
    pub t_off: F,
    pub t_on: F,
    pub period: F,
    pub duty: F,
}

/// Closed-form OFF/ON leg durations. Non-finite when the band is infeasible.
pub fn cycle_times<F: Scalar>(params: &TclParams<F>, band: &Deadband<F>) -> CycleTimes<F> {
    let t_off = travel_time(params, Mode::Off, band.lower, band.upper);
    let t_on = travel_time(params, Mode::On, band.upper, band.lower);
    let period = t_on + t_off;
    CycleTimes { t_off, t_on, period, duty: t_on / period }
}

/// Largest temperature change one step of `dt` can produce inside `band`.
pub fn max_step_drift<F: Scalar>(params: &TclParams<F>, band: &Deadband<F>, dt: F) -> F {
    let off = rate(band.lower, Mode::Off, params).abs();
    let on = rate(band.upper, Mode::On, params).abs();
    off.max(on) * dt
}

/// Drift with the per-step constants precomputed for a fixed `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator<F> {
    decay: F,
    off_target: F,
    on_target: F,
    noise_scale: F,
}

impl<F: Scalar> Propagator<F> {
    pub fn new(params: &TclParams<F>, dt: F) -> Self {
        Self {
            decay: (-dt / params.time_constant()).exp(),
            off_target: params.fixed_point(Mode::Off),
            on_target: params.fixed_point(Mode::On),
            noise_scale: params.noise_sigma * dt.sqrt(),
        }
    }

    #[inline]
    pub fn is_noiseless(&self) -> bool {
        self.noise_scale == F::zero()
    }

    #[inline]
    pub fn advance(&self, theta: F, mode: Mode, noise: F) -> F {
        let target = if mode.is_on() { self.on_target } else { self.off_target };
        target + (theta - target) * self.decay + self.noise_scale * noise
    }
}
