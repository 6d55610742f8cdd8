//! Embedded controller programs and the one-way broadcast that installs them.
//!
//! Every device runs a small state machine ([`ControllerState`]) that sees
//! only its own temperature, mode, parameters and the clock. Broadcast
//! commands replace the device's program; once the program finishes the
//! device drops back to plain thermostat operation ([`Program::Baseline`]).
//!
//! Protocols:
//! - `UnsafeHold`: force every device into one mode for a fixed time, then
//!   release. Produces cold load pickup.
//! - `UnsafeShift`: move the deadband at once. Strands devices outside the
//!   new band and synchronises them.
//! - `Sp1`: switch the pulse-side devices over, remember the temperature,
//!   and switch back autonomously when the saved temperature is reached again
//!   on the same branch one full cycle later.
//! - `Sp2`: shift the band through intermediate transition points so no
//!   device is stranded.
//! - `Sp3`: short exact pulse of fixed width, followed by timer-delayed
//!   return of the devices that were not switched.
//! - `Hybrid`: a seeded fraction of devices runs `Sp1` (or `Sp3`), the
//!   rest `Sp2`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::DeviceTrace;
use crate::error::{Error, Result};
use crate::model::{hysteresis, max_step_drift, Deadband, Mode, TclParams, TclState};
use crate::num::Scalar;
use crate::population::Ensemble;
use crate::rng::{self, Purpose};

/// Sign of the power change a command asks for. `Down` reduces consumption
/// by switching ON devices OFF, `Up` is the mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    /// Mode the pulse switches devices into.
    #[inline]
    pub fn forced_mode(self) -> Mode {
        match self {
            Direction::Down => Mode::Off,
            Direction::Up => Mode::On,
        }
    }

    /// Mode of the devices the pulse acts on.
    #[inline]
    pub fn source_mode(self) -> Mode {
        self.forced_mode().toggled()
    }
}

/// What happens when an unsafe hold expires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldRelease {
    /// Each device returns to the mode it had when the hold started.
    #[default]
    Restore,
    /// Devices keep the held mode and thermostat switching simply resumes.
    Hysteresis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command<F> {
    UnsafeHold {
        target_mode: Mode,
        #[serde(rename = "hold_min")]
        hold: F,
        #[serde(default)]
        release: HoldRelease,
    },
    UnsafeShift {
        #[serde(rename = "delta_C")]
        delta: F,
    },
    Sp1 {
        direction: Direction,
    },
    Sp2 {
        #[serde(rename = "delta_C")]
        delta: F,
    },
    Sp3 {
        direction: Direction,
        #[serde(rename = "width_min")]
        width: F,
    },
    Hybrid {
        p: F,
        #[serde(rename = "delta_C")]
        delta: F,
        #[serde(rename = "sp3_width_min", default, skip_serializing_if = "Option::is_none")]
        sp3_width: Option<F>,
    },
}

impl<F: Scalar> Command<F> {
    pub fn validate(&self, tolerance_delta_max: F) -> Result<()> {
        let check_delta = |delta: F| {
            if !delta.is_finite() || delta.abs() >= tolerance_delta_max {
                Err(Error::validation(
                    "delta_C",
                    format!("|{delta}| must be below the customer tolerance {tolerance_delta_max}"),
                ))
            } else {
                Ok(())
            }
        };
        let positive = |field: &str, v: F| {
            if v > F::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be positive, got {v}")))
            }
        };
        match *self {
            Command::UnsafeHold { hold, .. } => positive("hold_min", hold),
            Command::UnsafeShift { delta } | Command::Sp2 { delta } => check_delta(delta),
            Command::Sp1 { .. } => Ok(()),
            Command::Sp3 { width, .. } => positive("width_min", width),
            Command::Hybrid { p, delta, sp3_width } => {
                if !(p >= F::zero() && p <= F::one()) {
                    return Err(Error::validation("p", format!("must lie in [0, 1], got {p}")));
                }
                if delta == F::zero() {
                    return Err(Error::validation("delta_C", "hybrid needs a non-zero shift"));
                }
                check_delta(delta)?;
                sp3_width.map_or(Ok(()), |w| positive("sp3_width_min", w))
            }
        }
    }

    /// Direction of the power change the command produces first.
    pub fn power_direction(&self) -> Direction {
        let by_shift = |delta: F| if delta > F::zero() { Direction::Down } else { Direction::Up };
        match *self {
            Command::UnsafeHold { target_mode: Mode::Off, .. } => Direction::Down,
            Command::UnsafeHold { target_mode: Mode::On, .. } => Direction::Up,
            Command::UnsafeShift { delta } | Command::Sp2 { delta } => by_shift(delta),
            Command::Hybrid { delta, .. } => by_shift(delta),
            Command::Sp1 { direction } | Command::Sp3 { direction, .. } => direction,
        }
    }

    /// Length of the commanded pulse, for commands that have one.
    pub fn duration(&self) -> Option<F> {
        match *self {
            Command::UnsafeHold { hold, .. } => Some(hold),
            Command::Sp3 { width, .. } => Some(width),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Command::UnsafeHold { .. } => "unsafe_hold",
            Command::UnsafeShift { .. } => "unsafe_shift",
            Command::Sp1 { .. } => "sp1",
            Command::Sp2 { .. } => "sp2",
            Command::Sp3 { .. } => "sp3",
            Command::Hybrid { .. } => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sp1Phase {
    /// Installed; acts on the next step.
    Start,
    /// Switched by the broadcast, finishing the leg it was pushed onto.
    Forced,
    /// Completing the natural opposite leg.
    NormalCycle,
    /// Back on the forced branch; waits for the saved temperature.
    Armed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sp3Phase<F> {
    Start,
    /// Switched at install; switches back when the pulse ends.
    Switched,
    /// Not switched at install. Arms a timer on reaching the saved limit and
    /// switches when it expires.
    Waiting { deadline: Option<F> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Program<F> {
    Baseline,
    UnsafeHold { target: Mode, hold: F, release: HoldRelease, restore: Option<Mode> },
    UnsafeShift { delta: F },
    Sp1 { direction: Direction, phase: Sp1Phase, saved_theta: F },
    Sp2 { delta: F },
    Sp3 { direction: Direction, width: F, saved_band: Deadband<F>, phase: Sp3Phase<F> },
}

impl<F: Scalar> Program<F> {
    fn from_command(cmd: &Command<F>) -> Self {
        match *cmd {
            Command::UnsafeHold { target_mode, hold, release } => {
                Program::UnsafeHold { target: target_mode, hold, release, restore: None }
            }
            Command::UnsafeShift { delta } => Program::UnsafeShift { delta },
            Command::Sp1 { direction } => {
                Program::Sp1 { direction, phase: Sp1Phase::Start, saved_theta: F::nan() }
            }
            Command::Sp2 { delta } => Program::Sp2 { delta },
            Command::Sp3 { direction, width } => Program::Sp3 {
                direction,
                width,
                saved_band: Deadband { lower: F::nan(), upper: F::nan() },
                phase: Sp3Phase::Start,
            },
            Command::Hybrid { .. } => unreachable!("hybrid commands are split at broadcast"),
        }
    }
}

/// Decision handed back to the device for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control<F> {
    /// When set, hysteresis is bypassed and the device takes this mode.
    pub override_mode: Option<Mode>,
    /// Band the thermostat applies when there is no override.
    pub band: Deadband<F>,
}

/// Per-device controller memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState<F> {
    pub active_band: Deadband<F>,
    pub program: Program<F>,
    /// Time the current program was installed (after any broadcast delay).
    pub installed_at: F,
}

impl<F: Scalar> ControllerState<F> {
    pub fn new(band: Deadband<F>) -> Self {
        Self { active_band: band, program: Program::Baseline, installed_at: F::neg_infinity() }
    }

    #[inline]
    pub fn is_idle(&self) -> bool {
        matches!(self.program, Program::Baseline)
    }

    fn install(&mut self, program: Program<F>, at: F) {
        self.program = program;
        self.installed_at = at;
    }

    fn finish(&mut self) {
        self.program = Program::Baseline;
    }

    /// Runs the program for the step ending at `t`.
    ///
    /// `state` carries the post-drift temperature and the mode the device
    /// held during the step. Reads nothing but its arguments.
    pub fn step(&mut self, state: TclState<F>, params: &TclParams<F>, t: F, dt: F) -> Control<F> {
        let half = dt / F::lit(2.0);
        let free = |band| Control { override_mode: None, band };
        let hold = |mode, band| Control { override_mode: Some(mode), band };

        if matches!(self.program, Program::Baseline) {
            return free(self.active_band);
        }
        // Broadcast delay: nothing happens until the command arrives.
        if t < self.installed_at + half {
            return free(self.active_band);
        }

        let TclState { theta, mode } = state;
        match self.program {
            Program::Baseline => free(self.active_band),

            Program::UnsafeHold { target, hold: width, release, restore } => {
                let restore = restore.unwrap_or(mode);
                if t + half >= self.installed_at + width {
                    self.finish();
                    match release {
                        HoldRelease::Restore => hold(restore, self.active_band),
                        HoldRelease::Hysteresis => free(self.active_band),
                    }
                } else {
                    self.program =
                        Program::UnsafeHold { target, hold: width, release, restore: Some(restore) };
                    hold(target, self.active_band)
                }
            }

            Program::UnsafeShift { delta } => {
                self.active_band = self.active_band.shifted(delta);
                self.finish();
                free(self.active_band)
            }

            Program::Sp1 { direction, phase, saved_theta } => {
                let band = self.active_band;
                let forced = direction.forced_mode();
                let source = direction.source_mode();
                match phase {
                    Sp1Phase::Start => {
                        if mode != source {
                            self.finish();
                            return free(band);
                        }
                        let eps = max_step_drift(params, &band, dt);
                        let saved = match direction {
                            Direction::Down => theta.max(band.lower + eps).min(band.upper),
                            Direction::Up => theta.min(band.upper - eps).max(band.lower),
                        };
                        self.program =
                            Program::Sp1 { direction, phase: Sp1Phase::Forced, saved_theta: saved };
                        hold(forced, band)
                    }
                    Sp1Phase::Forced => {
                        if hysteresis(theta, mode, &band) != mode {
                            self.program = Program::Sp1 {
                                direction,
                                phase: Sp1Phase::NormalCycle,
                                saved_theta,
                            };
                        }
                        free(band)
                    }
                    Sp1Phase::NormalCycle => {
                        if mode == source && hysteresis(theta, mode, &band) == forced {
                            self.program =
                                Program::Sp1 { direction, phase: Sp1Phase::Armed, saved_theta };
                        }
                        free(band)
                    }
                    Sp1Phase::Armed => {
                        let reached = match direction {
                            Direction::Down => theta >= saved_theta,
                            Direction::Up => theta <= saved_theta,
                        };
                        if reached {
                            self.finish();
                            hold(source, band)
                        } else {
                            free(band)
                        }
                    }
                }
            }

            Program::Sp2 { delta } => {
                let old = self.active_band;
                let transition = Deadband {
                    lower: old.lower.min(old.lower + delta),
                    upper: old.upper.max(old.upper + delta),
                };
                if hysteresis(theta, mode, &transition) != mode {
                    self.active_band = old.shifted(delta);
                    self.finish();
                    free(self.active_band)
                } else {
                    free(transition)
                }
            }

            Program::Sp3 { direction, width, saved_band, phase } => {
                let forced = direction.forced_mode();
                let source = direction.source_mode();
                let pulse_over = t + half >= self.installed_at + width;
                match phase {
                    Sp3Phase::Start => {
                        let saved_band = self.active_band;
                        if mode == source {
                            self.program = Program::Sp3 {
                                direction,
                                width,
                                saved_band,
                                phase: Sp3Phase::Switched,
                            };
                            hold(forced, saved_band)
                        } else {
                            self.program = Program::Sp3 {
                                direction,
                                width,
                                saved_band,
                                phase: Sp3Phase::Waiting { deadline: None },
                            };
                            // Arming may happen on this very step.
                            self.step(state, params, t, dt)
                        }
                    }
                    Sp3Phase::Switched => {
                        if pulse_over {
                            self.active_band = saved_band;
                            self.finish();
                            hold(source, saved_band)
                        } else {
                            hold(forced, saved_band)
                        }
                    }
                    Sp3Phase::Waiting { deadline } => {
                        let deadline = deadline.or_else(|| {
                            let reached = match direction {
                                Direction::Down => theta >= saved_band.upper,
                                Direction::Up => theta <= saved_band.lower,
                            };
                            reached.then_some(t + width)
                        });
                        match deadline {
                            Some(d) if pulse_over && t + half >= d => {
                                self.active_band = saved_band;
                                self.finish();
                                hold(source, saved_band)
                            }
                            _ => {
                                self.program = Program::Sp3 {
                                    direction,
                                    width,
                                    saved_band,
                                    phase: Sp3Phase::Waiting { deadline },
                                };
                                hold(mode, saved_band)
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Indices of the devices a hybrid command sends the fast (SP1/SP3) part
/// to: the first `floor(p * n)` of a seeded permutation. Depends only on
/// `(seed, ordinal, n)`, never on device state.
pub fn hybrid_selection<F: Scalar>(seed: u64, ordinal: u64, n: usize, p: F) -> Vec<bool> {
    let k = (p * F::from_usize_lossy(n)).floor().to_usize().unwrap_or(0).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Selection, ordinal));
    let mut selected = vec![false; n];
    for &i in &order[..k] {
        selected[i] = true;
    }
    selected
}

/// Installs `command` on every device at time `t`.
///
/// Devices act on it at their next step. Fails without touching the
/// ensemble if any device is still running an earlier program.
pub fn broadcast<F: Scalar>(ensemble: &mut Ensemble<F>, command: &Command<F>, t: F) -> Result<()> {
    if let Some(i) = ensemble.devices().iter().position(|d| !d.ctrl.is_idle()) {
        return Err(Error::ProtocolBusy { device: i });
    }
    let ordinal = ensemble.next_broadcast_ordinal();
    let n = ensemble.len();
    let seed = ensemble.seed();
    let latency = ensemble.latency_max();

    let programs: Vec<Program<F>> = match *command {
        Command::Hybrid { p, delta, sp3_width } => {
            let direction = if delta > F::zero() { Direction::Down } else { Direction::Up };
            let fast = Program::from_command(&match sp3_width {
                Some(width) => Command::Sp3 { direction, width },
                None => Command::Sp1 { direction },
            });
            let slow = Program::Sp2 { delta };
            hybrid_selection(seed, ordinal, n, p)
                .into_iter()
                .map(|s| if s { fast } else { slow })
                .collect()
        }
        ref c => vec![Program::from_command(c); n],
    };

    let mut delays = rng::stream(seed, Purpose::Latency, ordinal);
    for (device, program) in ensemble.devices_mut().iter_mut().zip(programs) {
        let delay = if latency > F::zero() {
            let u: f64 = delays.random();
            F::lit(u) * latency
        } else {
            F::zero()
        };
        device.ctrl.install(program, t + delay);
    }
    Ok(())
}

/// Number of mode changes of a probed device with `start <= t <= end`.
pub fn switch_count<F: Scalar>(trace: &DeviceTrace<F>, start: F, end: F) -> usize {
    trace.switches.iter().filter(|s| s.t >= start && s.t <= end).count()
}
