//! Post-processing of aggregate power traces.
//!
//! Power samples follow the simulator's convention: the value at `t` is the
//! consumption during the step that starts at `t`. An event recorded at `t`
//! therefore shows up from the following sample on.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Deadband, Mode, TclParams};
use crate::num::Scalar;
use crate::protocol::{Command, Direction};

/// Aggregate time series on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace<F> {
    /// minutes
    pub t: Vec<F>,
    /// MW
    pub power: Vec<F>,
    /// °C
    pub mean_theta: Vec<F>,
    pub frac_on: Vec<F>,
    pub events: Vec<(F, Command<F>)>,
}

impl<F: Scalar> PowerTrace<F> {
    pub fn new() -> Self {
        Self { t: vec![], power: vec![], mean_theta: vec![], frac_on: vec![], events: vec![] }
    }

    pub fn push(&mut self, t: F, power: F, mean_theta: F, frac_on: F) {
        self.t.push(t);
        self.power.push(power);
        self.mean_theta.push(mean_theta);
        self.frac_on.push(frac_on);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Spacing of the time grid (zero for traces with fewer than two samples).
    pub fn stride(&self) -> F {
        if self.t.len() < 2 {
            F::zero()
        } else {
            self.t[1] - self.t[0]
        }
    }

    pub fn start(&self) -> F {
        self.t.first().copied().unwrap_or_else(F::zero)
    }

    pub fn end(&self) -> F {
        self.t.last().copied().unwrap_or_else(F::zero)
    }

    /// Linearly interpolated power at `t`, clamped to the trace ends.
    pub fn power_at(&self, t: F) -> F {
        interpolate(&self.t, &self.power, t)
    }

    /// Every `k`-th sample, starting with the first. Events are kept.
    pub fn every(&self, k: usize) -> Self {
        let k = k.max(1);
        let pick = |v: &Vec<F>| v.iter().step_by(k).copied().collect();
        Self {
            t: pick(&self.t),
            power: pick(&self.power),
            mean_theta: pick(&self.mean_theta),
            frac_on: pick(&self.frac_on),
            events: self.events.clone(),
        }
    }

    /// Copy with `offset` added to every time stamp.
    pub fn shifted(&self, offset: F) -> Self {
        Self {
            t: self.t.iter().map(|&t| t + offset).collect(),
            events: self.events.iter().map(|&(t, c)| (t + offset, c)).collect(),
            ..self.clone()
        }
    }

    fn event_at(&self, t: F) -> Option<(usize, Command<F>)> {
        let tol = (self.stride() / F::lit(2.0)).max(F::lit(1e-9));
        self.events.iter().position(|(te, _)| (*te - t).abs() <= tol).map(|i| (i, self.events[i].1))
    }
}

impl<F: Scalar> Default for PowerTrace<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent<F> {
    pub t: F,
    pub to: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeSample<F> {
    pub t: F,
    pub theta: F,
    pub mode: Mode,
    pub active_band: Deadband<F>,
    pub idle: bool,
}

/// History of one probed device: samples on the output grid plus every
/// mode switch and program completion at full time resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTrace<F> {
    pub id: usize,
    pub params: TclParams<F>,
    pub customer_band: Deadband<F>,
    pub samples: Vec<ProbeSample<F>>,
    pub switches: Vec<SwitchEvent<F>>,
    /// Times at which a program finished and the device went back to
    /// plain thermostat operation.
    pub completions: Vec<F>,
}

impl<F: Scalar> DeviceTrace<F> {
    /// First program completion at or after `t`.
    pub fn completion_after(&self, t: F) -> Option<F> {
        self.completions.iter().copied().find(|&c| c >= t)
    }

    /// Mode held just before time `t`.
    pub fn mode_before(&self, t: F) -> Option<Mode> {
        self.samples.iter().take_while(|s| s.t < t).last().map(|s| s.mode)
    }
}

fn interpolate<F: Scalar>(ts: &[F], ys: &[F], t: F) -> F {
    if ts.is_empty() {
        return F::nan();
    }
    if t <= ts[0] {
        return ys[0];
    }
    let last = ts.len() - 1;
    if t >= ts[last] {
        return ys[last];
    }
    let i = ts.partition_point(|&x| x <= t) - 1;
    let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
    ys[i] + (ys[i + 1] - ys[i]) * w
}

/// Trapezoid integral of the sampled series over `[a, b]`, with linear
/// interpolation at the window ends. Units: value × minutes.
pub fn integrate<F: Scalar>(ts: &[F], ys: &[F], a: F, b: F) -> F {
    if b <= a || ts.is_empty() {
        return F::zero();
    }
    let half = F::lit(0.5);
    let mut prev_t = a;
    let mut prev_y = interpolate(ts, ys, a);
    let mut acc = F::zero();
    let first = ts.partition_point(|&x| x <= a);
    for i in first..ts.len() {
        if ts[i] >= b {
            break;
        }
        acc = acc + (ys[i] + prev_y) * half * (ts[i] - prev_t);
        prev_t = ts[i];
        prev_y = ys[i];
    }
    let yb = interpolate(ts, ys, b);
    acc + (yb + prev_y) * half * (b - prev_t)
}

/// Mean power over `[start, end]` minutes.
///
/// The window must end at or before the first event that lies after its
/// start; an event strictly inside the window is an error.
pub fn steady_power<F: Scalar>(trace: &PowerTrace<F>, start: F, end: F) -> Result<F> {
    if !(end > start) {
        return Err(Error::validation("window", "end must be after start"));
    }
    if trace.len() < 2 {
        return Err(Error::TraceTooShort("need at least two samples".into()));
    }
    if let Some(&(te, _)) = trace.events.iter().find(|(te, _)| *te > start && *te < end) {
        return Err(Error::WindowOverlapsEvent {
            start: start.to_f64_lossy(),
            end: end.to_f64_lossy(),
            event: te.to_f64_lossy(),
        });
    }
    Ok(integrate(&trace.t, &trace.power, start, end) / (end - start))
}

/// Thresholds for [`pulse_metrics`]. Times in minutes, fractions of the
/// pre-event steady power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig<F> {
    /// Length of the window before the event used for `p_steady`.
    pub steady_window: F,
    /// Length of the window at the end of the segment used for the final level.
    pub final_window: F,
    pub settle_tolerance: F,
    pub settle_hold: F,
    pub oscillation_threshold: F,
    /// Window searched for the pulse extremum when the command has no duration.
    pub untimed_horizon: F,
    /// Settle against the original steady power instead of the final level.
    pub settle_to_original: bool,
}

impl<F: Scalar> Default for MetricsConfig<F> {
    fn default() -> Self {
        Self {
            steady_window: F::lit(60.0),
            final_window: F::lit(60.0),
            settle_tolerance: F::lit(0.02),
            settle_hold: F::lit(30.0),
            oscillation_threshold: F::lit(0.05),
            untimed_horizon: F::lit(60.0),
            settle_to_original: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseMetrics<F> {
    /// MW, mean over the window before the event.
    pub p_steady: F,
    /// MW, mean over the last part of the event's segment.
    pub final_steady: F,
    /// MW, size of the commanded excursion (always ≥ 0).
    pub depth: F,
    /// minutes, duration spent beyond the half-depth level.
    pub width_at_half: F,
    /// MW. Largest power after the pulse for DOWN commands, smallest for UP.
    pub rebound_peak: F,
    /// minutes after the event; `None` when the trace ends before settling.
    pub settling_time: Option<F>,
    /// Sign changes between successive excursions beyond the oscillation
    /// threshold after the commanded pulse ends.
    pub oscillation_index: usize,
    /// MWh, integral of `power - p_steady` from the event to settling (or to
    /// the end of the segment when unsettled).
    pub net_energy_delta: F,
    /// MW, largest excursion against the pulse direction after it ends.
    pub counter_excursion: F,
}

impl<F: Scalar> PulseMetrics<F> {
    pub fn settled(&self) -> bool {
        self.settling_time.is_some()
    }
}

/// Counts sign changes between excursions of `deviation` beyond `threshold`.
pub fn count_sign_alternations<F: Scalar>(deviation: impl IntoIterator<Item = F>, threshold: F) -> usize {
    let mut last: Option<bool> = None;
    let mut changes = 0;
    for d in deviation {
        if d.abs() <= threshold {
            continue;
        }
        let positive = d > F::zero();
        if last.is_some_and(|l| l != positive) {
            changes += 1;
        }
        last = Some(positive);
    }
    changes
}

/// Shape metrics for the event recorded at `event_t`.
///
/// The event's segment runs to the next event or the end of the trace.
pub fn pulse_metrics<F: Scalar>(
    trace: &PowerTrace<F>,
    event_t: F,
    cfg: &MetricsConfig<F>,
) -> Result<PulseMetrics<F>> {
    let (idx, command) = trace.event_at(event_t).ok_or(Error::NoEventAt(event_t.to_f64_lossy()))?;
    let event_t = trace.events[idx].0;
    if trace.len() < 3 {
        return Err(Error::TraceTooShort("need at least three samples".into()));
    }
    let seg_end = trace.events.get(idx + 1).map_or(trace.end(), |e| e.0);
    let steady_start = (event_t - cfg.steady_window).max(trace.start());
    if !(steady_start < event_t) {
        return Err(Error::TraceTooShort("no samples before the event".into()));
    }
    let p_steady = steady_power(trace, steady_start, event_t)?;
    let final_start = (seg_end - cfg.final_window).max(event_t);
    let final_steady = if final_start < seg_end {
        integrate(&trace.t, &trace.power, final_start, seg_end) / (seg_end - final_start)
    } else {
        p_steady
    };

    let direction = command.power_direction();
    // Excursion in the commanded direction, positive when the pulse is "on".
    let signed = |p: F| match direction {
        Direction::Down => p_steady - p,
        Direction::Up => p - p_steady,
    };
    let commanded_end = event_t + command.duration().unwrap_or_else(F::zero);
    let pulse_end = match command.duration() {
        Some(d) => event_t + d,
        None => event_t + cfg.untimed_horizon,
    }
    .min(seg_end);

    let in_segment = |i: &usize| trace.t[*i] >= event_t && trace.t[*i] <= seg_end;
    let indices: Vec<usize> = (0..trace.len()).filter(in_segment).collect();

    let depth = indices
        .iter()
        .filter(|&&i| trace.t[i] <= pulse_end)
        .map(|&i| signed(trace.power[i]))
        .fold(F::zero(), F::max);

    // Width at half depth, with interpolated crossings.
    let half = depth / F::lit(2.0);
    let mut entered: Option<F> = None;
    let mut width = F::zero();
    for w in indices.windows(2) {
        let (i, j) = (w[0], w[1]);
        let (a, b) = (signed(trace.power[i]) - half, signed(trace.power[j]) - half);
        let cross = |a: F, b: F| trace.t[i] + (trace.t[j] - trace.t[i]) * a / (a - b);
        match entered {
            None if a <= F::zero() && b > F::zero() => entered = Some(cross(a, b)),
            None if a > F::zero() => entered = Some(trace.t[i]),
            Some(t_in) if b <= F::zero() => {
                width = cross(a, b) - t_in;
                entered = None;
                break;
            }
            _ => {}
        }
    }
    if let Some(t_in) = entered {
        width = seg_end - t_in;
    }
    let width_at_half = if depth > F::zero() { width } else { F::zero() };

    let after: Vec<usize> = indices.iter().copied().filter(|&i| trace.t[i] > commanded_end).collect();
    let rebound_peak = match direction {
        Direction::Down => after.iter().map(|&i| trace.power[i]).fold(F::neg_infinity(), F::max),
        Direction::Up => after.iter().map(|&i| trace.power[i]).fold(F::infinity(), F::min),
    };
    let counter_excursion = after
        .iter()
        .filter(|&&i| trace.t[i] > commanded_end + trace.stride())
        .map(|&i| -signed(trace.power[i]))
        .fold(F::zero(), F::max);

    let threshold = cfg.oscillation_threshold * p_steady;
    let oscillation_index =
        count_sign_alternations(after.iter().map(|&i| trace.power[i] - final_steady), threshold);

    let reference = if cfg.settle_to_original { p_steady } else { final_steady };
    let tol = cfg.settle_tolerance * p_steady;
    let settling_time = settle_time(trace, &indices, commanded_end, seg_end, reference, tol, cfg.settle_hold)
        .map(|t| t - event_t);

    let energy_end = settling_time.map_or(seg_end, |s| event_t + s);
    let net = integrate(&trace.t, &trace.power, event_t, energy_end)
        - p_steady * (energy_end - event_t);

    Ok(PulseMetrics {
        p_steady,
        final_steady,
        depth,
        width_at_half,
        rebound_peak,
        settling_time,
        oscillation_index,
        net_energy_delta: net / F::lit(60.0),
        counter_excursion,
    })
}

/// Start of the first window of length `hold` after `from` in which every
/// sample stays within `tol` of `reference`.
fn settle_time<F: Scalar>(
    trace: &PowerTrace<F>,
    indices: &[usize],
    from: F,
    seg_end: F,
    reference: F,
    tol: F,
    hold: F,
) -> Option<F> {
    let mut run_start: Option<F> = None;
    for &i in indices {
        let t = trace.t[i];
        if t < from {
            continue;
        }
        if (trace.power[i] - reference).abs() < tol {
            let s = *run_start.get_or_insert(t);
            if t - s >= hold {
                return Some(s);
            }
        } else {
            run_start = None;
        }
    }
    let _ = seg_end;
    None
}

/// Relative energy gap `|W_tot - W_st| / W_st` over one period `t_p` after
/// `t0`, with `W_st` from the steady power over the period before `t0`.
pub fn no_go_gap<F: Scalar>(trace: &PowerTrace<F>, t0: F, t_p: F) -> Result<F> {
    if t0 - t_p < trace.start() || t0 + t_p > trace.end() {
        return Err(Error::TraceTooShort("need one period on each side of the event".into()));
    }
    let w_st = steady_power(trace, t0 - t_p, t0)? * t_p;
    let w_tot = integrate(&trace.t, &trace.power, t0, t0 + t_p);
    Ok(((w_tot - w_st) / w_st).abs())
}

/// Constants of the population-averaged energy balance
/// `alpha * d<theta>/dt = -P + beta * (<theta> - gamma)`,
/// with `P` in kW and time in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanFieldConstants<F> {
    /// kW·min/°C
    pub alpha: F,
    /// kW/°C, negative so steady power is positive below ambient.
    pub beta: F,
    /// °C
    pub gamma: F,
}

impl<F: Scalar> MeanFieldConstants<F> {
    /// Summing `C dθ/dt = -(θ - θ_amb)/R - η p` over devices gives
    /// `alpha = Σ C/η`, `beta = -Σ 1/(η R)`, `gamma = θ_amb`. Exact for
    /// identical devices; heterogeneity leaves a residual.
    pub fn from_params<'a>(params: impl IntoIterator<Item = &'a TclParams<F>>) -> Self {
        let mut alpha = F::zero();
        let mut beta = F::zero();
        let mut gamma = F::zero();
        let mut n = 0usize;
        for p in params {
            alpha = alpha + F::lit(60.0) * p.c / p.eta;
            beta = beta - F::one() / (p.eta * p.r);
            gamma = gamma + p.theta_amb;
            n += 1;
        }
        Self { alpha, beta, gamma: gamma / F::from_usize_lossy(n.max(1)) }
    }
}

/// `RMS(r) / RMS(P)` for `r = alpha d<theta>/dt + P - beta(<theta> - gamma)`,
/// using centred differences on interior samples.
pub fn mean_field_residual<F: Scalar>(trace: &PowerTrace<F>, k: &MeanFieldConstants<F>) -> Result<F> {
    if trace.len() < 3 {
        return Err(Error::TraceTooShort("need at least three samples".into()));
    }
    let kw = F::lit(1000.0);
    let mut rr = F::zero();
    let mut pp = F::zero();
    for i in 1..trace.len() - 1 {
        let dtheta = (trace.mean_theta[i + 1] - trace.mean_theta[i - 1]) / (trace.t[i + 1] - trace.t[i - 1]);
        let p = trace.power[i] * kw;
        let r = k.alpha * dtheta + p - k.beta * (trace.mean_theta[i] - k.gamma);
        rr = rr + r * r;
        pp = pp + p * p;
    }
    Ok((rr / pp).sqrt())
}

/// Longest stretch after `event_t` (starting within `search` minutes) over
/// which power stays inside a band of relative half-width `ripple` around
/// the stretch's mean, after a moving average of `smooth` minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plateau<F> {
    pub start: F,
    pub duration: F,
    /// MW
    pub level: F,
    /// MW, max - min of the smoothed power over the plateau.
    pub ripple: F,
}

/// Moving average with a centred window of `width` minutes.
pub fn smooth<F: Scalar>(trace: &PowerTrace<F>, width: F) -> Vec<F> {
    let n = trace.len();
    let stride = trace.stride();
    if n == 0 || !(stride > F::zero()) {
        return trace.power.clone();
    }
    let k = (width / stride / F::lit(2.0)).round().to_usize().unwrap_or(0);
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(k);
            let b = (i + k).min(n - 1);
            let s = trace.power[a..=b].iter().fold(F::zero(), |acc, &p| acc + p);
            s / F::from_usize_lossy(b - a + 1)
        })
        .collect()
}

/// Finds the longest interval after `event_t` on which the (optionally
/// smoothed) power has a spread `max - min` no larger than `max_ripple` MW.
pub fn plateau<F: Scalar>(
    trace: &PowerTrace<F>,
    event_t: F,
    search_end: F,
    max_ripple: F,
    smoothing: F,
) -> Plateau<F> {
    let power = smooth(trace, smoothing);
    let idx: Vec<usize> = (0..trace.len()).filter(|&i| trace.t[i] > event_t && trace.t[i] <= search_end).collect();
    let mut best = Plateau { start: event_t, duration: F::zero(), level: F::nan(), ripple: F::zero() };
    for (a, &i) in idx.iter().enumerate() {
        let mut lo = power[i];
        let mut hi = power[i];
        let mut sum = F::zero();
        let mut last = a;
        for (b, &j) in idx.iter().enumerate().skip(a) {
            let (nlo, nhi) = (lo.min(power[j]), hi.max(power[j]));
            if nhi - nlo > max_ripple {
                break;
            }
            lo = nlo;
            hi = nhi;
            sum = sum + power[j];
            last = b;
        }
        let duration = trace.t[idx[last]] - trace.t[i];
        if duration > best.duration {
            best = Plateau {
                start: trace.t[i],
                duration,
                level: sum / F::from_usize_lossy(last - a + 1),
                ripple: hi - lo,
            };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_from(f: impl Fn(f64) -> f64, t_end: f64, stride: f64, events: Vec<(f64, Command<f64>)>) -> PowerTrace<f64> {
        let mut tr = PowerTrace::new();
        let n = (t_end / stride).round() as usize;
        for k in 0..=n {
            let t = k as f64 * stride;
            tr.push(t, f(t), 20.0, 0.43);
        }
        tr.events = events;
        tr
    }

    fn square_pulse() -> PowerTrace<f64> {
        let cmd = Command::Sp3 { direction: Direction::Down, width: 3.0 };
        // the sample at the event time still shows the old state
        trace_from(|t| if t > 100.0 && t <= 103.0 { 0.0 } else { 60.0 }, 300.0, 0.5, vec![(100.0, cmd)])
    }

    #[test]
    fn constant_trace_steady_power() {
        let tr = trace_from(|_| 60.0, 120.0, 0.5, vec![]);
        assert!((steady_power(&tr, 0.0, 120.0).unwrap() - 60.0).abs() < 1e-12);
        assert!((steady_power(&tr, 10.3, 47.9).unwrap() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn steady_window_must_precede_events() {
        let tr = square_pulse();
        assert!(steady_power(&tr, 40.0, 100.0).is_ok());
        assert!(matches!(steady_power(&tr, 40.0, 110.0), Err(Error::WindowOverlapsEvent { .. })));
    }

    #[test]
    fn trapezoid_of_constant_is_exact() {
        let tr = trace_from(|_| 7.25, 100.0, 0.5, vec![]);
        assert_eq!(integrate(&tr.t, &tr.power, 0.0, 100.0), 725.0);
        assert!((integrate(&tr.t, &tr.power, 3.3, 17.7) - 7.25 * 14.4).abs() < 1e-12);
    }

    #[test]
    fn ideal_square_pulse() {
        let m = pulse_metrics(&square_pulse(), 100.0, &MetricsConfig::default()).unwrap();
        assert_eq!(m.p_steady, 60.0);
        assert_eq!(m.depth, 60.0);
        assert!((m.width_at_half - 3.0).abs() < 1e-9, "{}", m.width_at_half);
        assert_eq!(m.oscillation_index, 0);
        assert_eq!(m.rebound_peak, 60.0);
        assert_eq!(m.counter_excursion, 0.0);
        assert_eq!(m.settling_time, Some(3.5));
        // 60 MW missing for 3 min
        assert!((m.net_energy_delta + 3.0).abs() < 1e-9);
    }

    #[test]
    fn missing_event_is_reported() {
        assert!(matches!(
            pulse_metrics(&square_pulse(), 42.0, &MetricsConfig::default()),
            Err(Error::NoEventAt(_))
        ));
    }

    #[test]
    fn unsettled_marker() {
        let cmd = Command::Sp1 { direction: Direction::Down };
        let tr = trace_from(|t| if t < 100.0 { 60.0 } else { 60.0 + 10.0 * (t / 5.0).sin() }, 200.0, 0.5, vec![(100.0, cmd)]);
        let m = pulse_metrics(&tr, 100.0, &MetricsConfig::default()).unwrap();
        assert!(!m.settled());
        assert!(m.oscillation_index >= 2);
    }

    #[test]
    fn damped_oscillation_counts_alternations() {
        let cmd = Command::UnsafeHold { target_mode: Mode::Off, hold: 10.0, release: Default::default() };
        let f = |t: f64| {
            if t < 100.0 {
                60.0
            } else if t < 110.0 {
                0.0
            } else {
                60.0 + 45.0 * (-(t - 110.0) / 60.0).exp() * (2.0 * std::f64::consts::PI * (t - 110.0) / 50.0).cos()
            }
        };
        let tr = trace_from(f, 400.0, 0.5, vec![(100.0, cmd)]);
        let m = pulse_metrics(&tr, 100.0, &MetricsConfig::default()).unwrap();
        assert!(m.rebound_peak > 100.0);
        assert!(m.oscillation_index >= 2);
        assert!((m.width_at_half - 10.0).abs() < 0.5);
    }

    #[test]
    fn alternation_counter() {
        let v = [0.0, 5.0, 6.0, 1.0, -4.0, -6.0, 0.0, 7.0];
        assert_eq!(count_sign_alternations(v, 3.0), 2);
        assert_eq!(count_sign_alternations(v, 6.5), 0);
        assert_eq!(count_sign_alternations(Vec::<f64>::new(), 1.0), 0);
    }

    #[test]
    fn mean_field_synthetic_identity() {
        // constant theta with P = beta (theta - gamma)
        let k = MeanFieldConstants { alpha: 1.8e6, beta: -5000.0, gamma: 32.0 };
        let tr = trace_from(|_| -5000.0 * (20.0 - 32.0) / 1000.0, 60.0, 0.5, vec![]);
        assert!(mean_field_residual(&tr, &k).unwrap() < 1e-12);
        let short = trace_from(|_| 1.0, 0.5, 0.5, vec![]);
        assert!(mean_field_residual(&short, &k).is_err());
    }

    #[test]
    fn mean_field_constants_from_identical_devices() {
        let p = TclParams { c: 3.0, r: 2.0, p: 14.0, eta: 1.0, theta_amb: 32.0, noise_sigma: 0.0 };
        let k: MeanFieldConstants<f64> = MeanFieldConstants::from_params(&vec![p; 10]);
        assert!((k.alpha - 10.0 * 180.0).abs() < 1e-9);
        assert!((k.beta + 5.0).abs() < 1e-12);
        assert_eq!(k.gamma, 32.0);
    }

    #[test]
    fn no_go_gap_of_flat_trace_is_zero() {
        let tr = trace_from(|_| 60.0, 300.0, 0.5, vec![]);
        assert!(no_go_gap(&tr, 150.0, 52.5).unwrap() < 1e-12);
        assert!(no_go_gap(&tr, 20.0, 52.5).is_err());
    }

    #[test]
    fn plateau_detection() {
        let tr = trace_from(
            |t| if t < 50.0 { 60.0 } else if t < 80.0 { 40.0 } else { 60.0 - 20.0 * (-(t - 80.0) / 10.0).exp() },
            200.0,
            0.5,
            vec![],
        );
        let p = plateau(&tr, 50.0, 100.0, 1.0, 0.0);
        assert!(p.duration >= 29.0 && p.duration <= 32.0, "{p:?}");
        assert!((p.level - 40.0).abs() < 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn metrics_invariant_under_time_shift(offset in -500.0f64..500.0, width in 1.0f64..20.0, depth in 5.0f64..60.0) {
                let cmd = Command::Sp3 { direction: Direction::Down, width };
                let tr = trace_from(move |t| if t > 100.0 && t <= 100.0 + width { 60.0 - depth } else { 60.0 }, 300.0, 0.5, vec![(100.0, cmd)]);
                let cfg = MetricsConfig::default();
                let a = pulse_metrics(&tr, 100.0, &cfg).unwrap();
                let b = pulse_metrics(&tr.shifted(offset), 100.0 + offset, &cfg).unwrap();
                prop_assert!((a.depth - b.depth).abs() < 1e-9);
                prop_assert!((a.width_at_half - b.width_at_half).abs() < 1e-6);
                prop_assert_eq!(a.oscillation_index, b.oscillation_index);
                prop_assert!((a.net_energy_delta - b.net_energy_delta).abs() < 1e-6);
                prop_assert_eq!(a.settling_time.is_some(), b.settling_time.is_some());
            }
        }
    }
}
