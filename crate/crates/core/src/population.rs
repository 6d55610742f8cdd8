//! Heterogeneous TCL ensembles: parameter sampling, steady-state
//! initialisation, data-parallel stepping and ensemble observables.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    cycle_times, hysteresis, Deadband, Mode, Propagator, TclParams, TclState,
};
use crate::num::Scalar;
use crate::protocol::ControllerState;
use crate::rng::{self, Purpose};

/// Attempts per device before an infeasible parameter draw becomes an error.
pub const MAX_RESAMPLES: usize = 100;

/// Devices per rayon task when stepping the ensemble.
const PAR_CHUNK: usize = 256;

fn one() -> f64 {
    1.0
}

/// Statistical description of a population. Means are of the lognormal
/// itself (not of its logarithm); `rel_sigma` is the standard deviation as a
/// fraction of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: usize,
    #[serde(rename = "mean_C")]
    pub mean_c: f64,
    #[serde(rename = "mean_R")]
    pub mean_r: f64,
    #[serde(rename = "mean_P")]
    pub mean_p: f64,
    pub rel_sigma: f64,
    #[serde(rename = "theta_amb_C")]
    pub theta_amb: f64,
    #[serde(rename = "setpoint_C")]
    pub setpoint: f64,
    #[serde(rename = "delta_band_C")]
    pub delta_band: f64,
    /// °C/min^0.5
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub eta: f64,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            mean_c: 3.0,
            mean_r: 2.0,
            mean_p: 14.0,
            rel_sigma: 0.07,
            theta_amb: 32.0,
            setpoint: 20.0,
            delta_band: 1.0,
            noise_sigma: 0.052,
            eta: 1.0,
            seed: 1,
        }
    }
}

impl PopulationSpec {
    pub fn band<F: Scalar>(&self) -> Result<Deadband<F>> {
        Deadband::around(F::lit(self.setpoint), F::lit(self.delta_band))
    }

    /// Parameters of a device sitting exactly at the means.
    pub fn mean_params<F: Scalar>(&self) -> TclParams<F> {
        TclParams {
            c: F::lit(self.mean_c),
            r: F::lit(self.mean_r),
            p: F::lit(self.mean_p),
            eta: F::lit(self.eta),
            theta_amb: F::lit(self.theta_amb),
            noise_sigma: F::lit(self.noise_sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("population.n", "must be at least 1"));
        }
        if !(self.rel_sigma >= 0.0 && self.rel_sigma.is_finite()) {
            return Err(Error::validation("population.rel_sigma", "must be non-negative"));
        }
        if !(self.delta_band > 0.0 && self.delta_band.is_finite()) {
            return Err(Error::validation("population.delta_band_C", "must be positive"));
        }
        for (field, v) in [
            ("population.mean_C", self.mean_c),
            ("population.mean_R", self.mean_r),
            ("population.mean_P", self.mean_p),
            ("population.eta", self.eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("population.noise_sigma", "must be non-negative"));
        }
        let band = self.band::<f64>()?;
        self.mean_params::<f64>()
            .check_band(&band)
            .map_err(|e| Error::validation("population", e.to_string()))
    }
}

/// Sampled device parameters plus the number of rejected draws.
#[derive(Debug, Clone)]
pub struct SampledPopulation<F> {
    pub devices: Vec<(TclParams<F>, Deadband<F>)>,
    pub resamples: usize,
}

struct MomentLogNormal(Option<LogNormal<f64>>, f64);

impl MomentLogNormal {
    fn new(mean: f64, rel_sigma: f64) -> Self {
        if rel_sigma == 0.0 {
            return Self(None, mean);
        }
        let dist = LogNormal::from_mean_cv(mean, rel_sigma).expect("validated mean and spread");
        Self(Some(dist), mean)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.0 {
            Some(d) => d.sample(rng),
            None => self.1,
        }
    }
}

/// Draws C, R and P independently from moment-matched lognormals.
///
/// Draws whose band would have no proper duty cycle are redrawn, at most
/// [`MAX_RESAMPLES`] times per device.
pub fn sample_population<F: Scalar>(spec: &PopulationSpec) -> Result<SampledPopulation<F>> {
    spec.validate()?;
    let band = spec.band::<F>()?;
    let c_dist = MomentLogNormal::new(spec.mean_c, spec.rel_sigma);
    let r_dist = MomentLogNormal::new(spec.mean_r, spec.rel_sigma);
    let p_dist = MomentLogNormal::new(spec.mean_p, spec.rel_sigma);
    let mut rng = rng::stream(spec.seed, Purpose::Parameters, 0);

    let mut devices = Vec::with_capacity(spec.n);
    let mut resamples = 0;
    for i in 0..spec.n {
        let mut attempts = 0;
        let params = loop {
            let params = TclParams {
                c: F::lit(c_dist.sample(&mut rng)),
                r: F::lit(r_dist.sample(&mut rng)),
                p: F::lit(p_dist.sample(&mut rng)),
                eta: F::lit(spec.eta),
                theta_amb: F::lit(spec.theta_amb),
                noise_sigma: F::lit(spec.noise_sigma),
            };
            if params.validate().is_ok() && params.supports_band(&band) {
                break params;
            }
            attempts += 1;
            if attempts >= MAX_RESAMPLES {
                return Err(Error::validation(
                    "population",
                    format!("device {i}: no feasible parameter draw after {MAX_RESAMPLES} attempts"),
                ));
            }
        };
        resamples += attempts;
        devices.push((params, band));
    }
    Ok(SampledPopulation { devices, resamples })
}

/// Noise-free state at cycle phase `u` in `[0, 1)`.
///
/// Phase 0 is the moment the device switches ON at the upper limit; the ON
/// leg occupies `[0, duty)` and the OFF leg, starting from the lower limit,
/// the rest.
pub fn place_at_phase<F: Scalar>(params: &TclParams<F>, band: &Deadband<F>, u: F) -> TclState<F> {
    let ct = cycle_times(params, band);
    let tau = params.time_constant();
    if u < ct.duty {
        let target = params.fixed_point(Mode::On);
        let elapsed = u * ct.period;
        TclState::new(target + (band.upper - target) * (-elapsed / tau).exp(), Mode::On)
    } else {
        let target = params.fixed_point(Mode::Off);
        let elapsed = (u - ct.duty) * ct.period;
        TclState::new(target + (band.lower - target) * (-elapsed / tau).exp(), Mode::Off)
    }
}

#[derive(Debug, Clone)]
pub struct Device<F> {
    pub params: TclParams<F>,
    /// The customer's band. The controller's `active_band` may differ from it.
    pub band: Deadband<F>,
    pub state: TclState<F>,
    pub ctrl: ControllerState<F>,
    prop: Propagator<F>,
    noise: ChaCha8Rng,
    excursion: F,
}

impl<F: Scalar> Device<F> {
    /// Advances one step ending at `t_next`. Returns true while a protocol is
    /// still running on this device.
    #[inline]
    fn advance(&mut self, t_next: F, dt: F) -> bool {
        let z = if self.prop.is_noiseless() {
            F::zero()
        } else {
            let z: f64 = self.noise.sample(StandardNormal);
            F::lit(z)
        };
        let theta = self.prop.advance(self.state.theta, self.state.mode, z);
        let control = self.ctrl.step(TclState::new(theta, self.state.mode), &self.params, t_next, dt);
        let mode = control
            .override_mode
            .unwrap_or_else(|| hysteresis(theta, self.state.mode, &control.band));
        self.state = TclState::new(theta, mode);
        let out = (theta - self.band.upper).max(self.band.lower - theta);
        if out > self.excursion {
            self.excursion = out;
        }
        !self.ctrl.is_idle()
    }

    /// Largest distance the temperature has been outside the customer band.
    pub fn band_excursion(&self) -> F {
        self.excursion.max(F::zero())
    }
}

/// Ensemble observables at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate<F> {
    pub power_mw: F,
    pub mean_theta: F,
    pub frac_on: F,
}

/// Full population state: per-device parameters, bands, thermal state and
/// controller memory at `time`.
#[derive(Debug, Clone)]
pub struct Ensemble<F> {
    devices: Vec<Device<F>>,
    step_index: i64,
    dt: F,
    seed: u64,
    broadcasts: u64,
    latency_max: F,
}

impl<F: Scalar> Ensemble<F> {
    /// Builds an ensemble at t = 0 from explicit states.
    pub fn from_states(
        population: &SampledPopulation<F>,
        states: Vec<TclState<F>>,
        dt: F,
        seed: u64,
    ) -> Result<Self> {
        if states.len() != population.devices.len() {
            return Err(Error::validation("states", "one state per device required"));
        }
        if !(dt > F::zero()) {
            return Err(Error::validation("dt_min", "must be positive"));
        }
        let devices = population
            .devices
            .iter()
            .zip(states)
            .enumerate()
            .map(|(i, (&(params, band), state))| Device {
                params,
                band,
                state,
                ctrl: ControllerState::new(band),
                prop: Propagator::new(&params, dt),
                noise: rng::stream(seed, Purpose::Noise, i as u64),
                excursion: F::neg_infinity(),
            })
            .collect();
        Ok(Self { devices, step_index: 0, dt, seed, broadcasts: 0, latency_max: F::zero() })
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn devices(&self) -> &[Device<F>] {
        &self.devices
    }

    pub(crate) fn devices_mut(&mut self) -> &mut [Device<F>] {
        &mut self.devices
    }

    /// Current time in minutes. Negative during burn-in.
    pub fn time(&self) -> F {
        F::from_i64(self.step_index).expect("step index fits scalar") * self.dt
    }

    pub fn step_index(&self) -> i64 {
        self.step_index
    }

    pub fn dt(&self) -> F {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latency_max(&self) -> F {
        self.latency_max
    }

    /// Upper bound of the uniform per-device broadcast delay, minutes.
    pub fn set_latency_max(&mut self, latency: F) {
        self.latency_max = latency.max(F::zero());
    }

    pub(crate) fn next_broadcast_ordinal(&mut self) -> u64 {
        self.broadcasts += 1;
        self.broadcasts
    }

    /// Advances every device by one step. Returns how many devices are still
    /// executing a protocol afterwards.
    pub fn step(&mut self) -> usize {
        let t_next = F::from_i64(self.step_index + 1).expect("step index fits scalar") * self.dt;
        let dt = self.dt;
        let busy = self
            .devices
            .par_iter_mut()
            .with_min_len(PAR_CHUNK)
            .map(|d| usize::from(d.advance(t_next, dt)))
            .sum();
        self.step_index += 1;
        busy
    }

    pub fn aggregate(&self) -> Aggregate<F> {
        aggregate(self)
    }

    /// Largest excursion of any device outside its customer band so far.
    pub fn max_band_excursion(&self) -> F {
        self.devices.iter().map(Device::band_excursion).fold(F::zero(), F::max)
    }

    /// Clears the excursion tracker, e.g. after burn-in.
    pub fn reset_band_excursion(&mut self) {
        for d in &mut self.devices {
            d.excursion = F::neg_infinity();
        }
    }

    pub fn mean_period(&self) -> F {
        let total = self
            .devices
            .iter()
            .map(|d| cycle_times(&d.params, &d.band).period)
            .fold(F::zero(), |a, b| a + b);
        total / F::from_usize_lossy(self.devices.len())
    }
}

/// Places each device at an independent uniform phase of its own cycle,
/// then runs a noisy burn-in of twice the mean period so the ensemble starts
/// at t = 0 in its stationary, uncorrelated state.
pub fn init_uncorrelated<F: Scalar>(
    population: &SampledPopulation<F>,
    spec: &PopulationSpec,
    dt: F,
) -> Result<Ensemble<F>> {
    let mut phase_rng = rng::stream(spec.seed, Purpose::Phase, 0);
    let states = population
        .devices
        .iter()
        .map(|(params, band)| {
            let u: f64 = phase_rng.random();
            place_at_phase(params, band, F::lit(u))
        })
        .collect();
    let mut ensemble = Ensemble::from_states(population, states, dt, spec.seed)?;
    let burn_in = (F::lit(2.0) * ensemble.mean_period() / dt).ceil().to_i64().unwrap_or(0);
    ensemble.step_index = -burn_in;
    for _ in 0..burn_in {
        ensemble.step();
    }
    ensemble.reset_band_excursion();
    Ok(ensemble)
}

pub fn aggregate<F: Scalar>(ensemble: &Ensemble<F>) -> Aggregate<F> {
    let mut power_kw = F::zero();
    let mut theta_sum = F::zero();
    let mut on = 0usize;
    for d in &ensemble.devices {
        if d.state.mode.is_on() {
            power_kw = power_kw + d.params.p / d.params.eta;
            on += 1;
        }
        theta_sum = theta_sum + d.state.theta;
    }
    let n = F::from_usize_lossy(ensemble.devices.len());
    Aggregate {
        power_mw: power_kw / F::lit(1000.0),
        mean_theta: theta_sum / n,
        frac_on: F::from_usize_lossy(on) / n,
    }
}

/// Joint density over (temperature, mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramSnapshot<F> {
    pub bin_edges: Vec<F>,
    pub density_on: Vec<F>,
    pub density_off: Vec<F>,
}

impl<F: Scalar> HistogramSnapshot<F> {
    pub fn bins(&self) -> usize {
        self.density_on.len()
    }

    pub fn bin_width(&self) -> F {
        self.bin_edges[1] - self.bin_edges[0]
    }

    /// Integral of both densities; 1 for any valid snapshot.
    pub fn total_mass(&self) -> F {
        let w = self.bin_width();
        self.density_on
            .iter()
            .zip(&self.density_off)
            .fold(F::zero(), |acc, (&a, &b)| acc + (a + b) * w)
    }
}

/// Bins the ensemble over temperature, separately for ON and OFF devices.
///
/// Bins are aligned so the lowest active lower limit is an edge and extend
/// five noise spreads (noise intensity times one minute's square root) past
/// the band, or further if any device lies outside that range.
pub fn histogram<F: Scalar>(ensemble: &Ensemble<F>, bin_width: F) -> Result<HistogramSnapshot<F>> {
    if !(bin_width > F::zero() && bin_width.is_finite()) {
        return Err(Error::validation("bin_width", "must be positive"));
    }
    if ensemble.is_empty() {
        return Err(Error::validation("ensemble", "no devices"));
    }
    let devices = ensemble.devices();
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    let mut spread = F::zero();
    let mut theta_min = F::infinity();
    let mut theta_max = F::neg_infinity();
    for d in devices {
        lo = lo.min(d.ctrl.active_band.lower);
        hi = hi.max(d.ctrl.active_band.upper);
        spread = spread.max(d.params.noise_sigma);
        theta_min = theta_min.min(d.state.theta);
        theta_max = theta_max.max(d.state.theta);
    }
    let margin = F::lit(5.0) * spread;
    let below = (lo - (lo - margin).min(theta_min)) / bin_width;
    let start = lo - below.ceil() * bin_width;
    let end = (hi + margin).max(theta_max);
    let mut bins = ((end - start) / bin_width).ceil().to_usize().unwrap_or(1).max(1);
    if start + F::from_usize_lossy(bins) * bin_width <= theta_max {
        bins += 1;
    }

    let mut on = vec![0usize; bins];
    let mut off = vec![0usize; bins];
    for d in devices {
        let idx = ((d.state.theta - start) / bin_width).floor().to_usize().unwrap_or(0).min(bins - 1);
        match d.state.mode {
            Mode::On => on[idx] += 1,
            Mode::Off => off[idx] += 1,
        }
    }
    let norm = F::from_usize_lossy(devices.len()) * bin_width;
    let to_density = |c: Vec<usize>| c.into_iter().map(|k| F::from_usize_lossy(k) / norm).collect();
    Ok(HistogramSnapshot {
        bin_edges: (0..=bins).map(|i| start + F::from_usize_lossy(i) * bin_width).collect(),
        density_on: to_density(on),
        density_off: to_density(off),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{drift, CycleTimes};

    fn spec(n: usize) -> PopulationSpec {
        PopulationSpec { n, ..PopulationSpec::default() }
    }

    #[test]
    fn degenerate_spread_gives_exact_means() {
        let s = PopulationSpec { rel_sigma: 0.0, ..spec(50) };
        let pop = sample_population::<f64>(&s).unwrap();
        for (p, b) in &pop.devices {
            assert_eq!((p.c, p.r, p.p), (3.0, 2.0, 14.0));
            assert_eq!((b.lower, b.upper), (19.5, 20.5));
        }
        assert_eq!(pop.resamples, 0);
    }

    #[test]
    fn sample_moments_match_footnote_values() {
        let pop = sample_population::<f64>(&spec(10_000)).unwrap();
        let n = pop.devices.len() as f64;
        let stats = |f: &dyn Fn(&TclParams<f64>) -> f64| {
            let m = pop.devices.iter().map(|(p, _)| f(p)).sum::<f64>() / n;
            let v = pop.devices.iter().map(|(p, _)| (f(p) - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v.sqrt())
        };
        for (mean, (m, s)) in [
            (3.0, stats(&|p| p.c)),
            (2.0, stats(&|p| p.r)),
            (14.0, stats(&|p| p.p)),
        ] {
            assert!((m / mean - 1.0).abs() < 0.01, "mean {m} vs {mean}");
            assert!((s / (0.07 * mean) - 1.0).abs() < 0.10, "std {s} vs {}", 0.07 * mean);
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let a = sample_population::<f64>(&spec(200)).unwrap();
        let b = sample_population::<f64>(&spec(200)).unwrap();
        let c = sample_population::<f64>(&PopulationSpec { seed: 2, ..spec(200) }).unwrap();
        assert_eq!(a.devices, b.devices);
        assert_ne!(a.devices, c.devices);
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        // ON fixed point at 32 - 14*0.3 = 27.8 lies above the band
        let s = PopulationSpec { mean_r: 0.3, rel_sigma: 0.0, ..spec(10) };
        assert!(matches!(sample_population::<f64>(&s), Err(Error::Validation { .. })));
        let s = PopulationSpec { n: 0, ..spec(10) };
        assert!(s.validate().is_err());
    }

    #[test]
    fn phase_origin_is_upper_limit_on() {
        let s = PopulationSpec { rel_sigma: 0.0, ..spec(1) };
        let pop = sample_population::<f64>(&s).unwrap();
        let (p, b) = pop.devices[0];
        let st = place_at_phase(&p, &b, 0.0);
        assert_eq!(st, TclState::new(20.5, Mode::On));
        let ct: CycleTimes<f64> = cycle_times(&p, &b);
        let st = place_at_phase(&p, &b, ct.duty);
        assert_eq!(st.mode, Mode::Off);
        assert!((st.theta - 19.5).abs() < 1e-12);
        let st = place_at_phase(&p, &b, 0.5 * ct.duty);
        assert!((st.theta - drift(20.5, Mode::On, &p, 0.5 * ct.t_on)).abs() < 1e-12);
    }

    #[test]
    fn steady_state_on_fraction_and_power() {
        let s = spec(10_000);
        let pop = sample_population::<f64>(&s).unwrap();
        let ens = init_uncorrelated(&pop, &s, 1.0 / 60.0).unwrap();
        assert_eq!(ens.time(), 0.0);
        let agg = ens.aggregate();
        assert!((agg.frac_on - 0.4285).abs() < 0.02, "frac_on {}", agg.frac_on);
        assert!((agg.power_mw / 60.0 - 1.0).abs() < 0.10, "power {}", agg.power_mw);
    }

    #[test]
    fn aggregate_extremes() {
        let s = PopulationSpec { rel_sigma: 0.0, ..spec(10_000) };
        let pop = sample_population::<f64>(&s).unwrap();
        let all = |mode| vec![TclState::new(20.0, mode); 10_000];
        let ens = Ensemble::from_states(&pop, all(Mode::Off), 0.1, 1).unwrap();
        let agg = ens.aggregate();
        assert_eq!((agg.power_mw, agg.frac_on, agg.mean_theta), (0.0, 0.0, 20.0));
        let ens = Ensemble::from_states(&pop, all(Mode::On), 0.1, 1).unwrap();
        let agg = ens.aggregate();
        assert!((agg.power_mw - 140.0).abs() < 1e-9);
        assert_eq!(agg.frac_on, 1.0);
    }

    #[test]
    fn histogram_single_bin_and_normalisation() {
        let s = PopulationSpec { rel_sigma: 0.0, ..spec(100) };
        let pop = sample_population::<f64>(&s).unwrap();
        let ens =
            Ensemble::from_states(&pop, vec![TclState::new(20.0, Mode::Off); 100], 0.1, 1).unwrap();
        let h = histogram(&ens, 0.05).unwrap();
        assert_eq!(h.density_off.iter().filter(|&&d| d > 0.0).count(), 1);
        assert!(h.density_on.iter().all(|&d| d == 0.0));
        assert!((h.total_mass() - 1.0).abs() < 1e-9);
        assert!(h.bin_edges[0] <= 19.5 - 5.0 * 0.052);
        assert!(*h.bin_edges.last().unwrap() >= 20.5 + 5.0 * 0.052);
        assert!(histogram(&ens, 0.0).is_err());
    }

    #[test]
    fn noise_spills_past_band_limits() {
        let s = spec(5_000);
        let pop = sample_population::<f64>(&s).unwrap();
        let ens = init_uncorrelated(&pop, &s, 1.0 / 60.0).unwrap();
        let h = histogram(&ens, 0.02).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-9);
        let outside: f64 = h
            .bin_edges
            .windows(2)
            .zip(h.density_on.iter().zip(&h.density_off))
            .filter(|(e, _)| e[1] <= 19.5 || e[0] >= 20.5)
            .map(|(_, (a, b))| (a + b) * 0.02)
            .sum();
        assert!(outside > 0.0 && outside < 0.1, "mass outside band {outside}");
    }

    #[test]
    fn noise_increment_variance() {
        // theta' - drift(theta) over one step is sigma * sqrt(dt) * z
        let s = PopulationSpec { rel_sigma: 0.0, n: 20_000, ..spec(1) };
        let pop = sample_population::<f64>(&s).unwrap();
        let dt = 0.1;
        let mut ens =
            Ensemble::from_states(&pop, vec![TclState::new(20.0, Mode::Off); s.n], dt, 3).unwrap();
        ens.step();
        let expect = drift(20.0, Mode::Off, &pop.devices[0].0, dt);
        let n = s.n as f64;
        let var = ens.devices().iter().map(|d| (d.state.theta - expect).powi(2)).sum::<f64>() / n;
        let target = 0.052f64.powi(2) * dt;
        // sample variance of a normal has standard error target * sqrt(2/n)
        assert!((var - target).abs() < 3.0 * target * (2.0 / n).sqrt(), "{var} vs {target}");
    }

    #[test]
    fn stepping_is_independent_of_thread_count() {
        let s = spec(3_000);
        let pop = sample_population::<f64>(&s).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let mut ens = init_uncorrelated(&pop, &s, 1.0 / 60.0).unwrap();
                for _ in 0..600 {
                    ens.step();
                }
                ens.devices().iter().map(|d| (d.state.theta.to_bits(), d.state.mode)).collect::<Vec<_>>()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn baseline_power_is_stationary() {
        let s = spec(10_000);
        let pop = sample_population::<f64>(&s).unwrap();
        let mut ens = init_uncorrelated(&pop, &s, 1.0 / 60.0).unwrap();
        let mut power = Vec::new();
        // 5 hours sampled every half minute
        for k in 0..=(5 * 60 * 60) {
            if k % 30 == 0 {
                power.push(ens.aggregate().power_mw);
            }
            if k < 5 * 3600 {
                ens.step();
            }
        }
        let hour = 120;
        let means: Vec<f64> =
            power.windows(hour).step_by(hour / 2).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        let total = power.iter().sum::<f64>() / power.len() as f64;
        let frac = ens.aggregate().frac_on;
        let se = total * (frac * (1.0 - frac) / s.n as f64).sqrt();
        let spread = means.iter().cloned().fold(f64::MIN, f64::max)
            - means.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 3.0 * se, "hourly means spread {spread} MW, bound {}", 3.0 * se);
    }
}
