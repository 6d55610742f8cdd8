//! Time loop: steps an ensemble on an integer grid, fires broadcasts,
//! records the aggregate trace, device probes and histogram snapshots.

use crate::analysis::{DeviceTrace, PowerTrace, ProbeSample, SwitchEvent};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::population::{histogram, Ensemble, HistogramSnapshot};
use crate::protocol::{broadcast, Command};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<F> {
    /// minutes
    pub dt: F,
    pub t_end: F,
    /// Output sampling interval for probes and [`SimOutput::output_trace`];
    /// rounded to a whole number of steps.
    pub stride: F,
    pub events: Vec<(F, Command<F>)>,
    pub histogram_times: Vec<F>,
    pub histogram_bin_width: F,
    pub probes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventOutcome<F> {
    pub t: F,
    pub command: Command<F>,
    /// First time every device was back on plain thermostat control.
    pub completed_at: Option<F>,
    /// Largest excursion outside any customer band between this event and
    /// the next one (or the end of the run).
    pub max_band_excursion: F,
}

#[derive(Debug, Clone)]
pub struct SimOutput<F> {
    /// Aggregate trace at every step.
    pub trace: PowerTrace<F>,
    /// Steps between output samples.
    pub stride_steps: usize,
    pub histograms: Vec<(F, HistogramSnapshot<F>)>,
    pub probes: Vec<DeviceTrace<F>>,
    pub events: Vec<EventOutcome<F>>,
}

impl<F: Scalar> SimOutput<F> {
    /// The aggregate trace on the output grid.
    pub fn output_trace(&self) -> PowerTrace<F> {
        self.trace.every(self.stride_steps)
    }
}

fn steps_for<F: Scalar>(t: F, dt: F) -> i64 {
    (t / dt).round().to_i64().unwrap_or(i64::MAX)
}

/// Runs `ensemble` from its current time (expected 0) to `cfg.t_end`.
///
/// The sample at `t` describes the step that starts at `t`: the event at
/// `t` is broadcast after that sample is taken and devices act on it at
/// the end of the step.
pub fn simulate<F: Scalar>(ensemble: &mut Ensemble<F>, cfg: &SimConfig<F>) -> Result<SimOutput<F>> {
    let dt = cfg.dt;
    if (ensemble.dt() - dt).abs() > dt * F::lit(1e-9) {
        return Err(Error::validation("dt_min", "does not match the ensemble's step"));
    }
    if let Some(&id) = cfg.probes.iter().find(|&&id| id >= ensemble.len()) {
        return Err(Error::validation("outputs.device_probe_ids", format!("{id} is not a device index")));
    }
    let start = ensemble.step_index();
    let n_steps = steps_for(cfg.t_end, dt);
    let stride = steps_for(cfg.stride, dt).max(1);

    let mut events: Vec<(i64, Command<F>)> = cfg.events.iter().map(|&(t, c)| (steps_for(t, dt), c)).collect();
    events.sort_by_key(|e| e.0);
    let mut hist_steps: Vec<(i64, F)> = cfg.histogram_times.iter().map(|&t| (steps_for(t, dt), t)).collect();
    hist_steps.sort_by_key(|h| h.0);

    let mut probes: Vec<DeviceTrace<F>> = cfg
        .probes
        .iter()
        .map(|&id| {
            let d = &ensemble.devices()[id];
            DeviceTrace {
                id,
                params: d.params,
                customer_band: d.band,
                samples: vec![],
                switches: vec![],
                completions: vec![],
            }
        })
        .collect();

    let mut trace = PowerTrace::new();
    let mut histograms = Vec::new();
    let mut outcomes: Vec<EventOutcome<F>> = Vec::new();
    let mut next_event = 0;
    let mut next_hist = 0;
    let mut busy = 0usize;

    for k in start..=n_steps {
        let t = ensemble.time();
        let a = ensemble.aggregate();
        trace.push(t, a.power_mw, a.mean_theta, a.frac_on);
        if (k - start) % stride == 0 {
            for p in &mut probes {
                let d = &ensemble.devices()[p.id];
                p.samples.push(ProbeSample {
                    t,
                    theta: d.state.theta,
                    mode: d.state.mode,
                    active_band: d.ctrl.active_band,
                    idle: d.ctrl.is_idle(),
                });
            }
        }
        while next_hist < hist_steps.len() && hist_steps[next_hist].0 <= k {
            if hist_steps[next_hist].0 == k {
                histograms.push((hist_steps[next_hist].1, histogram(ensemble, cfg.histogram_bin_width)?));
            }
            next_hist += 1;
        }
        while next_event < events.len() && events[next_event].0 <= k {
            let (ek, command) = events[next_event];
            next_event += 1;
            if ek < k {
                continue;
            }
            if let Some(last) = outcomes.last_mut() {
                last.max_band_excursion = ensemble.max_band_excursion();
            }
            ensemble.reset_band_excursion();
            broadcast(ensemble, &command, t)?;
            trace.events.push((t, command));
            outcomes.push(EventOutcome { t, command, completed_at: None, max_band_excursion: F::zero() });
            busy = ensemble.len();
        }
        if k == n_steps {
            break;
        }

        let before: Vec<_> = probes
            .iter()
            .map(|p| &ensemble.devices()[p.id])
            .map(|d| (d.state.mode, d.ctrl.is_idle()))
            .collect();
        let now_busy = ensemble.step();
        let t_next = ensemble.time();
        for (p, (mode, idle)) in probes.iter_mut().zip(before) {
            let d = &ensemble.devices()[p.id];
            if d.state.mode != mode {
                p.switches.push(SwitchEvent { t: t_next, to: d.state.mode });
            }
            if d.ctrl.is_idle() && !idle {
                p.completions.push(t_next);
            }
        }
        if busy > 0 && now_busy == 0 {
            if let Some(last) = outcomes.last_mut() {
                last.completed_at.get_or_insert(t_next);
            }
        }
        busy = now_busy;
    }
    if let Some(last) = outcomes.last_mut() {
        last.max_band_excursion = ensemble.max_band_excursion();
    }
    Ok(SimOutput { trace, stride_steps: stride as usize, histograms, probes, events: outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, TclState};
    use crate::population::{init_uncorrelated, sample_population, PopulationSpec};
    use crate::protocol::Direction;

    fn cfg(t_end: f64, events: Vec<(f64, Command<f64>)>) -> SimConfig<f64> {
        SimConfig {
            dt: 1.0 / 60.0,
            t_end,
            stride: 0.5,
            events,
            histogram_times: vec![0.0, 10.0],
            histogram_bin_width: 0.05,
            probes: vec![0, 7],
        }
    }

    #[test]
    fn trace_grid_and_row_count() {
        let s = PopulationSpec { n: 500, ..PopulationSpec::default() };
        let pop = sample_population::<f64>(&s).unwrap();
        let mut ens = init_uncorrelated(&pop, &s, 1.0 / 60.0).unwrap();
        let out = simulate(&mut ens, &cfg(30.0, vec![])).unwrap();
        assert_eq!(out.trace.len(), 1801);
        let sampled = out.output_trace();
        assert_eq!(sampled.len(), 61);
        assert!((sampled.end() - 30.0).abs() < 1e-9);
        assert_eq!(sampled.power[60], out.trace.power[1800]);
        assert_eq!(out.histograms.len(), 2);
        assert_eq!(out.probes[0].samples.len(), 61);
        assert!(out.probes.iter().all(|p| !p.switches.is_empty()));
    }

    #[test]
    fn event_completion_and_busy_rejection() {
        let s = PopulationSpec { n: 200, rel_sigma: 0.0, noise_sigma: 0.0, ..PopulationSpec::default() };
        let pop = sample_population::<f64>(&s).unwrap();
        let mut ens = Ensemble::from_states(&pop, vec![TclState::new(20.0, Mode::On); 200], 1.0 / 60.0, 1).unwrap();
        let hold = Command::UnsafeHold { target_mode: Mode::Off, hold: 5.0, release: Default::default() };
        let out = simulate(&mut ens, &cfg(20.0, vec![(2.0, hold)])).unwrap();
        let done = out.events[0].completed_at.unwrap();
        assert!((done - 7.0).abs() < 0.02, "{done}");
        // power drops one sample after the event
        let i = out.trace.t.iter().position(|&t| (t - 2.0).abs() < 1e-9).unwrap();
        assert!((out.trace.power[i] - 2.8).abs() < 1e-9);
        assert_eq!(out.trace.power[i + 1], 0.0);

        let mut ens = Ensemble::from_states(&pop, vec![TclState::new(20.0, Mode::On); 200], 1.0 / 60.0, 1).unwrap();
        let sp1 = Command::Sp1 { direction: Direction::Down };
        let r = simulate(&mut ens, &cfg(20.0, vec![(2.0, sp1), (10.0, sp1)]));
        assert!(matches!(r, Err(Error::ProtocolBusy { .. })));
    }

    #[test]
    fn bad_probe_id() {
        let s = PopulationSpec { n: 5, ..PopulationSpec::default() };
        let pop = sample_population::<f64>(&s).unwrap();
        let mut ens = init_uncorrelated(&pop, &s, 1.0 / 60.0).unwrap();
        assert!(simulate(&mut ens, &cfg(1.0, vec![])).is_err());
    }
}
