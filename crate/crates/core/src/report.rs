//! Scenario execution and run artifacts: trace.csv, summary.json,
//! histogram and probe CSVs, SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    count_sign_alternations, mean_field_residual, no_go_gap, pulse_metrics, DeviceTrace,
    MeanFieldConstants, PowerTrace, PulseMetrics,
};
use crate::error::{Error, Result};
use crate::population::{init_uncorrelated, sample_population, HistogramSnapshot};
use crate::protocol::Command;
use crate::scenario::Scenario;
use crate::sim::{simulate, SimOutput};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub svg: bool,
    pub force: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventReport {
    pub t_min: f64,
    pub command: Command<f64>,
    pub completed_at_min: Option<f64>,
    #[serde(rename = "max_band_excursion_C")]
    pub max_band_excursion: f64,
    pub metrics: Option<PulseMetrics<f64>>,
    /// Why `metrics` is missing, when it is.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_go_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario_hash: String,
    pub caption: String,
    pub seed: u64,
    pub n: usize,
    pub dt_min: f64,
    pub t_end_min: f64,
    pub parameter_resamples: usize,
    pub mean_period_min: f64,
    #[serde(rename = "steady_power_MW")]
    pub steady_power: f64,
    pub mean_frac_on: f64,
    /// Oscillation index of the whole trace; only for runs without events.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_oscillation_index: Option<usize>,
    pub events: Vec<EventReport>,
    /// For runs whose events are all SP-2 shifts (or that have none).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_field_residual: Option<f64>,
    pub wall_clock_s: f64,
}

/// Simulation plus summary, without touching the filesystem.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub sim: SimOutput<f64>,
    pub summary: RunSummary,
}

pub fn execute(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    let started = Instant::now();
    let population = sample_population::<f64>(&scenario.population)?;
    let mut ensemble = init_uncorrelated(&population, &scenario.population, scenario.dt_min)?;
    ensemble.set_latency_max(scenario.broadcast_latency_max_min);
    let mean_period = ensemble.mean_period();
    let sim = simulate(&mut ensemble, &scenario.sim_config())?;

    let cfg = scenario.metrics_config();
    let trace = &sim.trace;
    let events: Vec<EventReport> = sim
        .events
        .iter()
        .map(|o| {
            let (metrics, metrics_error) = match pulse_metrics(trace, o.t, &cfg) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let no_go_gap = matches!(o.command, Command::Sp1 { .. })
                .then(|| no_go_gap(trace, o.t, mean_period).ok())
                .flatten();
            EventReport {
                t_min: o.t,
                command: o.command,
                completed_at_min: o.completed_at,
                max_band_excursion: o.max_band_excursion,
                metrics,
                metrics_error,
                no_go_gap,
            }
        })
        .collect();

    let whole = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let steady_power = events
        .first()
        .and_then(|e| e.metrics.map(|m| m.p_steady))
        .unwrap_or_else(|| whole(&trace.power));
    let baseline_oscillation_index = events.is_empty().then(|| {
        count_sign_alternations(
            trace.power.iter().map(|&p| p - steady_power),
            cfg.oscillation_threshold * steady_power,
        )
    });
    let mean_field = events
        .iter()
        .all(|e| matches!(e.command, Command::Sp2 { .. }))
        .then(|| {
            let k = MeanFieldConstants::from_params(population.devices.iter().map(|(p, _)| p));
            mean_field_residual(&sim.output_trace(), &k).ok()
        })
        .flatten();

    let summary = RunSummary {
        scenario_hash: scenario.hash()?,
        caption: scenario.caption.clone(),
        seed: scenario.population.seed,
        n: scenario.population.n,
        dt_min: scenario.dt_min,
        t_end_min: scenario.t_end_min,
        parameter_resamples: population.resamples,
        mean_period_min: mean_period,
        steady_power,
        mean_frac_on: whole(&trace.frac_on),
        baseline_oscillation_index,
        events,
        mean_field_residual: mean_field,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { scenario: scenario.clone(), sim, summary })
}

/// Loads `source` (a file or a bundled scenario name), runs it and writes
/// the artifacts.
pub fn run(source: &str, opts: &RunOptions) -> Result<RunSummary> {
    let scenario = Scenario::load(source)?;
    let name = Path::new(source).file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    run_scenario(&scenario, &RunOptions { out_dir: Some(out_dir), ..opts.clone() })
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary> {
    let scenario = match opts.seed {
        Some(seed) => scenario.clone().with_seed(seed),
        None => scenario.clone(),
    };
    scenario.validate()?;
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/run"));
    prepare_dir(&out_dir, opts.force)?;
    let out = execute(&scenario)?;
    write_artifacts(&out, &out_dir, opts.svg)?;
    Ok(out.summary)
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_artifacts(out: &RunOutput, dir: &Path, svg: bool) -> Result<()> {
    fs::write(dir.join("scenario.toml"), out.scenario.to_toml()?)?;
    let trace = out.sim.output_trace();
    if out.scenario.outputs.trace {
        write_trace_csv(&trace, &dir.join("trace.csv"))?;
    }
    for (t, h) in &out.sim.histograms {
        write_histogram_csv(h, &dir.join(format!("histogram_t{t:.2}.csv")))?;
    }
    for p in &out.sim.probes {
        write_probe_csv(p, &dir.join(format!("probe_{}.csv", p.id)))?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)?)?;
    if svg {
        let metrics: Vec<_> = out.summary.events.iter().map(|e| (e.t_min, e.metrics)).collect();
        emit_svg(&trace, &metrics, &out.sim.probes, &dir.join("trace.svg"))?;
    }
    Ok(())
}

pub fn write_trace_csv(trace: &PowerTrace<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_min", "power_MW", "mean_theta_C", "frac_on"])?;
    for i in 0..trace.len() {
        w.write_record([
            format!("{:.4}", trace.t[i]),
            format!("{:.6}", trace.power[i]),
            format!("{:.6}", trace.mean_theta[i]),
            format!("{:.6}", trace.frac_on[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(h: &HistogramSnapshot<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lower_C", "bin_upper_C", "density_on", "density_off"])?;
    for i in 0..h.bins() {
        w.write_record([
            format!("{:.4}", h.bin_edges[i]),
            format!("{:.4}", h.bin_edges[i + 1]),
            format!("{:.6}", h.density_on[i]),
            format!("{:.6}", h.density_off[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_probe_csv(p: &DeviceTrace<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_min", "theta_C", "on", "band_lower_C", "band_upper_C", "protocol_active"])?;
    for s in &p.samples {
        w.write_record([
            format!("{:.4}", s.t),
            format!("{:.6}", s.theta),
            u8::from(s.mode.is_on()).to_string(),
            format!("{:.4}", s.active_band.lower),
            format!("{:.4}", s.active_band.upper),
            u8::from(!s.idle).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 50.0;
const PROBE_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Panel<'a> {
    title: String,
    x: (f64, f64),
    y: (f64, f64),
    y_label: &'a str,
    lines: Vec<(Vec<(f64, f64)>, &'a str)>,
    guides: Vec<(f64, &'a str)>,
}

impl Panel<'_> {
    fn render(&self, out: &mut String, top: f64) {
        let (x0, x1) = self.x;
        let (y0, y1) = self.y;
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (PANEL_W - 2.0 * MARGIN);
        let sy = |y: f64| top + PANEL_H - 30.0 - (y - y0) / (y1 - y0) * (PANEL_H - 60.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="13">{}</text>"#, MARGIN, top + 18.0, self.title);
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            MARGIN,
            top + 30.0,
            PANEL_W - 2.0 * MARGIN,
            PANEL_H - 60.0
        );
        for (label, x, anchor) in [(x0, sx(x0), "start"), (x1, sx(x1), "end")] {
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="{anchor}">{label:.0} min</text>"#,
                top + PANEL_H - 16.0
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.1}</text>"#,
                MARGIN - 4.0,
                sy(v) + 3.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="12" y="{:.1}" font-size="10" transform="rotate(-90 12 {:.1})">{}</text>"#,
            top + PANEL_H / 2.0,
            top + PANEL_H / 2.0,
            self.y_label
        );
        for &(y, color) in &self.guides {
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                sx(x0),
                sy(y),
                sx(x1),
                sy(y)
            );
        }
        for (points, color) in &self.lines {
            let pts: Vec<String> = points
                .iter()
                .filter(|(x, _)| *x >= x0 && *x <= x1)
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.join(" ")
            );
        }
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// Power panels (one per event, or one for the whole trace) followed by a
/// probe temperature panel with each probe's customer band as guides.
pub fn render_svg(
    trace: &PowerTrace<f64>,
    metrics: &[(f64, Option<PulseMetrics<f64>>)],
    probes: &[DeviceTrace<f64>],
) -> Result<String> {
    if trace.is_empty() {
        return Err(Error::TraceTooShort("cannot plot an empty trace".into()));
    }
    let power: Vec<(f64, f64)> = trace.t.iter().copied().zip(trace.power.iter().copied()).collect();
    let mut panels = Vec::new();
    let windows: Vec<(String, f64, f64, Option<PulseMetrics<f64>>)> = if trace.events.is_empty() {
        vec![("Aggregate power".to_string(), trace.start(), trace.end(), None)]
    } else {
        trace
            .events
            .iter()
            .enumerate()
            .map(|(i, (t, c))| {
                let next = trace.events.get(i + 1).map_or(trace.end(), |e| e.0);
                let m = metrics.iter().find(|(te, _)| (te - t).abs() < 1e-9).and_then(|(_, m)| *m);
                let title = format!("Aggregate power, {} at t = {t:.1} min", c.label());
                (title, (t - 30.0).max(trace.start()), next.min(t + 240.0).max(t + 1.0), m)
            })
            .collect()
    };
    for (title, a, b, m) in windows {
        let y = padded_range(power.iter().filter(|(t, _)| *t >= a && *t <= b).map(|p| p.1));
        let guides = m.map(|m| vec![(m.p_steady, "#888")]).unwrap_or_default();
        panels.push(Panel {
            title,
            x: (a, b.max(a + 1e-9)),
            y,
            y_label: "MW",
            lines: vec![(power.clone(), "#222")],
            guides,
        });
    }
    if !probes.is_empty() {
        let lines: Vec<(Vec<(f64, f64)>, &str)> = probes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.samples.iter().map(|s| (s.t, s.theta)).collect(), PROBE_COLORS[i % PROBE_COLORS.len()]))
            .collect();
        let guides: Vec<(f64, &str)> = probes
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                let c = PROBE_COLORS[i % PROBE_COLORS.len()];
                [(p.customer_band.lower, c), (p.customer_band.upper, c)]
            })
            .collect();
        let y = padded_range(
            lines.iter().flat_map(|(l, _)| l.iter().map(|p| p.1)).chain(guides.iter().map(|g| g.0)),
        );
        panels.push(Panel {
            title: "Probe temperatures (dashed: customer band)".into(),
            x: (trace.start(), trace.end().max(trace.start() + 1e-9)),
            y,
            y_label: "°C",
            lines,
            guides,
        });
    }

    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, i as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_svg(
    trace: &PowerTrace<f64>,
    metrics: &[(f64, Option<PulseMetrics<f64>>)],
    probes: &[DeviceTrace<f64>],
    path: &Path,
) -> Result<()> {
    fs::write(path, render_svg(trace, metrics, probes)?)?;
    Ok(())
}
