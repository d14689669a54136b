mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::{scaled, ConfigError, ExperimentConfig, SweepKind};
use memneuron::boundary::{all_boundaries, compare_boundaries};
use memneuron::circuit::integrate;
use memneuron::device::quasistatic_iv_sweep;
use memneuron::network::{calibrate_synapses, chain_simulate, perceptron_forward, Pattern};
use memneuron::spikes::classify;
use memneuron::sweep::{activation_curve, capacitance_study, count_ranges, phase_diagram, Cell};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "memneuron", version, about = "NbO2 memristive neuron simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see `memneuron presets`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Primary output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Quasi-static I-V sweep of one device.
    Iv,
    /// Single transient of the neuron at its configured operating point.
    Simulate,
    /// Parameter sweep: R_in-V_in diagram, capacitance grid or count range.
    Phase,
    /// Analytic phase boundaries.
    Boundaries,
    /// Pattern classification with the nine-input perceptron.
    Perceptron,
    /// Three neurons in series.
    Chain,
    /// Spikes per period versus input current.
    Activation,
    /// List built-in presets.
    Presets,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Iv => "iv",
            Command::Simulate => "simulate",
            Command::Phase => "phase",
            Command::Boundaries => "boundaries",
            Command::Perceptron => "perceptron",
            Command::Chain => "chain",
            Command::Activation => "activation",
            Command::Presets => "presets",
        }
    }
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    Failure::Numerical(e.to_string())
}

/// Files produced by one command, written only once everything succeeded.
struct Outputs {
    files: Vec<(PathBuf, String)>,
    summary: Map<String, Value>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new(), summary: Map::new() }
    }

    fn add(&mut self, path: PathBuf, body: String) {
        self.files.push((path, body));
    }

    fn json(&mut self, path: PathBuf, value: &Value) {
        let mut s = serde_json::to_string_pretty(value).expect("json");
        s.push('\n');
        self.add(path, s);
    }

    fn note(&mut self, key: &str, v: Value) {
        self.summary.insert(key.to_string(), v);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Config(m) => (2, "config", m),
                Failure::Numerical(m) => (3, "numerical", m),
                Failure::Io(m) => (1, "io", m),
            };
            eprintln!("memneuron {}: {kind} error: {msg}", cli.command.name());
            println!("{}", json!({ "command": cli.command.name(), "status": "error", "kind": kind }));
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<Value, Failure> {
    if cli.command == Command::Presets {
        let names: Vec<&str> = config::preset_names().collect();
        for n in &names {
            eprintln!("{n}");
        }
        return Ok(json!({ "command": "presets", "status": "ok", "presets": names }));
    }
    let cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::from_file(&path.to_string_lossy())?,
        (None, Some(name)) => ExperimentConfig::from_preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if cli.threads == Some(0) {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    let primary = primary_path(cli, &cfg);
    let mut out = Outputs::new();
    match cli.command {
        Command::Iv => iv(&cfg, &primary, &mut out)?,
        Command::Simulate => simulate(&cfg, &primary, &mut out)?,
        Command::Phase => phase(&cfg, cli.threads, &primary, &mut out)?,
        Command::Boundaries => boundaries(&cfg, &primary, &mut out)?,
        Command::Perceptron => perceptron(&cfg, cli.threads, &primary, &mut out)?,
        Command::Chain => chain(&cfg, &primary, &mut out)?,
        Command::Activation => activation(&cfg, cli.threads, &primary, &mut out)?,
        Command::Presets => unreachable!(),
    }
    for (path, body) in &out.files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, body).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    let mut summary = Map::new();
    summary.insert("command".into(), cli.command.name().into());
    summary.insert("status".into(), "ok".into());
    summary.insert("outputs".into(), out.files.iter().map(|(p, _)| Value::from(p.display().to_string())).collect());
    summary.extend(out.summary);
    Ok(Value::Object(summary))
}

fn primary_path(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = &cli.out {
        return p.clone();
    }
    if let Some(p) = &cfg.output.path {
        return PathBuf::from(p);
    }
    let ext = if cli.command == Command::Boundaries || cli.command == Command::Chain { "json" } else { "csv" };
    PathBuf::from(format!("{}.{ext}", cli.command.name()))
}

fn sidecar_path(primary: &Path) -> PathBuf {
    primary.with_extension("json")
}

/// Common JSON envelope: schema tag, command and the resolved config.
fn envelope(schema: &str, cfg: &ExperimentConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema".into(), schema.into());
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("config".into(), serde_json::to_value(cfg).expect("config json"));
    m
}

fn cell_summary(c: &Cell) -> Value {
    json!({
        "regime": c.regime.as_str(),
        "spikes_per_burst": c.spikes_per_burst,
        "spikes_per_period": c.spikes_per_period(),
        "duty_cycle": c.duty_cycle,
        "inter_burst_freq_hz": c.inter_burst_freq_hz,
        "stationary": c.stationary,
        "duration_s": c.duration,
        "profile": c.profile.as_ref().map(|p| p.summary()),
        "error": c.error,
    })
}

fn cell_columns(c: &Cell) -> String {
    format!("{},{},{},{}", c.regime.as_str(), c.spikes_per_burst, c.duty_cycle, c.inter_burst_freq_hz)
}

fn iv(cfg: &ExperimentConfig, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let curve = quasistatic_iv_sweep(&cfg.device_model(), &cfg.iv.spec()).map_err(numerical)?;
    let mut side = envelope("memneuron.iv.v1", cfg);
    side.insert("thermal".into(), curve.thermal.into());
    side.insert("anchors".into(), serde_json::to_value(curve.anchors).expect("json"));
    side.insert("no_switching".into(), curve.no_switching().into());
    out.note("anchors", serde_json::to_value(curve.anchors).expect("json"));
    out.add(primary.to_path_buf(), curve.to_csv());
    out.json(sidecar_path(primary), &Value::Object(side));
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let p = cfg.neuron_params();
    let trace =
        integrate(&p, &cfg.initial_state(), scaled(cfg.simulate.duration_us, -6), &cfg.simulate.control()).map_err(numerical)?;
    let (profile, error) = match classify(&trace, &cfg.detector.config(), &cfg.gap.rule()) {
        Ok(pr) => (Some(pr.summary()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut side = envelope("memneuron.trace.v1", cfg);
    side.insert("samples".into(), trace.len().into());
    side.insert("dt_s".into(), trace.dt.into());
    side.insert("profile".into(), serde_json::to_value(&profile).expect("json"));
    side.insert("profile_error".into(), serde_json::to_value(&error).expect("json"));
    out.note("profile", serde_json::to_value(&profile).expect("json"));
    out.add(primary.to_path_buf(), trace.to_csv());
    out.json(sidecar_path(primary), &Value::Object(side));
    Ok(())
}

fn phase(cfg: &ExperimentConfig, threads: Option<usize>, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let p = cfg.neuron_params();
    let s = cfg.sweep_settings(threads);
    match cfg.sweep.kind {
        SweepKind::RinVin => {
            let mut d = phase_diagram(&cfg.sweep.grid(), &p, &s).map_err(numerical)?;
            let mut side = envelope(memneuron::sweep::DIAGRAM_SCHEMA, cfg);
            if cfg.sweep.compare_boundaries {
                let lines = all_boundaries(&cfg.boundary_params()).map_err(numerical)?;
                let report = compare_boundaries(&d, &lines[..3], cfg.sweep.boundary_rel_tolerance);
                d.boundaries = lines;
                side.insert("boundary_report".into(), serde_json::to_value(&report).expect("json"));
                out.note(
                    "boundaries_within_tolerance",
                    report.lines.iter().map(|l| (l.label.as_str().to_string(), Value::from(l.all_within))).collect(),
                );
            }
            let Value::Object(body) = serde_json::to_value(d.sidecar()).expect("json") else { unreachable!() };
            for (k, v) in body {
                side.entry(k).or_insert(v);
            }
            side.insert("burst_counts".into(), serde_json::to_value(d.burst_counts()).expect("json"));
            out.note("cells", d.cells.len().into());
            out.note("burst_counts", serde_json::to_value(d.burst_counts()).expect("json"));
            out.add(primary.to_path_buf(), d.to_csv());
            out.json(sidecar_path(primary), &Value::Object(side));
        }
        SweepKind::Capacitance => {
            let farads = |v: &[f64]| v.iter().map(|&c| scaled(c, -9)).collect::<Vec<_>>();
            let pts = capacitance_study(&farads(&cfg.sweep.c1_nf_values), &farads(&cfg.sweep.c2_nf_values), &p, &s);
            let mut csv = String::from(CAP_HEADER);
            for pt in &pts {
                csv += &format!("{},{},{},{},{}\n", scaled(pt.c1, 9), scaled(pt.c2, 9), pt.cell.v_in, pt.cell.r_in, cell_columns(&pt.cell));
            }
            let mut side = envelope("memneuron.capacitance_study.v1", cfg);
            side.insert(
                "points".into(),
                pts.iter().map(|pt| json!({ "c1_nf": scaled(pt.c1, 9), "c2_nf": scaled(pt.c2, 9), "cell": cell_summary(&pt.cell) })).collect(),
            );
            out.note("spikes_per_period", pts.iter().map(|pt| Value::from(pt.cell.spikes_per_period())).collect());
            out.add(primary.to_path_buf(), csv);
            out.json(sidecar_path(primary), &Value::Object(side));
        }
        SweepKind::CountRange => {
            let c1: Vec<f64> = cfg.sweep.c1_nf_values.iter().map(|&c| scaled(c, -9)).collect();
            let c2 = scaled(*cfg.sweep.c2_nf_values.first().ok_or_else(|| Failure::Config("sweep.c2_nf_values is empty".into()))?, -9);
            let v_in = scaled(cfg.neuron.v_in_mv, -3);
            let ranges = count_ranges(&c1, c2, v_in, &cfg.sweep.r_in(), &p, &s);
            let mut csv = String::from(CAP_HEADER);
            for r in &ranges {
                for c in &r.cells {
                    csv += &format!("{},{},{},{},{}\n", scaled(r.c1, 9), scaled(r.c2, 9), c.v_in, c.r_in, cell_columns(c));
                }
            }
            let summary: Vec<Value> = ranges
                .iter()
                .map(|r| json!({ "c1_nf": scaled(r.c1, 9), "c2_nf": scaled(r.c2, 9), "v_in": r.v_in, "counts": r.counts, "min": r.min, "max": r.max }))
                .collect();
            let mut side = envelope("memneuron.count_range.v1", cfg);
            side.insert("ranges".into(), summary.clone().into());
            out.note("ranges", summary.into());
            out.add(primary.to_path_buf(), csv);
            out.json(sidecar_path(primary), &Value::Object(side));
        }
    }
    Ok(())
}

const CAP_HEADER: &str = "c1_nf,c2_nf,v_in,r_in,regime,spikes_per_burst,duty_cycle,inter_burst_freq_hz\n";

fn boundaries(cfg: &ExperimentConfig, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let lines = all_boundaries(&cfg.boundary_params()).map_err(numerical)?;
    let v = cfg.sweep.v_in();
    let mut doc = envelope("memneuron.boundaries.v1", cfg);
    doc.insert("lines".into(), lines.iter().map(|l| serde_json::to_value(l.export(&v)).expect("json")).collect());
    doc.insert("validity".into(), lines.iter().map(|l| (l.label.as_str().to_string(), Value::from(l.validity.clone()))).collect());
    out.note(
        "lines",
        lines.iter().map(|l| json!({ "label": l.label.as_str(), "slope_ohm_per_volt": l.slope, "v_intercept_volts": l.intercept_voltage })).collect(),
    );
    out.json(primary.to_path_buf(), &Value::Object(doc));
    Ok(())
}

fn perceptron(cfg: &ExperimentConfig, threads: Option<usize>, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let p = cfg.neuron_params();
    let s = cfg.sweep_settings(threads);
    let patterns = cfg.patterns()?;
    let mut bank = cfg.synapses();
    let mut side = envelope("memneuron.perceptron.v1", cfg);
    if cfg.perceptron.calibrate {
        let pc = &cfg.perceptron;
        let cal = calibrate_synapses(&patterns, &pc.targets, Some(&Pattern::uniform("low", scaled(pc.low_mv, -3))), bank, pc.calibration_grid_points, pc.calibration_sweeps, &p, &s)
            .map_err(numerical)?;
        bank = cal.bank;
        out.note("calibration_cost", cal.cost.into());
        side.insert("calibration".into(), serde_json::to_value(&cal).expect("json"));
    }
    let cells = s
        .run(|| {
            use rayon::prelude::*;
            patterns.par_iter().map(|pat| perceptron_forward(pat, &bank, &p, &s)).collect::<Result<Vec<_>, _>>()
        })
        .map_err(numerical)?;
    let mut csv = String::from("label,v_eq_V,r_eq_ohm,regime,spikes_per_burst,duty_cycle,inter_burst_freq_hz,spikes_per_period\n");
    for (pat, c) in patterns.iter().zip(&cells) {
        csv += &format!("{},{},{},{},{}\n", pat.label, c.v_in, c.r_in, cell_columns(c), c.spikes_per_period());
    }
    side.insert("synapses_ohm".into(), serde_json::to_value(bank.resistances).expect("json"));
    side.insert(
        "results".into(),
        patterns
            .iter()
            .zip(&cells)
            .map(|(pat, c)| json!({ "label": pat.label, "pixels_V": pat.pixels, "v_eq_V": c.v_in, "r_eq_ohm": c.r_in, "cell": cell_summary(c) }))
            .collect(),
    );
    out.note(
        "spikes_per_period",
        patterns.iter().zip(&cells).map(|(pat, c)| (pat.label.clone(), Value::from(c.spikes_per_period()))).collect(),
    );
    out.add(primary.to_path_buf(), csv);
    out.json(sidecar_path(primary), &Value::Object(side));
    Ok(())
}

fn chain(cfg: &ExperimentConfig, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let neurons = chain_simulate(
        &cfg.chain_config(),
        scaled(cfg.chain.duration_us, -6),
        &cfg.simulate.control(),
        &cfg.detector.config(),
        &cfg.gap.rule(),
    )
    .map_err(numerical)?;
    let json_path = sidecar_path(primary);
    let stem = json_path.with_extension("");
    let mut results = Vec::new();
    for (k, n) in neurons.iter().enumerate() {
        let path = PathBuf::from(format!("{}_n{}.csv", stem.display(), k + 1));
        results.push(json!({
            "neuron": k + 1,
            "trace": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "spikes_per_period": n.spikes_per_period(),
            "profile": n.profile.as_ref().map(|p| p.summary()),
            "error": n.error,
        }));
        out.add(path, n.trace.to_csv());
    }
    let mut doc = envelope("memneuron.chain.v1", cfg);
    doc.insert("neurons".into(), results.into());
    out.note("spikes_per_period", neurons.iter().map(|n| Value::from(n.spikes_per_period())).collect());
    out.json(json_path, &Value::Object(doc));
    Ok(())
}

fn activation(cfg: &ExperimentConfig, threads: Option<usize>, primary: &Path, out: &mut Outputs) -> Result<(), Failure> {
    let p = cfg.neuron_params();
    let amps = cfg.activation.amplitudes();
    let curve = activation_curve(&amps, &p, &cfg.sweep_settings(threads)).map_err(numerical)?;
    let mut csv = String::from("i_amps,regime,spikes_per_burst,duty_cycle,inter_burst_freq_hz,spikes_per_period\n");
    for ((i, c), n) in curve.amplitudes.iter().zip(&curve.cells).zip(&curve.counts) {
        csv += &format!("{i},{},{n}\n", cell_columns(c));
    }
    let mut side = envelope("memneuron.activation.v1", cfg);
    side.insert("amplitudes_A".into(), serde_json::to_value(&curve.amplitudes).expect("json"));
    side.insert("counts".into(), serde_json::to_value(&curve.counts).expect("json"));
    side.insert("fit".into(), serde_json::to_value(curve.fit).expect("json"));
    out.note("counts", serde_json::to_value(&curve.counts).expect("json"));
    out.note("fit", serde_json::to_value(curve.fit).expect("json"));
    out.add(primary.to_path_buf(), csv);
    out.json(sidecar_path(primary), &Value::Object(side));
    Ok(())
}
