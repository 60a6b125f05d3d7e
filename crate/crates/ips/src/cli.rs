//! The `ips` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
//!
//! For `experiment`, values in the config file take precedence over the
//! matching flags, and flags over built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use ips_core::channel::{extract_fap, synthesize_cir};
use ips_core::locate::SolverParams;
use ips_core::pipeline::Variant;
use ips_core::raypath::{enumerate_mpcs, MpcOptions};
use ips_core::rng::stream;
use ips_core::scenario::{generate_scene, ScenarioParams};
use ips_core::scene::{build_scene, AnchorSpec, SceneModel};
use ips_core::slp::{run_session, SessionConfig, SlpChannel, SlpError, SlpTopology};
use ips_core::Point3;
use rand::Rng;

use crate::error::Error;
use crate::harness::{
    bounds_grid, export_results, grid_nodes, localize_rows, medians, run_experiment, simulate_measurements, BandSpec,
    ExperimentConfig, GridSpec, MeasurementSet,
};
use crate::io::{load_scene, read_measurements, read_nodes, write_bounds, write_estimates, write_measurements, write_nodes};
use crate::trace::render_trace;

#[derive(Debug, Parser)]
#[command(name = "ips", version, about = "Outdoor-to-indoor positioning: simulation, localization, bounds and experiments")]
#[command(propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate range measurements from the scene's anchors to indoor nodes
    Simulate(SimulateArgs),
    /// Estimate node positions from a measurement file
    Localize(LocalizeArgs),
    /// Compute position error bounds over a node grid
    Crlb(CrlbArgs),
    /// Run a Monte Carlo experiment and write CSV tables and a CDF plot
    Experiment(ExperimentArgs),
    /// Run one sidelink positioning session and print its message trace
    SlpDemo(SlpDemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MpcSelection {
    /// First arriving path per anchor only
    Fap,
    /// First arriving paths plus every detectable multipath component
    All,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Scene JSON file
    #[arg(long)]
    pub scene: PathBuf,
    /// FR1, FR2, FR3 or a carrier frequency in Hz; defaults to the scene's carrier
    #[arg(long)]
    pub band: Option<String>,
    /// Seed for every random draw
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output measurement CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Node grid spacing in meters (ignored with --nodes)
    #[arg(long, default_value_t = 1.0)]
    pub grid: f64,
    /// Node CSV to simulate instead of the grid
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Also write the simulated node positions to this CSV
    #[arg(long)]
    pub nodes_out: Option<PathBuf>,
    /// Which measurements to write
    #[arg(long, value_enum, default_value_t = MpcSelection::All)]
    pub mpcs: MpcSelection,
    /// Trial index (selects independent noise for the same seed)
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
}

#[derive(Debug, clap::Args)]
pub struct LocalizeArgs {
    /// Measurement CSV written by `simulate`
    #[arg(long)]
    pub meas: PathBuf,
    /// lls, ippa, mech-ls, dnls-map or dnls-facade
    #[arg(long)]
    pub method: String,
    /// Scene JSON; required by mech-ls, dnls-map and dnls-facade
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output estimate CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Node CSV with true positions, used to fill in the error columns
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Iteration cap for the iterative estimators
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct CrlbArgs {
    /// Scene JSON file
    #[arg(long)]
    pub scene: PathBuf,
    /// Node grid spacing in meters
    #[arg(long, default_value_t = 1.0)]
    pub grid: f64,
    /// Output bounds CSV
    #[arg(long)]
    pub out: PathBuf,
    /// FR1, FR2, FR3 or a carrier frequency in Hz; defaults to the scene's carrier
    #[arg(long)]
    pub band: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (the config's output_dir wins when set)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, when the config has none
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials per node, when the config has none
    #[arg(long)]
    pub trials: Option<u32>,
    /// Band, when the config has none
    #[arg(long)]
    pub band: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct SlpDemoArgs {
    /// Number of anchor UEs around the building
    #[arg(long, default_value_t = 4)]
    pub anchors: usize,
    /// Seed for the scene, the target position and ranging noise
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Accept fewer than four anchors and report a 2D fix
    #[arg(long)]
    pub degraded: bool,
    /// Make the location server refuse the request
    #[arg(long)]
    pub deny: bool,
    /// Ranging noise in meters; defaults to the scene's value
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Localize(a) => localize(a),
        Command::Crlb(a) => crlb(a),
        Command::Experiment(a) => experiment(a),
        Command::SlpDemo(a) => slp_demo(a),
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn scene_with_band(path: &Path, band: Option<&str>) -> Result<SceneModel, CliError> {
    let (mut config, scene) = load_scene(path)?;
    let Some(band) = band else {
        return Ok(scene);
    };
    config.band.carrier_hz = BandSpec::parse(band).map_err(usage)?.carrier_hz();
    build_scene(&config).map_err(|e| usage(format!("--band: {e}")))
}

fn check_spacing(grid: f64) -> Result<GridSpec, CliError> {
    if !(grid > 0.0) || !grid.is_finite() {
        return Err(usage("--grid must be a positive spacing in meters"));
    }
    Ok(GridSpec::with_spacing(grid))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let scene = scene_with_band(&a.scene, a.band.as_deref())?;
    let nodes: Vec<Point3> = match &a.nodes {
        Some(p) => read_nodes(p)?.iter().map(|r| r.point()).collect(),
        None => grid_nodes(&scene.building, &check_spacing(a.grid)?),
    };
    if nodes.is_empty() {
        return Err(CliError::Runtime("no nodes to simulate".into()));
    }
    let set = match a.mpcs {
        MpcSelection::Fap => MeasurementSet::Fap,
        MpcSelection::All => MeasurementSet::All,
    };
    let rows = simulate_measurements(&scene, &nodes, a.seed, a.trial, set, MpcOptions::default())?;
    write_measurements(&a.out, &rows)?;
    if let Some(p) = &a.nodes_out {
        write_nodes(p, &nodes)?;
    }
    Ok(())
}

fn localize(a: LocalizeArgs) -> Result<(), CliError> {
    let variant: Variant = a.method.parse().map_err(|e| usage(format!("--method: {e}")))?;
    let needs_building = !matches!(variant, Variant::UnawareLls | Variant::UnawareIppa);
    if needs_building && a.scene.is_none() {
        return Err(usage(format!("--scene is required for method {}", a.method)));
    }
    let scene = a.scene.as_deref().map(load_scene).transpose()?.map(|(_, s)| s);
    let rows = read_measurements(&a.meas)?;
    let truth: BTreeMap<u64, Point3> = match &a.nodes {
        Some(p) => read_nodes(p)?.iter().map(|r| (r.node_index, r.point())).collect(),
        None => BTreeMap::new(),
    };
    let mut solver = SolverParams::default();
    if let Some(n) = a.max_iterations {
        solver.max_iterations = n;
    }
    solver.validate().map_err(usage)?;
    let estimates = localize_rows(&rows, variant, scene.as_ref().map(|s| &s.building), &solver, &truth)?;
    write_estimates(&a.out, &estimates)?;
    Ok(())
}

fn crlb(a: CrlbArgs) -> Result<(), CliError> {
    let scene = scene_with_band(&a.scene, a.band.as_deref())?;
    let nodes = grid_nodes(&scene.building, &check_spacing(a.grid)?);
    let rows = bounds_grid(&scene, &nodes, &MpcOptions::default())?;
    write_bounds(&a.out, &rows)?;
    Ok(())
}

/// Fills config keys that the file leaves unset from the flags.
fn merge_flags(text: &str, a: &ExperimentArgs) -> Result<String, CliError> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| usage(format!("--config: {e}")))?;
    let obj = value.as_object_mut().ok_or_else(|| usage("--config: expected a JSON object"))?;
    // an explicit null counts as unset
    let mut fill = |key: &str, v: serde_json::Value| {
        let slot = obj.entry(key).or_insert(serde_json::Value::Null);
        if slot.is_null() {
            *slot = v;
        }
    };
    if let Some(s) = a.seed {
        fill("seed", s.into());
    }
    if let Some(t) = a.trials {
        fill("trials", t.into());
    }
    if let Some(b) = &a.band {
        let b = BandSpec::parse(b).map_err(usage)?;
        fill("band", serde_json::to_value(b).expect("band serializes"));
    }
    if let Some(o) = &a.out {
        fill("output_dir", serde_json::Value::String(o.to_string_lossy().into_owned()));
    }
    Ok(value.to_string())
}

fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let text = crate::io::read_text(&a.config)?;
    let merged = merge_flags(&text, &a)?;
    let mut config = ExperimentConfig::from_json(&merged).map_err(|e| usage(format!("--config: {e}")))?;
    config.resolve_relative_paths(&a.config);
    let Some(out) = config.output_dir.clone() else {
        return Err(usage("--out is required when the config has no output_dir"));
    };
    let results = run_experiment(&config)?;
    export_results(&results, &out)?;
    let mut summary = String::new();
    for (name, median) in medians(&results) {
        writeln!(summary, "{name:<20} median {median:.3} m").expect("writing to a string");
    }
    writeln!(
        summary,
        "first arriving paths: {} of {} links detected, diffraction fraction {:.3}",
        results.fap.detected,
        results.fap.links,
        results.fap.diffraction_fraction()
    )
    .expect("writing to a string");
    print!("{summary}");
    eprintln!("{} nodes in {:.1} s on {} threads", results.nodes.len(), results.runtime.wall_seconds, results.runtime.threads);
    Ok(())
}

/// Ranging follows the first detectable path of the simulated channel.
struct FirstPathChannel<'a> {
    scene: &'a SceneModel,
    seed: u64,
}

impl SlpChannel for FirstPathChannel<'_> {
    fn link_length(&mut self, anchor: &AnchorSpec, target: &Point3) -> Option<f64> {
        let k = self.scene.anchors.iter().position(|a| a.id == anchor.id)? as u64;
        let mpcs = enumerate_mpcs(anchor, target, &self.scene.building, &MpcOptions::default()).ok()?;
        let mut rng = stream(self.seed, &[SLP_CHANNEL, k]);
        let cir = synthesize_cir(&mpcs, &self.scene.band, &self.scene.loss_params, &mut rng);
        let fap = extract_fap(&cir, &self.scene.loss_params, &mut rng).ok()?;
        Some(fap.range)
    }
}

const SLP_CHANNEL: u64 = 0x736c_7063;
const SLP_TARGET: u64 = 0x736c_7074;

fn slp_demo(a: SlpDemoArgs) -> Result<(), CliError> {
    if a.anchors == 0 {
        return Err(usage("--anchors must be at least 1"));
    }
    let params = ScenarioParams { num_anchors: a.anchors, ..Default::default() };
    let (_, scene) = generate_scene(&params, a.seed).map_err(|e| usage(format!("--anchors: {e}")))?;
    let nodes = grid_nodes(&scene.building, &GridSpec::default());
    let target = nodes[stream(a.seed, &[SLP_TARGET]).random_range(0..nodes.len())];
    let topology = SlpTopology {
        client_id: "client".into(),
        target_id: "target".into(),
        target_position: target,
        target_clock_offset: 2.5e-3,
        anchors: scene.anchors.clone(),
    };
    let config = SessionConfig {
        seed: a.seed,
        noise_sigma_m: a.sigma.unwrap_or(scene.loss_params.toa_sigma_m),
        authorized: !a.deny,
        degraded_mode: a.degraded,
        floor_height: scene.building.floor_height,
        ..Default::default()
    };
    if !(config.noise_sigma_m >= 0.0) {
        return Err(usage("--sigma must be non-negative"));
    }
    let mut channel = FirstPathChannel { scene: &scene, seed: a.seed };
    match run_session(&topology, &mut channel, &config) {
        Ok(outcome) => {
            print!("{}", render_trace(&outcome.trace)?);
            let p = outcome.report.position;
            println!("target {:.3} {:.3} {:.3}", target.x, target.y, target.z);
            println!("fix {:.3} {:.3} {:.3} method {}", p.x, p.y, p.z, outcome.report.method_tag);
            println!("error {:.3} m{}", (p - target).norm(), if outcome.degraded { " (degraded 2D fix)" } else { "" });
            Ok(())
        }
        Err(SlpError::SessionFailed { reason, trace }) => {
            print!("{}", render_trace(&trace)?);
            Err(CliError::Runtime(format!("session failed: {reason:?}")))
        }
        Err(e) => Err(CliError::Runtime(e.to_string())),
    }
}
