//! Monte Carlo experiments over indoor node grids.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ips_core::bounds::{node_bounds, NodeBounds};
use ips_core::channel::{calibrate_threshold, path_gain, LosLabel, LossParams};
use ips_core::locate::{estimate_floor, SolverParams};
use ips_core::pipeline::{estimate, labelled_faps, mpc_measurements, run_variant, simulate_node, NodeSimulation, PipelineConfig, Variant};
use ips_core::raypath::{enumerate_mpcs, Mechanism, Mpc, MpcOptions};
use ips_core::scenario::{generate_scene_config, ScenarioParams};
use ips_core::scene::{build_scene, classify_band, floor_of, AnchorSpec, BuildingModel, FrequencyRange, SceneConfig, SceneModel};
use ips_core::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_writer, finish, load_scene, BoundsRow, EstimateRow, MeasurementRow, RowKind};
use crate::stats::{cdf, percentile, rmse};
use crate::svg::{render_cdf, Curve};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

/// Where the scene comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Generate(ScenarioParams),
    /// Scene JSON; relative paths resolve against the config file.
    File(PathBuf),
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Generate(ScenarioParams::default())
    }
}

/// A frequency range (default carrier) or an explicit carrier in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandSpec {
    Range(FrequencyRange),
    Hz(f64),
}

impl BandSpec {
    pub fn carrier_hz(&self) -> f64 {
        match self {
            BandSpec::Range(r) => r.default_carrier_hz(),
            BandSpec::Hz(h) => *h,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FR1" => Ok(BandSpec::Range(FrequencyRange::Fr1)),
            "FR2" => Ok(BandSpec::Range(FrequencyRange::Fr2)),
            "FR3" => Ok(BandSpec::Range(FrequencyRange::Fr3)),
            _ => s
                .parse::<f64>()
                .map(BandSpec::Hz)
                .map_err(|_| Error::Parse(format!("band must be FR1, FR2, FR3 or a carrier in Hz, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub spacing_m: f64,
    /// Clearance from the facades.
    pub margin_m: f64,
    /// Node height above each floor slab.
    pub node_height_m: f64,
    /// Floors to sample; all floors when absent.
    pub floors: Option<Vec<usize>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { spacing_m: 1.0, margin_m: 0.5, node_height_m: 1.5, floors: None }
    }
}

impl GridSpec {
    pub fn with_spacing(spacing_m: f64) -> Self {
        Self { spacing_m, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_m > 0.0) || !(self.margin_m > 0.0) || !(self.node_height_m > 0.0) {
            return Err(Error::parse("grid spacing, margin and node height must be positive"));
        }
        Ok(())
    }
}

/// Regular node grid strictly inside the building, floor by floor.
pub fn grid_nodes(building: &BuildingModel, grid: &GridSpec) -> Vec<Point3> {
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let span = hi - lo - 2.0 * grid.margin_m;
        if span < 0.0 {
            return Vec::new();
        }
        let n = (span / grid.spacing_m + 1e-9).floor() as usize + 1;
        (0..n).map(|i| lo + grid.margin_m + i as f64 * grid.spacing_m).collect()
    };
    let xs = axis(building.footprint_min[0], building.footprint_max[0]);
    let ys = axis(building.footprint_min[1], building.footprint_max[1]);
    let floors: Vec<usize> = match &grid.floors {
        Some(f) => f.iter().copied().filter(|f| *f < building.num_floors).collect(),
        None => (0..building.num_floors).collect(),
    };
    let mut out = Vec::with_capacity(floors.len() * xs.len() * ys.len());
    for f in floors {
        let z = f as f64 * building.floor_height + grid.node_height_m.min(building.floor_height * 0.999);
        for &x in &xs {
            for &y in &ys {
                out.push(Point3::new(x, y, z));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scene: SceneSource,
    /// Overrides the scene's carrier.
    pub band: Option<BandSpec>,
    pub grid: GridSpec,
    pub methods: Vec<Variant>,
    pub trials: u32,
    pub seed: u64,
    /// Replaces the scene's loss parameters; omitted fields take defaults.
    pub loss: Option<LossParams>,
    pub solver: SolverParams,
    pub mpc_options: MpcOptions,
    pub anchor_position_noise: bool,
    /// Grid nodes (every k-th) used to calibrate the LoS/NLoS threshold.
    pub calibration_stride: usize,
    pub bounds: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: EXPERIMENT_SCHEMA_VERSION,
            scene: SceneSource::default(),
            band: None,
            grid: GridSpec::default(),
            methods: Variant::ALL.to_vec(),
            trials: 1,
            seed: 42,
            loss: None,
            solver: SolverParams::default(),
            mpc_options: MpcOptions::default(),
            anchor_position_noise: true,
            calibration_stride: 5,
            bounds: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(Error::parse)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_json(&crate::io::read_text(path)?)?;
        c.resolve_relative_paths(path);
        Ok(c)
    }

    /// Makes a relative scene path relative to the config file's directory.
    pub fn resolve_relative_paths(&mut self, config_path: &Path) {
        if let (SceneSource::File(f), Some(dir)) = (&mut self.scene, config_path.parent()) {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported experiment schema_version {}", self.schema_version)));
        }
        self.grid.validate()?;
        if self.trials < 1 {
            return Err(Error::parse("trials must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::parse("methods must not be empty"));
        }
        if self.calibration_stride == 0 {
            return Err(Error::parse("calibration_stride must be at least 1"));
        }
        self.solver.validate().map_err(Error::parse)?;
        if let Some(l) = &self.loss {
            l.validate().map_err(Error::parse)?;
        }
        Ok(())
    }

    /// Scene after band and loss overrides.
    pub fn resolve_scene(&self) -> Result<(SceneConfig, SceneModel)> {
        let mut config = match &self.scene {
            SceneSource::Generate(params) => generate_scene_config(params, self.seed),
            SceneSource::File(path) => load_scene(path)?.0,
        };
        if let Some(b) = &self.band {
            config.band.carrier_hz = b.carrier_hz();
            classify_band(config.band.carrier_hz).map_err(|e| Error::Parse(e.to_string()))?;
        }
        if let Some(l) = &self.loss {
            config.loss_params = l.clone();
        }
        let scene = build_scene(&config)?;
        Ok((config, scene))
    }

    pub fn pipeline_config(&self, los_threshold_db: f64) -> PipelineConfig {
        PipelineConfig {
            mpc_options: self.mpc_options,
            solver: self.solver,
            los_threshold_db,
            anchor_position_noise: self.anchor_position_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSample {
    pub position: Point3,
    pub err_3d_m: f64,
    pub err_z_m: f64,
    pub floor_est: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub node_index: u64,
    pub trial: u32,
    pub method: Variant,
    /// Estimate, or the failure reason.
    pub outcome: std::result::Result<EstimateSample, String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FapCounts {
    pub links: u64,
    pub detected: u64,
    pub diffraction: u64,
}

impl FapCounts {
    fn add(&mut self, o: &FapCounts) {
        self.links += o.links;
        self.detected += o.detected;
        self.diffraction += o.diffraction;
    }

    /// Share of detected first arriving paths that are diffraction paths.
    pub fn diffraction_fraction(&self) -> f64 {
        if self.detected == 0 {
            0.0
        } else {
            self.diffraction as f64 / self.detected as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeOutcome {
    pub node_index: u64,
    pub position: Point3,
    pub floor_true: usize,
    pub bounds: Option<NodeBounds>,
    pub samples: Vec<Sample>,
    pub fap: FapCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct RuntimeStats {
    pub wall_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResults {
    pub methods: Vec<Variant>,
    pub band: FrequencyRange,
    pub carrier_hz: f64,
    pub trials: u32,
    pub los_threshold_db: f64,
    pub nodes: Vec<NodeOutcome>,
    pub fap: FapCounts,
    pub runtime: RuntimeStats,
}

impl ExperimentResults {
    pub fn samples(&self, method: Variant) -> impl Iterator<Item = &Sample> {
        self.nodes.iter().flat_map(|n| n.samples.iter()).filter(move |s| s.method == method)
    }

    pub fn errors(&self, method: Variant) -> Vec<f64> {
        self.samples(method).filter_map(|s| s.outcome.as_ref().ok().map(|e| e.err_3d_m)).collect()
    }

    pub fn z_errors(&self, method: Variant) -> Vec<f64> {
        self.samples(method).filter_map(|s| s.outcome.as_ref().ok().map(|e| e.err_z_m)).collect()
    }

    pub fn failures(&self, method: Variant) -> usize {
        self.samples(method).filter(|s| s.outcome.is_err()).count()
    }

    /// Fraction of successful estimates on the right floor.
    pub fn floor_accuracy(&self, method: Variant) -> Option<f64> {
        let mut ok = 0usize;
        let mut n = 0usize;
        for node in &self.nodes {
            for s in node.samples.iter().filter(|s| s.method == method) {
                if let Ok(e) = &s.outcome {
                    n += 1;
                    ok += usize::from(e.floor_est == node.floor_true);
                }
            }
        }
        (n > 0).then(|| ok as f64 / n as f64)
    }

    pub fn median_error(&self, method: Variant) -> Option<f64> {
        percentile(&self.errors(method), 0.5)
    }

    pub fn peb_1diff(&self) -> Vec<f64> {
        self.nodes.iter().filter_map(|n| n.bounds.and_then(|b| b.peb_1diff)).collect()
    }

    pub fn peb_multi(&self) -> Vec<f64> {
        self.nodes.iter().filter_map(|n| n.bounds.and_then(|b| b.peb_multi)).collect()
    }

    /// Per-node root mean square error of `method` over its trials.
    pub fn node_rmse(&self, method: Variant) -> Vec<(u64, Option<f64>)> {
        self.nodes
            .iter()
            .map(|n| {
                let e: Vec<f64> = n
                    .samples
                    .iter()
                    .filter(|s| s.method == method)
                    .filter_map(|s| s.outcome.as_ref().ok().map(|e| e.err_3d_m))
                    .collect();
                (n.node_index, rmse(&e))
            })
            .collect()
    }
}

/// MPCs the receiver can detect, per anchor link.
fn detectable_mpcs(sim: &NodeSimulation) -> Vec<Vec<Mpc>> {
    sim.links
        .iter()
        .map(|l| l.mpcs.iter().zip(&l.mpc_ranges).filter(|(_, r)| r.is_some()).map(|(m, _)| m.clone()).collect())
        .collect()
}

fn fap_counts(sim: &NodeSimulation) -> FapCounts {
    let mut c = FapCounts { links: sim.links.len() as u64, ..Default::default() };
    for l in &sim.links {
        if let Some(f) = &l.fap {
            c.detected += 1;
            if f.true_mechanism.as_ref().is_some_and(Mechanism::is_diffraction) {
                c.diffraction += 1;
            }
        }
    }
    c
}

/// Seed offset of the classifier training pass, kept apart from the
/// evaluation streams.
const CALIBRATION_SALT: u64 = 0x6361_6c69_6272_6174;

/// LoS/NLoS power threshold fitted on oracle-labelled first arriving paths
/// from a separate simulation pass. Without both classes every path is
/// treated as NLoS.
pub fn calibrate_los_threshold(scene: &SceneModel, nodes: &[Point3], stride: usize, seed: u64, cfg: &PipelineConfig) -> f64 {
    let samples: Vec<(f64, LosLabel)> = nodes
        .par_iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0)
        .flat_map_iter(|(i, p)| {
            let sim = simulate_node(scene, p, seed ^ CALIBRATION_SALT, i as u64, 0, cfg).ok();
            sim.into_iter().flat_map(|s| s.links).filter_map(|l| {
                let f = l.fap?;
                Some((f.power_db?, LosLabel::of_mechanism(f.true_mechanism.as_ref()?)))
            })
        })
        .collect();
    calibrate_threshold(&samples).unwrap_or(f64::INFINITY)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("IPS_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0) {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Runtime(e.to_string()))
}

fn evaluate_node(
    scene: &SceneModel,
    config: &ExperimentConfig,
    cfg: &PipelineConfig,
    index: usize,
    node: &Point3,
) -> NodeOutcome {
    let b = &scene.building;
    let floor_true = floor_of(node.z, b);
    let mut samples = Vec::with_capacity(config.methods.len() * config.trials as usize);
    let mut fap = FapCounts::default();
    let mut bounds = None;
    for trial in 0..config.trials {
        let sim = match simulate_node(scene, node, config.seed, index as u64, trial as u64, cfg) {
            Ok(s) => s,
            Err(e) => {
                for &method in &config.methods {
                    samples.push(Sample { node_index: index as u64, trial, method, outcome: Err(e.to_string()) });
                }
                continue;
            }
        };
        fap.add(&fap_counts(&sim));
        if trial == 0 && config.bounds && scene.loss_params.toa_sigma_m > 0.0 {
            bounds = node_bounds(&detectable_mpcs(&sim), node, scene.loss_params.toa_sigma_m).ok();
        }
        for &method in &config.methods {
            let outcome = run_variant(scene, &sim, method, cfg)
                .map(|est| EstimateSample {
                    position: est.position,
                    err_3d_m: (est.position - node).norm(),
                    err_z_m: (est.position.z - node.z).abs(),
                    floor_est: estimate_floor(&est, b),
                    iterations: est.iterations,
                    converged: est.converged,
                })
                .map_err(|e| if e.is_coverage() { "coverage".to_string() } else { e.to_string() });
            samples.push(Sample { node_index: index as u64, trial, method, outcome });
        }
    }
    NodeOutcome { node_index: index as u64, position: *node, floor_true, bounds, samples, fap }
}

/// Runs the full sweep: every grid node, trial and method, plus bounds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let start = Instant::now();
    let (_, scene) = config.resolve_scene()?;
    let nodes = grid_nodes(&scene.building, &config.grid);
    if nodes.is_empty() {
        return Err(Error::parse("grid contains no nodes"));
    }
    let pool = thread_pool()?;
    let (threshold, outcomes) = pool.install(|| {
        let probe = config.pipeline_config(f64::INFINITY);
        let threshold = calibrate_los_threshold(&scene, &nodes, config.calibration_stride, config.seed, &probe);
        let cfg = config.pipeline_config(threshold);
        let outcomes: Vec<NodeOutcome> =
            nodes.par_iter().enumerate().map(|(i, p)| evaluate_node(&scene, config, &cfg, i, p)).collect();
        (threshold, outcomes)
    });
    let mut fap = FapCounts::default();
    for o in &outcomes {
        fap.add(&o.fap);
    }
    Ok(ExperimentResults {
        methods: config.methods.clone(),
        band: scene.band.range,
        carrier_hz: scene.band.carrier_hz,
        trials: config.trials,
        los_threshold_db: threshold,
        nodes: outcomes,
        fap,
        runtime: RuntimeStats { wall_seconds: start.elapsed().as_secs_f64(), threads: pool.current_num_threads() },
    })
}

/// Which measurements `simulate_measurements` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementSet {
    /// First arriving path per link.
    Fap,
    /// First arriving paths plus every detectable MPC.
    All,
}

/// Simulated measurement rows for `nodes`, in node order. The LoS/NLoS
/// threshold is calibrated as in `run_experiment`.
pub fn simulate_measurements(
    scene: &SceneModel,
    nodes: &[Point3],
    seed: u64,
    trial: u64,
    set: MeasurementSet,
    mpc_options: MpcOptions,
) -> Result<Vec<MeasurementRow>> {
    let pool = thread_pool()?;
    pool.install(|| {
        let probe = PipelineConfig { mpc_options, los_threshold_db: f64::INFINITY, ..Default::default() };
        let threshold = calibrate_los_threshold(scene, nodes, 5, seed, &probe);
        let cfg = PipelineConfig { los_threshold_db: threshold, ..probe };
        let per_node: Vec<Result<Vec<MeasurementRow>>> = nodes
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let sim = simulate_node(scene, p, seed, i as u64, trial, &cfg)?;
                let anchor = |id: &str| sim.believed_anchors.iter().find(|a| a.id == id).expect("simulated anchor");
                let mut rows: Vec<MeasurementRow> = labelled_faps(&sim, &cfg)
                    .iter()
                    .map(|m| MeasurementRow::from_measurement(i as u64, RowKind::Fap, anchor(&m.anchor_id), m))
                    .collect();
                if set == MeasurementSet::All {
                    rows.extend(
                        mpc_measurements(&sim, scene.loss_params.toa_sigma_m)
                            .iter()
                            .map(|m| MeasurementRow::from_measurement(i as u64, RowKind::Mpc, anchor(&m.anchor_id), m)),
                    );
                }
                Ok(rows)
            })
            .collect();
        Ok(per_node.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
    })
}

/// MPCs above the detection threshold, per anchor. No randomness involved.
pub fn detectable_at(scene: &SceneModel, node: &Point3, options: &MpcOptions) -> Result<Vec<Vec<Mpc>>> {
    let threshold = scene.loss_params.detection_threshold_db();
    scene
        .anchors
        .iter()
        .map(|a| {
            let mpcs = enumerate_mpcs(a, node, &scene.building, options)?;
            Ok(mpcs.into_iter().filter(|m| path_gain(m, &scene.band, &scene.loss_params) >= threshold).collect())
        })
        .collect()
}

/// Position error bounds at every node with the scene's ranging sigma.
/// Nodes whose information matrix is singular are left out.
pub fn bounds_grid(scene: &SceneModel, nodes: &[Point3], options: &MpcOptions) -> Result<Vec<BoundsRow>> {
    let sigma = scene.loss_params.toa_sigma_m;
    if !(sigma > 0.0) {
        return Err(Error::parse("bounds need a positive toa_sigma_m"));
    }
    let pool = thread_pool()?;
    pool.install(|| {
        let rows: Vec<Option<BoundsRow>> = nodes
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mpcs = detectable_at(scene, p, options)?;
                Ok(node_bounds(&mpcs, p, sigma).ok().map(|b| BoundsRow::new(i as u64, &b)))
            })
            .collect::<Result<_>>()?;
        Ok(rows.into_iter().flatten().collect())
    })
}

/// Localizes every node found in `rows`. Methods working on first arriving
/// paths read those rows; the others read the MPC rows, or the
/// first-arriving-path rows when a file has none. Errors are filled
/// in when `truth` has the node.
pub fn localize_rows(
    rows: &[MeasurementRow],
    variant: Variant,
    building: Option<&BuildingModel>,
    solver: &SolverParams,
    truth: &BTreeMap<u64, Point3>,
) -> Result<Vec<EstimateRow>> {
    let mut by_node: BTreeMap<u64, Vec<&MeasurementRow>> = BTreeMap::new();
    for r in rows {
        by_node.entry(r.node_index).or_default().push(r);
    }
    let cfg = PipelineConfig { solver: *solver, ..Default::default() };
    let pool = thread_pool()?;
    pool.install(|| {
        let nodes: Vec<(u64, Vec<&MeasurementRow>)> = by_node.into_iter().collect();
        nodes
            .par_iter()
            .map(|(index, rows)| {
                let has_mpc = rows.iter().any(|r| r.kind == RowKind::Mpc);
                let want = if !variant.uses_first_paths() && has_mpc { RowKind::Mpc } else { RowKind::Fap };
                let mut anchors: Vec<AnchorSpec> = Vec::new();
                let mut meas = Vec::new();
                for r in rows.iter().filter(|r| r.kind == want) {
                    if !anchors.iter().any(|a| a.id == r.anchor_id) {
                        anchors.push(r.anchor());
                    }
                    meas.push(r.to_measurement()?);
                }
                let truth = truth.get(index);
                let row = match estimate(building, &anchors, variant, &meas, &cfg) {
                    Ok(est) => EstimateRow {
                        node_index: *index,
                        method_tag: est.method_tag.clone(),
                        status: "ok".into(),
                        x: Some(est.position.x),
                        y: Some(est.position.y),
                        z: Some(est.position.z),
                        err_3d_m: truth.map(|t| (est.position - t).norm()),
                        err_z_m: truth.map(|t| (est.position.z - t.z).abs()),
                        floor_true: truth.zip(building).map(|(t, b)| floor_of(t.z, b)),
                        floor_est: building.map(|b| estimate_floor(&est, b)),
                        iterations: Some(est.iterations),
                        converged: Some(est.converged),
                    },
                    Err(e) => EstimateRow {
                        node_index: *index,
                        method_tag: variant.method_tag().into(),
                        status: if e.is_coverage() { "coverage".into() } else { e.to_string() },
                        x: None,
                        y: None,
                        z: None,
                        err_3d_m: None,
                        err_z_m: None,
                        floor_true: truth.zip(building).map(|(t, b)| floor_of(t.z, b)),
                        floor_est: None,
                        iterations: None,
                        converged: None,
                    },
                };
                Ok(row)
            })
            .collect()
    })
}

#[derive(Serialize)]
struct ErrorRow<'a> {
    node_index: u64,
    trial: u32,
    method: &'a str,
    status: &'a str,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
    err_3d_m: Option<f64>,
    err_z_m: Option<f64>,
    floor_true: usize,
    floor_est: Option<usize>,
    iterations: Option<usize>,
    converged: Option<bool>,
}

#[derive(Serialize)]
struct CdfRow<'a> {
    method: &'a str,
    error_m: f64,
    percentile: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    samples: usize,
    ok: usize,
    failed: usize,
    median_m: Option<f64>,
    p90_m: Option<f64>,
    rmse_m: Option<f64>,
    median_z_m: Option<f64>,
    floor_accuracy: Option<f64>,
    note: &'a str,
}

#[derive(Serialize)]
struct FapRow<'a> {
    band: &'a str,
    carrier_hz: f64,
    links: u64,
    detected: u64,
    diffraction: u64,
    diffraction_fraction: f64,
    los_threshold_db: f64,
}

pub const CRLB_1DIFF: &str = "crlb_1diff";
pub const CRLB_MULTI: &str = "crlb_multi";

/// Writes errors.csv, cdf.csv, bounds.csv, summary.csv, fap.csv and cdf.svg.
pub fn export_results(results: &ExperimentResults, outdir: &Path) -> Result<()> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;

    let path = outdir.join("errors.csv");
    let mut w = csv_writer(&path)?;
    for node in &results.nodes {
        for s in &node.samples {
            let row = match &s.outcome {
                Ok(e) => ErrorRow {
                    node_index: s.node_index,
                    trial: s.trial,
                    method: s.method.name(),
                    status: "ok",
                    x: Some(e.position.x),
                    y: Some(e.position.y),
                    z: Some(e.position.z),
                    err_3d_m: Some(e.err_3d_m),
                    err_z_m: Some(e.err_z_m),
                    floor_true: node.floor_true,
                    floor_est: Some(e.floor_est),
                    iterations: Some(e.iterations),
                    converged: Some(e.converged),
                },
                Err(reason) => ErrorRow {
                    node_index: s.node_index,
                    trial: s.trial,
                    method: s.method.name(),
                    status: reason,
                    x: None,
                    y: None,
                    z: None,
                    err_3d_m: None,
                    err_z_m: None,
                    floor_true: node.floor_true,
                    floor_est: None,
                    iterations: None,
                    converged: None,
                },
            };
            w.serialize(row).map_err(|e| Error::Runtime(e.to_string()))?;
        }
    }
    finish(w, &path)?;

    let mut curves: Vec<(String, Vec<f64>)> =
        results.methods.iter().map(|m| (m.name().to_string(), results.errors(*m))).collect();
    curves.push((CRLB_1DIFF.to_string(), results.peb_1diff()));
    curves.push((CRLB_MULTI.to_string(), results.peb_multi()));

    let path = outdir.join("cdf.csv");
    let mut w = csv_writer(&path)?;
    for (name, values) in &curves {
        for (error_m, percentile) in cdf(values) {
            w.serialize(CdfRow { method: name, error_m, percentile }).map_err(|e| Error::Runtime(e.to_string()))?;
        }
    }
    finish(w, &path)?;

    let path = outdir.join("bounds.csv");
    let mut w = csv_writer(&path)?;
    for n in &results.nodes {
        if let Some(b) = &n.bounds {
            w.serialize(BoundsRow::new(n.node_index, b)).map_err(|e| Error::Runtime(e.to_string()))?;
        }
    }
    finish(w, &path)?;

    let path = outdir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    for m in &results.methods {
        let errs = results.errors(*m);
        let total = results.samples(*m).count();
        let row = SummaryRow {
            method: m.name(),
            samples: total,
            ok: errs.len(),
            failed: total - errs.len(),
            median_m: percentile(&errs, 0.5),
            p90_m: percentile(&errs, 0.9),
            rmse_m: rmse(&errs),
            median_z_m: percentile(&results.z_errors(*m), 0.5),
            floor_accuracy: results.floor_accuracy(*m),
            note: if errs.is_empty() { "no successful estimates; omitted from plot" } else { "" },
        };
        w.serialize(row).map_err(|e| Error::Runtime(e.to_string()))?;
    }
    for (name, values) in curves.iter().skip(results.methods.len()) {
        let row = SummaryRow {
            method: name,
            samples: results.nodes.len(),
            ok: values.len(),
            failed: results.nodes.len() - values.len(),
            median_m: percentile(values, 0.5),
            p90_m: percentile(values, 0.9),
            rmse_m: None,
            median_z_m: None,
            floor_accuracy: None,
            note: "position error bound",
        };
        w.serialize(row).map_err(|e| Error::Runtime(e.to_string()))?;
    }
    finish(w, &path)?;

    let path = outdir.join("fap.csv");
    let mut w = csv_writer(&path)?;
    w.serialize(FapRow {
        band: results.band.label(),
        carrier_hz: results.carrier_hz,
        links: results.fap.links,
        detected: results.fap.detected,
        diffraction: results.fap.diffraction,
        diffraction_fraction: results.fap.diffraction_fraction(),
        los_threshold_db: results.los_threshold_db,
    })
    .map_err(|e| Error::Runtime(e.to_string()))?;
    finish(w, &path)?;

    let plotted: Vec<Curve> = curves
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(name, v)| Curve { label: name.clone(), points: cdf(v), dashed: name.starts_with("crlb") })
        .collect();
    let svg = render_cdf(&plotted, "3D position error (m)", "percentile");
    let path = outdir.join("cdf.svg");
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Summary numbers keyed by method name, as written to summary.csv.
pub fn medians(results: &ExperimentResults) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for m in &results.methods {
        if let Some(v) = results.median_error(*m) {
            out.insert(m.name().to_string(), v);
        }
    }
    if let Some(v) = percentile(&results.peb_1diff(), 0.5) {
        out.insert(CRLB_1DIFF.to_string(), v);
    }
    if let Some(v) = percentile(&results.peb_multi(), 0.5) {
        out.insert(CRLB_MULTI.to_string(), v);
    }
    out
}
