//! On-disk formats: scene JSON, measurement / estimate / bounds CSV.
//!
//! Every CSV starts with a `# schema_version=N` line followed by the header.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ips_core::bounds::NodeBounds;
use ips_core::channel::{LosLabel, ToaMeasurement};
use ips_core::raypath::Mechanism;
use ips_core::scene::{build_scene, AnchorSpec, SceneConfig, SceneModel};
use ips_core::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_scene(text: &str) -> Result<(SceneConfig, SceneModel)> {
    let config: SceneConfig = serde_json::from_str(text).map_err(Error::parse)?;
    let scene = build_scene(&config)?;
    Ok((config, scene))
}

pub fn load_scene(path: &Path) -> Result<(SceneConfig, SceneModel)> {
    parse_scene(&read_text(path)?)
}

pub fn save_scene(config: &SceneConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config).map_err(Error::parse)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// CSV writer with the schema line already written.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# schema_version={CSV_SCHEMA_VERSION}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(w))
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

pub fn finish<W: Write>(w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse(format!("{}: {e}", path.display()))
}

/// What a measurement row holds: the first arriving path of a link or one
/// detectable multipath component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Fap,
    Mpc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub node_index: u64,
    pub kind: RowKind,
    pub anchor_id: String,
    /// Anchor position as known to the estimator.
    pub anchor_x: f64,
    pub anchor_y: f64,
    pub anchor_z: f64,
    pub range_m: f64,
    pub sigma_m: f64,
    pub true_mechanism: String,
    pub los_label: String,
    pub edge_id: String,
}

impl MeasurementRow {
    pub fn from_measurement(node_index: u64, kind: RowKind, anchor: &AnchorSpec, m: &ToaMeasurement) -> Self {
        Self {
            node_index,
            kind,
            anchor_id: m.anchor_id.clone(),
            anchor_x: anchor.position.x,
            anchor_y: anchor.position.y,
            anchor_z: anchor.position.z,
            range_m: m.range,
            sigma_m: m.sigma,
            true_mechanism: m.true_mechanism.as_ref().map(|x| x.to_string()).unwrap_or_default(),
            los_label: m.los_label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            edge_id: m.edge_id.clone().unwrap_or_default(),
        }
    }

    pub fn anchor(&self) -> AnchorSpec {
        AnchorSpec::new(self.anchor_id.clone(), Point3::new(self.anchor_x, self.anchor_y, self.anchor_z))
    }

    pub fn to_measurement(&self) -> Result<ToaMeasurement> {
        let mut m = ToaMeasurement::new(self.anchor_id.clone(), self.range_m, self.sigma_m);
        if !self.true_mechanism.is_empty() {
            let mech: Mechanism = self.true_mechanism.parse().map_err(Error::parse)?;
            m = m.with_mechanism(mech);
        }
        m.los_label = match self.los_label.as_str() {
            "" => None,
            "LoS" => Some(LosLabel::LoS),
            "NLoS" => Some(LosLabel::NLoS),
            other => return Err(Error::Parse(format!("unknown los_label {other:?}"))),
        };
        if !self.edge_id.is_empty() {
            m.edge_id = Some(self.edge_id.clone());
        }
        Ok(m)
    }
}

pub fn write_measurements(path: &Path, rows: &[MeasurementRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementRow>> {
    csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node_index: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NodeRow {
    pub fn point(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }
}

pub fn write_nodes(path: &Path, nodes: &[Point3]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (i, p) in nodes.iter().enumerate() {
        w.serialize(NodeRow { node_index: i as u64, x: p.x, y: p.y, z: p.z }).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeRow>> {
    csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// One localization result. Position columns are empty when the estimator
/// failed; `status` then carries the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub node_index: u64,
    pub method_tag: String,
    pub status: String,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub err_3d_m: Option<f64>,
    pub err_z_m: Option<f64>,
    pub floor_true: Option<usize>,
    pub floor_est: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub node_index: u64,
    pub peb_1diff_m: Option<f64>,
    pub peb_multi_m: Option<f64>,
    pub fim_condition_number: f64,
    pub clamp_flag: bool,
}

impl BoundsRow {
    pub fn new(node_index: u64, b: &NodeBounds) -> Self {
        Self {
            node_index,
            peb_1diff_m: b.peb_1diff,
            peb_multi_m: b.peb_multi,
            fim_condition_number: b.fim_condition_number,
            clamp_flag: b.clamp_flag,
        }
    }
}

pub fn write_bounds(path: &Path, rows: &[BoundsRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_bounds(path: &Path) -> Result<Vec<BoundsRow>> {
    csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}
