//! Building, window-edge and anchor geometry in local building coordinates.
//!
//! A [`SceneModel`] is produced once from a [`SceneConfig`] by [`build_scene`]
//! and is immutable afterwards. The building is an axis-aligned box with
//! rectangular wall panels (facades, interior walls, slabs) and rectangular
//! window apertures cut into the facades.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::LossParams;
use crate::geom::{is_finite, Aabb, Plane, Point3, Rect, RectDefect, Vec3};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// 3GPP frequency range designation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrequencyRange {
    #[serde(rename = "FR1")]
    Fr1,
    #[serde(rename = "FR2")]
    Fr2,
    #[serde(rename = "FR3")]
    Fr3,
}

impl FrequencyRange {
    pub fn label(self) -> &'static str {
        match self {
            FrequencyRange::Fr1 => "FR1",
            FrequencyRange::Fr2 => "FR2",
            FrequencyRange::Fr3 => "FR3",
        }
    }

    /// Carrier used when a range is requested by name only.
    pub fn default_carrier_hz(self) -> f64 {
        match self {
            FrequencyRange::Fr1 => 3.5e9,
            FrequencyRange::Fr2 => 28e9,
            FrequencyRange::Fr3 => 10e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyBand {
    pub range: FrequencyRange,
    pub carrier_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BandError {
    #[error("carrier {0} Hz is not positive")]
    NonPositive(f64),
    #[error("carrier {0} Hz is above 48 GHz")]
    OutOfRange(f64),
}

/// FR1 below 7 GHz, FR3 in [7, 24) GHz, FR2 in [24, 48] GHz.
pub fn classify_band(carrier_hz: f64) -> Result<FrequencyBand, BandError> {
    if !(carrier_hz > 0.0) {
        return Err(BandError::NonPositive(carrier_hz));
    }
    let range = if carrier_hz < 7e9 {
        FrequencyRange::Fr1
    } else if carrier_hz < 24e9 {
        FrequencyRange::Fr3
    } else if carrier_hz <= 48e9 {
        FrequencyRange::Fr2
    } else {
        return Err(BandError::OutOfRange(carrier_hz));
    };
    Ok(FrequencyBand { range, carrier_hz })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSegment {
    pub id: String,
    pub start: Point3,
    pub end: Point3,
    pub parent_window: String,
}

impl EdgeSegment {
    pub fn midpoint(&self) -> Point3 {
        nalgebra::center(&self.start, &self.end)
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// True for edges running along z (window jambs).
    pub fn is_vertical(&self) -> bool {
        let d = self.end - self.start;
        d.x.abs() < 1e-9 && d.y.abs() < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WallPanel {
    pub id: String,
    pub corners: [Point3; 4],
    pub unit_normal: Vec3,
    pub material_tag: String,
    pub is_facade: bool,
    #[serde(skip)]
    rect: Rect,
    #[serde(skip)]
    apertures: Vec<Rect>,
}

impl WallPanel {
    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn plane(&self) -> Plane {
        Plane::new(self.corners[0], self.unit_normal)
    }

    /// True when an in-plane point falls inside one of the window openings.
    pub fn in_aperture(&self, p: &Point3) -> bool {
        self.apertures.iter().any(|r| r.contains_in_plane(p, 1e-12))
    }

    /// Whether the open segment `(a, b)` passes through solid wall.
    pub fn blocks(&self, a: &Point3, b: &Point3) -> bool {
        match self.rect.intersect_open_segment(a, b) {
            Some(x) => !self.in_aperture(&x),
            None => false,
        }
    }

    /// Horizontal unit direction along the panel, if the panel is vertical.
    pub fn horizontal_direction(&self) -> Option<Vec3> {
        if self.unit_normal.z.abs() > 1e-9 {
            return None;
        }
        crate::geom::unit(&Vec3::new(-self.unit_normal.y, self.unit_normal.x, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowAperture {
    pub id: String,
    pub facade_id: String,
    pub corners: [Point3; 4],
    pub floor_index: usize,
    pub edges: [EdgeSegment; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildingModel {
    pub footprint_min: [f64; 2],
    pub footprint_max: [f64; 2],
    pub height: f64,
    pub num_floors: usize,
    pub floor_height: f64,
    pub walls: Vec<WallPanel>,
    pub windows: Vec<WindowAperture>,
}

impl BuildingModel {
    pub fn bounds(&self) -> Aabb {
        Aabb {
            min: Point3::new(self.footprint_min[0], self.footprint_min[1], 0.0),
            max: Point3::new(self.footprint_max[0], self.footprint_max[1], self.height),
        }
    }

    pub fn centroid(&self) -> Point3 {
        self.bounds().center()
    }

    /// Number of solid wall panels crossed by the open segment `(a, b)`.
    pub fn walls_crossed(&self, a: &Point3, b: &Point3) -> u32 {
        self.walls.iter().filter(|w| w.blocks(a, b)).count() as u32
    }

    pub fn wall(&self, id: &str) -> Option<&WallPanel> {
        self.walls.iter().find(|w| w.id == id)
    }

    pub fn edge(&self, id: &str) -> Option<&EdgeSegment> {
        self.windows.iter().flat_map(|w| w.edges.iter()).find(|e| e.id == id)
    }

    pub fn window(&self, id: &str) -> Option<&WindowAperture> {
        self.windows.iter().find(|w| w.id == id)
    }

    /// Facade panel that carries the given edge.
    pub fn facade_of_edge(&self, edge_id: &str) -> Option<&WallPanel> {
        let window = self.windows.iter().find(|w| w.edges.iter().any(|e| e.id == edge_id))?;
        self.wall(&window.facade_id)
    }

    pub fn all_edges(&self) -> impl Iterator<Item = &EdgeSegment> {
        self.windows.iter().flat_map(|w| w.edges.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorSpec {
    pub id: String,
    pub position: Point3,
    pub position_noise_sigma: f64,
    pub clock_offset: f64,
}

impl AnchorSpec {
    pub fn new(id: impl Into<String>, position: Point3) -> Self {
        Self { id: id.into(), position, position_noise_sigma: 0.0, clock_offset: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneModel {
    pub building: BuildingModel,
    pub anchors: Vec<AnchorSpec>,
    pub band: FrequencyBand,
    pub loss_params: LossParams,
}

impl SceneModel {
    pub fn anchor(&self, id: &str) -> Option<&AnchorSpec> {
        self.anchors.iter().find(|a| a.id == id)
    }
}

// ---------------------------------------------------------------------------
// Configuration (the on-disk JSON document)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub schema_version: u32,
    pub building: BuildingConfig,
    pub anchors: Vec<AnchorConfig>,
    pub band: BandConfig,
    #[serde(default)]
    pub loss_params: LossParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingConfig {
    pub footprint: FootprintConfig,
    pub height: f64,
    pub num_floors: usize,
    pub floor_height: f64,
    pub walls: Vec<WallConfig>,
    #[serde(default)]
    pub windows: Vec<WindowConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintConfig {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallConfig {
    pub id: String,
    pub corners: [[f64; 3]; 4],
    pub material: String,
    pub is_facade: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub id: String,
    pub facade: String,
    pub floor_index: usize,
    pub corners: [[f64; 3]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub id: String,
    pub position: [f64; 3],
    #[serde(default)]
    pub position_noise_sigma: f64,
    #[serde(default)]
    pub clock_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub carrier_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("unsupported scene schema version {0}")]
    SchemaVersion(u32),
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("invalid building dimensions: {0}")]
    Dimensions(&'static str),
    #[error("panel {id} is not a rectangle ({defect:?})")]
    NonRectangularPanel { id: String, defect: RectDefect },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("window {window} references unknown facade {facade}")]
    UnknownFacade { window: String, facade: String },
    #[error("window {0} is not strictly inside its facade")]
    WindowOutsideFacade(String),
    #[error("window {window} z-extent [{zmin}, {zmax}] does not fit floor {floor}")]
    WindowFloorMismatch { window: String, floor: usize, zmin: f64, zmax: f64 },
    #[error("scene needs at least one anchor")]
    NoAnchors,
    #[error("anchor {0} is not outside the building")]
    AnchorInsideBuilding(String),
    #[error("anchor {0} has a negative position noise sigma")]
    NegativeSigma(String),
    #[error("invalid loss parameters: {0}")]
    LossParams(&'static str),
    #[error(transparent)]
    Band(#[from] BandError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("floor index {index} out of range for {num_floors} floors")]
pub struct FloorIndexError {
    pub index: usize,
    pub num_floors: usize,
}

fn pt(c: [f64; 3]) -> Point3 {
    Point3::new(c[0], c[1], c[2])
}

fn corners(c: &[[f64; 3]; 4]) -> [Point3; 4] {
    [pt(c[0]), pt(c[1]), pt(c[2]), pt(c[3])]
}

fn edge_id(window_id: &str, k: usize) -> String {
    alloc::format!("{window_id}.e{k}")
}

/// Validates a scene description and produces the immutable model.
pub fn build_scene(config: &SceneConfig) -> Result<SceneModel, GeometryError> {
    if config.schema_version != SCENE_SCHEMA_VERSION {
        return Err(GeometryError::SchemaVersion(config.schema_version));
    }
    let b = &config.building;
    let fp = b.footprint;
    let dims = [fp.min[0], fp.min[1], fp.max[0], fp.max[1], b.height, b.floor_height];
    if dims.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("building".into()));
    }
    if !(fp.max[0] > fp.min[0] && fp.max[1] > fp.min[1]) {
        return Err(GeometryError::Dimensions("empty footprint"));
    }
    if b.num_floors < 1 || !(b.floor_height > 0.0) || !(b.height > 0.0) {
        return Err(GeometryError::Dimensions("floors, floor height and height must be positive"));
    }
    if b.num_floors as f64 * b.floor_height > b.height + 1e-9 {
        return Err(GeometryError::Dimensions("floors exceed building height"));
    }

    let mut ids = BTreeSet::new();
    let mut claim = |id: &str| -> Result<(), GeometryError> {
        if ids.insert(String::from(id)) {
            Ok(())
        } else {
            Err(GeometryError::DuplicateId(id.into()))
        }
    };

    let mut walls = Vec::with_capacity(b.walls.len());
    for w in &b.walls {
        claim(&w.id)?;
        let c = corners(&w.corners);
        if !c.iter().all(is_finite) {
            return Err(GeometryError::NonFinite(w.id.clone()));
        }
        let rect = Rect::from_corners(&c)
            .map_err(|defect| GeometryError::NonRectangularPanel { id: w.id.clone(), defect })?;
        walls.push(WallPanel {
            id: w.id.clone(),
            corners: c,
            unit_normal: rect.normal,
            material_tag: w.material.clone(),
            is_facade: w.is_facade,
            rect,
            apertures: Vec::new(),
        });
    }

    let mut windows = Vec::with_capacity(b.windows.len());
    for win in &b.windows {
        claim(&win.id)?;
        let c = corners(&win.corners);
        if !c.iter().all(is_finite) {
            return Err(GeometryError::NonFinite(win.id.clone()));
        }
        let rect = Rect::from_corners(&c)
            .map_err(|defect| GeometryError::NonRectangularPanel { id: win.id.clone(), defect })?;
        let facade = walls
            .iter_mut()
            .find(|w| w.id == win.facade && w.is_facade)
            .ok_or_else(|| GeometryError::UnknownFacade { window: win.id.clone(), facade: win.facade.clone() })?;
        let plane = facade.plane();
        let inside = c.iter().all(|p| {
            plane.signed_distance(p).abs() <= crate::geom::COPLANAR_TOL
                && facade.rect.strictly_contains_in_plane(p, 1e-9)
        });
        if !inside {
            return Err(GeometryError::WindowOutsideFacade(win.id.clone()));
        }
        let zmin = c.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let zmax = c.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        let base = win.floor_index as f64 * b.floor_height;
        if win.floor_index >= b.num_floors || zmin < base - 1e-9 || zmax >= base + b.floor_height {
            return Err(GeometryError::WindowFloorMismatch { window: win.id.clone(), floor: win.floor_index, zmin, zmax });
        }
        facade.apertures.push(rect);
        let edges = core::array::from_fn(|k| EdgeSegment {
            id: edge_id(&win.id, k),
            start: c[k],
            end: c[(k + 1) % 4],
            parent_window: win.id.clone(),
        });
        for e in &edges {
            claim(&e.id)?;
        }
        windows.push(WindowAperture {
            id: win.id.clone(),
            facade_id: win.facade.clone(),
            corners: c,
            floor_index: win.floor_index,
            edges,
        });
    }

    let building = BuildingModel {
        footprint_min: fp.min,
        footprint_max: fp.max,
        height: b.height,
        num_floors: b.num_floors,
        floor_height: b.floor_height,
        walls,
        windows,
    };

    if config.anchors.is_empty() {
        return Err(GeometryError::NoAnchors);
    }
    let bounds = building.bounds();
    let mut anchors = Vec::with_capacity(config.anchors.len());
    for a in &config.anchors {
        claim(&a.id)?;
        let p = pt(a.position);
        if !is_finite(&p) || !a.clock_offset.is_finite() || !a.position_noise_sigma.is_finite() {
            return Err(GeometryError::NonFinite(a.id.clone()));
        }
        if bounds.contains_closed(&p, 1e-9) {
            return Err(GeometryError::AnchorInsideBuilding(a.id.clone()));
        }
        if a.position_noise_sigma < 0.0 {
            return Err(GeometryError::NegativeSigma(a.id.clone()));
        }
        anchors.push(AnchorSpec {
            id: a.id.clone(),
            position: p,
            position_noise_sigma: a.position_noise_sigma,
            clock_offset: a.clock_offset,
        });
    }

    config.loss_params.validate().map_err(GeometryError::LossParams)?;
    let band = classify_band(config.band.carrier_hz)?;
    Ok(SceneModel { building, anchors, band, loss_params: config.loss_params.clone() })
}

/// Floor containing height `z`, clamped to the building's floors.
pub fn floor_of(z: f64, building: &BuildingModel) -> usize {
    let f = libm::floor(z / building.floor_height);
    if !(f > 0.0) {
        0
    } else {
        (f as usize).min(building.num_floors - 1)
    }
}

/// Edges of the windows on `floor_index`, sorted by id.
pub fn diffracting_edges_for_floor(
    building: &BuildingModel,
    floor_index: usize,
) -> Result<Vec<&EdgeSegment>, FloorIndexError> {
    if floor_index >= building.num_floors {
        return Err(FloorIndexError { index: floor_index, num_floors: building.num_floors });
    }
    let mut edges: Vec<&EdgeSegment> = building
        .windows
        .iter()
        .filter(|w| w.floor_index == floor_index)
        .flat_map(|w| w.edges.iter())
        .collect();
    edges.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(edges)
}
