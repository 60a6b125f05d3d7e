//! Geometric multipath components between an outdoor anchor and a node.
//!
//! Transmission paths are straight segments through walls, reflections are
//! built with the image method, and single-edge diffraction uses the
//! Fermat point on a window edge in closed form. Diffuse clutter is added
//! later by the channel module.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mirror_across, Point3};
use crate::scene::{diffracting_edges_for_floor, floor_of, AnchorSpec, BuildingModel, EdgeSegment};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    LineOfSight,
    Transmission { walls_crossed: u32 },
    Reflection { panel_ids: Vec<String> },
    Diffraction { edge_id: String },
    Diffuse,
}

impl Mechanism {
    /// Rank used for deterministic tie-breaking.
    pub fn rank(&self) -> u8 {
        match self {
            Mechanism::LineOfSight => 0,
            Mechanism::Transmission { .. } => 1,
            Mechanism::Reflection { .. } => 2,
            Mechanism::Diffraction { .. } => 3,
            Mechanism::Diffuse => 4,
        }
    }

    pub fn reflection_order(&self) -> u32 {
        match self {
            Mechanism::Reflection { panel_ids } => panel_ids.len() as u32,
            _ => 0,
        }
    }

    pub fn is_diffraction(&self) -> bool {
        matches!(self, Mechanism::Diffraction { .. })
    }

    /// Panel or edge ids joined with `;`.
    pub fn source_ids(&self) -> String {
        match self {
            Mechanism::Reflection { panel_ids } => panel_ids.join(";"),
            Mechanism::Diffraction { edge_id } => edge_id.clone(),
            _ => String::new(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Mechanism::LineOfSight => "los",
            Mechanism::Transmission { .. } => "transmission",
            Mechanism::Reflection { .. } => "reflection",
            Mechanism::Diffraction { .. } => "diffraction",
            Mechanism::Diffuse => "diffuse",
        }
    }
}

/// Text form: `los`, `transmission(2)`, `reflection(slab-0;facade-S)`,
/// `diffraction(win-S-f0-0.e1)`, `diffuse`.
impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::LineOfSight => f.write_str("los"),
            Mechanism::Transmission { walls_crossed } => write!(f, "transmission({walls_crossed})"),
            Mechanism::Reflection { panel_ids } => write!(f, "reflection({})", panel_ids.join(";")),
            Mechanism::Diffraction { edge_id } => write!(f, "diffraction({edge_id})"),
            Mechanism::Diffuse => f.write_str("diffuse"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse mechanism {0:?}")]
pub struct MechanismParseError(pub String);

impl FromStr for Mechanism {
    type Err = MechanismParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MechanismParseError(s.into());
        match s {
            "los" => return Ok(Mechanism::LineOfSight),
            "diffuse" => return Ok(Mechanism::Diffuse),
            _ => {}
        }
        let (head, rest) = s.split_once('(').ok_or_else(err)?;
        let inner = rest.strip_suffix(')').ok_or_else(err)?;
        match head {
            "transmission" => {
                let k: u32 = inner.parse().map_err(|_| err())?;
                if k == 0 {
                    return Err(err());
                }
                Ok(Mechanism::Transmission { walls_crossed: k })
            }
            "reflection" if !inner.is_empty() => {
                Ok(Mechanism::Reflection { panel_ids: inner.split(';').map(String::from).collect() })
            }
            "diffraction" if !inner.is_empty() => Ok(Mechanism::Diffraction { edge_id: inner.into() }),
            _ => Err(err()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffractionSolution {
    /// Clamped arc parameter along the edge, in `[0, 1]`.
    pub t_star: f64,
    /// Unclamped stationary parameter (may lie outside `[0, 1]`).
    pub t_unclamped: f64,
    pub point: Point3,
    pub clamped: bool,
    pub path_length: f64,
}

impl DiffractionSolution {
    /// Distance of the stationary point from the nearest segment end, as a
    /// fraction of the edge length.
    pub fn clamp_margin(&self) -> f64 {
        let t = self.t_unclamped;
        if t < 0.0 {
            -t
        } else if t > 1.0 {
            t - 1.0
        } else {
            t.min(1.0 - t)
        }
    }
}

/// One multipath component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mpc {
    pub mechanism: Mechanism,
    /// Anchor first, node last, interaction points in between.
    pub vertices: Vec<Point3>,
    pub path_length: f64,
    pub anchor_id: String,
    /// Solid wall panels crossed along all legs.
    pub walls_crossed: u32,
    pub diffraction: Option<DiffractionSolution>,
}

impl Mpc {
    pub fn anchor(&self) -> Point3 {
        self.vertices[0]
    }

    pub fn node(&self) -> Point3 {
        *self.vertices.last().expect("mpc has vertices")
    }

    /// Excess length over the straight anchor-node distance.
    pub fn nlos_bias(&self) -> f64 {
        self.path_length - (self.node() - self.anchor()).norm()
    }

    pub fn vertex_sum(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RayError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
}

/// Straight anchor-node path; `LineOfSight` when no solid wall is crossed.
pub fn transmission_path(anchor: &AnchorSpec, node: &Point3, building: &BuildingModel) -> Result<Mpc, RayError> {
    let a = anchor.position;
    let length = (node - a).norm();
    if !(length > 0.0) {
        return Err(RayError::DegenerateGeometry("anchor coincides with node"));
    }
    let k = building.walls_crossed(&a, node);
    let mechanism = if k == 0 { Mechanism::LineOfSight } else { Mechanism::Transmission { walls_crossed: k } };
    Ok(Mpc {
        mechanism,
        vertices: vec![a, *node],
        path_length: length,
        anchor_id: anchor.id.clone(),
        walls_crossed: k,
        diffraction: None,
    })
}

/// Virtual anchor obtained by mirroring across the panels in order.
pub fn virtual_anchor(anchor: &Point3, panels: &[&crate::scene::WallPanel]) -> Point3 {
    panels.iter().fold(*anchor, |p, w| mirror_across(&p, &w.plane()))
}

/// Specular paths of order 1 and (if `max_order >= 2`) order 2. Orders above
/// two are treated as two.
pub fn reflection_paths(anchor: &AnchorSpec, node: &Point3, building: &BuildingModel, max_order: u8) -> Vec<Mpc> {
    let mut out = Vec::new();
    let n = building.walls.len();
    let a = anchor.position;
    if max_order >= 1 {
        for i in 0..n {
            if let Some(mpc) = specular(anchor, &a, node, building, &[i]) {
                out.push(mpc);
            }
        }
    }
    if max_order >= 2 {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    if let Some(mpc) = specular(anchor, &a, node, building, &[i, j]) {
                        out.push(mpc);
                    }
                }
            }
        }
    }
    out
}

fn specular(anchor: &AnchorSpec, a: &Point3, node: &Point3, building: &BuildingModel, seq: &[usize]) -> Option<Mpc> {
    let panels: Vec<_> = seq.iter().map(|&i| &building.walls[i]).collect();
    // images[k] = anchor mirrored across panels[0..k]
    let mut images = Vec::with_capacity(seq.len() + 1);
    images.push(*a);
    for w in &panels {
        let last = *images.last().unwrap();
        images.push(mirror_across(&last, &w.plane()));
    }
    let mut target = *node;
    let mut points = vec![Point3::origin(); seq.len()];
    for k in (0..seq.len()).rev() {
        let w = panels[k];
        let x = w.rect().intersect_open_segment(&images[k + 1], &target)?;
        if w.in_aperture(&x) {
            return None;
        }
        points[k] = x;
        target = x;
    }
    let mut vertices = Vec::with_capacity(seq.len() + 2);
    vertices.push(*a);
    vertices.extend_from_slice(&points);
    vertices.push(*node);
    let walls_crossed = vertices.windows(2).map(|l| building.walls_crossed(&l[0], &l[1])).sum();
    let path_length = (images[seq.len()] - node).norm();
    Some(Mpc {
        mechanism: Mechanism::Reflection { panel_ids: panels.iter().map(|w| w.id.clone()).collect() },
        vertices,
        path_length,
        anchor_id: anchor.id.clone(),
        walls_crossed,
        diffraction: None,
    })
}

/// Closed-form Fermat point on `edge` for the path anchor -> edge -> node.
///
/// With `s` the along-edge coordinate and `r` the distance from the edge
/// line, the stationary point is `s* = (s_a r_n + s_n r_a) / (r_a + r_n)`,
/// clamped to the segment.
pub fn diffraction_point(anchor: &Point3, node: &Point3, edge: &EdgeSegment) -> Result<DiffractionSolution, RayError> {
    let d = edge.end - edge.start;
    let len = d.norm();
    if !(len > 0.0) {
        return Err(RayError::DegenerateGeometry("zero-length edge"));
    }
    let u = d / len;
    let va = anchor - edge.start;
    let vn = node - edge.start;
    let s_a = va.dot(&u);
    let s_n = vn.dot(&u);
    let r_a = (va - u * s_a).norm();
    let r_n = (vn - u * s_n).norm();
    let denom = r_a + r_n;
    if !(denom > 0.0) {
        return Err(RayError::DegenerateGeometry("anchor and node both on the edge line"));
    }
    let t_unclamped = (s_a * r_n + s_n * r_a) / denom / len;
    let t_star = t_unclamped.clamp(0.0, 1.0);
    let clamped = t_star != t_unclamped;
    let point = edge.start + d * t_star;
    let path_length = (anchor - point).norm() + (point - node).norm();
    Ok(DiffractionSolution { t_star, t_unclamped, point, clamped, path_length })
}

/// One diffraction path per window edge on the node's floor whose
/// anchor-side leg stays outside the building.
pub fn diffraction_paths(anchor: &AnchorSpec, node: &Point3, building: &BuildingModel) -> Vec<Mpc> {
    let floor = floor_of(node.z, building);
    let edges = diffracting_edges_for_floor(building, floor).unwrap_or_default();
    let bounds = building.bounds();
    let a = anchor.position;
    edges
        .into_iter()
        .filter_map(|edge| {
            let sol = diffraction_point(&a, node, edge).ok()?;
            if bounds.segment_passes_interior(&a, &sol.point) {
                return None;
            }
            let walls_crossed = building.walls_crossed(&a, &sol.point) + building.walls_crossed(&sol.point, node);
            Some(Mpc {
                mechanism: Mechanism::Diffraction { edge_id: edge.id.clone() },
                vertices: vec![a, sol.point, *node],
                path_length: sol.path_length,
                anchor_id: anchor.id.clone(),
                walls_crossed,
                diffraction: Some(sol),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcOptions {
    pub transmission: bool,
    pub reflection: bool,
    pub diffraction: bool,
    pub max_reflection_order: u8,
}

impl Default for MpcOptions {
    fn default() -> Self {
        Self { transmission: true, reflection: true, diffraction: true, max_reflection_order: 1 }
    }
}

impl MpcOptions {
    pub fn transmission_only() -> Self {
        Self { transmission: true, reflection: false, diffraction: false, max_reflection_order: 1 }
    }
}

/// Total order used for MPC lists: path length, then mechanism, then ids.
pub fn mpc_order(a: &Mpc, b: &Mpc) -> Ordering {
    a.path_length
        .total_cmp(&b.path_length)
        .then_with(|| a.mechanism.rank().cmp(&b.mechanism.rank()))
        .then_with(|| a.mechanism.source_ids().cmp(&b.mechanism.source_ids()))
}

/// All enabled MPCs for one link, sorted by [`mpc_order`].
pub fn enumerate_mpcs(
    anchor: &AnchorSpec,
    node: &Point3,
    building: &BuildingModel,
    options: &MpcOptions,
) -> Result<Vec<Mpc>, RayError> {
    let mut out = Vec::new();
    if options.transmission {
        out.push(transmission_path(anchor, node, building)?);
    } else if (node - anchor.position).norm() == 0.0 {
        return Err(RayError::DegenerateGeometry("anchor coincides with node"));
    }
    if options.reflection {
        out.extend(reflection_paths(anchor, node, building, options.max_reflection_order.min(2)));
    }
    if options.diffraction {
        out.extend(diffraction_paths(anchor, node, building));
    }
    out.sort_by(mpc_order);
    Ok(out)
}
