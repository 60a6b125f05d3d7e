//! End-to-end positioning for one indoor node: multipath generation,
//! channel synthesis, measurement extraction and one of the estimators.
//!
//! The propagation-aware variants read the simulator's mechanism labels
//! directly; no classifier stands in for them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{classify_los_nlos, extract_fap, path_gain, synthesize_cir, ChannelError, CirTap, ToaMeasurement};
use crate::geom::{Point3, Vec3};
use crate::locate::{
    dnls_facade, dnls_first_paths, ippa, lls, mechanism_ls, EdgeGroup, FacadeLine, InitStrategy, LocateError, PositionEstimate,
    SolverParams,
};
use crate::raypath::{enumerate_mpcs, Mechanism, Mpc, MpcOptions, RayError};
use crate::rng::stream;
use crate::scene::{AnchorSpec, BuildingModel, SceneModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UnawareLls,
    UnawareIppa,
    AwareMech,
    AwareDnlsMap,
    AwareDnlsFacade,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::UnawareLls, Variant::UnawareIppa, Variant::AwareMech, Variant::AwareDnlsMap, Variant::AwareDnlsFacade];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::UnawareLls => "unaware_lls",
            Variant::UnawareIppa => "unaware_ippa",
            Variant::AwareMech => "aware_mech",
            Variant::AwareDnlsMap => "aware_dnls_map",
            Variant::AwareDnlsFacade => "aware_dnls_facade",
        }
    }

    /// Whether the variant works on the first arriving path of each link
    /// rather than on every detectable MPC.
    pub fn uses_first_paths(&self) -> bool {
        matches!(self, Variant::UnawareLls | Variant::UnawareIppa | Variant::AwareDnlsMap)
    }

    /// Tag of the underlying estimator.
    pub fn method_tag(&self) -> &'static str {
        match self {
            Variant::UnawareLls => "lls",
            Variant::UnawareIppa => "ippa",
            Variant::AwareMech => "mech-ls",
            Variant::AwareDnlsMap => "dnls-map",
            Variant::AwareDnlsFacade => "dnls-facade",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method {0:?}")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;

    /// Accepts either the variant name or the estimator tag.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.method_tag() == s)
            .ok_or_else(|| UnknownVariant(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mpc_options: MpcOptions,
    pub solver: SolverParams,
    /// LoS/NLoS decision threshold on FAP power (dB).
    pub los_threshold_db: f64,
    /// Perturb the anchor positions handed to the estimators by each
    /// anchor's `position_noise_sigma`.
    pub anchor_position_noise: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mpc_options: MpcOptions::default(),
            solver: SolverParams::default(),
            los_threshold_db: f64::INFINITY,
            anchor_position_noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error("method {0} needs the building model")]
    MissingBuilding(Variant),
}

impl PipelineError {
    /// No anchor produced a usable measurement.
    pub fn is_coverage(&self) -> bool {
        matches!(self, PipelineError::Channel(ChannelError::NoDetectablePath))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSimulation {
    pub anchor_id: String,
    pub mpcs: Vec<Mpc>,
    pub cir: Vec<CirTap>,
    pub fap: Option<ToaMeasurement>,
    /// Noisy range per MPC, `None` when the MPC is below the detection
    /// threshold. Parallel to `mpcs`.
    pub mpc_ranges: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSimulation {
    pub node: Point3,
    pub links: Vec<LinkSimulation>,
    /// Anchor positions as known to the estimators.
    pub believed_anchors: Vec<AnchorSpec>,
}

const STREAM_CHANNEL: u64 = 1;
const STREAM_RANGES: u64 = 2;
const STREAM_ANCHORS: u64 = 3;

/// Simulates every anchor link for one node and trial. Random draws come
/// from streams keyed by `(seed, node_index, trial, anchor)`.
pub fn simulate_node(
    scene: &SceneModel,
    node: &Point3,
    seed: u64,
    node_index: u64,
    trial: u64,
    config: &PipelineConfig,
) -> Result<NodeSimulation, RayError> {
    let loss = &scene.loss_params;
    let threshold = loss.detection_threshold_db();
    let range_noise = (loss.toa_sigma_m > 0.0).then(|| Normal::new(0.0, loss.toa_sigma_m).expect("finite sigma"));
    let mut links = Vec::with_capacity(scene.anchors.len());
    let mut believed = Vec::with_capacity(scene.anchors.len());
    for (k, anchor) in scene.anchors.iter().enumerate() {
        let key = [node_index, trial, k as u64];
        let mpcs = enumerate_mpcs(anchor, node, &scene.building, &config.mpc_options)?;
        let mut rng = stream(seed, &[key[0], key[1], key[2], STREAM_CHANNEL]);
        let cir = synthesize_cir(&mpcs, &scene.band, loss, &mut rng);
        let fap = extract_fap(&cir, loss, &mut rng).ok();
        let mut rng = stream(seed, &[key[0], key[1], key[2], STREAM_RANGES]);
        let mpc_ranges = mpcs
            .iter()
            .map(|m| {
                let e = range_noise.map_or(0.0, |n| n.sample(&mut rng));
                (path_gain(m, &scene.band, loss) >= threshold).then(|| (m.path_length + e).max(1e-6))
            })
            .collect();
        links.push(LinkSimulation { anchor_id: anchor.id.clone(), mpcs, cir, fap, mpc_ranges });

        let mut a = anchor.clone();
        if config.anchor_position_noise && anchor.position_noise_sigma > 0.0 {
            let mut rng = stream(seed, &[key[0], key[1], key[2], STREAM_ANCHORS]);
            a.position += perturbation(&mut rng, anchor.position_noise_sigma);
        }
        believed.push(a);
    }
    Ok(NodeSimulation { node: *node, links, believed_anchors: believed })
}

fn perturbation<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// One range per detectable MPC, labelled with its mechanism.
pub fn mpc_measurements(sim: &NodeSimulation, sigma: f64) -> Vec<ToaMeasurement> {
    sim.links
        .iter()
        .flat_map(|l| l.mpcs.iter().zip(&l.mpc_ranges))
        .filter_map(|(m, r)| Some(ToaMeasurement::new(m.anchor_id.clone(), (*r)?, sigma).with_mechanism(m.mechanism.clone())))
        .collect()
}

/// First arriving path of every detected link, with its LoS/NLoS decision.
pub fn labelled_faps(sim: &NodeSimulation, config: &PipelineConfig) -> Vec<ToaMeasurement> {
    sim.links
        .iter()
        .filter_map(|l| l.fap.clone())
        .map(|m| {
            let label = classify_los_nlos(m.power_db.unwrap_or(f64::NEG_INFINITY), config.los_threshold_db);
            m.with_label(label)
        })
        .collect()
}

/// Runs one estimator variant on a simulated node.
pub fn run_variant(
    scene: &SceneModel,
    sim: &NodeSimulation,
    variant: Variant,
    config: &PipelineConfig,
) -> Result<PositionEstimate, PipelineError> {
    let meas = if variant.uses_first_paths() {
        labelled_faps(sim, config)
    } else {
        mpc_measurements(sim, scene.loss_params.toa_sigma_m)
    };
    estimate(Some(&scene.building), &sim.believed_anchors, variant, &meas, config)
}

/// Runs one estimator variant on given measurements. Unaware variants take
/// one labelled range per anchor; aware variants take any mix of
/// mechanism-labelled ranges and keep the ones their model covers, and
/// need the building.
pub fn estimate(
    building: Option<&BuildingModel>,
    anchors: &[AnchorSpec],
    variant: Variant,
    measurements: &[ToaMeasurement],
    config: &PipelineConfig,
) -> Result<PositionEstimate, PipelineError> {
    let select = |keep: &dyn Fn(&Mechanism) -> bool| -> Result<Vec<ToaMeasurement>, PipelineError> {
        let out: Vec<ToaMeasurement> =
            measurements.iter().filter(|m| m.true_mechanism.as_ref().is_some_and(keep)).cloned().collect();
        require_any(&out)?;
        Ok(out)
    };
    match variant {
        Variant::UnawareLls => {
            require_any(measurements)?;
            Ok(lls(measurements, anchors)?)
        }
        Variant::UnawareIppa => {
            require_any(measurements)?;
            let labels = measurements
                .iter()
                .map(|m| m.los_label.ok_or_else(|| LocateError::MissingLabel(m.anchor_id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            let params = match lls(measurements, anchors) {
                Ok(start) => config.solver.with_init(InitStrategy::Provided(start.position.into())),
                Err(_) => config.solver,
            };
            Ok(ippa(measurements, &labels, anchors, &params)?)
        }
        _ if building.is_none() => Err(PipelineError::MissingBuilding(variant)),
        Variant::AwareMech => {
            let building = building.expect("checked above");
            let meas = select(&|m| {
                matches!(m, Mechanism::LineOfSight | Mechanism::Transmission { .. } | Mechanism::Reflection { .. })
            })?;
            Ok(mechanism_ls(&meas, anchors, building, &config.solver)?)
        }
        Variant::AwareDnlsMap => {
            let building = building.expect("checked above");
            let meas = select(&|m| !matches!(m, Mechanism::Diffuse))?;
            let params = config.solver.with_init(InitStrategy::Provided(building.centroid().into()));
            Ok(dnls_first_paths(&meas, anchors, building, &params)?)
        }
        Variant::AwareDnlsFacade => {
            let building = building.expect("checked above");
            let meas = select(&|m| match m {
                Mechanism::Diffraction { edge_id } => building.edge(edge_id).is_some_and(|e| e.is_vertical()),
                _ => false,
            })?;
            let (meas, groups) = facade_groups(building, meas);
            let params = config.solver.with_init(InitStrategy::Provided(building.centroid().into()));
            Ok(dnls_facade(&meas, anchors, &groups, &params)?.estimate)
        }
    }
}

fn require_any(meas: &[ToaMeasurement]) -> Result<(), PipelineError> {
    if meas.is_empty() {
        Err(ChannelError::NoDetectablePath.into())
    } else {
        Ok(())
    }
}

/// Groups measurements by shared edge, keeping groups seen at least twice
/// (a single sighting only determines its own edge coordinate).
fn facade_groups(building: &BuildingModel, meas: Vec<ToaMeasurement>) -> (Vec<ToaMeasurement>, Vec<EdgeGroup>) {
    let mut by_edge: BTreeMap<String, Vec<ToaMeasurement>> = BTreeMap::new();
    for m in meas {
        let id = m.edge_id.clone().expect("diffraction measurement has an edge");
        by_edge.entry(id).or_default().push(m);
    }
    let mut kept = Vec::new();
    let mut groups = Vec::new();
    for (id, ms) in by_edge {
        if ms.len() < 2 {
            continue;
        }
        let Some(line) = building.facade_of_edge(&id).and_then(FacadeLine::from_panel) else {
            continue;
        };
        groups.push(EdgeGroup { edge_id: id, facade: line });
        kept.extend(ms);
    }
    (kept, groups)
}

/// Simulates and localizes one node with one variant.
pub fn run_pipeline(
    scene: &SceneModel,
    node: &Point3,
    variant: Variant,
    seed: u64,
    node_index: u64,
    config: &PipelineConfig,
) -> Result<PositionEstimate, PipelineError> {
    let sim = simulate_node(scene, node, seed, node_index, 0, config)?;
    run_variant(scene, &sim, variant, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point;
    use crate::scenario::{generate_scene, ScenarioParams};

    fn quiet_scene() -> SceneModel {
        let params = ScenarioParams { anchor_position_noise: 0.0, ..Default::default() };
        let (_, mut scene) = generate_scene(&params, 42).unwrap();
        scene.loss_params.toa_sigma_m = 0.0;
        scene
    }

    #[test]
    fn zero_noise_dnls_map_is_exact() {
        let scene = quiet_scene();
        let node = point(6.3, 9.1, 7.5);
        let est = run_pipeline(&scene, &node, Variant::AwareDnlsMap, 1, 0, &PipelineConfig::default()).unwrap();
        assert!((est.position - node).norm() <= 1e-5, "{:?}", est.position);
    }

    #[test]
    fn zero_noise_lls_is_biased_deep_inside() {
        let scene = quiet_scene();
        let node = point(10.0, 15.0, 4.5);
        let sim = simulate_node(&scene, &node, 1, 0, 0, &PipelineConfig::default()).unwrap();
        let faps: Vec<_> = sim.links.iter().filter_map(|l| l.fap.clone()).collect();
        assert!(faps.iter().any(|f| f.true_mechanism.as_ref().is_some_and(Mechanism::is_diffraction)));
        let est = run_variant(&scene, &sim, Variant::UnawareLls, &PipelineConfig::default()).unwrap();
        // direct evaluation of the same inputs
        let direct = lls(&faps, &scene.anchors).unwrap();
        assert_eq!(est.position, direct.position);
        assert!((est.position - node).norm() > 0.5);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.method_tag().parse::<Variant>().unwrap(), v);
        }
        assert!("knn".parse::<Variant>().is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let (_, scene) = generate_scene(&ScenarioParams::default(), 42).unwrap();
        let node = point(4.0, 20.0, 1.5);
        let cfg = PipelineConfig::default();
        assert_eq!(simulate_node(&scene, &node, 5, 3, 0, &cfg).unwrap(), simulate_node(&scene, &node, 5, 3, 0, &cfg).unwrap());
    }
}
