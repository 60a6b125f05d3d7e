//! Parametric scene generator used by the experiment harness.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::LossParams;
use crate::scene::{
    build_scene, AnchorConfig, BandConfig, BuildingConfig, FootprintConfig, GeometryError, SceneConfig,
    SceneModel, WallConfig, WindowConfig, SCENE_SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub size_x: f64,
    pub size_y: f64,
    pub height: f64,
    pub num_floors: usize,
    pub floor_height: f64,
    pub windows_per_facade_per_floor: usize,
    pub window_width: f64,
    pub window_height: f64,
    pub sill_height: f64,
    pub num_anchors: usize,
    pub standoff: f64,
    /// Fraction of the facade length by which anchors are jittered along it.
    pub along_jitter: f64,
    /// Vertical jitter (meters) around each anchor's nominal height.
    pub height_jitter: f64,
    pub anchor_position_noise: f64,
    pub carrier_hz: f64,
    pub loss_params: LossParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            size_x: 20.0,
            size_y: 30.0,
            height: 12.0,
            num_floors: 4,
            floor_height: 3.0,
            windows_per_facade_per_floor: 2,
            window_width: 1.2,
            window_height: 1.5,
            sill_height: 0.9,
            num_anchors: 6,
            standoff: 5.0,
            along_jitter: 0.25,
            height_jitter: 0.5,
            anchor_position_noise: 0.3,
            carrier_hz: 10e9,
            loss_params: LossParams::default(),
        }
    }
}

/// The four facades in anchor placement order: south, east, north, west.
#[derive(Clone, Copy)]
struct Facade {
    tag: &'static str,
    /// Start corner at ground level.
    origin: [f64; 2],
    /// Horizontal direction along the facade (unit).
    along: [f64; 2],
    /// Outward normal (unit).
    outward: [f64; 2],
    length: f64,
}

fn facades(p: &ScenarioParams) -> [Facade; 4] {
    let (lx, ly) = (p.size_x, p.size_y);
    [
        Facade { tag: "S", origin: [0.0, 0.0], along: [1.0, 0.0], outward: [0.0, -1.0], length: lx },
        Facade { tag: "E", origin: [lx, 0.0], along: [0.0, 1.0], outward: [1.0, 0.0], length: ly },
        Facade { tag: "N", origin: [lx, ly], along: [-1.0, 0.0], outward: [0.0, 1.0], length: lx },
        Facade { tag: "W", origin: [0.0, ly], along: [0.0, -1.0], outward: [-1.0, 0.0], length: ly },
    ]
}

fn on_facade(f: &Facade, s: f64, z: f64) -> [f64; 3] {
    [f.origin[0] + s * f.along[0], f.origin[1] + s * f.along[1], z]
}

/// Generates the scene description. Only anchor placement is random.
pub fn generate_scene_config(params: &ScenarioParams, seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = facades(params);
    let h = params.height;

    let mut walls = Vec::new();
    for f in &fs {
        walls.push(WallConfig {
            id: format!("facade-{}", f.tag),
            corners: [on_facade(f, 0.0, 0.0), on_facade(f, f.length, 0.0), on_facade(f, f.length, h), on_facade(f, 0.0, h)],
            material: "concrete".into(),
            is_facade: true,
        });
    }
    let (lx, ly) = (params.size_x, params.size_y);
    for k in 0..=params.num_floors {
        let z = (k as f64 * params.floor_height).min(h);
        walls.push(WallConfig {
            id: format!("slab-{k}"),
            corners: [[0.0, 0.0, z], [lx, 0.0, z], [lx, ly, z], [0.0, ly, z]],
            material: "slab".into(),
            is_facade: false,
        });
    }

    let mut windows = Vec::new();
    let m = params.windows_per_facade_per_floor;
    for f in &fs {
        for floor in 0..params.num_floors {
            let z0 = floor as f64 * params.floor_height + params.sill_height;
            let z1 = z0 + params.window_height;
            for k in 0..m {
                let center = (k + 1) as f64 * f.length / (m + 1) as f64;
                let s0 = center - 0.5 * params.window_width;
                let s1 = center + 0.5 * params.window_width;
                windows.push(WindowConfig {
                    id: format!("win-{}-f{}-{}", f.tag, floor, k),
                    facade: format!("facade-{}", f.tag),
                    floor_index: floor,
                    corners: [on_facade(f, s0, z0), on_facade(f, s1, z0), on_facade(f, s1, z1), on_facade(f, s0, z1)],
                });
            }
        }
    }

    let n = params.num_anchors;
    let mut anchors = Vec::with_capacity(n);
    for k in 0..n {
        let f = &fs[k % 4];
        let jitter: f64 = rng.random_range(-1.0..=1.0);
        let s = f.length * (0.5 + params.along_jitter * jitter);
        let zj: f64 = rng.random_range(-1.0..=1.0);
        let z = (k as f64 + 0.5) * h / n as f64 + params.height_jitter * zj;
        let base = on_facade(f, s, 0.0);
        anchors.push(AnchorConfig {
            id: format!("A{k}"),
            position: [
                base[0] + params.standoff * f.outward[0],
                base[1] + params.standoff * f.outward[1],
                z,
            ],
            position_noise_sigma: params.anchor_position_noise,
            clock_offset: 0.0,
        });
    }

    SceneConfig {
        schema_version: SCENE_SCHEMA_VERSION,
        building: BuildingConfig {
            footprint: FootprintConfig { min: [0.0, 0.0], max: [lx, ly] },
            height: h,
            num_floors: params.num_floors,
            floor_height: params.floor_height,
            walls,
            windows,
        },
        anchors,
        band: BandConfig { carrier_hz: params.carrier_hz },
        loss_params: params.loss_params.clone(),
    }
}

/// Generates and validates the scene.
pub fn generate_scene(params: &ScenarioParams, seed: u64) -> Result<(SceneConfig, SceneModel), GeometryError> {
    let config = generate_scene_config(params, seed);
    let model = build_scene(&config)?;
    Ok((config, model))
}
