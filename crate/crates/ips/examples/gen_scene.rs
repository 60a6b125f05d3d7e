//! Writes a generated default scene as JSON.
//!
//! `cargo run -p ips --example gen_scene -- [seed] [anchors] [out.json]`

use std::path::PathBuf;

use ips::io::save_scene;
use ips_core::scenario::{generate_scene_config, ScenarioParams};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(42, |s| s.parse().expect("seed"));
    let mut params = ScenarioParams::default();
    if let Some(s) = args.next() {
        params.num_anchors = s.parse().expect("anchor count");
    }
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scene.json".into()));
    save_scene(&generate_scene_config(&params, seed), &out).expect("write scene");
    println!("{}", out.display());
}
