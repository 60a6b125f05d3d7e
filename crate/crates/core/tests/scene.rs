use ips_core::scenario::{generate_scene, generate_scene_config, ScenarioParams};
use ips_core::scene::{build_scene, classify_band, diffracting_edges_for_floor, floor_of, FrequencyRange};
use proptest::prelude::*;

proptest! {
    #[test]
    fn bands_partition_the_range(carrier in 1.0..48e9f64) {
        let band = classify_band(carrier).unwrap();
        let expected = if carrier < 7e9 {
            FrequencyRange::Fr1
        } else if carrier < 24e9 {
            FrequencyRange::Fr3
        } else {
            FrequencyRange::Fr2
        };
        prop_assert_eq!(band.range, expected);
    }

    #[test]
    fn generated_scenes_are_valid_and_deterministic(seed in any::<u64>(), anchors in 1usize..8) {
        let params = ScenarioParams { num_anchors: anchors, ..Default::default() };
        let (config, scene) = generate_scene(&params, seed).unwrap();
        prop_assert_eq!(&config, &generate_scene_config(&params, seed));
        prop_assert_eq!(&scene, &build_scene(&config).unwrap());
        let b = &scene.building;
        let bounds = b.bounds();
        prop_assert_eq!(scene.anchors.len(), anchors);
        for a in &scene.anchors {
            prop_assert!(!bounds.contains_closed(&a.position, 0.0));
        }
        for f in 0..b.num_floors {
            for e in diffracting_edges_for_floor(b, f).unwrap() {
                prop_assert_eq!(floor_of(e.midpoint().z, b), f);
            }
        }
        prop_assert!(diffracting_edges_for_floor(b, b.num_floors).is_err());
    }
}

#[test]
fn band_edges() {
    assert_eq!(classify_band(6.999e9).unwrap().range, FrequencyRange::Fr1);
    assert_eq!(classify_band(7e9).unwrap().range, FrequencyRange::Fr3);
    assert_eq!(classify_band(24e9).unwrap().range, FrequencyRange::Fr2);
    assert_eq!(classify_band(48e9).unwrap().range, FrequencyRange::Fr2);
    assert!(classify_band(48.1e9).is_err());
    assert!(classify_band(0.0).is_err());
}
