use ips_core::channel::{LosLabel, ToaMeasurement};
use ips_core::geom::point;
use ips_core::locate::{
    dnls_facade, dnls_known_edges, ippa, ippa_trace, lls, mechanism_ls, EdgeGroup, FacadeLine, InitStrategy, SolverParams,
};
use ips_core::raypath::{diffraction_point, reflection_paths, transmission_path};
use ips_core::scenario::{generate_scene, ScenarioParams};
use ips_core::scene::{AnchorSpec, EdgeSegment};
use ips_core::{Point3, Vec3};
use proptest::prelude::*;

fn anchors(points: &[Point3]) -> Vec<AnchorSpec> {
    points.iter().enumerate().map(|(k, p)| AnchorSpec::new(format!("A{k}"), *p)).collect()
}

fn outside() -> Vec<AnchorSpec> {
    anchors(&[
        point(-6.0, -3.0, 1.0),
        point(-5.0, 9.0, 7.5),
        point(-8.0, 4.0, 4.0),
        point(-4.0, 14.0, 2.0),
        point(-7.0, 1.0, 10.0),
        point(-5.5, 12.0, 11.0),
    ])
}

fn vedge(id: &str, y: f64) -> EdgeSegment {
    EdgeSegment { id: id.into(), start: point(0.0, y, 0.0), end: point(0.0, y, 12.0), parent_window: "w".into() }
}

fn edge_measurements(anchors: &[AnchorSpec], edges: &[EdgeSegment], node: &Point3) -> Vec<ToaMeasurement> {
    let mut out = Vec::new();
    for a in anchors {
        for e in edges {
            let s = diffraction_point(&a.position, node, e).unwrap();
            let mut m = ToaMeasurement::new(a.id.clone(), s.path_length, 0.1);
            m.edge_id = Some(e.id.clone());
            out.push(m);
        }
    }
    out
}

fn facade() -> FacadeLine {
    FacadeLine { origin: point(0.0, 0.0, 0.0), direction: Vec3::y() }
}

/// Lengths of the facade relaxation: edge point on the facade at node height.
fn facade_measurements(anchors: &[AnchorSpec], coords: &[(&str, f64)], node: &Point3) -> Vec<ToaMeasurement> {
    let mut out = Vec::new();
    for a in anchors {
        for (id, t) in coords {
            let q = point(0.0, *t, node.z);
            let mut m = ToaMeasurement::new(a.id.clone(), (q - a.position).norm() + (node - q).norm(), 0.1);
            m.edge_id = Some((*id).into());
            out.push(m);
        }
    }
    out
}

/// Start on the building side of the facade, which resolves the mirror
/// ambiguity of edges lying in one plane.
fn indoor_start() -> SolverParams {
    SolverParams::default().with_init(InitStrategy::Provided([10.0, 7.5, 6.0]))
}

fn los_measurements(anchors: &[AnchorSpec], node: &Point3) -> Vec<ToaMeasurement> {
    anchors.iter().map(|a| ToaMeasurement::new(a.id.clone(), (node - a.position).norm(), 0.1)).collect()
}

fn inside() -> impl Strategy<Value = Point3> {
    (1.0..19.0, 1.0..14.0, 0.5..11.5).prop_map(|(x, y, z)| point(x, y, z))
}

fn translated(anchors: &[AnchorSpec], v: &Vec3) -> Vec<AnchorSpec> {
    anchors.iter().map(|a| AnchorSpec::new(a.id.clone(), a.position + v)).collect()
}

fn shifted(e: &EdgeSegment, v: &Vec3) -> EdgeSegment {
    EdgeSegment { start: e.start + v, end: e.end + v, ..e.clone() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lls_recovers_los_node(node in inside()) {
        let a = outside();
        let est = lls(&los_measurements(&a, &node), &a).unwrap();
        prop_assert!((est.position - node).norm() < 1e-5);
    }

    #[test]
    fn known_edges_recover_node(node in inside()) {
        let a = outside();
        let edges = [vedge("e1", 2.0), vedge("e2", 8.0)];
        let est = dnls_known_edges(&edge_measurements(&a, &edges, &node), &a, &edges, &indoor_start()).unwrap();
        prop_assert!((est.position - node).norm() < 1e-5, "{:?}", est.position);
    }

    #[test]
    fn facade_recovers_node_and_edges(node in inside()) {
        let a = outside();
        let coords = [("e1", 2.0), ("e2", 8.0)];
        let groups: Vec<EdgeGroup> = coords.iter().map(|(id, _)| EdgeGroup { edge_id: (*id).into(), facade: facade() }).collect();
        let out = dnls_facade(&facade_measurements(&a, &coords, &node), &a, &groups, &indoor_start()).unwrap();
        prop_assert!((out.estimate.position - node).norm() < 1e-5, "{:?}", out.estimate.position);
        prop_assert!((out.edge_coords[0] - 2.0).abs() < 1e-5);
        prop_assert!((out.edge_coords[1] - 8.0).abs() < 1e-5);
    }

    #[test]
    fn estimators_are_translation_equivariant(
        node in inside(),
        v in (-50.0..50.0, -50.0..50.0, -5.0..5.0).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
        bias in 0.0..2.0,
    ) {
        let a = outside();
        let b = translated(&a, &v);
        let moved = node + v;

        let mut m = los_measurements(&a, &node);
        m[1].range += bias;
        let mut mb = los_measurements(&b, &moved);
        mb[1].range += bias;
        prop_assert!((lls(&mb, &b).unwrap().position - (lls(&m, &a).unwrap().position + v)).norm() < 1e-6);

        let labels: Vec<LosLabel> = (0..m.len()).map(|k| if k == 1 { LosLabel::NLoS } else { LosLabel::LoS }).collect();
        let p = SolverParams { max_iterations: 3000, step_tolerance: 1e-11, ..Default::default() };
        let x = ippa(&m, &labels, &a, &p).unwrap().position;
        let y = ippa(&mb, &labels, &b, &p).unwrap().position;
        prop_assert!((y - (x + v)).norm() < 1e-6, "{x} {y}");

        let edges = [vedge("e1", 2.0), vedge("e2", 8.0)];
        let moved_edges: Vec<EdgeSegment> = edges.iter().map(|e| shifted(e, &v)).collect();
        let x = dnls_known_edges(&edge_measurements(&a, &edges, &node), &a, &edges, &SolverParams::default()).unwrap();
        let y = dnls_known_edges(&edge_measurements(&b, &moved_edges, &moved), &b, &moved_edges, &SolverParams::default()).unwrap();
        prop_assert!((y.position - (x.position + v)).norm() < 1e-6);
    }

    #[test]
    fn common_sigma_scale_keeps_estimates(node in inside(), scale in 0.01..100.0) {
        let a = outside();
        let edges = [vedge("e1", 2.0), vedge("e2", 8.0)];
        let mut m = edge_measurements(&a, &edges, &node);
        for (k, x) in m.iter_mut().enumerate() {
            x.range += 0.05 * (k % 3) as f64;
            x.sigma = 0.1 + 0.02 * k as f64;
        }
        let scaled: Vec<ToaMeasurement> = m.iter().map(|x| ToaMeasurement { sigma: x.sigma * scale, ..x.clone() }).collect();
        let p = SolverParams::default();
        let x = dnls_known_edges(&m, &a, &edges, &p).unwrap();
        let y = dnls_known_edges(&scaled, &a, &edges, &p).unwrap();
        prop_assert!((x.position - y.position).norm() < 1e-7, "{}", (x.position - y.position).norm());
        let x = lls(&m, &a).unwrap();
        let y = lls(&scaled, &a).unwrap();
        prop_assert!((x.position - y.position).norm() < 1e-9);
    }
}

#[test]
fn mechanism_ls_recovers_node_on_scene() {
    let (_, scene) = generate_scene(&ScenarioParams::default(), 3).unwrap();
    let b = &scene.building;
    let mut checked = 0;
    for (i, x) in [2.0, 7.5, 13.0, 18.0].iter().enumerate() {
        for y in [3.0, 14.0, 26.0] {
            let node = point(*x, y, 1.2 + 3.0 * i as f64);
            let mut meas = Vec::new();
            for (k, a) in scene.anchors.iter().enumerate() {
                let mpc = if k % 2 == 0 {
                    transmission_path(a, &node, b).ok()
                } else {
                    reflection_paths(a, &node, b, 1).into_iter().next()
                };
                if let Some(mpc) = mpc {
                    meas.push(ToaMeasurement::new(a.id.clone(), mpc.path_length, 0.1).with_mechanism(mpc.mechanism));
                }
            }
            if meas.len() < 4 {
                continue;
            }
            let est = mechanism_ls(&meas, &scene.anchors, b, &SolverParams::default()).unwrap();
            assert!((est.position - node).norm() < 1e-5, "{node} -> {}", est.position);
            checked += 1;
        }
    }
    assert!(checked >= 8, "{checked}");
}

#[test]
fn ippa_exact_los_converges() {
    let a = outside();
    let p = SolverParams { max_iterations: 20_000, step_tolerance: 1e-13, ..Default::default() };
    for node in [point(3.0, 4.0, 5.0), point(15.0, 12.0, 1.0), point(9.0, 2.0, 10.0)] {
        let m = los_measurements(&a, &node);
        let labels = vec![LosLabel::LoS; m.len()];
        let est = ippa(&m, &labels, &a, &p.with_init(InitStrategy::Provided([5.0, 5.0, 5.0]))).unwrap();
        assert!((est.position - node).norm() < 1e-4, "{node} -> {}", est.position);
    }
}

/// Projection onto an intersection of balls by Dykstra's algorithm.
fn project_intersection(balls: &[(Point3, f64)], x: Point3) -> Point3 {
    let mut y = x;
    let mut inc = vec![Vec3::zeros(); balls.len()];
    for _ in 0..20_000 {
        for (k, (c, r)) in balls.iter().enumerate() {
            let z = y + inc[k];
            let d = z - c;
            let p = if d.norm() <= *r { z } else { c + d * (*r / d.norm()) };
            inc[k] = z - p;
            y = p;
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ippa_nlos_balls_fejer(
        node in inside(),
        slack in proptest::collection::vec(0.05..3.0f64, 6),
        x0 in (-40.0..40.0, -40.0..40.0, -20.0..30.0).prop_map(|(x, y, z)| point(x, y, z)),
    ) {
        let a = outside();
        let m: Vec<ToaMeasurement> =
            a.iter().zip(&slack).map(|(a, s)| ToaMeasurement::new(a.id.clone(), (node - a.position).norm() + s, 0.1)).collect();
        let labels = vec![LosLabel::NLoS; m.len()];
        let balls: Vec<(Point3, f64)> = a.iter().zip(&m).map(|(a, m)| (a.position, m.range)).collect();
        let p = SolverParams { max_iterations: 60, step_tolerance: 1e-12, ..Default::default() };
        let trace = ippa_trace(&m, &labels, &a, x0, &p).unwrap();
        let dist: Vec<f64> = trace.iter().map(|x| (project_intersection(&balls, *x) - x).norm()).collect();
        for w in dist.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6, "{} > {}", w[1], w[0]);
        }
    }
}
