use ggik::data::{suite_chain, SUITE_NAMES};
use ggik::dgp::{config_from_points_with_goal, determined_points};
use ggik::graph::{complete_graph, partial_graph, points_from_config, PointGraph};
use ggik::kinematics::{pose_error, wrap_angle, JointConfig, KinematicChain};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn chain_and_config() -> impl Strategy<Value = (KinematicChain, JointConfig)> {
    (0..SUITE_NAMES.len()).prop_flat_map(|i| {
        let chain = suite_chain(SUITE_NAMES[i]).unwrap();
        let n = chain.dof();
        (Just(chain), prop::collection::vec(-3.1f64..3.1, n).prop_map(JointConfig))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrapped_angles_stay_in_range(x in -1e3f64..1e3) {
        let w = wrap_angle(x);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        let turns = (x - w) / std::f64::consts::TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn angles_survive_points((chain, q) in chain_and_config()) {
        let (pts, _) = points_from_config(&chain, &q).unwrap();
        let goal = chain.forward_kinematics(&q).unwrap();
        let back = config_from_points_with_goal(&chain, &pts, &goal).unwrap();
        let (pos, rot) = pose_error(&chain.forward_kinematics(&back).unwrap(), &goal);
        prop_assert!(pos < 1e-9 && rot < 1e-9, "pose error ({pos}, {rot})");
    }

    #[test]
    fn complete_graph_distances_match_points((chain, q) in chain_and_config()) {
        let g = complete_graph(&chain, &q).unwrap();
        for e in g.edges() {
            prop_assert!(((g.points()[e.u] - g.points()[e.v]).norm() - e.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_json_round_trips_exactly((chain, q) in chain_and_config()) {
        let goal = chain.forward_kinematics(&q).unwrap();
        for g in [complete_graph(&chain, &q).unwrap(), partial_graph(&chain, &goal).unwrap()] {
            let back = PointGraph::from_json(&g.to_json()).unwrap();
            prop_assert_eq!(back, g);
        }
    }

    #[test]
    fn robot_json_round_trips_exactly(i in 0..SUITE_NAMES.len()) {
        let chain = suite_chain(SUITE_NAMES[i]).unwrap();
        let back = KinematicChain::from_json(&chain.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), chain.to_json());
    }

    /// Nodes pinned by known distances sit exactly where the true configuration puts them.
    #[test]
    fn determined_nodes_are_exact((chain, q) in chain_and_config()) {
        let goal = chain.forward_kinematics(&q).unwrap();
        let g = partial_graph(&chain, &goal).unwrap();
        let (pts, fixed) = determined_points(&g);
        let (truth, _) = points_from_config(&chain, &q).unwrap();
        for i in 0..pts.len() {
            if fixed[i] {
                prop_assert!((pts[i] - truth[i]).norm() < 1e-9, "node {i}: {:?} vs {:?}", pts[i], truth[i]);
            }
        }
    }

    #[test]
    fn determined_nodes_move_rigidly((chain, q) in chain_and_config(), a in -3.0f64..3.0, b in -1.5f64..1.5, t in -2.0f64..2.0) {
        let goal = chain.forward_kinematics(&q).unwrap();
        let g = partial_graph(&chain, &goal).unwrap();
        let r = if chain.dim() == 2 {
            Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
        } else {
            Rotation3::from_euler_angles(a, b, a * b).into_inner()
        };
        let shift = Vector3::new(t, -t, if chain.dim() == 2 { 0.0 } else { 0.5 * t });
        let (p0, f0) = determined_points(&g);
        let (p1, f1) = determined_points(&g.transformed(&r, &shift));
        prop_assert_eq!(&f0, &f1);
        for i in 0..p0.len() {
            if f0[i] {
                prop_assert!((r * p0[i] + shift - p1[i]).norm() < 1e-9);
            }
        }
    }
}
