use std::f64::consts::{FRAC_PI_2, PI};

use crate::kinematics::{JointSpec, KinematicChain};

/// Names of the built-in chains, in suite order.
pub const SUITE_NAMES: [&str; 5] = ["planar-2r", "planar-3r", "spatial-4r", "spatial-6r", "spatial-7r"];

// (a, alpha, d) per joint; theta0 = 0 and limits [-pi, pi] throughout.
// Every spatial chain ends in a roll joint; no earlier joint has a = 0 and alpha = 0.
const SPATIAL_4R: [[f64; 3]; 4] = [[0.0, FRAC_PI_2, 0.6], [1.1, 0.0, 0.0], [0.9, FRAC_PI_2, 0.0], [0.0, 0.0, 0.35]];

const SPATIAL_6R: [[f64; 3]; 6] = [
    [0.0, FRAC_PI_2, 0.45],
    [0.95, 0.0, 0.12],
    [0.8, 0.0, -0.1],
    [0.0, FRAC_PI_2, 0.3],
    [0.0, -FRAC_PI_2, 0.25],
    [0.0, 0.0, 0.15],
];

const SPATIAL_7R: [[f64; 3]; 7] = [
    [0.0, -FRAC_PI_2, 0.5],
    [0.1, FRAC_PI_2, 0.0],
    [0.05, FRAC_PI_2, 0.75],
    [0.08, -FRAC_PI_2, 0.0],
    [0.0, FRAC_PI_2, 0.65],
    [0.06, -FRAC_PI_2, 0.0],
    [0.0, 0.0, 0.2],
];

fn spatial(name: &str, dh: &[[f64; 3]]) -> KinematicChain {
    let joints = dh.iter().map(|&[a, alpha, d]| JointSpec::new(a, alpha, d, 0.0, -PI, PI)).collect();
    KinematicChain::new(name, 3, joints).expect("suite chains are valid")
}

/// A suite chain by name (case-insensitive).
pub fn suite_chain(name: &str) -> Option<KinematicChain> {
    let c = match name.to_ascii_lowercase().as_str() {
        "planar-2r" => KinematicChain::planar("planar-2r", &[1.0, 1.0]),
        "planar-3r" => KinematicChain::planar("planar-3r", &[1.0, 0.8, 0.0]),
        "spatial-4r" => Ok(spatial("spatial-4r", &SPATIAL_4R)),
        "spatial-6r" => Ok(spatial("spatial-6r", &SPATIAL_6R)),
        "spatial-7r" => Ok(spatial("spatial-7r", &SPATIAL_7R)),
        _ => return None,
    };
    Some(c.expect("suite chains are valid"))
}

pub fn chain_suite() -> Vec<KinematicChain> {
    SUITE_NAMES.iter().map(|n| suite_chain(n).expect("known name")).collect()
}
