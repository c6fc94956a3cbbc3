//! Policies are plain versioned JSON: save one, reload it, and route with the copy.

use pacroute::calibration::{calibrate_gpac, route, Assigner, CalibrationTarget, RoutingPolicy};
use pacroute::estimator::{EstimatorConfig, UcbMethod};
use pacroute::rng::substream;
use pacroute::simulation::{generate, SyntheticSpec};

fn main() -> pacroute::Result<()> {
    let spec = SyntheticSpec::load("fixtures/hetero_linear.json".as_ref())?;
    let records = generate(&spec, 2000, &mut substream(2, "calibration"))?;
    let config = EstimatorConfig::new(UcbMethod::Clt, 0.05, 0.5, 2);
    let policy = calibrate_gpac(
        &records,
        &Assigner::labels_from(&records),
        &CalibrationTarget::new(0.05),
        &config,
    )?
    .policy;

    let dir = tempfile::tempdir().map_err(|source| pacroute::Error::Io {
        path: std::env::temp_dir(),
        source,
    })?;
    let path = dir.path().join("policy.json");
    policy.save(&path)?;
    println!("{}", std::fs::read_to_string(&path).expect("just written"));

    let reloaded = RoutingPolicy::load(&path)?;
    assert_eq!(reloaded, policy);
    for (g, u) in [("easy", 0.6), ("hard", 0.6), ("hard", 0.21)] {
        println!("{g} at {u}: {:?}", route(&reloaded, Some(g), u)?.action);
    }

    let stale = policy.to_json().replace("pac-route/1", "pac-route/0");
    match RoutingPolicy::from_json(&stale) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
