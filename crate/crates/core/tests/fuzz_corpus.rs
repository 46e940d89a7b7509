//! The checked-in fuzz seeds are valid inputs for their entry points.

use std::fs;
use std::path::PathBuf;

use hmsddp::grid_env::{parse_demand_csv, parse_forecast_csv};
use hmsddp::sddp::{read_test_results, read_trace};
use hmsddp::{ErrorModel, ExperimentConfig, ForecastErrorSeries, InstanceFile, ValueFunctionApprox};

fn seed(target: &str, name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target).join(name);
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn valid_seeds_parse() {
    assert!(ForecastErrorSeries::read_csv(seed("training_csv", "tiny_episode").as_slice(), "seed").is_ok());
    assert!(parse_forecast_csv(seed("forecast_csv", "tiny").as_slice(), "seed").is_ok());
    let nodes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    assert!(parse_demand_csv(seed("demand_csv", "three_nodes").as_slice(), "seed", &nodes, 4).is_ok());
    for name in ["tiny", "medium"] {
        assert!(InstanceFile::from_json(&text("instance_json", name)).is_ok());
        assert!(ExperimentConfig::from_json(&text("config_json", name)).is_ok());
    }
    for name in ["tiny_crossing", "tiny_iid"] {
        assert!(ErrorModel::from_json(&text("model_json", name)).is_ok());
    }
    assert!(ValueFunctionApprox::from_json(&text("vfa_json", "tiny")).is_ok());
    assert!(read_trace(seed("results_csv", "trace").as_slice(), "seed").is_ok());
    assert!(read_test_results(seed("results_csv", "test").as_slice(), "seed").is_ok());
}

#[test]
fn invalid_seeds_are_rejected() {
    assert!(parse_forecast_csv(seed("forecast_csv", "nan").as_slice(), "seed").is_err());
    let nodes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    assert!(parse_demand_csv(seed("demand_csv", "duplicate").as_slice(), "seed", &nodes, 4).is_err());
    assert!(ForecastErrorSeries::read_csv(seed("training_csv", "header_only").as_slice(), "seed").is_err());
}
