#![no_main]

use hmsddp::grid_env::parse_demand_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let nodes = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    if let Ok(d) = parse_demand_csv(data, "fuzz", &nodes, 4) {
        assert!(d.iter().all(|row| row.len() == nodes.len()));
    }
});
