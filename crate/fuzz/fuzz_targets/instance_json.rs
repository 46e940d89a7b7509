#![no_main]

use hmsddp::{GridInstance, InstanceFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(file) = InstanceFile::from_json(text) else {
        return;
    };
    if file.horizon > 1000 {
        return;
    }
    // A validated file with flat profiles must assemble.
    let demand = vec![vec![0.0; file.nodes.len()]; file.horizon + 1];
    let forecast = vec![0.0; file.horizon + 1];
    let _ = GridInstance::from_parts(&file, demand, forecast);
});
