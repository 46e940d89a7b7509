#![no_main]

use hmsddp::grid_env::parse_forecast_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = parse_forecast_csv(data, "fuzz") {
        assert!(f.iter().all(|v| v.is_finite()));
    }
});
