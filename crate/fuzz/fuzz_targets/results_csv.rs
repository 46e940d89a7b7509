//! Trace and test result files read back by the report step.

#![no_main]

use hmsddp::sddp::{read_test_results, read_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_trace(data, "fuzz");
    let _ = read_test_results(data, "fuzz");
});
