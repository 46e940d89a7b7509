#![no_main]

use hmsddp::ValueFunctionApprox;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(v) = ValueFunctionApprox::from_json(text) else {
        return;
    };
    let r = vec![0.0; v.dims];
    for t in 0..v.horizon() {
        for i in 0..v.info_states() {
            let _ = v.evaluate(t, i, &r);
        }
    }
});
