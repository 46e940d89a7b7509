#![no_main]

use hmsddp::ErrorModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = ErrorModel::from_json(text) else {
        return;
    };
    let back = ErrorModel::from_json(&model.to_json()).expect("round trip");
    assert_eq!(back, model);
    // Validated models must filter without panicking.
    let k = model.init_knowledge(0);
    let p = model.predict_next_error(&k);
    if let Some(w) = p.iter().position(|&x| x > 0.0) {
        let _ = model.knowledge_update(&k, w);
    }
});
