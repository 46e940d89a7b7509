//! Training series CSV: anything that parses must survive a write/read cycle.

#![no_main]

use hmsddp::ForecastErrorSeries;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = ForecastErrorSeries::read_csv(data, "fuzz") else {
        return;
    };
    let mut buf = Vec::new();
    s.write_csv(&mut buf).expect("a parsed series writes");
    let back = ForecastErrorSeries::read_csv(buf.as_slice(), "fuzz").expect("written series parses");
    assert_eq!(back.errors.len(), s.errors.len());
});
