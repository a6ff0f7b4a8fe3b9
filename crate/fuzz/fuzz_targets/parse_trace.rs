#![no_main]

use libfuzzer_sys::fuzz_target;
use rgm_core::trainer::LossTrace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = LossTrace::parse_csv(text) {
        let again = LossTrace::parse_csv(&trace.to_csv()).expect("own output parses");
        assert_eq!(again, trace);
    }
});
