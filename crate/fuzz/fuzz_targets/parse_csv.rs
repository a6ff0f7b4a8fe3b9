#![no_main]

use libfuzzer_sys::fuzz_target;
use rgm_core::measure::parse_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for header in [false, true] {
        if let Ok(m) = parse_csv(text, header) {
            // Whatever parses must survive a write/read cycle unchanged.
            let again = parse_csv(&m.to_csv_string(), false).expect("own output parses");
            assert_eq!(again.points().as_slice(), m.points().as_slice());
        }
    }
});
