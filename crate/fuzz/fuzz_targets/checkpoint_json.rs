#![no_main]

use libfuzzer_sys::fuzz_target;
use rgm_core::trainer::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Checkpoint::from_json(text) {
        let again = Checkpoint::from_json(&c.to_json().expect("serializes")).expect("own output parses");
        assert_eq!(again, c);
    }
});
