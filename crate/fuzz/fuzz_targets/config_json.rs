#![no_main]

use libfuzzer_sys::fuzz_target;
use rgm_core::gw::EntropicGwConfig;
use rgm_core::trainer::TrainConfig;
use rgm_core::KernelSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(k) = serde_json::from_str::<KernelSpec>(text) {
        let _ = k.validate();
    }
    if let Ok(c) = serde_json::from_str::<TrainConfig>(text) {
        let _ = c.validate();
    }
    let _ = serde_json::from_str::<EntropicGwConfig>(text);
});
