#![no_main]

use ahb_core::simulation::{generate, DgpConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mut config) = serde_json::from_slice::<DgpConfig>(data) {
        // Bound the work, not the parsing: tiny populations still exercise
        // every validation and sampling path.
        config.n = config.n.min(64);
        if config.p_c.saturating_add(config.p_d) <= 8 {
            let _ = generate(&config);
        }
    }
});
