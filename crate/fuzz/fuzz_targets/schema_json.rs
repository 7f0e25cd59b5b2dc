#![no_main]

use ahb_core::data::DataSchema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(schema) = serde_json::from_slice::<DataSchema>(data) {
        let text = serde_json::to_string(&schema).expect("parsed schema serializes");
        let again: DataSchema = serde_json::from_str(&text).expect("round-trip parses");
        assert_eq!(schema, again);
    }
});
