#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::data::parse_names;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(names) = parse_names(text, "genes") {
            assert!(names.iter().all(|n| !n.is_empty()));
        }
    }
});
