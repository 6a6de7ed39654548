#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::coexpression::parse_edges_tsv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_edges_tsv(text);
    }
});
