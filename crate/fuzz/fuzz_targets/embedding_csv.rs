#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::metrics::EmbeddingTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = EmbeddingTable::parse_csv(text) {
            let csv = table.to_csv();
            let again = EmbeddingTable::parse_csv(&csv).expect("written table parses");
            assert_eq!(again.to_csv(), csv);
        }
    }
});
