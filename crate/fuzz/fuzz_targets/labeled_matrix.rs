#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::binio::LabeledMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = LabeledMatrix::decode(data) {
        let bytes = m.encode();
        let again = LabeledMatrix::decode(&bytes).expect("re-encoded matrix decodes");
        assert_eq!(again.encode(), bytes);
    }
});
