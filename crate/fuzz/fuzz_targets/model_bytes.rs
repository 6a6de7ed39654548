#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::model::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Model::from_bytes(data) {
        let bytes = model.to_bytes();
        let again = Model::from_bytes(&bytes).expect("re-encoded model decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
});
