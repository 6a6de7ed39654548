#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_json(text) {
            let _ = cfg.validate();
            let json = cfg.to_json();
            let again = PipelineConfig::from_json(&json).expect("written config parses");
            assert_eq!(again.to_json(), json);
        }
    }
});
