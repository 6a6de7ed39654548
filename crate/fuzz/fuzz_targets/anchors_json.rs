#![no_main]

use libfuzzer_sys::fuzz_target;
use musegnn_core::pipeline::read_anchors;

fuzz_target!(|data: &[u8]| {
    let path = std::env::temp_dir().join(format!("anchors-fuzz-{}.json", std::process::id()));
    if std::fs::write(&path, data).is_ok() {
        let _ = read_anchors(&path);
    }
});
