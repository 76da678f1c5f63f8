#![no_main]

use libfuzzer_sys::fuzz_target;
use smrc_harness::config::{parse_entries, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_entries(text, "fuzz");
    if let Ok(cfg) = ExperimentConfig::from_text(text, "fuzz") {
        let canonical = cfg.to_config_text();
        let again = ExperimentConfig::from_text(&canonical, "canonical").expect("canonical text parses");
        assert_eq!(again.to_config_text(), canonical);
    }
});
