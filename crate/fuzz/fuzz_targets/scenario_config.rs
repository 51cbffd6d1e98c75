#![no_main]
use libfuzzer_sys::fuzz_target;
use ris_secrecy::scenario::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ScenarioConfig::from_toml_str(text) else {
        return;
    };
    // A config that validates must expand without panicking.
    if cfg.validate().is_empty() {
        let points = cfg.points();
        assert!(!points.is_empty());
        for m in &cfg.modes {
            assert!(cfg.altmin_config(m).validate().is_ok());
        }
    }
});
