#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ldp_gof::io::parse_experiment_config(text) {
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ldp_gof::io::parse_experiment_config(&json).unwrap(), cfg);
        }
    }
});
