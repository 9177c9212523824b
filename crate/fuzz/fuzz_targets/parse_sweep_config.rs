#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ldp_gof::io::parse_sweep_config(text) {
            let json = serde_json::to_string(&cfg).unwrap();
            let back = ldp_gof::io::parse_sweep_config(&json).unwrap();
            assert_eq!(back.hash(), cfg.hash());
        }
    }
});
