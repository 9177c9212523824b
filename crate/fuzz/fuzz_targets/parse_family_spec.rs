#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for d in [None, Some(1), Some(17)] {
            if let Ok(spec) = ldp_gof::io::parse_family_spec(text, d) {
                let json = serde_json::to_string(&spec).unwrap();
                let back = ldp_gof::io::parse_family_spec(&json, None).unwrap();
                assert_eq!(back, spec);
            }
        }
    }
});
