#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rep) = ldp_gof::io::parse_test_report(text) {
            assert_eq!(rep.decision().unwrap(), rep.reject);
            let json = serde_json::to_string(&rep).unwrap();
            assert_eq!(ldp_gof::io::parse_test_report(&json).unwrap(), rep);
        }
    }
});
