#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = ldp_gof::io::parse_prob_vector(text) {
            let total: f64 = p.as_slice().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(p.as_slice().iter().all(|&m| m >= 0.0));
        }
    }
});
