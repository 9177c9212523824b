#![no_main]

use libfuzzer_sys::fuzz_target;

// First byte picks the alphabet size, the rest is the file body.
fuzz_target!(|data: &[u8]| {
    let Some((&d, rest)) = data.split_first() else {
        return;
    };
    let d = usize::from(d).max(1);
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(xs) = ldp_gof::io::parse_categories(text, d) {
            assert!(xs.iter().all(|&x| (1..=d).contains(&x)));
        }
    }
});
