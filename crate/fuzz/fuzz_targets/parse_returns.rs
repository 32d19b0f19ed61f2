#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(parsed) = ilev::market_data::parse_returns(text, "F") {
            let s = parsed.value;
            assert!(s.len() >= 2);
            assert!(s.returns().iter().all(|r| r.is_finite() && *r > -1.0));
        }
    }
});
