#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(parsed) = ilev::export::parse_implied_gamma(text) {
            let again = ilev::export::implied_gamma_table(&parsed.value).to_csv();
            assert_eq!(ilev::export::parse_implied_gamma(&again).map(|p| p.value.len()).ok(), Some(parsed.value.len()));
        }
    }
});
