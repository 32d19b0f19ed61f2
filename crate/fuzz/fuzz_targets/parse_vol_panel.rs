#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.is_empty() {
        return;
    }
    let annualized = data[0] & 1 == 1;
    if let Ok(text) = std::str::from_utf8(&data[1..]) {
        if let Ok(parsed) = ilev::market_data::parse_vol_panel(text, "F", annualized) {
            let p = parsed.value;
            for d in 0..p.len() {
                for m in 0..p.maturities().len() {
                    if let Some(v) = p.vol(d, m) {
                        assert!(v.is_finite() && v > 0.0);
                    }
                }
            }
        }
    }
});
