#![no_main]

use circlefib::specfile::parse_tol_override;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((key, value)) = parse_tol_override(text) {
        assert!(!key.is_empty());
        assert!(value.is_finite() && value > 0.0);
    }
});
