#![no_main]

use circlefib::specfile::{certification_to_json, parse_certification_report};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(report) = parse_certification_report(text) else { return };
    let again = parse_certification_report(&certification_to_json(&report)).expect("serialized report parses");
    assert_eq!(again, report);
});
