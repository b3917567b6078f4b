#![no_main]

use circlefib::specfile::parse_target;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(target) = parse_target(text) else { return };
    assert_eq!(parse_target(&target.to_json()).expect("serialized target parses"), target);
    let _ = target.structure();
});
