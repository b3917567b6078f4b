#![no_main]

use circlefib::specfile::parse_fibration_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = parse_fibration_spec(text) else { return };
    let again = parse_fibration_spec(&spec.to_json()).expect("serialized spec parses");
    assert_eq!(again, spec);
    if spec.n <= 2 {
        let _ = spec.build();
    }
});
