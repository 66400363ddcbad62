#![no_main]

use libfuzzer_sys::fuzz_target;
use lozenge::rational::{format_rat, parse_rat};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_rat(text) {
        let s = format_rat(&r);
        assert_eq!(parse_rat(&s).expect("formatted rational parses"), r);
    }
});
