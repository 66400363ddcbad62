#![no_main]

use libfuzzer_sys::fuzz_target;
use lozenge::domain::ParticleConfiguration;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ParticleConfiguration::from_json(text) {
        let again = ParticleConfiguration::from_json(&c.to_json()).expect("serialized configuration parses");
        assert_eq!(again, c);
    }
});
