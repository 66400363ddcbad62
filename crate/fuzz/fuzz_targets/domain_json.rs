#![no_main]

use libfuzzer_sys::fuzz_target;
use lozenge::domain::{validate_domain, Domain, PolygonalDomain};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(raw) = PolygonalDomain::from_json(text) else { return };
    let again = PolygonalDomain::from_json(&raw.to_json()).expect("serialized domain parses");
    assert_eq!(again, raw);
    let violations = validate_domain(&raw);
    if let Ok(d) = Domain::new(raw) {
        assert!(violations.is_empty());
        let _ = d.particle_count(d.height());
    }
});
