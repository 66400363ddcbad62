#![no_main]

use libfuzzer_sys::fuzz_target;
use lozenge::fluctuations::ProbeSet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = ProbeSet::from_json(text) {
        assert!(p.pairs.iter().flatten().all(|&i| i < p.probes.len()));
        for probe in &p.probes {
            let _ = probe.label();
        }
    }
});
