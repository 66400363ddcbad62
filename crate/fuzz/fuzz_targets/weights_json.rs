#![no_main]

use libfuzzer_sys::fuzz_target;
use lozenge::weights::DriftedWalkWeights;
use num_complex::Complex64;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = DriftedWalkWeights::from_json(text) {
        let _ = w.full_plus(Complex64::new(0.3, 0.2), 8.0);
        let _ = w.kappa.eval(Complex64::new(0.1, 0.0), Complex64::new(0.2, 0.0));
    }
});
