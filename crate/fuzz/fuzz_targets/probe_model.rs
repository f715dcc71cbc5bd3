#![no_main]

use companion_core::probe::ProbeModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(model) = ProbeModel::from_json(data) {
        let x = vec![0.5; model.dimension];
        if let Ok(p) = model.predict_proba(&x) {
            assert!(!(p < 0.0 || p > 1.0));
        }
    }
});
