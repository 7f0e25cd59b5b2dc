#![no_main]

use ahb_core::predictor::{Arm, ExternalPredictions, OutcomeModel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(preds) = ExternalPredictions::from_csv_reader(data) {
        let _ = preds.n_draws();
        for id in ["u1", "1", ""] {
            let _ = preds.predict_unit(id, &[], Arm::Control);
            let _ = preds.predict_unit(id, &[], Arm::Treated);
            let _ = preds.ensemble_unit(id, &[], Arm::Control);
        }
    }
});
