#![no_main]

use ahb_core::data::{CovariateKind, CovariateSpec, DataSchema, Dataset, OutcomeSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = DataSchema {
        covariates: vec![
            CovariateSpec {
                name: "x1".into(),
                kind: CovariateKind::Continuous,
            },
            CovariateSpec {
                name: "w".into(),
                kind: CovariateKind::Binary,
            },
            CovariateSpec {
                name: "c".into(),
                kind: CovariateKind::Categorical {
                    levels: vec!["a".into(), "b".into()],
                },
            },
        ],
        treatment: "z".into(),
        outcome: Some(OutcomeSpec {
            name: "y".into(),
            required: false,
        }),
        id: Some("id".into()),
    };
    if let Ok(dataset) = Dataset::from_csv_reader(data, &schema) {
        for i in 0..dataset.n() {
            let _ = dataset.row(i);
            let _ = dataset.id(i);
            let _ = dataset.is_treated(i);
        }
    }
});
