use std::io::Write;

use drdid::panel::{load_csv, read_csv, write_csv};
use drdid::{
    expand_features, CsvSchema, Error, FeatureSpec, MissingPolicy, OutcomeFamily, PanelDataset,
};
use proptest::prelude::*;

fn schema() -> CsvSchema {
    CsvSchema {
        id: Some("site".into()),
        treatment: "g".into(),
        before: "y08".into(),
        after: "y12".into(),
        covariates: vec!["aadt".into(), "urban".into()],
    }
}

fn dataset() -> impl Strategy<Value = PanelDataset> {
    (3usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u32..500, n),
                prop::collection::vec(0u32..500, n),
                prop::collection::vec(any::<bool>(), n - 2),
                prop::collection::vec(1e-3f64..1e6, n),
                prop::collection::vec(prop::bool::ANY, n),
            )
        })
        .prop_map(|(y0, y1, mut g, aadt, urban)| {
            g.push(true);
            g.push(false);
            let y0: Vec<f64> = y0.into_iter().map(f64::from).collect();
            let y1: Vec<f64> = y1.into_iter().map(f64::from).collect();
            let urban: Vec<f64> = urban.into_iter().map(|b| b as u8 as f64).collect();
            PanelDataset::from_columns(
                &y0,
                &y1,
                &g,
                &[("aadt", &aadt), ("urban", &urban)],
                OutcomeFamily::Count,
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_lossless(data in dataset()) {
        let mut buf = Vec::new();
        write_csv(&data, &schema(), &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &schema(), OutcomeFamily::Count, MissingPolicy::Strict).unwrap();
        prop_assert_eq!(back.dropped_rows, 0);
        prop_assert_eq!(back.dataset, data);
    }

    #[test]
    fn resampling_keeps_whole_units(data in dataset(), picks in prop::collection::vec(0usize..1000, 1..80)) {
        let idx: Vec<usize> = picks.iter().map(|p| p % data.len()).collect();
        match data.resample(&idx) {
            Ok(r) => {
                prop_assert_eq!(r.len(), idx.len());
                prop_assert_eq!(r.n_treated() + r.n_control(), r.len());
                for (u, &i) in r.units().iter().zip(&idx) {
                    let src = &data.units()[i];
                    prop_assert_eq!((u.y_before, u.y_after, u.treated), (src.y_before, src.y_after, src.treated));
                    prop_assert_eq!(&u.covariates, &src.covariates);
                }
            }
            Err(Error::DegenerateDesign { .. }) => {
                let treated = idx.iter().filter(|&&i| data.units()[i].treated).count();
                prop_assert!(treated == 0 || treated == idx.len());
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn loads_a_file_from_disk() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "site,y08,y12,g,aadt,urban").unwrap();
    for row in [
        "a,1,2,1,1500,1",
        "b,0,0,0,800,0",
        "c,3,1,0,2200,1",
        "d,2,,1,900,0",
        "e,4,4,0,3000,0",
    ] {
        writeln!(f, "{row}").unwrap();
    }
    f.flush().unwrap();
    assert!(matches!(
        load_csv(
            f.path(),
            &schema(),
            OutcomeFamily::Count,
            MissingPolicy::Strict
        ),
        Err(Error::SchemaViolation(_))
    ));
    let loaded = load_csv(
        f.path(),
        &schema(),
        OutcomeFamily::Count,
        MissingPolicy::Lenient,
    )
    .unwrap();
    assert_eq!(loaded.dropped_rows, 1);
    assert_eq!(loaded.dataset.len(), 4);
    assert_eq!(loaded.dataset.n_treated(), 1);
    assert_eq!(loaded.dataset.units()[2].id, "c");
    assert!(matches!(
        load_csv(
            f.path().with_extension("missing"),
            &schema(),
            OutcomeFamily::Count,
            MissingPolicy::Strict
        ),
        Err(Error::Io(_) | Error::MalformedFile(_))
    ));
}

#[test]
fn design_columns_follow_declaration_order() {
    let data = PanelDataset::from_columns(
        &[1.0, 2.0],
        &[1.0, 2.0],
        &[true, false],
        &[
            ("a", &[2.0, 3.0]),
            ("b", &[1.0, std::f64::consts::E]),
            ("c", &[0.0, 1.0]),
        ],
        OutcomeFamily::Count,
    )
    .unwrap();
    let mut spec = FeatureSpec::intercept_only()
        .with_power("a", 2)
        .with_log("b");
    spec.base_columns.push("c".into());
    let x = expand_features(&data, &spec).unwrap();
    assert_eq!(x.ncols(), spec.width());
    assert_eq!(x.row(1), vec![1.0, 1.0, 1.0, 3.0, 9.0]);
}
