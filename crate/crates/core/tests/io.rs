mod common;

use outshare::data::{read_dataset, write_dataset_to, CsvSchema};
use outshare::grid::{GridPoint, GridResult};
use outshare::model::ParamTheta;
use proptest::prelude::*;

#[test]
fn dataset_csv_round_trip() {
    let data = common::toy3();
    let mut buf = Vec::new();
    write_dataset_to(&data, &mut buf, &CsvSchema::default()).unwrap();
    let back = read_dataset(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.markets().iter().zip(back.markets()) {
        assert_eq!(a.market_id, b.market_id);
        assert_eq!(a.prices, b.prices);
        assert_eq!(a.instruments, b.instruments);
        assert_eq!(a.outside_share, b.outside_share);
        for (x, y) in a.inside_shares.iter().zip(&b.inside_shares) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn raw_shares_are_renormalized() {
    let csv = "market_id,product_id,share,price,x_1,z_1\n1,a,0.2,1.0,1,1\n1,b,0.6,2.0,1,1\n";
    let data = read_dataset(csv.as_bytes(), &CsvSchema::default()).unwrap();
    let m = &data.markets()[0];
    assert!((m.inside_shares[0] - 0.25).abs() < 1e-15);
    assert!((m.inside_shares[1] - 0.75).abs() < 1e-15);
}

#[test]
fn malformed_rows_are_reported() {
    let csv = "market_id,product_id,share,price,x_1,z_1\n1,a,abc,1.0,1,1\n1,b,0.6,2.0,1,1\n";
    let err = read_dataset(csv.as_bytes(), &CsvSchema::default()).unwrap_err().to_string();
    assert!(err.contains("abc"), "{err}");
}

fn grid_point() -> impl Strategy<Value = GridPoint> {
    (-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0, any::<bool>(), -10.0f64..10.0).prop_map(|(a, b, l, member, m)| GridPoint {
        theta: ParamTheta::new(a, vec![b], vec![l]),
        member,
        min_moment: m,
        statistic: None,
        critical_value: None,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_csv_round_trip(points in prop::collection::vec(grid_point(), 1..20)) {
        let names = vec!["alpha".to_string(), "beta_1".to_string(), "lambda_1".to_string()];
        let grid = GridResult::new(names, points);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let back = GridResult::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, grid);
    }
}
