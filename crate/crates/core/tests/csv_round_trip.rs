use std::sync::Arc;

use proptest::prelude::*;
use submfg::chain::{Policy, ValueFunction};
use submfg::io::{
    read_conditional_csv, read_flow_csv, read_policy_csv, read_trace_csv, write_conditional_csv, write_flow_csv,
    write_policy_csv, write_trace_csv, ConditionalRow,
};
use submfg::measures::{DiscreteMeasure, MeasureFlow, StateGrid};
use submfg::mfg::IterationTrace;

fn flow(m: usize, steps: usize) -> impl Strategy<Value = MeasureFlow> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, m), steps + 1).prop_map(move |rows| {
        let grid = Arc::new(StateGrid::uniform(-1.5, 2.5, m).unwrap());
        let measures = rows
            .into_iter()
            .map(|mut w| {
                w[0] += 1e-3;
                DiscreteMeasure::from_weights(grid.clone(), w).unwrap()
            })
            .collect();
        MeasureFlow::new(measures).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flows_survive_a_round_trip(f in flow(7, 4)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.csv");
        write_flow_csv(&path, &f).unwrap();
        let back = read_flow_csv(&path).unwrap();
        prop_assert_eq!(back.len(), f.len());
        // CDFs are written with shortest round-trip formatting
        prop_assert_eq!(back.distance(&f).unwrap(), 0.0);
        for (a, b) in back.measures().iter().zip(f.measures()) {
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn traces_survive_a_round_trip(
        rows in prop::collection::vec((0.0..1.0f64, any::<bool>(), -5.0..5.0f64), 1..20)
    ) {
        let trace = IterationTrace {
            flows: Vec::new(),
            residuals: rows.iter().map(|r| r.0).collect(),
            monotone: rows.iter().map(|r| r.1).collect(),
            costs: rows.iter().map(|r| r.2).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &trace).unwrap();
        let back = read_trace_csv(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (n, r) in back.iter().enumerate() {
            prop_assert_eq!(r.iter, n + 1);
            prop_assert_eq!(r.residual, rows[n].0);
            prop_assert_eq!(r.monotone, rows[n].1);
            prop_assert_eq!(r.cost, rows[n].2);
        }
    }

    #[test]
    fn policies_survive_a_round_trip(
        values in prop::collection::vec(-10.0..10.0f64, 4 * 5),
        picks in prop::collection::vec(0usize..3, 3 * 5),
    ) {
        let grid = StateGrid::uniform(-1.0, 1.0, 5).unwrap();
        let controls = [-0.5, 0.0, 0.5];
        let value = ValueFunction { values: values.chunks(5).map(|c| c.to_vec()).collect() };
        let policy = Policy { controls: picks.chunks(5).map(|c| c.to_vec()).collect() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.csv");
        write_policy_csv(&path, &grid, &controls, &policy, &value).unwrap();
        let rows = read_policy_csv(&path).unwrap();
        prop_assert_eq!(rows.len(), 20);
        for r in rows {
            prop_assert_eq!(r.value, value.at(r.k, r.i));
            prop_assert_eq!(r.x, grid.point(r.i));
            match r.control {
                Some(a) => prop_assert_eq!(a, controls[policy.at(r.k, r.i)]),
                None => prop_assert_eq!(r.k, 3),
            }
        }
    }

    #[test]
    fn conditional_rows_survive_a_round_trip(mus in prop::collection::vec(-3.0..3.0f64, 1..12)) {
        let rows: Vec<ConditionalRow> = mus
            .iter()
            .enumerate()
            .map(|(n, &mu)| ConditionalRow { level: n / 3, node: n % 3, b_value: 0.1 * n as f64, prob: 0.25, mu })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cn.csv");
        write_conditional_csv(&path, &rows).unwrap();
        prop_assert_eq!(read_conditional_csv(&path).unwrap(), rows);
    }
}

#[test]
fn malformed_flow_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "t_index,x,weight,cdf\n0,0.0,0.5,0.5\n0,1.0,0.5,1.0\n1,0.0,1.0,1.0\n").unwrap();
    assert!(read_flow_csv(&path).is_err());
}
