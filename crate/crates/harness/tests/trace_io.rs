use std::path::Path;

use proptest::prelude::*;

use lotus_harness::trace::{encode, parse_csv, parse_json, CSV_HEADER};
use lotus_harness::{emit_trace, read_trace, HarnessError, RunTrace, TraceFormat, TraceRecord};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
        Just(5e-324),
    ]
}

fn record() -> impl Strategy<Value = TraceRecord> {
    (
        any::<u32>(),
        finite(),
        finite(),
        finite(),
        any::<bool>(),
        any::<u32>(),
        any::<u32>(),
    )
        .prop_map(
            |(step, loss, grad_norm, criterion_value, switched, wall, switches)| TraceRecord {
                step: step as u64,
                loss,
                grad_norm,
                criterion_value,
                switched,
                step_wall_time_us: wall as u64,
                cumulative_switches: switches as u64,
            },
        )
}

fn same_bits(a: &RunTrace, b: &RunTrace) -> bool {
    a.len() == b.len()
        && a.records.iter().zip(&b.records).all(|(x, y)| {
            x.step == y.step
                && x.loss.to_bits() == y.loss.to_bits()
                && x.grad_norm.to_bits() == y.grad_norm.to_bits()
                && x.criterion_value.to_bits() == y.criterion_value.to_bits()
                && x.switched == y.switched
                && x.step_wall_time_us == y.step_wall_time_us
                && x.cumulative_switches == y.cumulative_switches
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_bit_exact(records in prop::collection::vec(record(), 0..20)) {
        let trace = RunTrace { records };
        let text = encode(&trace, TraceFormat::Csv);
        let back = parse_csv(text.as_bytes(), Path::new("mem.csv")).unwrap();
        prop_assert!(same_bits(&trace, &back));
    }

    #[test]
    fn json_round_trip_is_bit_exact(records in prop::collection::vec(record(), 0..20)) {
        let trace = RunTrace { records };
        let text = encode(&trace, TraceFormat::Json);
        let back = parse_json(text.as_bytes(), Path::new("mem.json")).unwrap();
        prop_assert!(same_bits(&trace, &back));
    }
}

#[test]
fn empty_csv_trace_is_just_the_header() {
    let text = encode(&RunTrace::default(), TraceFormat::Csv);
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
    assert!(parse_csv(text.as_bytes(), Path::new("e.csv")).unwrap().is_empty());
}

#[test]
fn csv_is_readable_by_a_generic_reader() {
    let trace = RunTrace {
        records: vec![TraceRecord {
            step: 1,
            loss: 0.1,
            grad_norm: 2.5,
            criterion_value: 1.0,
            switched: true,
            step_wall_time_us: 0,
            cumulative_switches: 1,
        }],
    };
    let text = encode(&trace, TraceFormat::Csv);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.1);
    assert_eq!(&rows[0][4], "true");
}

#[test]
fn files_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let trace = RunTrace {
        records: (1..=5)
            .map(|i| TraceRecord {
                step: i,
                loss: 1.0 / i as f64,
                grad_norm: (i as f64).sqrt(),
                criterion_value: 0.1 * i as f64,
                switched: i == 3,
                step_wall_time_us: 0,
                cumulative_switches: u64::from(i >= 3),
            })
            .collect(),
    };
    for (name, format) in [("t.csv", TraceFormat::Csv), ("t.json", TraceFormat::Json)] {
        let path = dir.path().join(name);
        assert_eq!(TraceFormat::from_path(&path), format);
        emit_trace(&trace, &path, format).unwrap();
        let back = read_trace(&path, format).unwrap();
        assert!(same_bits(&trace, &back));
        back.validate().unwrap();
    }
}

#[test]
fn unwritable_path_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("trace.csv");
    let err = emit_trace(&RunTrace::default(), &path, TraceFormat::Csv).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
    assert!(err.to_string().contains("missing"), "{err}");
}

#[test]
fn wrong_header_is_rejected() {
    let err = parse_csv("a,b\n1,2\n".as_bytes(), Path::new("bad.csv")).unwrap_err();
    assert!(matches!(err, HarnessError::Trace(_)));
}
