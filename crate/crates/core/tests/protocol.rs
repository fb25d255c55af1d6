use bluetrack_core::protocol::{
    decode_report, encode_report, format_rssi, quantize_rssi, tenths_to_rssi, Detection, ParseErrorKind,
    ScanReport,
};
use bluetrack_core::BtAddress;
use proptest::prelude::*;

fn arb_name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.:'#_\\-éßЖ中😀]{1,60}"
}

fn arb_report() -> impl Strategy<Value = ScanReport> {
    (
        "[A-Za-z0-9_-]{1,64}",
        any::<u64>(),
        any::<u64>(),
        prop::collection::btree_map(any::<[u8; 6]>(), (-1200i64..=0, arb_name()), 0..10),
    )
        .prop_map(|(sensor_id, seq, timestamp_ms, dets)| ScanReport {
            sensor_id,
            seq,
            timestamp_ms,
            detections: dets
                .into_iter()
                .map(|(a, (tenths, friendly_name))| Detection {
                    addr: BtAddress(a),
                    rssi_dbm: tenths_to_rssi(tenths),
                    friendly_name,
                })
                .collect(),
        })
}

proptest! {
    #[test]
    fn round_trip(r in arb_report()) {
        let bytes = encode_report(&r).unwrap();
        prop_assert_eq!(decode_report(&bytes).unwrap(), r);
    }

    #[test]
    fn encoding_is_canonical(r in arb_report()) {
        let bytes = encode_report(&r).unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        prop_assert!(text.ends_with("END\n"));
        for line in text.lines().filter(|l| l.starts_with("DET|")) {
            let fields: Vec<&str> = line.splitn(4, '|').collect();
            prop_assert_eq!(fields[1].to_uppercase(), fields[1]);
            let (_, frac) = fields[2].split_once('.').unwrap();
            prop_assert_eq!(frac.len(), 1);
        }
        prop_assert_eq!(encode_report(&decode_report(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn distinct_reports_encode_differently(a in arb_report(), b in arb_report()) {
        prop_assume!(a != b);
        prop_assert_ne!(encode_report(&a).unwrap(), encode_report(&b).unwrap());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode_report(&bytes);
    }

    #[test]
    fn mutated_reports_never_panic(r in arb_report(), pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let mut bytes = encode_report(&r).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] = byte;
        if let Ok(back) = decode_report(&bytes) {
            // Accepted input may be non-canonical (leading zeros) but must
            // describe a valid report.
            let canonical = encode_report(&back).unwrap();
            prop_assert_eq!(decode_report(&canonical).unwrap(), back);
        }
    }

    #[test]
    fn strict_prefixes_rejected(r in arb_report(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_report(&r).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(decode_report(&bytes[..n]).is_err());
    }

    #[test]
    fn quantization_rounds_half_away(tenths in -1200i64..=0) {
        let exact = tenths_to_rssi(tenths);
        prop_assert_eq!(quantize_rssi(exact), exact);
        prop_assert_eq!(quantize_rssi(exact + 0.04), exact);
        prop_assert_eq!(quantize_rssi(exact - 0.04), exact);
    }
}

#[test]
fn documented_encodings() {
    let r = ScanReport {
        sensor_id: "S1".into(),
        seq: 7,
        timestamp_ms: 1000,
        detections: vec![Detection {
            addr: "AA:BB:CC:DD:EE:FF".parse().unwrap(),
            rssi_dbm: -57.0,
            friendly_name: "Nokia 6230".into(),
        }],
    };
    let bytes = encode_report(&r).unwrap();
    assert_eq!(bytes, b"RPT|S1|7|1000|1\nDET|AA:BB:CC:DD:EE:FF|-57.0|Nokia 6230\nEND\n");
    assert_eq!(decode_report(&bytes).unwrap(), r);
    let empty = ScanReport { seq: 8, timestamp_ms: 2000, detections: vec![], ..r };
    assert_eq!(encode_report(&empty).unwrap(), b"RPT|S1|8|2000|0\nEND\n");
    assert_eq!(format_rssi(-57.25), "-57.3");
    assert_eq!(format_rssi(-0.04), "0.0");
}

#[test]
fn documented_rejections() {
    let e = decode_report(b"RPT|S1|7|1000|2\nDET|AA:BB:CC:DD:EE:FF|-57.0|X\nEND\n").unwrap_err();
    assert_eq!(e.line, 3);
    assert!(matches!(e.kind, ParseErrorKind::CountMismatch { declared: 2, found: 1 }));
    let e = decode_report(b"RPT|S1|7|1000|1\nDET|ZZ:BB:CC:DD:EE:FF|-57.0|X\nEND\n").unwrap_err();
    assert_eq!(e.line, 2);
    assert_eq!(e.kind, ParseErrorKind::BadAddress);
}
