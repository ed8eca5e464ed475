#![no_main]

use libfuzzer_sys::fuzz_target;
use obil_cli::ingest::{ingest_reader, write_csv};

fuzz_target!(|data: &[u8]| {
    // first byte picks the label column name
    let (label, body) = match data.split_first() {
        Some((b, rest)) if b % 2 == 0 => ("label", rest),
        Some((_, rest)) => ("y", rest),
        None => return,
    };
    let Ok((ds, summary)) = ingest_reader(body, label, "1") else { return };
    assert_eq!(summary.n, ds.len());
    assert_eq!(summary.d, ds.dim());
    let mut out = Vec::new();
    write_csv(&ds, &mut out).expect("in-memory write");
    let (back, _) = ingest_reader(out.as_slice(), "label", "1").expect("own output parses");
    assert_eq!(back, ds);
});
