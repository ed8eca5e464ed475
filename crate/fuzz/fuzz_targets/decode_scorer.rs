#![no_main]

use libfuzzer_sys::fuzz_target;
use obil_core::codec::{decode_scorer, encode_scorer};

fuzz_target!(|data: &[u8]| {
    let Ok(scorer) = decode_scorer(data) else { return };
    // anything that validates re-encodes losslessly; outputs are either
    // inside (-1, 1) or a clean overflow error
    let x = vec![0.5; scorer.input_dim()];
    if let Ok(o) = scorer.forward(&x) {
        assert!(o > -1.0 && o < 1.0);
        assert!(scorer.log_lr(&x).unwrap().is_finite());
    }
    let again = decode_scorer(encode_scorer(&scorer).as_bytes()).expect("round trip");
    assert_eq!(again, scorer);
});
