#![no_main]

use libfuzzer_sys::fuzz_target;
use obil_core::codec::{decode_ensemble, encode_ensemble};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fuzz_target!(|data: &[u8]| {
    let Ok(ens) = decode_ensemble(data) else { return };
    let x = vec![-0.25; ens.input_dim()];
    let members = match ens.member_log_lrs(&x) {
        Ok(m) => m,
        Err(obil_core::ObilError::NonFinite(_)) => Vec::new(),
        Err(e) => panic!("validated ensemble failed: {e}"),
    };
    // keep MC-dropout fusion cheap enough for the fuzzer
    if !members.is_empty() && ens.config.mc_samples <= 64 && ens.members.len() <= 16 {
        assert_eq!(members.len(), ens.members.len());
        let Ok(fused) = ens.fused_log_lr(&x, &mut ChaCha8Rng::seed_from_u64(0)) else { return };
        let lo = members.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(fused.0 >= lo - 1e-9 && fused.0 <= hi + 1e-9);
    }
    let again = decode_ensemble(encode_ensemble(&ens).as_bytes()).expect("round trip");
    assert_eq!(again, ens);
});
