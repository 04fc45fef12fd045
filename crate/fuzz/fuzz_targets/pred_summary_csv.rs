#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = stgamma::io::read_pred_summary(data, "fuzz");
});
