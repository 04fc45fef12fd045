#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = stgamma::io::read_dataset(data, "fuzz") {
        let mut buf = Vec::new();
        stgamma::io::write_dataset(&mut buf, "fuzz", &ds, true).unwrap();
        let again = stgamma::io::read_dataset(buf.as_slice(), "fuzz").unwrap();
        assert_eq!(again.counts(), ds.counts());
    }
});
