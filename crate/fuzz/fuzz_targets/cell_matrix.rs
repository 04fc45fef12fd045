#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = stgamma::io::decode_cell_matrix(data, "fuzz") {
        let n_cols = u64::from_le_bytes(data[16..24].try_into().unwrap()) as usize;
        let bytes = stgamma::io::encode_cell_matrix(rows.iter().map(Vec::as_slice), rows.len(), n_cols);
        assert_eq!(bytes.as_slice(), data);
    }
});
