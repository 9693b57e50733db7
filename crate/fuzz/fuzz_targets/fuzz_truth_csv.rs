#![no_main]

use dcdb::data::{parse_truth_csv, write_truth_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_truth_csv(data) {
        let mut buf = Vec::new();
        write_truth_csv(&records, &mut buf).expect("writing parsed records");
        let again = parse_truth_csv(buf.as_slice()).expect("re-reading written records");
        assert_eq!(records, again);
    }
});
