#![no_main]

use dcdb::data::parse_csv_dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The first line picks the response column so both halves get explored.
    let (response, body) = match data.iter().position(|b| *b == b'\n') {
        Some(i) => (String::from_utf8_lossy(&data[..i]).into_owned(), &data[i + 1..]),
        None => ("y".to_string(), data),
    };
    if let Ok((dataset, _)) = parse_csv_dataset(body, &response) {
        assert_eq!(dataset.x.nrows(), dataset.y.len());
        assert_eq!(dataset.x.ncols(), dataset.names.len());
        assert!(dataset.x.iter().chain(dataset.y.iter()).all(|v| v.is_finite()));
    }
});
