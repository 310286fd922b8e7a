#![no_main]

use std::path::Path;

use diffclass::data::{DatasetManifest, SchemaConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = SchemaConfig::default();
    if let Ok(m) = DatasetManifest::from_csv_reader(data, Path::new("/data"), &schema) {
        // a manifest that parsed must survive its own serialization
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = DatasetManifest::from_csv_reader(&buf[..], Path::new("/data"), &schema).unwrap();
        assert_eq!(back.records(), m.records());
    }
});
