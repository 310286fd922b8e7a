#![no_main]

use diffclass::data::{AdapterConfig, ClassMapping, VocabularyConfig};
use libfuzzer_sys::fuzz_target;

// Adapter, class-mapping and vocabulary files share one corpus.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = AdapterConfig::from_toml_str(text);
    let _ = ClassMapping::from_toml_str(text);
    let _ = VocabularyConfig::from_toml_str(text);
});
