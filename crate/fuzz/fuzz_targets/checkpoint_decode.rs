#![no_main]

use diffclass::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = checkpoint::decode(data) {
        let bytes = checkpoint::encode(&model).unwrap();
        assert_eq!(checkpoint::decode(&bytes).unwrap().config, model.config);
    }
});
