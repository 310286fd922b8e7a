#![no_main]

use diffclass::sampler::PredictionTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = PredictionTable::read_csv(data);
});
