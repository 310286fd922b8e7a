#![no_main]

use diffclass::data::{preprocess_image, PreprocessConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(4096);
    limits.max_image_height = Some(4096);
    limits.max_alloc = Some(64 << 20);
    let mut reader = image::ImageReader::new(std::io::Cursor::new(data));
    reader.limits(limits);
    let Ok(reader) = reader.with_guessed_format() else {
        return;
    };
    if let Ok(img) = reader.decode() {
        let cfg = PreprocessConfig::with_size(16);
        let out = preprocess_image(&img, &cfg);
        assert_eq!(out.shape(), &[16, 16, 3]);
    }
});
