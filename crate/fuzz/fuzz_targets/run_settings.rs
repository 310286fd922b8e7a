#![no_main]

use diffclass_cli::commands::ToySpec;
use diffclass_cli::settings::Settings;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = Settings::from_toml_str(text) {
        let _ = s.model_config(vec!["a".into(), "b".into()]);
    }
    let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
    let _ = ToySpec::parse(&tokens);
});
