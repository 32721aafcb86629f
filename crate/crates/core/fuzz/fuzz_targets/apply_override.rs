#![no_main]

use libfuzzer_sys::fuzz_target;

use dualmesh::bundled;
use dualmesh::scenario::apply_override;

// Input is "<dotted path>\n<value>", applied to a bundled scenario.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Some((path, value)) = text.split_once('\n') else { return };
    for name in ["fig1_dual", "interference_demo"] {
        let base = bundled::load(name).unwrap();
        let _ = apply_override(&base, path, value);
    }
});
