#![no_main]

use libfuzzer_sys::fuzz_target;
use lyapflow::kv::KvDoc;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(doc) = KvDoc::parse(text) {
            let _ = doc.render();
        }
    }
});
