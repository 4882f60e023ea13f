#![no_main]

use libfuzzer_sys::fuzz_target;
use lyapflow::data::{parse_csv, ClassMap, CsvSchema};

fuzz_target!(|data: &[u8]| {
    let plain = CsvSchema::new(vec!["a".into(), "b".into()], vec!["y".into()]);
    let _ = parse_csv(data, &plain, "fuzz");
    let classes = CsvSchema::new(vec!["a".into(), "b".into()], vec![]).with_class_map(ClassMap {
        column: "label".into(),
        labels: vec![("pos".into(), 1.0), ("neg".into(), 0.0)],
    });
    let _ = parse_csv(data, &classes, "fuzz");
});
