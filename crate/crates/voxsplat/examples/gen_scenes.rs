//! Regenerates the bundled scene specs in `scenes/` from the builtin
//! constructors: `cargo run -p voxsplat --example gen_scenes`.

use std::fs;
use std::path::PathBuf;

use voxsplat::sim::scenes;

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    fs::create_dir_all(&root).expect("create scenes dir");
    for name in scenes::NAMES {
        let spec = scenes::by_name(name).expect("builtin name");
        let path = root.join(format!("{name}.json"));
        let json = serde_json::to_string_pretty(&spec).expect("serialize");
        fs::write(&path, json + "\n").expect("write spec");
        println!("wrote {}", path.display());
    }
}
