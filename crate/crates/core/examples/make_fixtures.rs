//! Regenerates the checked-in model bundles under `fixtures/`.
//!
//! ```text
//! cargo run -p homi --example make_fixtures
//! ```

use std::path::Path;

use homi::inference::{homi_net16, homi_net70, save_model, QuantizedModel, Topology};

/// Bundle directory name, topology and weight seed.
pub fn fixtures() -> Vec<(&'static str, Topology, u64)> {
    vec![
        ("homi-net16-n2", homi_net16(2), 16),
        ("homi-net16-n8", homi_net16(8), 168),
        ("homi-net70-n2", homi_net70(2), 70),
    ]
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for (name, topology, seed) in fixtures() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).expect("create fixture directory");
        let model = QuantizedModel::random(&topology, seed);
        save_model(&model, &dir).expect("write bundle");
        println!("{} ({} params)", dir.display(), model.param_count());
    }
}
