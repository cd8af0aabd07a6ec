//! Writes the frozen container fixtures used by the acceptance suite.
//!
//! cargo run -p wavevid-core --example make_golden -- <out-dir>

use std::path::PathBuf;

use wavevid_core::encode_video;

#[path = "../tests/golden/fixtures.rs"]
mod fixtures;

fn main() {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/tests/golden".into()),
    );
    std::fs::create_dir_all(&out).expect("create output dir");
    for (name, frames, params) in fixtures::fixtures() {
        let path = out.join(format!("{name}.wvv"));
        let n = encode_video(&frames, &params)
            .and_then(|v| v.save(&path))
            .expect("encode");
        println!("{} {n} bytes", path.display());
    }
}
