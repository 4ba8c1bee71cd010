//! Regenerates the bundled toy model and test set.
//!
//! Usage: `cargo run -p bnnsim-core --example gen_toy -- [DIR]` (default `data`).

use std::path::PathBuf;

fn main() -> bnnsim::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir)?;
    let (net, data) = bnnsim::toy::generate()?;
    bnnsim::modelfile::save(&net, &dir.join("toy.xnemodel"))?;
    let manifest = data.save(&dir, "toy-test")?;
    println!(
        "wrote {} and {}",
        dir.join("toy.xnemodel").display(),
        manifest.display()
    );
    Ok(())
}
