//! Saves a model, inspects the stored architecture and reloads it.
//!
//! ```text
//! cargo run --release --example checkpoint -- [path]
//! ```

use std::path::PathBuf;

use gglnet::checkpoint::{load_model, read_model_config, save};
use gglnet::model::{variant_by_name, GglNet, ModelConfig};

fn main() -> gglnet::error::Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example.safetensors".into()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).expect("create output dir");
    }
    let cfg = ModelConfig::new(variant_by_name("cam")?.config);
    let (_, store) = GglNet::init::<f32>(cfg.clone(), 0)?;
    save(&store, &cfg, &path)?;
    println!("saved {} tensors to {}", store.len(), path.display());

    let stored = read_model_config(&path)?;
    println!("stored architecture: {stored:?}");
    let (_, loaded) = load_model::<f32>(&path, None)?;
    let same = store.ids().all(|id| store.get(id) == loaded.get(id));
    println!("reloaded {} parameters, identical: {same}", loaded.num_parameters());
    Ok(())
}
