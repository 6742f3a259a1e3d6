//! Regenerates the shipped synthetic logit-QBR dataset.
//!
//! cargo run --release -p hdm-core --example gen_qbr_dataset -- data

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use hdm_core::estimation::synthetic_dataset;
use hdm_core::BehavioralModel;

const TRUE_LAMBDA: f64 = 2.0;
const OBSERVATIONS: usize = 1000;
const PAYOFF_SCALE: f64 = 1.0;
const SEED: u64 = 2024;

fn main() -> hdm_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir)?;
    let model = BehavioralModel::LogitQbr { lambda: TRUE_LAMBDA };
    let data = synthetic_dataset(&model, OBSERVATIONS, PAYOFF_SCALE, SEED)?;
    data.write_jsonl(BufWriter::new(File::create(dir.join("qbr_lambda2.jsonl"))?))?;
    let meta = serde_json::json!({
        "model": model,
        "observations": OBSERVATIONS,
        "games": "random 2x2, payoffs uniform in [-1, 1], observed player alternates",
        "seed": SEED,
    });
    std::fs::write(dir.join("qbr_lambda2.meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
