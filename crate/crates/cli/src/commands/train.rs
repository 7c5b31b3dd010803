//! Cross-entropy training of the tabular posterior.

use anyhow::Result;
use serde_json::Value;

use dfm_core::posterior::{continue_training, TrainableTabular};

use super::Context;
use crate::config::{load_model, Format};

pub fn run(ctx: &Context) -> Result<i32> {
    let cfgx = &ctx.cfg;
    let path = cfgx.build_path(&cfgx.path, &ctx.q)?;
    let cfg = cfgx.train_config();
    let mut model = match &cfgx.train.resume_from {
        Some(file) => load_model(file, cfgx.alphabet.k, cfgx.dims)?,
        None => TrainableTabular::new(cfg.bins, cfgx.dims, cfgx.alphabet.k)?,
    };
    let start = model.steps_done();
    let losses = continue_training(&mut model, &ctx.q, &path, &cfg, cfgx.train.steps)?;
    let writer = ctx.writer("train");

    let mut doc = serde_json::to_value(&model)?;
    if let Value::Object(m) = &mut doc {
        m.insert("meta".into(), writer.meta.json());
    }
    let model_path = writer.path("model.json");
    std::fs::write(&model_path, serde_json::to_string(&doc)? + "\n")?;

    if cfgx.output.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = losses
            .iter()
            .enumerate()
            .map(|(i, l)| vec![(start + i as u64).to_string(), l.to_string()])
            .collect();
        writer.csv("loss.csv", &["step".to_string(), "loss".to_string()], &rows)?;
    }
    match losses.last() {
        Some(l) => println!(
            "trained {} steps (total {}), final batch loss {l:.6}; model at {}",
            losses.len(),
            model.steps_done(),
            model_path.display()
        ),
        None => println!("no steps run; model at {}", model_path.display()),
    }
    Ok(0)
}
