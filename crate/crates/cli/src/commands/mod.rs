pub mod elbo;
pub mod sample;
pub mod train;
pub mod verify;

use anyhow::Result;
use serde_json::json;

use dfm_core::pmf::JointPmf;
use dfm_core::velocity::{ConditionalVelocity, PathVelocity};

use crate::config::{ensure_dir, ExperimentConfig};
use crate::output::{Meta, Writer};

/// Resolved configuration shared by the subcommands.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub q: JointPmf,
    pub hash: String,
    pub dump_rates: bool,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, dump_rates: bool) -> Result<Self> {
        cfg.validate()?;
        let q = cfg.target()?;
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            q,
            hash,
            dump_rates,
        })
    }

    pub fn writer(&self, command: &'static str) -> Writer {
        Writer {
            dir: self.cfg.output.directory.clone(),
            meta: Meta {
                command,
                config_hash: self.hash.clone(),
            },
        }
    }

    pub fn prepare_output(&self) -> Result<()> {
        ensure_dir(&self.cfg.output.directory)
    }
}

/// Writes the conditional rate matrices on 11 times in `[0, t_end]` for every target
/// token to `rates.json`.
pub fn dump_rates(ctx: &Context, vel: &PathVelocity, mask: Option<usize>) -> Result<()> {
    let t_end = ctx.cfg.sampler.t_end;
    let mut entries = Vec::new();
    for i in 0..=10 {
        let t = t_end * i as f64 / 10.0;
        for x1 in (0..vel.k()).filter(|&x| Some(x) != mask) {
            let entry = match vel.matrix(t, x1) {
                Ok(u) => json!({ "t": t, "x1": x1, "rates": u }),
                Err(e) => json!({ "t": t, "x1": x1, "error": e.to_string() }),
            };
            entries.push(entry);
        }
    }
    ctx.writer("rates")
        .json("rates.json", json!({ "flux": vel.flux.name(), "matrices": entries }))?;
    Ok(())
}
