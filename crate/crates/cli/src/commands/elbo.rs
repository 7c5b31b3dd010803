//! ELBO records per probe, with the exact-likelihood oracle when the joint space is small.

use anyhow::Result;
use serde_json::{json, Value};

use dfm_core::datasets::sample_target;
use dfm_core::elbo::{elbo_estimate, ElboConfig, LikelihoodOracle, MAX_ORACLE_CELLS};
use dfm_core::posterior::{ExactPosterior, PosteriorModel};

use super::Context;
use crate::config::{config_err, Format, PathConfig, PosteriorConfig};
use crate::output::fmt_state;

struct Column {
    label: String,
    values: Vec<(f64, f64, Option<f64>)>,
}

pub fn run(ctx: &Context) -> Result<i32> {
    let cfgx = &ctx.cfg;
    let sec = &cfgx.elbo;
    let probes: Vec<Vec<usize>> = match (&sec.probes, sec.n_probes) {
        (Some(p), _) => p.clone(),
        (None, Some(n)) => sample_target(&ctx.q, n, cfgx.elbo_seed()),
        (None, None) => ctx.q.support(),
    };
    let paths: Vec<&PathConfig> = std::iter::once(&cfgx.path).chain(&sec.compare_paths).collect();
    if matches!(cfgx.posterior, PosteriorConfig::Model(_)) && paths.len() > 1 {
        return Err(config_err("elbo.compare_paths requires the exact posterior"));
    }
    let est_cfg = ElboConfig {
        n_samples: sec.n_samples,
        t_cutoff: sec.t_cutoff,
        use_kappa_cov: sec.use_kappa_cov,
        seed: cfgx.elbo_seed(),
    };
    let mut records: Vec<Value> = Vec::new();
    let mut columns = Vec::new();
    let mut violations = 0;
    for pc in paths {
        let path = cfgx.build_path(pc, &ctx.q)?;
        let posterior: Box<dyn PosteriorModel> = match &cfgx.posterior {
            PosteriorConfig::Exact => Box::new(ExactPosterior::new(ctx.q.clone(), path.clone())?),
            PosteriorConfig::Model(_) => cfgx.posterior(&ctx.q, &path)?,
        };
        let oracle = if ctx.q.len() <= MAX_ORACLE_CELLS && !probes.is_empty() {
            Some(LikelihoodOracle::new(&path, posterior.as_ref(), sec.t_cutoff, sec.ode_steps)?)
        } else {
            None
        };
        let label = pc.label();
        let mut col = Column {
            label: label.clone(),
            values: Vec::new(),
        };
        for x1 in &probes {
            let e = elbo_estimate(x1, &path, posterior.as_ref(), &est_cfg)?;
            let o = oracle.as_ref().map(|o| o.log_prob(x1));
            let bound_ok = o.map(|o| e.value <= o + 3.0 * e.std_error);
            if bound_ok == Some(false) {
                violations += 1;
            }
            col.values.push((e.value, e.std_error, o));
            let rec = json!({
                "path": label,
                "x1": x1,
                "elbo": e.value,
                "std_error": e.std_error,
                "n_samples": e.n_samples,
                "t_cutoff": e.t_cutoff,
                "estimator": e.estimator,
                "omitted_tail": e.omitted_tail,
                "log_q": ctx.q.prob(x1).ln(),
                "oracle": o,
                "bound_ok": bound_ok,
            });
            println!("{rec}");
            records.push(rec);
        }
        columns.push(col);
    }

    let writer = ctx.writer("elbo");
    if cfgx.output.wants(Format::Jsonl) {
        writer.jsonl("elbo.jsonl", &records)?;
    }
    if cfgx.output.wants(Format::Json) {
        writer.json("elbo.json", json!({ "records": records }))?;
    }
    if cfgx.output.wants(Format::Csv) {
        let mut header = vec!["x1".to_string(), "log_q".to_string()];
        for c in &columns {
            header.push(format!("{}_elbo", c.label));
            header.push(format!("{}_stderr", c.label));
            header.push(format!("{}_oracle", c.label));
        }
        let rows: Vec<Vec<String>> = probes
            .iter()
            .enumerate()
            .map(|(i, x1)| {
                let mut r = vec![fmt_state(x1), ctx.q.prob(x1).ln().to_string()];
                for c in &columns {
                    let (v, s, o) = c.values[i];
                    r.push(v.to_string());
                    r.push(s.to_string());
                    r.push(o.map(|o| o.to_string()).unwrap_or_default());
                }
                r
            })
            .collect();
        writer.csv("elbo.csv", &header, &rows)?;
    }
    if violations > 0 {
        eprintln!("{violations} record(s) exceed the oracle log-likelihood by more than 3 sigma");
        return Ok(1);
    }
    Ok(0)
}
