//! Trajectory sampling with marginal TV reports, NFE sweeps and corrector sweeps.

use anyhow::Result;
use serde_json::{json, Value};

use dfm_core::paths::ConditionalPath;
use dfm_core::pmf::{empirical_joint, JointPmf};
use dfm_core::posterior::{marginal_joint, ExactPosterior, PosteriorModel};
use dfm_core::sampler::{simulate, SamplerConfig, Scheme, Trajectory};

use super::Context;
use crate::config::{config_err, Format, PathConfig, PosteriorConfig};

/// Times recorded when the config does not ask for any.
const DEFAULT_RECORD_TIMES: [f64; 3] = [0.25, 0.5, 0.75];

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Euler => "euler",
        Scheme::AlwaysValid => "always_valid",
    }
}

fn tv(ctx: &Context, states: &[Vec<usize>], reference: &JointPmf) -> Result<f64> {
    let emp = empirical_joint(states, ctx.cfg.dims, &ctx.cfg.alphabet()?)?;
    Ok(emp.tv_distance(reference)?)
}

struct Run {
    label: String,
    cfg: SamplerConfig,
    trajs: Vec<Trajectory>,
}

fn run_path(
    ctx: &Context,
    pc: &PathConfig,
    posterior: Option<&dyn PosteriorModel>,
    cfg: SamplerConfig,
) -> Result<(ConditionalPath, Run)> {
    let path = ctx.cfg.build_path(pc, &ctx.q)?;
    let vel = ctx.cfg.velocity(path.clone());
    let exact;
    let post: &dyn PosteriorModel = match posterior {
        Some(p) => p,
        None => {
            exact = ExactPosterior::new(ctx.q.clone(), path.clone())?;
            &exact
        }
    };
    let trajs = simulate(post, &vel, &cfg, ctx.cfg.sample.n)?;
    Ok((
        path,
        Run {
            label: pc.label(),
            cfg,
            trajs,
        },
    ))
}

/// `(t, tv)` per recorded time, the end time and the end-state TV.
type Report = (Vec<(f64, f64)>, f64, f64);

/// TV to the analytic marginal at every recorded time, and of the end state.
fn marginal_report(ctx: &Context, path: &ConditionalPath, run: &Run) -> Result<Report> {
    let mut by_t = Vec::new();
    for &t in &run.cfg.record_times {
        let states: Vec<Vec<usize>> = run
            .trajs
            .iter()
            .filter_map(|tr| tr.state_at(t).map(<[usize]>::to_vec))
            .collect();
        by_t.push((t, tv(ctx, &states, &marginal_joint(&ctx.q, path, t)?)?));
    }
    let finals: Vec<Vec<usize>> = run.trajs.iter().map(|tr| tr.final_state().to_vec()).collect();
    let t_final = *run.trajs.first().map(|tr| tr.times.last().unwrap()).unwrap_or(&1.0);
    let reference = if t_final >= 1.0 {
        ctx.q.clone()
    } else {
        marginal_joint(&ctx.q, path, t_final)?
    };
    Ok((by_t, t_final, tv(ctx, &finals, &reference)?))
}

fn row(t_or_nfe: f64, tv: f64, n: usize, h: f64, scheme: Scheme, label: &str, corrector: f64) -> Vec<String> {
    vec![
        t_or_nfe.to_string(),
        tv.to_string(),
        n.to_string(),
        h.to_string(),
        scheme_name(scheme).to_string(),
        label.to_string(),
        corrector.to_string(),
    ]
}

pub fn run(ctx: &Context) -> Result<i32> {
    let cfgx = &ctx.cfg;
    let n = cfgx.sample.n;
    let mut base = cfgx.sampler_config();
    if base.record_times.is_empty() {
        base.record_times = DEFAULT_RECORD_TIMES
            .iter()
            .copied()
            .filter(|&t| t <= base.t_end)
            .collect();
    }
    let main_path = cfgx.build_path(&cfgx.path, &ctx.q)?;
    let model = match &cfgx.posterior {
        PosteriorConfig::Exact => None,
        PosteriorConfig::Model(_) => Some(cfgx.posterior(&ctx.q, &main_path)?),
    };
    if model.is_some() && !cfgx.sample.compare_paths.is_empty() {
        return Err(config_err("sample.compare_paths requires the exact posterior"));
    }
    let writer = ctx.writer("sample");
    if ctx.dump_rates {
        super::dump_rates(ctx, &cfgx.velocity(main_path.clone()), cfgx.alphabet.mask_token)?;
    }

    let strengths = if cfgx.sample.corrector_sweep.is_empty() {
        vec![base.corrector_strength]
    } else {
        cfgx.sample.corrector_sweep.clone()
    };
    let mut t_rows = Vec::new();
    let mut reports = Vec::new();
    for (i, &c) in strengths.iter().enumerate() {
        let cfg = SamplerConfig {
            corrector_strength: c,
            ..base.clone()
        };
        let (path, run) = run_path(ctx, &cfgx.path, model.as_deref(), cfg)?;
        let (by_t, t_final, tv_final) = marginal_report(ctx, &path, &run)?;
        for &(t, v) in &by_t {
            t_rows.push(row(t, v, n, run.cfg.h, run.cfg.scheme, &run.label, c));
        }
        t_rows.push(row(t_final, tv_final, n, run.cfg.h, run.cfg.scheme, &run.label, c));
        println!(
            "{} corrector={c}: TV at t={:?} -> {:?}; TV(end, t={t_final})={tv_final:.4}",
            run.label,
            by_t.iter().map(|p| p.0).collect::<Vec<_>>(),
            by_t.iter().map(|p| format!("{:.4}", p.1)).collect::<Vec<_>>()
        );
        reports.push(json!({
            "path": run.label,
            "corrector_strength": c,
            "scheme": scheme_name(run.cfg.scheme),
            "h": run.cfg.h,
            "n": n,
            "nfe": run.cfg.nfe(),
            "tv_by_t": by_t.iter().map(|(t, v)| json!({"t": t, "tv": v})).collect::<Vec<_>>(),
            "t_final": t_final,
            "tv_final": tv_final,
        }));
        if i == 0 && cfgx.output.wants(Format::Jsonl) {
            let lines: Vec<Value> = run
                .trajs
                .iter()
                .map(|tr| json!({"index": tr.index, "times": tr.times, "states": tr.states}))
                .collect();
            writer.jsonl("trajectories.jsonl", &lines)?;
        }
    }

    let mut nfe_rows = Vec::new();
    if !cfgx.sample.nfe_sweep.is_empty() {
        let paths: Vec<&PathConfig> = std::iter::once(&cfgx.path).chain(&cfgx.sample.compare_paths).collect();
        for pc in paths {
            for &nfe in &cfgx.sample.nfe_sweep {
                if nfe == 0 {
                    return Err(config_err("nfe_sweep entries must be positive"));
                }
                let cfg = SamplerConfig {
                    h: base.t_end / nfe as f64,
                    record_times: Vec::new(),
                    ..base.clone()
                };
                let (path, run) = run_path(ctx, pc, model.as_deref(), cfg)?;
                let (_, _, tv_final) = marginal_report(ctx, &path, &run)?;
                nfe_rows.push(row(
                    run.cfg.nfe() as f64,
                    tv_final,
                    n,
                    run.cfg.h,
                    run.cfg.scheme,
                    &run.label,
                    run.cfg.corrector_strength,
                ));
                println!("{} nfe={}: TV(end)={tv_final:.4}", run.label, run.cfg.nfe());
            }
        }
    }

    let columns: Vec<String> = ["t_or_nfe", "tv", "n", "h", "scheme", "path", "corrector_strength"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if cfgx.output.wants(Format::Csv) {
        writer.csv("tv_vs_t.csv", &columns, &t_rows)?;
        if !nfe_rows.is_empty() {
            writer.csv("tv_vs_nfe.csv", &columns, &nfe_rows)?;
        }
    }
    if cfgx.output.wants(Format::Json) {
        writer.json("marginal_report.json", json!({ "reports": reports }))?;
    }
    Ok(0)
}
