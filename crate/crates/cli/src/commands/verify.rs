//! Invariant suite for the configured path and velocity.

use anyhow::Result;
use serde::Serialize;
use serde_json::json;

use dfm_core::elbo::{kolmogorov_forward, MAX_ORACLE_CELLS};
use dfm_core::paths::ConditionalPath;
use dfm_core::pmf::decode;
use dfm_core::posterior::{marginal_joint, PosteriorModel};
use dfm_core::rng::stream_rng;
use dfm_core::velocity::{
    closed_form_potential, corrector_flux, divergence, laplacian_solve, ConditionalVelocity, PathVelocity,
    PosteriorMarginal, WeightSpec,
};
use dfm_core::Error;
use rand::Rng;

use super::Context;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
    pub note: String,
}

impl Check {
    fn at_most(name: &'static str, residual: f64, threshold: f64, note: impl Into<String>) -> Self {
        Self {
            name,
            residual,
            threshold,
            pass: residual <= threshold,
            note: note.into(),
        }
    }
}

/// Evaluation times: 21 points on `[0, t_max]`.
fn grid(t_max: f64) -> Vec<f64> {
    (0..=20).map(|i| i as f64 * t_max / 20.0).collect()
}

fn targets(path: &ConditionalPath, mask: Option<usize>) -> Vec<usize> {
    (0..path.k()).filter(|&x| Some(x) != mask).collect()
}

fn velocity_checks(vel: &PathVelocity, mask: Option<usize>, t_max: f64) -> Result<Vec<Check>> {
    let path = &vel.path;
    let k = path.k();
    let (mut cont, mut colsum, mut min_off, mut unsafe_count) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut first_unsafe = String::new();
    let (mut stat, mut div_max, mut lap_gap, mut lap_cases) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for t in grid(t_max) {
        for x1 in targets(path, mask) {
            let (p, dp) = path.eval_with_derivative(t, x1)?;
            match vel.matrix(t, x1) {
                Ok(u) => {
                    let up = u.apply(p.as_slice());
                    let scale = dp.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    for x in 0..k {
                        cont = cont.max((up[x] - dp[x]).abs() / scale);
                    }
                    for z in 0..k {
                        let col = u.column(z);
                        let big = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                        colsum = colsum.max(col.iter().sum::<f64>().abs() / big);
                        for (x, &v) in col.iter().enumerate() {
                            if x != z {
                                min_off = min_off.min(v);
                            }
                        }
                    }
                }
                Err(e @ Error::UnsafeFlux { .. }) => {
                    unsafe_count += 1;
                    if first_unsafe.is_empty() {
                        first_unsafe = format!("t = {t}, x1 = {x1}: {e}");
                    }
                }
                Err(e) => return Err(e.into()),
            }
            let cols = (0..k)
                .map(|z| vel.corrector_column(t, z, x1))
                .collect::<Result<Vec<_>, _>>()?;
            for x in 0..k {
                stat = stat.max((0..k).map(|z| cols[z][x] * p[z]).sum::<f64>().abs());
            }
            let w = &vel.corrector_weight;
            let f = closed_form_potential(&p, &dp, &w.tau(&p)?)?;
            div_max = div_max.max(divergence(&corrector_flux(&p, &f, w)?).iter().fold(0.0, |m, v| m.max(v.abs())));
            if p.as_slice().iter().all(|&v| v >= 1e-6) {
                let stable = WeightSpec::stable();
                let fs = laplacian_solve(&p, &dp, &stable)?;
                let fc = closed_form_potential(&p, &dp, &stable.tau(&p)?)?;
                let (ms, mc) = (mean(&fs), mean(&fc));
                for x in 0..k {
                    lap_gap = lap_gap.max(((fs[x] - ms) - (fc[x] - mc)).abs());
                }
                lap_cases += 1;
            }
        }
    }
    Ok(vec![
        Check::at_most("continuity", cont, 1e-8, "max |u p - dp/dt| / max(1, |dp/dt|)"),
        Check::at_most(
            "rate_column_sums",
            colsum,
            1e-10,
            "max |column sum| / max(1, max |u|)",
        ),
        Check::at_most("rate_off_diagonal_negativity", -min_off, 0.0, "-min off-diagonal rate"),
        Check::at_most("unsafe_flux", unsafe_count as f64, 0.0, first_unsafe),
        Check::at_most("corrector_stationarity", stat, 1e-10, "max |sum_z u_perp(x, z) p(z)|"),
        Check::at_most("corrector_divergence", div_max, 0.0, "corrector flux is symmetric"),
        Check::at_most(
            "laplacian_vs_closed_form",
            lap_gap,
            1e-8,
            format!("stable weight, {lap_cases} full-support cases"),
        ),
    ])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn marginal_checks(ctx: &Context, posterior: &dyn PosteriorModel, vel: &PathVelocity) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let q = &ctx.q;
    let mut r = stream_rng(ctx.cfg.seed.unwrap_or(0), 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = r.random_range(0.0..ctx.cfg.elbo.t_cutoff);
        let z = decode(r.random_range(0..q.len()), q.k(), q.dims());
        match posterior.posterior_all(t, &z) {
            Ok(posts) => {
                for p in posts {
                    worst = worst.max((p.as_slice().iter().sum::<f64>() - 1.0).abs());
                }
            }
            Err(Error::ZeroMarginal) => {}
            Err(e) => return Err(e.into()),
        }
    }
    checks.push(Check::at_most("posterior_normalized", worst, 1e-12, "200 random (t, z)"));

    if q.len() > MAX_ORACLE_CELLS {
        checks.push(Check {
            name: "marginal_forward",
            residual: 0.0,
            threshold: 1e-4,
            pass: true,
            note: format!("skipped: K^D = {} exceeds {MAX_ORACLE_CELLS}", q.len()),
        });
        return Ok(checks);
    }
    let marginal = PosteriorMarginal {
        posterior,
        velocity: vel,
    };
    let path = &vel.path;
    let mut p = marginal_joint(q, path, 0.0)?.table().to_vec();
    let (mut t0, mut worst) = (0.0, 0.0f64);
    let mut note = "Kolmogorov forward vs analytic p_t at t = 0.25, 0.5, 0.75".to_string();
    for t in [0.25, 0.5, 0.75] {
        match kolmogorov_forward(&p, q.k(), q.dims(), &marginal, t0, t, 1000) {
            Ok(next) => p = next,
            Err(e) => {
                worst = f64::INFINITY;
                note = format!("forward integration failed: {e}");
                break;
            }
        }
        let exact = marginal_joint(q, path, t)?;
        for (a, b) in p.iter().zip(exact.table()) {
            worst = worst.max((a - b).abs());
        }
        t0 = t;
    }
    checks.push(Check::at_most("marginal_forward", worst, 1e-4, note));
    Ok(checks)
}

pub fn run(ctx: &Context) -> Result<i32> {
    let mask = ctx.cfg.alphabet.mask_token;
    let path = ctx.cfg.build_path(&ctx.cfg.path, &ctx.q)?;
    let vel = ctx.cfg.velocity(path.clone());
    let posterior = ctx.cfg.posterior(&ctx.q, &path)?;
    let source = path.source();
    let mut checks = vec![Check::at_most(
        "source_normalized",
        (source.as_slice().iter().sum::<f64>() - 1.0).abs(),
        1e-12,
        "",
    )];
    checks.extend(velocity_checks(&vel, mask, ctx.cfg.elbo.t_cutoff)?);
    checks.extend(marginal_checks(ctx, posterior.as_ref(), &vel)?);
    if ctx.dump_rates {
        super::dump_rates(ctx, &vel, mask)?;
    }
    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{} {:<30} residual={:.3e} threshold={:.1e} {}",
            if c.pass { "ok  " } else { "FAIL" },
            c.name,
            c.residual,
            c.threshold,
            c.note
        );
    }
    let body = json!({
        "path": ctx.cfg.path.label(),
        "flux": vel.flux.name(),
        "pass": pass,
        "checks": checks,
    });
    if ctx.cfg.output.wants(crate::config::Format::Json) {
        ctx.writer("verify").json("verify.json", body)?;
    }
    Ok(if pass { 0 } else { 1 })
}
