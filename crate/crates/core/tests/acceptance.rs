//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when checks
//! pass; the process exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_4, PI};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dfm_core::datasets::{make_toy, sample_target, ToySpec};
use dfm_core::elbo::{
    elbo_estimate, elbo_integrand_general, elbo_integrand_masked, elbo_integrand_mixture, kolmogorov_forward,
    ElboConfig, LikelihoodOracle,
};
use dfm_core::paths::{tempered_source, BetaSchedule, ConditionalPath, GeodesicPath, KoScheduler, Scheduler};
use dfm_core::pmf::{decode, empirical_joint, Alphabet, JointPmf, Metric, Pmf};
use dfm_core::posterior::{marginal_joint, train_posterior, ExactPosterior, PosteriorModel, TrainConfig};
use dfm_core::rng::{cumulative, sample_cdf, stream_rng};
use dfm_core::sampler::{always_valid_pmf, always_valid_step, simulate, simulate_frozen_corrector, SamplerConfig, Scheme};
use dfm_core::velocity::{
    closed_form_potential, corrector_flux, divergence, flux_from_weight, flux_indicator, flux_power, flux_power_inf,
    flux_stable, kinetic_energy_rate, laplacian_solve, marginal_velocity, marginal_velocity_mixture, path_energy,
    velocity_from_flux, velocity_metric_conditional, velocity_mixture_conditional, ConditionalVelocity, FluxChoice,
    MixtureMarginal, PathVelocity, PosteriorMarginal, WeightSpec,
};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

/// Outcome of one criterion: overall verdict plus a short measurement summary.
struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(bool, String)]) -> Self {
        Self {
            pass: checks.iter().all(|(p, _)| *p),
            detail: checks
                .iter()
                .map(|(p, d)| format!("{}{d}", if *p { "" } else { "FAILED " }))
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

fn rng(stream: u64) -> ChaCha8Rng {
    stream_rng(20_241_016, stream)
}

fn random_pmf(rng: &mut ChaCha8Rng, k: usize, lo: f64) -> Pmf {
    Pmf::new((0..k).map(|_| rng.random_range(lo..1.0)).collect::<Vec<_>>()).unwrap()
}

fn mask_source(k: usize) -> Pmf {
    Pmf::delta(k, k - 1)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn sample_noisy(rng: &mut ChaCha8Rng, path: &ConditionalPath, t: f64, x1: &[usize]) -> Vec<usize> {
    x1.iter()
        .map(|&y| sample_cdf(rng, &cumulative(path.eval(t, y).unwrap().as_slice())))
        .collect()
}

fn c01_continuity() -> Res<Outcome> {
    let start = Instant::now();
    let mut r = rng(1);
    let k = 6;
    let src = random_pmf(&mut r, k, 0.05);
    let families = vec![
        ("mixture/linear", ConditionalPath::mixture(Pmf::uniform(k), Scheduler::Linear)?),
        ("mixture/ko", ConditionalPath::mixture(src.clone(), Scheduler::kinetic_optimal(&src))?),
        ("metric", ConditionalPath::metric(Metric::abs_diff(k), BetaSchedule::new(3.0, 1.0)?)),
        ("ko_geodesic", ConditionalPath::kinetic_optimal(src)),
    ];
    let mut checks = Vec::new();
    for (name, path) in &families {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let t = r.random_range(0.0..0.999);
            let x1 = r.random_range(0..k);
            let (p, dp) = path.eval_with_derivative(t, x1)?;
            let div = divergence(&flux_stable(&p, &dp)?);
            for x in (0..k).filter(|&x| p[x] > 0.0) {
                worst = worst.max((div[x] + dp[x]).abs());
            }
        }
        checks.push((worst <= 1e-9, format!("{name} max|div+dp|={worst:.1e}")));
    }
    let secs = start.elapsed().as_secs_f64();
    checks.push((secs < 5.0, format!("{secs:.2}s")));
    Ok(Outcome::new(&checks))
}

/// Worst rate-condition residuals. Column sums are measured relative to the
/// column's largest rate once that exceeds 1: indicator-type fluxes produce rates
/// `~1/p(z)` (up to 1e128 here) next to O(1) entries, which no f64 diagonal can
/// cancel to an absolute 1e-10.
#[derive(Default)]
struct Residuals {
    min_off: f64,
    scaled_sum: f64,
    raw_sum: f64,
    raw_scale: f64,
}

impl Residuals {
    fn add(&mut self, col: &[f64], z: usize) {
        let off = col.iter().enumerate().filter(|(x, _)| *x != z).fold(0.0f64, |m, (_, v)| m.min(*v));
        self.min_off = self.min_off.min(off);
        let sum = col.iter().sum::<f64>().abs();
        let scale = max_abs(col);
        self.scaled_sum = self.scaled_sum.max(sum / scale.max(1.0));
        if sum > self.raw_sum {
            self.raw_sum = sum;
            self.raw_scale = scale;
        }
    }
}

fn c02_rate_conditions() -> Res<Outcome> {
    let start = Instant::now();
    let mut r = rng(2);
    let mut res = Residuals::default();
    let (mut cases, mut unsafe_skips) = (0usize, 0usize);
    let k = 5;
    let q = make_toy(&ToySpec::RandomSparse {
        k: 4,
        dims: 2,
        seed: 3,
        sparsity: 0.5,
    })?;
    let mut qk = q.table().to_vec();
    // pad the target onto a K = 5 alphabet whose last token is a mask
    qk = (0..25)
        .map(|idx| {
            let x = decode(idx, 5, 2);
            if x.iter().any(|&v| v == 4) {
                0.0
            } else {
                qk[x[0] + 4 * x[1]]
            }
        })
        .collect();
    let q5 = JointPmf::from_table(5, 2, qk)?;
    while cases < 1000 {
        let src = random_pmf(&mut r, k, 0.05);
        let path = match r.random_range(0..5) {
            0 => ConditionalPath::mixture(Pmf::uniform(k), Scheduler::Linear)?,
            1 => ConditionalPath::mixture(src.clone(), Scheduler::Cubic)?,
            2 => ConditionalPath::kinetic_optimal(src),
            3 => ConditionalPath::metric(Metric::abs_diff(k), BetaSchedule::new(3.0, 1.0)?),
            _ => ConditionalPath::mixture(mask_source(k), Scheduler::kinetic_optimal(&mask_source(k)))?,
        };
        let t = r.random_range(0.0..0.99);
        let x1 = r.random_range(0..k - 1);
        let (p, dp) = path.eval_with_derivative(t, x1)?;
        let mut mats = Vec::new();
        if let Some(s) = path.mixture_scheduler() {
            mats.push(Ok(velocity_mixture_conditional(&s, t, x1, k)?));
        } else {
            mats.push(Ok(velocity_metric_conditional(&path, t, x1)?));
        }
        for flux in [
            FluxChoice::ClosedForm,
            FluxChoice::Stable,
            FluxChoice::Indicator,
            FluxChoice::Weighted(WeightSpec::TauIndicator),
            FluxChoice::Weighted(WeightSpec::TauPower(2.0)),
            FluxChoice::Weighted(WeightSpec::TauPowerInf),
        ] {
            mats.push(PathVelocity::new(path.clone(), flux).matrix(t, x1));
        }
        for j in [
            flux_stable(&p, &dp),
            flux_indicator(&p, &dp),
            flux_power(&p, &dp, 3.0),
            flux_power_inf(&p, &dp),
            flux_from_weight(&p, &dp, &WeightSpec::TauIndicator),
        ] {
            mats.push(j.and_then(|j| velocity_from_flux(&j, &p)));
        }
        let vel = PathVelocity::closed_form(path.clone());
        let cols = (0..k)
            .map(|z| vel.corrector_column(t, z, x1))
            .collect::<Result<Vec<_>, _>>()?;
        for (z, c) in cols.iter().enumerate() {
            res.add(c, z);
        }
        for m in mats {
            match m {
                Ok(u) => {
                    for z in 0..k {
                        res.add(&(0..k).map(|x| u.get(x, z)).collect::<Vec<_>>(), z);
                    }
                }
                Err(dfm_core::Error::UnsafeFlux { .. }) => unsafe_skips += 1,
                Err(e) => return Err(e.into()),
            }
        }
        // factorized marginal columns over a D = 2 target
        if path.k() == 5 {
            let post = ExactPosterior::new(q5.clone(), path.clone())?;
            let x1s = q5.state(sample_cdf(&mut r, &cumulative(q5.table())));
            let z = sample_noisy(&mut r, &path, t, &x1s);
            for i in 0..2 {
                let mut cols = vec![marginal_velocity(&post, &vel, &z, i, t)?];
                if let Some(s) = path.mixture_scheduler() {
                    cols.push(marginal_velocity_mixture(&post, &s, &z, i, t)?);
                }
                for c in cols {
                    res.add(&c, z[i]);
                }
            }
        }
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(&[
        (res.min_off >= 0.0, format!("min off-diagonal={:.1e}", res.min_off)),
        (
            res.scaled_sum < 1e-10,
            format!(
                "max|colsum|/max(1,max|u|)={:.1e} (raw max|colsum|={:.1e} at max|u|={:.1e})",
                res.scaled_sum, res.raw_sum, res.raw_scale
            ),
        ),
        (true, format!("{cases} cases, {unsafe_skips} unsafe indicator constructions rejected")),
        (secs < 5.0, format!("{secs:.2}s")),
    ]))
}

fn c03_laplacian() -> Res<Outcome> {
    let mut r = rng(3);
    let mut checks = Vec::new();
    for (name, w) in [
        ("tau=1", WeightSpec::TauIndicator),
        ("tau=p", WeightSpec::TauPower(1.0)),
        ("tau=p^2", WeightSpec::TauPower(2.0)),
    ] {
        let (mut gap, mut resid) = (0.0f64, 0.0f64);
        for case in 0..40 {
            let k = if case == 0 { 64 } else { r.random_range(2..=64) };
            let p = random_pmf(&mut r, k, 0.2);
            let g: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
            let mean: f64 = p.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut dp: Vec<f64> = p.as_slice().iter().zip(&g).map(|(a, b)| a * (b - mean)).collect();
            let s: f64 = dp.iter().sum();
            dp[0] -= s;
            let tau = w.tau(&p)?;
            let fs = laplacian_solve(&p, &dp, &w)?;
            let fc = closed_form_potential(&p, &dp, &tau)?;
            let (ms, mc) = (fs.iter().sum::<f64>() / k as f64, fc.iter().sum::<f64>() / k as f64);
            for x in 0..k {
                gap = gap.max(((fs[x] - ms) - (fc[x] - mc)).abs());
            }
            for f in [&fs, &fc] {
                for x in 0..k {
                    let lhs: f64 = (0..k).map(|z| tau[x] * tau[z] * (f[x] - f[z])).sum();
                    resid = resid.max((lhs - dp[x]).abs());
                }
            }
        }
        checks.push((gap < 1e-8, format!("{name} max|f_solve-f_closed|={gap:.1e}")));
        checks.push((resid < 1e-10, format!("{name} residual={resid:.1e}")));
    }
    Ok(Outcome::new(&checks))
}

fn c04_flux_coincidence() -> Res<Outcome> {
    let k = 4;
    let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let max_gap = |path: &ConditionalPath, a: FluxChoice, b: FluxChoice| -> Res<f64> {
        let (va, vb) = (PathVelocity::new(path.clone(), a), PathVelocity::new(path.clone(), b));
        let mut gap: f64 = 0.0;
        for &t in &grid {
            for x1 in 0..path.k() {
                let (ma, mb) = (va.matrix(t, x1)?, vb.matrix(t, x1)?);
                for x in 0..path.k() {
                    for z in 0..path.k() {
                        gap = gap.max((ma.get(x, z) - mb.get(x, z)).abs());
                    }
                }
            }
        }
        Ok(gap)
    };
    let uniform = ConditionalPath::mixture(Pmf::uniform(k), Scheduler::Linear)?;
    let mask = ConditionalPath::mixture(mask_source(k), Scheduler::Linear)?;
    let skewed = Pmf::new(vec![0.7, 0.2, 0.1])?;
    let skewed = ConditionalPath::mixture(skewed, Scheduler::Linear)?;
    let g_uniform = max_gap(&uniform, FluxChoice::Indicator, FluxChoice::Stable)?;
    // the literal 1/K indicator leaks mass out of zero-probability tokens on a mask
    // path; the support indicator τ = 1[p > 0] is the safe form
    let literal_mask = PathVelocity::new(mask.clone(), FluxChoice::Indicator).matrix(0.5, 0);
    let g_mask = max_gap(&mask, FluxChoice::Weighted(WeightSpec::TauIndicator), FluxChoice::Stable)?;
    let g_skewed = max_gap(&skewed, FluxChoice::Indicator, FluxChoice::Stable)?;
    Ok(Outcome::new(&[
        (g_uniform <= 1e-10, format!("uniform gap={g_uniform:.1e}")),
        (g_mask <= 1e-10, format!("mask gap (support indicator)={g_mask:.1e}")),
        (
            true,
            format!(
                "mask literal 1/K indicator: {}",
                match literal_mask {
                    Ok(_) => "safe".to_string(),
                    Err(e) => format!("{e}"),
                }
            ),
        ),
        (g_skewed > 1e-3, format!("[0.7,0.2,0.1] gap={g_skewed:.3e}")),
    ]))
}

fn c05_ko_path() -> Res<Outcome> {
    let mut r = rng(5);
    let mut norm_gap: f64 = 0.0;
    let endpoints = [
        (Pmf::uniform(2), Pmf::delta(2, 0)),
        (random_pmf(&mut r, 5, 0.05), Pmf::delta(5, 3)),
        (random_pmf(&mut r, 7, 0.05), random_pmf(&mut r, 7, 0.0)),
    ];
    for (p, q) in &endpoints {
        let g = GeodesicPath::new(p, q)?;
        for i in 0..1001 {
            let a = g.amplitude(i as f64 / 1000.0);
            norm_gap = norm_gap.max((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs());
        }
    }
    let ko = KoScheduler::new(&mask_source(4));
    let mut sched_gap: f64 = 0.0;
    for i in 0..1001 {
        let t = i as f64 / 1000.0;
        for x1 in 0..3 {
            sched_gap = sched_gap.max((ko.kappa(t, x1) - (PI * t / 2.0).sin().powi(2)).abs());
        }
    }
    let energy_of = |path: &ConditionalPath, t_max: f64| -> Res<f64> {
        Ok(path_energy(4001, |s| {
            let (p, dp) = path.eval_with_derivative(s * t_max, 0)?;
            let dp: Vec<f64> = dp.iter().map(|v| v * t_max).collect();
            kinetic_energy_rate(&p, &flux_stable(&p, &dp)?, &WeightSpec::stable())
        })? / t_max)
    };
    let ko_path = ConditionalPath::kinetic_optimal(Pmf::uniform(2));
    let e_ko = energy_of(&ko_path, 1.0)?;
    // the linear path's energy diverges at t = 1; its value on [0, 1 - 1e-3] is a lower bound
    let linear = ConditionalPath::mixture(Pmf::uniform(2), Scheduler::Linear)?;
    let e_lin = energy_of(&linear, 1.0 - 1e-3)? * (1.0 - 1e-3);
    let target = 2.0 * FRAC_PI_4 * FRAC_PI_4;
    Ok(Outcome::new(&[
        (norm_gap <= 1e-12, format!("max|sum a^2-1|={norm_gap:.1e}")),
        (sched_gap <= 1e-12, format!("mask KO vs sin^2 gap={sched_gap:.1e}")),
        (
            (e_ko - target).abs() <= 1e-3,
            format!(
                "KO energy={e_ko:.6} vs 2(pi/4)^2={target:.6} (4(pi/4)^2={:.6})",
                4.0 * FRAC_PI_4 * FRAC_PI_4
            ),
        ),
        (e_ko <= e_lin, format!("linear energy on [0,1-1e-3]={e_lin:.4} >= KO")),
    ]))
}

fn sparse_target(k: usize, seed: u64) -> Res<JointPmf> {
    Ok(make_toy(&ToySpec::RandomSparse {
        k,
        dims: 2,
        seed,
        sparsity: 0.5,
    })?)
}

fn c06_corrector() -> Res<Outcome> {
    let mut r = rng(6);
    let mut div_max: f64 = 0.0;
    for _ in 0..200 {
        let k = r.random_range(2..12);
        let p = random_pmf(&mut r, k, 0.01);
        let g: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
        let mean: f64 = p.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum();
        let dp: Vec<f64> = p.as_slice().iter().zip(&g).map(|(a, b)| a * (b - mean)).collect();
        for w in [WeightSpec::stable(), WeightSpec::TauIndicator, WeightSpec::TauPower(2.0)] {
            let f = closed_form_potential(&p, &dp, &w.tau(&p)?)?;
            div_max = div_max.max(max_abs(&divergence(&corrector_flux(&p, &f, &w)?)));
        }
    }
    let k = 5;
    let src = random_pmf(&mut r, k, 0.05);
    let paths = [
        ConditionalPath::mixture(Pmf::uniform(k), Scheduler::Linear)?,
        ConditionalPath::kinetic_optimal(src),
        ConditionalPath::metric(Metric::abs_diff(k), BetaSchedule::new(3.0, 1.0)?),
        ConditionalPath::mixture(mask_source(k), Scheduler::Cubic)?,
    ];
    let mut stat: f64 = 0.0;
    for path in &paths {
        let vel = PathVelocity::closed_form(path.clone());
        for _ in 0..50 {
            let t = r.random_range(0.0..0.99);
            let x1 = r.random_range(0..k - 1);
            let p = path.eval(t, x1)?;
            let cols = (0..k)
                .map(|z| vel.corrector_column(t, z, x1))
                .collect::<Result<Vec<_>, _>>()?;
            for x in 0..k {
                stat = stat.max((0..k).map(|z| cols[z][x] * p[z]).sum::<f64>().abs());
            }
        }
    }
    let q = sparse_target(4, 11)?;
    let path = ConditionalPath::mixture(Pmf::uniform(4), Scheduler::Linear)?;
    let post = ExactPosterior::new(q.clone(), path.clone())?;
    let pt = marginal_joint(&q, &path, 0.5)?;
    let start = sample_target(&pt, 100_000, 61);
    let alphabet = Alphabet::new(4, None)?;
    let tv0 = empirical_joint(&start, 2, &alphabet)?.tv_distance(&pt)?;
    let vel = PathVelocity::closed_form(path);
    let end = simulate_frozen_corrector(&start, &post, &vel, 0.5, 5.0, 1e-3, 1000, 62)?;
    let tv = empirical_joint(&end, 2, &alphabet)?.tv_distance(&pt)?;
    Ok(Outcome::new(&[
        (div_max == 0.0, format!("max|div j_perp|={div_max:e}")),
        (stat <= 1e-10, format!("max|sum_z u_perp p|={stat:.1e}")),
        (tv <= 0.03, format!("frozen-t TV after 1e3 steps={tv:.4} (start {tv0:.4})")),
    ]))
}

fn c07_marginal_mc() -> Res<Outcome> {
    let start = Instant::now();
    let q = sparse_target(4, 7)?;
    let paths = [
        ("mixture/linear", ConditionalPath::mixture(Pmf::uniform(4), Scheduler::Linear)?),
        (
            "mixture/ko",
            ConditionalPath::mixture(Pmf::uniform(4), Scheduler::kinetic_optimal(&Pmf::uniform(4)))?,
        ),
        ("metric", ConditionalPath::metric(Metric::abs_diff(4), BetaSchedule::new(3.0, 1.0)?)),
    ];
    let times = [0.25, 0.5, 0.75];
    let cfg = SamplerConfig {
        h: 1.0 / 500.0,
        scheme: Scheme::AlwaysValid,
        record_times: times.to_vec(),
        seed: 7,
        ..SamplerConfig::default()
    };
    let alphabet = Alphabet::new(4, None)?;
    let mut checks = Vec::new();
    for (name, path) in &paths {
        let post = ExactPosterior::new(q.clone(), path.clone())?;
        let trajs = simulate(&post, &PathVelocity::closed_form(path.clone()), &cfg, 200_000)?;
        let mut worst: f64 = 0.0;
        for &t in &times {
            let states: Vec<Vec<usize>> = trajs.iter().map(|tr| tr.state_at(t).unwrap().to_vec()).collect();
            let tv = empirical_joint(&states, 2, &alphabet)?.tv_distance(&marginal_joint(&q, path, t)?)?;
            worst = worst.max(tv);
        }
        let finals: Vec<Vec<usize>> = trajs.iter().map(|tr| tr.final_state().to_vec()).collect();
        let tv1 = empirical_joint(&finals, 2, &alphabet)?.tv_distance(&q)?;
        checks.push((
            worst <= 0.02 && tv1 <= 0.02,
            format!("{name} max TV(p_t)={worst:.4} TV(p_1,q)={tv1:.4}"),
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    checks.push((secs < 120.0, format!("{secs:.1}s")));
    Ok(Outcome::new(&checks))
}

fn c08_elbo() -> Res<Outcome> {
    let q = make_toy(&ToySpec::RandomSparse {
        k: 3,
        dims: 2,
        seed: 8,
        sparsity: 0.7,
    })?;
    let path = ConditionalPath::mixture(Pmf::uniform(3), Scheduler::Linear)?;
    let post = ExactPosterior::new(q.clone(), path.clone())?;
    let cfg = ElboConfig {
        n_samples: 10_000,
        seed: 80,
        ..ElboConfig::default()
    };
    let mut worst_a = f64::NEG_INFINITY;
    for x1 in q.support() {
        let e = elbo_estimate(&x1, &path, &post, &cfg)?;
        worst_a = worst_a.max(e.value - q.prob(&x1).ln() - 3.0 * e.std_error);
    }

    let train = TrainConfig {
        steps: 2_000,
        seed: 81,
        ..TrainConfig::default()
    };
    let (model, _) = train_posterior(&q, &path, &train)?;
    let oracle = LikelihoodOracle::new(&path, &model, cfg.t_cutoff, 2_000)?;
    let probes = sample_target(&q, 20, 82);
    let mut worst_b = f64::NEG_INFINITY;
    for x1 in &probes {
        let e = elbo_estimate(x1, &path, &model, &cfg)?;
        worst_b = worst_b.max(e.value - oracle.log_prob(x1) - 3.0 * e.std_error);
    }

    // integrand identities on a mask path over tokens {0, 1, 2} plus mask 3
    let mut r = rng(8);
    let qm = JointPmf::from_table(
        4,
        2,
        (0..16)
            .map(|idx| {
                let x = decode(idx, 4, 2);
                if x.contains(&3) {
                    0.0
                } else {
                    q.prob(&x)
                }
            })
            .collect(),
    )?;
    let sched = Scheduler::kinetic_optimal(&mask_source(4));
    let mpath = ConditionalPath::mixture(mask_source(4), sched.clone())?;
    let mpost = ExactPosterior::new(qm.clone(), mpath.clone())?;
    let cond = PathVelocity::closed_form(mpath.clone());
    let general = PosteriorMarginal {
        posterior: &mpost,
        velocity: &cond,
    };
    let mut gap_c: f64 = 0.0;
    for _ in 0..100 {
        let t = r.random_range(0.0..0.999);
        let x1 = qm.state(sample_cdf(&mut r, &cumulative(qm.table())));
        let xt = sample_noisy(&mut r, &mpath, t, &x1);
        let g = elbo_integrand_general(&x1, &xt, t, &general, &cond)?;
        let m = elbo_integrand_mixture(&x1, &xt, t, &mpost, &sched)?;
        let k = elbo_integrand_masked(&x1, &xt, t, &mpost, &sched, 3)?;
        gap_c = gap_c.max((g - m).abs()).max((m - k).abs());
    }
    Ok(Outcome::new(&[
        (worst_a <= 0.0, format!("(a) max elbo-log q-3s={worst_a:.4}")),
        (worst_b <= 0.0, format!("(b) max elbo-oracle-3s={worst_b:.4}")),
        (gap_c <= 1e-9, format!("(c) integrand gap={gap_c:.1e}")),
    ]))
}

fn c09_oracle() -> Res<Outcome> {
    let q = make_toy(&ToySpec::MarkovChain {
        k: 3,
        dims: 2,
        seed: 9,
        initial: None,
        transition: None,
    })?;
    let mut checks = Vec::new();
    for (name, path) in [
        ("linear", ConditionalPath::mixture(Pmf::uniform(3), Scheduler::Linear)?),
        ("metric", ConditionalPath::metric(Metric::abs_diff(3), BetaSchedule::new(3.0, 1.0)?)),
    ] {
        let post = ExactPosterior::new(q.clone(), path.clone())?;
        let oracle = LikelihoodOracle::new(&path, &post, 1.0 - 1e-3, 2_000)?;
        let worst = q
            .support()
            .iter()
            .map(|x| (oracle.log_prob(x) - q.prob(x).ln()).abs())
            .fold(0.0, f64::max);
        checks.push((worst <= 1e-3, format!("{name} max|log p1-log q|={worst:.1e}")));
    }
    let path = ConditionalPath::mixture(Pmf::uniform(3), Scheduler::Linear)?;
    let post = ExactPosterior::new(q.clone(), path)?;
    let v = MixtureMarginal {
        posterior: &post,
        scheduler: Scheduler::Linear,
    };
    let p0 = vec![1.0 / 9.0; 9];
    let run = |n| kolmogorov_forward(&p0, 3, 2, &v, 0.0, 0.75, n);
    let (a, b, c) = (run(8)?, run(16)?, run(32)?);
    let d1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let d2: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x - y).collect();
    let ratio = max_abs(&d1) / max_abs(&d2);
    checks.push(((12.0..=20.0).contains(&ratio), format!("RK4 halving ratio={ratio:.2}")));
    Ok(Outcome::new(&checks))
}

fn c10_always_valid() -> Res<Outcome> {
    let mut r = rng(10);
    let mut valid = true;
    for &h in &[1e-3, 1.0, 1e3] {
        for _ in 0..200 {
            let k = r.random_range(2..8);
            let z = r.random_range(0..k);
            let mut col: Vec<f64> = (0..k).map(|_| r.random_range(0.0..50.0)).collect();
            col[z] = 0.0;
            col[z] = -col.iter().sum::<f64>();
            let p = always_valid_pmf(z, h, &col);
            valid &= p.iter().all(|&v| (0.0..=1.0).contains(&v)) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12;
            for _ in 0..20 {
                valid &= always_valid_step(&mut r, z, h, &col)? < k;
            }
        }
    }
    // one-coordinate chain with constant rates: exact transition is exp(hQ)
    let k = 4;
    let q = DMatrix::from_fn(k, k, |x, z| if x == z { 0.0 } else { 0.5 + (x + 2 * z) as f64 / 4.0 });
    let mut q = q.clone();
    for z in 0..k {
        let s: f64 = (0..k).filter(|&x| x != z).map(|x| q[(x, z)]).sum();
        q[(z, z)] = -s;
    }
    let gap = |h: f64| -> f64 {
        let exact = (q.clone() * h).exp();
        let mut g: f64 = 0.0;
        for z in 0..k {
            let col: Vec<f64> = (0..k).map(|x| q[(x, z)]).collect();
            let p = always_valid_pmf(z, h, &col);
            for x in 0..k {
                g = g.max((p[x] - exact[(x, z)]).abs());
            }
        }
        g
    };
    let hs = [0.1, 0.05, 0.025, 0.0125, 0.00625];
    let gaps: Vec<f64> = hs.iter().map(|&h| gap(h)).collect();
    let orders: Vec<f64> = gaps.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let superlinear = orders.iter().all(|&o| o > 1.5);
    Ok(Outcome::new(&[
        (valid, "valid pmfs and draws for h in {1e-3, 1, 1e3}".into()),
        (
            superlinear,
            format!(
                "gap orders under halving={:?}",
                orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
            ),
        ),
    ]))
}

fn c11_training() -> Res<Outcome> {
    let start = Instant::now();
    let q = make_toy(&ToySpec::MarkovChain {
        k: 3,
        dims: 2,
        seed: 11,
        initial: None,
        transition: None,
    })?;
    let path = ConditionalPath::mixture(Pmf::uniform(3), Scheduler::Linear)?;
    let exact = ExactPosterior::new(q.clone(), path.clone())?;
    let cfg = TrainConfig {
        steps: 20_000,
        bins: 32,
        seed: 110,
        ..TrainConfig::default()
    };
    let (model, losses) = train_posterior(&q, &path, &cfg)?;
    let mut r = rng(11);
    let mut total = 0.0;
    for _ in 0..200 {
        let t = r.random_range(0.0..1.0 - 1e-3);
        let x1 = q.state(sample_cdf(&mut r, &cumulative(q.table())));
        let z = sample_noisy(&mut r, &path, t, &x1);
        let (a, b) = (model.posterior_all(t, &z)?, exact.posterior_all(t, &z)?);
        total += a
            .iter()
            .zip(&b)
            .map(|(x, y)| dfm_core::pmf::tv_distance(x, y).unwrap())
            .sum::<f64>()
            / a.len() as f64;
    }
    let mean_tv = total / 200.0;
    let secs = start.elapsed().as_secs_f64();
    let short = TrainConfig { steps: 300, ..cfg };
    let deterministic = train_posterior(&q, &path, &short)? == train_posterior(&q, &path, &short)?
        && losses[..300] == train_posterior(&q, &path, &short)?.1[..];
    Ok(Outcome::new(&[
        (mean_tv <= 0.05, format!("mean TV to exact posterior={mean_tv:.4}")),
        (deterministic, "deterministic per seed".into()),
        (secs < 120.0, format!("{secs:.1}s")),
    ]))
}

fn c12_scheduler_comparison() -> Res<Outcome> {
    let q = make_toy(&ToySpec::RandomSparse {
        k: 3,
        dims: 2,
        seed: 12,
        sparsity: 0.6,
    })?;
    let stats = Pmf::new((0..3).map(|x| (q.marginal(0)[x] + q.marginal(1)[x]) / 2.0).collect::<Vec<_>>())?;
    let qm = JointPmf::from_table(
        4,
        2,
        (0..16)
            .map(|idx| {
                let x = decode(idx, 4, 2);
                if x.contains(&3) {
                    0.0
                } else {
                    q.prob(&x)
                }
            })
            .collect(),
    )?;
    let mut configs = vec![(
        "mask+ko".to_string(),
        qm,
        ConditionalPath::mixture(mask_source(4), Scheduler::kinetic_optimal(&mask_source(4)))?,
    )];
    for beta0 in [0.0, 4.0] {
        let src = tempered_source(&stats, beta0)?;
        configs.push((
            format!("ko beta0={beta0}"),
            q.clone(),
            ConditionalPath::mixture(src.clone(), Scheduler::kinetic_optimal(&src))?,
        ));
    }
    let cfg = ElboConfig {
        n_samples: 4_000,
        seed: 120,
        ..ElboConfig::default()
    };
    let mut rows = Vec::new();
    for (name, target, path) in &configs {
        let post = ExactPosterior::new(target.clone(), path.clone())?;
        let oracle = LikelihoodOracle::new(path, &post, cfg.t_cutoff, 2_000)?;
        let mut row = Vec::new();
        for x1 in q.support() {
            let e = elbo_estimate(&x1, path, &post, &cfg)?;
            row.push((e.value, e.std_error, oracle.log_prob(&x1)));
        }
        rows.push((name.clone(), row));
    }
    println!("    scheduler comparison (exact posterior; elbo +- stderr | oracle log-lik | log q):");
    for (s, x1) in q.support().iter().enumerate() {
        let cells: Vec<String> = rows
            .iter()
            .map(|(n, row)| format!("{n}: {:.3}+-{:.3} | {:.4}", row[s].0, row[s].1, row[s].2))
            .collect();
        println!("      x1={x1:?} log q={:.4}  {}", q.prob(x1).ln(), cells.join("  "));
    }
    let mut consistent = true;
    let mut close_pairs = 0;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            for s in 0..rows[a].1.len() {
                let (ea, sa, oa) = rows[a].1[s];
                let (eb, sb, ob) = rows[b].1[s];
                let within = (ea - eb).abs() <= 3.0 * (sa * sa + sb * sb).sqrt();
                if within {
                    close_pairs += 1;
                    consistent &= (oa - ob).abs() <= 1e-3;
                }
            }
        }
    }
    let bars = rows.iter().all(|(_, r)| r.iter().all(|(v, s, _)| v.is_finite() && *s > 0.0));
    Ok(Outcome::new(&[
        (bars, "report has finite values with sigma bars".into()),
        (
            consistent,
            format!("{close_pairs} pairs within 3 sigma, all with coinciding oracle log-liks"),
        ),
    ]))
}

type Criterion = (&'static str, fn() -> Res<Outcome>);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("continuity equation", c01_continuity),
        ("rate conditions", c02_rate_conditions),
        ("laplacian vs closed form", c03_laplacian),
        ("flux coincidence", c04_flux_coincidence),
        ("kinetic-optimal path", c05_ko_path),
        ("corrector", c06_corrector),
        ("marginal Monte Carlo", c07_marginal_mc),
        ("ELBO", c08_elbo),
        ("Kolmogorov oracle", c09_oracle),
        ("always-valid step", c10_always_valid),
        ("training", c11_training),
        ("scheduler comparison", c12_scheduler_comparison),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|a| id == *a || name.contains(a.as_str())) {
            continue;
        }
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
