//! CTMC sampling with factorized posteriors.
//!
//! Each step samples `X1^i ∼ p^i_{1|t}(· | X_t)` per coordinate and then moves
//! coordinate `i` with the conditional velocity `u^i_t(·, X^i_t | X1^i)`, either by
//! an Euler step `δ + h u` or by the always-valid exponential-clock step (stay with
//! probability `e^{-hλ}`, otherwise jump proportionally to the off-diagonal rates).
//!
//! Trajectory `n` draws all its randomness from stream `n` of the generator keyed by
//! the configured seed, so results do not depend on thread count or scheduling.
//! Work is done in chunks of trajectories that share per-step caches of posterior
//! and rate tables.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pmf::{encode, Pmf};
use crate::posterior::PosteriorModel;
use crate::rng::{cumulative, sample_cdf, stream_rng};
use crate::velocity::{ConditionalVelocity, MarginalVelocity, PathVelocity};
use crate::{Error, Result};

const CHUNK: usize = 2048;

/// Slack allowed on an Euler jump probability before the step is rejected.
const EULER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    AlwaysValid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub h: f64,
    pub t_end: f64,
    /// Weight `c` of the corrector in `u* + c u⊥`.
    pub corrector_strength: f64,
    pub scheme: Scheme,
    pub final_denoise: bool,
    pub seed: u64,
    /// Extra times in `(0, t_end]` at which states are recorded.
    pub record_times: Vec<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            h: 1.0 / 500.0,
            t_end: 1.0 - 1e-3,
            corrector_strength: 0.0,
            scheme: Scheme::AlwaysValid,
            final_denoise: true,
            seed: 0,
            record_times: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::Config(format!("step h = {} outside (0, 1]", self.h)));
        }
        if !(self.t_end > 0.0 && self.t_end < 1.0) {
            return Err(Error::Config(format!("t_end = {} outside (0, 1)", self.t_end)));
        }
        if !(self.corrector_strength >= 0.0 && self.corrector_strength.is_finite()) {
            return Err(Error::Config(format!(
                "corrector strength {} must be finite and non-negative",
                self.corrector_strength
            )));
        }
        if let Some(t) = self
            .record_times
            .iter()
            .find(|&&t| !(t > 0.0 && t <= self.t_end))
        {
            return Err(Error::Config(format!(
                "record time {t} outside (0, t_end = {}]",
                self.t_end
            )));
        }
        Ok(())
    }

    /// Step boundaries `0 = t_0 < ... < t_N = t_end`, split at the record times.
    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = (0..)
            .map(|n| n as f64 * self.h)
            .take_while(|&t| t < self.t_end)
            .collect();
        g.push(self.t_end);
        g.extend(self.record_times.iter().copied());
        g.sort_by(f64::total_cmp);
        g.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        g
    }

    /// Number of velocity evaluations (steps) per trajectory.
    pub fn nfe(&self) -> usize {
        self.grid().len() - 1
    }
}

/// A sampled path, recorded at `0`, the requested times and the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub index: u64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<usize>>,
    pub config: Arc<SamplerConfig>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[usize] {
        self.states.last().expect("trajectory has states")
    }

    /// State at the recorded time closest to `t`.
    pub fn state_at(&self, t: f64) -> Option<&[usize]> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-12)
            .map(|i| self.states[i].as_slice())
    }
}

/// Jump probability and cumulative off-diagonal rates of one rate column.
#[derive(Debug, Clone)]
struct JumpTable {
    jump: f64,
    cdf: Vec<f64>,
}

fn jump_table(column: &[f64], z: usize, h: f64, scheme: Scheme) -> Result<JumpTable> {
    let mut off = column.to_vec();
    off[z] = 0.0;
    for (x, v) in off.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -1e-12 {
                return Err(Error::Domain(format!("negative rate {v} from {z} to {x}")));
            }
            *v = 0.0;
        }
    }
    let lam: f64 = off.iter().sum();
    let jump = match scheme {
        Scheme::Euler => {
            let j = h * lam;
            if j > 1.0 + EULER_SLACK {
                return Err(Error::InvalidStepPmf {
                    token: z,
                    stay: 1.0 - j,
                });
            }
            j.min(1.0)
        }
        Scheme::AlwaysValid => -(-h * lam).exp_m1(),
    };
    Ok(JumpTable {
        jump,
        cdf: cumulative(&off),
    })
}

fn apply_jump<R: Rng + ?Sized>(rng: &mut R, z: usize, table: &JumpTable) -> usize {
    if table.jump > 0.0 && rng.random::<f64>() < table.jump {
        sample_cdf(rng, &table.cdf)
    } else {
        z
    }
}

/// Exact one-step pmf of the always-valid step from `z` under rate `column`.
pub fn always_valid_pmf(z: usize, h: f64, column: &[f64]) -> Vec<f64> {
    let mut off = column.to_vec();
    off[z] = 0.0;
    let lam: f64 = off.iter().sum();
    if lam <= 0.0 {
        let mut p = vec![0.0; column.len()];
        p[z] = 1.0;
        return p;
    }
    let jump = -(-h * lam).exp_m1();
    let mut p: Vec<f64> = off.iter().map(|v| jump * v / lam).collect();
    p[z] = 1.0 - jump;
    p
}

/// Stays with probability `e^{-hλ}`, `λ = -u(z, z)`; otherwise jumps `∝ u(·, z)`.
/// Valid for every `h > 0`.
pub fn always_valid_step<R: Rng + ?Sized>(rng: &mut R, z: usize, h: f64, column: &[f64]) -> Result<usize> {
    let table = jump_table(column, z, h, Scheme::AlwaysValid)?;
    Ok(apply_jump(rng, z, &table))
}

/// `X^i_{t+h} ∼ δ_{X^i_t} + h u^i_t(·, X_t)`, each coordinate independently.
pub fn euler_step<R: Rng + ?Sized>(
    rng: &mut R,
    z: &[usize],
    t: f64,
    h: f64,
    velocity: &dyn MarginalVelocity,
) -> Result<Vec<usize>> {
    (0..z.len())
        .map(|i| {
            let col = velocity.column(t, z, i)?;
            let mut pmf: Vec<f64> = col.iter().map(|u| h * u).collect();
            pmf[z[i]] += 1.0;
            for (x, &p) in pmf.iter().enumerate() {
                if p < -EULER_SLACK {
                    return Err(Error::InvalidStepPmf {
                        token: if x == z[i] { x } else { z[i] },
                        stay: pmf[z[i]],
                    });
                }
            }
            let clipped: Vec<f64> = pmf.iter().map(|p| p.max(0.0)).collect();
            Ok(sample_cdf(rng, &cumulative(&clipped)))
        })
        .collect()
}

/// Samples `X1^i` from the posterior, then steps with the conditional velocity.
pub fn posterior_two_step<R: Rng + ?Sized>(
    rng: &mut R,
    z: &[usize],
    t: f64,
    h: f64,
    posterior: &dyn PosteriorModel,
    velocity: &dyn ConditionalVelocity,
    scheme: Scheme,
) -> Result<Vec<usize>> {
    let posts = posterior.posterior_all(t, z)?;
    let x1: Vec<usize> = posts
        .iter()
        .map(|p| sample_cdf(rng, &cumulative(p.as_slice())))
        .collect();
    (0..z.len())
        .map(|i| {
            let col = velocity.column(t, z[i], x1[i])?;
            let table = jump_table(&col, z[i], h, scheme)?;
            Ok(apply_jump(rng, z[i], &table))
        })
        .collect()
}

/// Per-step caches shared by the trajectories of one chunk.
struct StepCache<'a> {
    posterior: &'a dyn PosteriorModel,
    velocity: &'a PathVelocity,
    k: usize,
    t: f64,
    h: f64,
    scheme: Scheme,
    strength: f64,
    include_drift: bool,
    posts: HashMap<usize, Vec<Vec<f64>>>,
    jumps: Vec<Option<JumpTable>>,
}

impl<'a> StepCache<'a> {
    fn new(
        posterior: &'a dyn PosteriorModel,
        velocity: &'a PathVelocity,
        scheme: Scheme,
        strength: f64,
        include_drift: bool,
    ) -> Self {
        let k = velocity.k();
        Self {
            posterior,
            velocity,
            k,
            t: 0.0,
            h: 0.0,
            scheme,
            strength,
            include_drift,
            posts: HashMap::new(),
            jumps: vec![None; k * k],
        }
    }

    fn reset(&mut self, t: f64, h: f64) {
        self.t = t;
        self.h = h;
        self.posts.clear();
        self.jumps.iter_mut().for_each(|j| *j = None);
    }

    fn posterior_cdfs(&mut self, z: &[usize]) -> Result<&Vec<Vec<f64>>> {
        let key = encode(z, self.k);
        if !self.posts.contains_key(&key) {
            let cdfs = self
                .posterior
                .posterior_all(self.t, z)?
                .iter()
                .map(|p| cumulative(p.as_slice()))
                .collect();
            self.posts.insert(key, cdfs);
        }
        Ok(&self.posts[&key])
    }

    fn jump(&mut self, z: usize, x1: usize) -> Result<&JumpTable> {
        let slot = z * self.k + x1;
        if self.jumps[slot].is_none() {
            let mut col = if self.include_drift {
                self.velocity.column(self.t, z, x1)?
            } else {
                vec![0.0; self.k]
            };
            if self.strength > 0.0 {
                let corr = self.velocity.corrector_column(self.t, z, x1)?;
                for (c, v) in col.iter_mut().zip(corr) {
                    *c += self.strength * v;
                }
            }
            self.jumps[slot] = Some(jump_table(&col, z, self.h, self.scheme)?);
        }
        Ok(self.jumps[slot].as_ref().expect("filled above"))
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, z: &mut [usize]) -> Result<()> {
        let x1: Vec<usize> = {
            let cdfs = self.posterior_cdfs(z)?;
            cdfs.iter().map(|c| sample_cdf(rng, c)).collect()
        };
        for i in 0..z.len() {
            let table = self.jump(z[i], x1[i])?;
            z[i] = apply_jump(rng, z[i], table);
        }
        Ok(())
    }

    fn denoise(&mut self, rng: &mut ChaCha8Rng, z: &mut [usize]) -> Result<()> {
        let cdfs = self.posterior_cdfs(z)?;
        let x: Vec<usize> = cdfs.iter().map(|c| sample_cdf(rng, c)).collect();
        z.copy_from_slice(&x);
        Ok(())
    }
}

fn initial_state(rng: &mut ChaCha8Rng, source_cdf: &[f64], dims: usize) -> Vec<usize> {
    (0..dims).map(|_| sample_cdf(rng, source_cdf)).collect()
}

/// Simulates `n` trajectories from the source `p_0` of the velocity's path to
/// `t_end`, optionally replacing the end state by a posterior draw at `t_end`.
pub fn simulate(
    posterior: &dyn PosteriorModel,
    velocity: &PathVelocity,
    config: &SamplerConfig,
    n: usize,
) -> Result<Vec<Trajectory>> {
    config.validate()?;
    if posterior.k() != velocity.k() {
        return Err(Error::Config(format!(
            "posterior alphabet {} differs from velocity alphabet {}",
            posterior.k(),
            velocity.k()
        )));
    }
    let dims = posterior.dims();
    let grid = config.grid();
    let cfg = Arc::new(config.clone());
    let source_cdf = cumulative(velocity.path.source().as_slice());
    let record: Vec<bool> = grid
        .iter()
        .map(|&t| config.record_times.iter().any(|&r| (r - t).abs() < 1e-12))
        .collect();

    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(n))
        .collect();
    let results: Vec<Result<Vec<Trajectory>>> = chunks
        .into_par_iter()
        .map(|range| {
            let mut cache = StepCache::new(
                posterior,
                velocity,
                config.scheme,
                config.corrector_strength,
                true,
            );
            let mut rngs: Vec<ChaCha8Rng> = range
                .clone()
                .map(|idx| stream_rng(config.seed, idx as u64))
                .collect();
            let mut states: Vec<Vec<usize>> = rngs
                .iter_mut()
                .map(|r| initial_state(r, &source_cdf, dims))
                .collect();
            let mut trajs: Vec<Trajectory> = range
                .clone()
                .zip(&states)
                .map(|(idx, s)| Trajectory {
                    index: idx as u64,
                    seed: config.seed,
                    times: vec![0.0],
                    states: vec![s.clone()],
                    config: Arc::clone(&cfg),
                })
                .collect();
            for w in 1..grid.len() {
                let (t, t_next) = (grid[w - 1], grid[w]);
                cache.reset(t, t_next - t);
                for (rng, z) in rngs.iter_mut().zip(states.iter_mut()) {
                    cache.step(rng, z)?;
                }
                if record[w] && w + 1 < grid.len() {
                    for (tr, z) in trajs.iter_mut().zip(&states) {
                        tr.times.push(t_next);
                        tr.states.push(z.clone());
                    }
                }
            }
            let t_end = *grid.last().expect("non-empty grid");
            if config.final_denoise && record.last() == Some(&true) {
                for (tr, z) in trajs.iter_mut().zip(&states) {
                    tr.times.push(t_end);
                    tr.states.push(z.clone());
                }
            }
            if config.final_denoise {
                cache.reset(t_end, 0.0);
                for (rng, z) in rngs.iter_mut().zip(states.iter_mut()) {
                    cache.denoise(rng, z)?;
                }
            }
            let t_final = if config.final_denoise { 1.0 } else { t_end };
            for (tr, z) in trajs.iter_mut().zip(states) {
                tr.times.push(t_final);
                tr.states.push(z);
            }
            Ok(trajs)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Runs only the corrector `c u⊥` at a frozen time `t`, starting from `start`.
///
/// Since `u⊥` leaves `p_t` invariant, particles distributed as `p_t` stay so.
#[allow(clippy::too_many_arguments)]
pub fn simulate_frozen_corrector(
    start: &[Vec<usize>],
    posterior: &dyn PosteriorModel,
    velocity: &PathVelocity,
    t: f64,
    strength: f64,
    h: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let results: Vec<Result<Vec<Vec<usize>>>> = start
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut cache = StepCache::new(posterior, velocity, Scheme::AlwaysValid, strength, false);
            cache.reset(t, h);
            let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
                .map(|j| stream_rng(seed, (c * CHUNK + j) as u64))
                .collect();
            let mut states = chunk.to_vec();
            for _ in 0..steps {
                for (rng, z) in rngs.iter_mut().zip(states.iter_mut()) {
                    cache.step(rng, z)?;
                }
            }
            Ok(states)
        })
        .collect();
    let mut out = Vec::with_capacity(start.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Product source `p_0^{⊗D}` samples, one per stream.
pub fn sample_source(source: &Pmf, dims: usize, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let cdf = cumulative(source.as_slice());
    (0..n)
        .map(|i| initial_state(&mut stream_rng(seed, i as u64), &cdf, dims))
        .collect()
}
