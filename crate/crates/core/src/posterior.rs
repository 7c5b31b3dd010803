//! Factorized posteriors `p^i_{1|t}(x1^i | z)`.
//!
//! [`ExactPosterior`] evaluates Bayes' rule against a known joint target in the log
//! domain. [`TrainableTabular`] stores one logit vector per (time bin, joint
//! state, coordinate) and is fit with the cross-entropy loss by plain SGD.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::paths::{log_sum_exp, ConditionalPath};
use crate::pmf::{encode, joint_size, JointPmf, Pmf};
use crate::rng::{cumulative, sample_cdf, stream_rng};
use crate::{Error, Result};

/// Largest number of logits a tabular model may hold.
pub const MAX_TABULAR_LOGITS: usize = 10_000_000;

/// Training times are drawn from `[0, TRAIN_T_MAX]`.
pub const TRAIN_T_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    Exact,
    Trainable,
}

/// Per-coordinate distribution of the clean token given a noisy joint state.
pub trait PosteriorModel: Send + Sync {
    fn k(&self) -> usize;

    fn dims(&self) -> usize;

    fn posterior(&self, t: f64, z: &[usize], i: usize) -> Result<Pmf>;

    /// Posteriors of every coordinate; implementations may share work across them.
    fn posterior_all(&self, t: f64, z: &[usize]) -> Result<Vec<Pmf>> {
        (0..self.dims()).map(|i| self.posterior(t, z, i)).collect()
    }

    fn kind(&self) -> PosteriorKind;
}

/// Exact posterior of a conditional path applied independently to every coordinate.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    q: JointPmf,
    path: ConditionalPath,
    support: Vec<(Vec<usize>, f64)>,
}

impl ExactPosterior {
    pub fn new(q: JointPmf, path: ConditionalPath) -> Result<Self> {
        if q.k() != path.k() {
            return Err(Error::SizeMismatch {
                expected: q.k(),
                found: path.k(),
            });
        }
        let support = q
            .support()
            .into_iter()
            .map(|x| {
                let lq = q.prob(&x).ln();
                (x, lq)
            })
            .collect();
        Ok(Self { q, path, support })
    }

    pub fn target(&self) -> &JointPmf {
        &self.q
    }

    pub fn path(&self) -> &ConditionalPath {
        &self.path
    }

    /// `log p_t(z^j | y)` for every coordinate `j` and token `y`, as `[j][y]`.
    fn log_likelihoods(&self, t: f64, z: &[usize]) -> Result<Vec<Vec<f64>>> {
        let k = self.q.k();
        if z.len() != self.q.dims() {
            return Err(Error::SizeMismatch {
                expected: self.q.dims(),
                found: z.len(),
            });
        }
        for &zj in z {
            if zj >= k {
                return Err(Error::OutOfAlphabet { token: zj, k });
            }
        }
        let by_token = (0..k)
            .map(|y| self.path.log_eval(t, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(z.iter()
            .map(|&zj| (0..k).map(|y| by_token[y][zj]).collect())
            .collect())
    }

    /// Normalized weights `p_t(z | x1) q(x1) / p_t(z)` over the support of `q`.
    fn joint_weights(&self, t: f64, z: &[usize]) -> Result<Vec<f64>> {
        let ll = self.log_likelihoods(t, z)?;
        let logw: Vec<f64> = self
            .support
            .iter()
            .map(|(x1, lq)| lq + x1.iter().enumerate().map(|(j, &y)| ll[j][y]).sum::<f64>())
            .collect();
        let lse = log_sum_exp(&logw);
        if lse == f64::NEG_INFINITY {
            return Err(Error::ZeroMarginal);
        }
        Ok(logw.into_iter().map(|l| (l - lse).exp()).collect())
    }
}

impl PosteriorModel for ExactPosterior {
    fn k(&self) -> usize {
        self.q.k()
    }

    fn dims(&self) -> usize {
        self.q.dims()
    }

    fn posterior(&self, t: f64, z: &[usize], i: usize) -> Result<Pmf> {
        let w = self.joint_weights(t, z)?;
        let mut post = vec![0.0; self.q.k()];
        for ((x1, _), wi) in self.support.iter().zip(w) {
            post[x1[i]] += wi;
        }
        Pmf::new(post)
    }

    fn posterior_all(&self, t: f64, z: &[usize]) -> Result<Vec<Pmf>> {
        let w = self.joint_weights(t, z)?;
        let mut post = vec![vec![0.0; self.q.k()]; self.q.dims()];
        for ((x1, _), &wi) in self.support.iter().zip(&w) {
            for (i, &y) in x1.iter().enumerate() {
                post[i][y] += wi;
            }
        }
        post.into_iter().map(Pmf::new).collect()
    }

    fn kind(&self) -> PosteriorKind {
        PosteriorKind::Exact
    }
}

/// `p^i_{1|t}(· | z)` for a single query; see [`ExactPosterior`].
pub fn exact_posterior(
    q: &JointPmf,
    path: &ConditionalPath,
    t: f64,
    z: &[usize],
    i: usize,
) -> Result<Pmf> {
    ExactPosterior::new(q.clone(), path.clone())?.posterior(t, z, i)
}

/// Per-token conditional tables `[y][x] = p_t(x | y)`.
pub(crate) fn conditional_table(path: &ConditionalPath, t: f64) -> Result<Vec<Pmf>> {
    (0..path.k()).map(|y| path.eval(t, y)).collect()
}

/// The marginal `p_t(x) = Σ_{x1} Π_j p_t(x^j | x1^j) q(x1)` over the joint space.
pub fn marginal_joint(q: &JointPmf, path: &ConditionalPath, t: f64) -> Result<JointPmf> {
    let (k, dims) = (q.k(), q.dims());
    let cond = conditional_table(path, t)?;
    let support = q.support();
    let n = joint_size(k, dims)?;
    let table = (0..n)
        .map(|idx| {
            let x = q.state(idx);
            support
                .iter()
                .map(|x1| {
                    q.prob(x1)
                        * x.iter()
                            .zip(x1)
                            .map(|(&xj, &yj)| cond[yj][xj])
                            .product::<f64>()
                })
                .sum()
        })
        .collect();
    JointPmf::from_table(k, dims, table)
}

/// One cross-entropy training example: a time, the clean state and the noisy state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub t: f64,
    pub x1: Vec<usize>,
    pub xt: Vec<usize>,
}

/// Draws `t ∼ U[0, t_max]`, `x1 ∼ q` and `x_t ∼ p_t(· | x1)` coordinate-wise.
pub fn draw_training_sample<R: Rng + ?Sized>(
    rng: &mut R,
    q_cdf: &[f64],
    q: &JointPmf,
    path: &ConditionalPath,
    t_max: f64,
) -> Result<TrainingSample> {
    let t = Uniform::new_inclusive(0.0, t_max)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(rng);
    let x1 = q.state(sample_cdf(rng, q_cdf));
    let xt = x1
        .iter()
        .map(|&y| {
            let p = path.eval(t, y)?;
            Ok(sample_cdf(rng, &cumulative(p.as_slice())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSample { t, x1, xt })
}

/// Logits indexed `[bin][joint state][coordinate][token]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularFile")]
pub struct TrainableTabular {
    bins: usize,
    dims: usize,
    k: usize,
    logits: Vec<f64>,
    /// SGD steps applied so far; training resumes from here.
    steps_done: u64,
}

#[derive(Deserialize)]
struct TabularFile {
    bins: usize,
    dims: usize,
    k: usize,
    logits: Vec<f64>,
    #[serde(default)]
    steps_done: u64,
}

impl TryFrom<TabularFile> for TrainableTabular {
    type Error = Error;

    fn try_from(f: TabularFile) -> Result<Self> {
        let mut m = Self::new(f.bins, f.dims, f.k)?;
        if f.logits.len() != m.logits.len() {
            return Err(Error::SizeMismatch {
                expected: m.logits.len(),
                found: f.logits.len(),
            });
        }
        m.logits = f.logits;
        m.steps_done = f.steps_done;
        Ok(m)
    }
}

/// Mean cross-entropy of a batch and its sparse gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CeLoss {
    pub loss: f64,
    /// `(offset, ∂loss/∂logits[offset..offset + K])` per touched logit vector.
    pub grad: Vec<(usize, Vec<f64>)>,
}

impl TrainableTabular {
    /// Zero logits, i.e. uniform posteriors.
    pub fn new(bins: usize, dims: usize, k: usize) -> Result<Self> {
        if bins == 0 || dims == 0 || k < 2 {
            return Err(Error::Config(format!(
                "tabular model needs bins > 0, dims > 0, K >= 2 (got {bins}, {dims}, {k})"
            )));
        }
        let states = (k as u128).checked_pow(dims as u32).unwrap_or(u128::MAX);
        let size = (bins as u128)
            .saturating_mul(states)
            .saturating_mul(dims as u128)
            .saturating_mul(k as u128);
        if size > MAX_TABULAR_LOGITS as u128 {
            return Err(Error::SizeGuard {
                what: "tabular posterior",
                size,
                limit: MAX_TABULAR_LOGITS as u128,
            });
        }
        Ok(Self {
            bins,
            dims,
            k,
            logits: vec![0.0; size as usize],
            steps_done: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Nearest bin centre `(b + 1/2) / B`.
    pub fn bin(&self, t: f64) -> usize {
        ((t * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }

    /// Offset of the logit vector for `(t, z, i)`.
    pub fn offset(&self, t: f64, z: &[usize], i: usize) -> usize {
        let states = self.k.pow(self.dims as u32);
        ((self.bin(t) * states + encode(z, self.k)) * self.dims + i) * self.k
    }

    fn check_state(&self, z: &[usize]) -> Result<()> {
        if z.len() != self.dims {
            return Err(Error::SizeMismatch {
                expected: self.dims,
                found: z.len(),
            });
        }
        if let Some(&token) = z.iter().find(|&&x| x >= self.k) {
            return Err(Error::OutOfAlphabet { token, k: self.k });
        }
        Ok(())
    }

    /// Mean over the batch of `-Σ_i log p^i_θ(x1^i | x_t)`.
    pub fn ce_loss(&self, batch: &[TrainingSample]) -> Result<CeLoss> {
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(batch.len() * self.dims);
        let scale = 1.0 / batch.len().max(1) as f64;
        for s in batch {
            self.check_state(&s.xt)?;
            self.check_state(&s.x1)?;
            for i in 0..self.dims {
                let off = self.offset(s.t, &s.xt, i);
                let l = &self.logits[off..off + self.k];
                let lse = log_sum_exp(l);
                loss -= l[s.x1[i]] - lse;
                let mut g: Vec<f64> = l.iter().map(|v| (v - lse).exp() * scale).collect();
                g[s.x1[i]] -= scale;
                grad.push((off, g));
            }
        }
        Ok(CeLoss {
            loss: loss * scale,
            grad,
        })
    }

    pub fn apply_gradient(&mut self, grad: &[(usize, Vec<f64>)], lr: f64) {
        for (off, g) in grad {
            for (l, d) in self.logits[*off..*off + self.k].iter_mut().zip(g) {
                *l -= lr * d;
            }
        }
    }
}

impl PosteriorModel for TrainableTabular {
    fn k(&self) -> usize {
        self.k
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn posterior(&self, t: f64, z: &[usize], i: usize) -> Result<Pmf> {
        self.check_state(z)?;
        let off = self.offset(t, z, i);
        Pmf::new(crate::paths::softmax(&self.logits[off..off + self.k]))
    }

    fn kind(&self) -> PosteriorKind {
        PosteriorKind::Trainable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr: f64,
    pub bins: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr: 1.0,
            bins: 32,
            batch_size: 512,
            seed: 0,
        }
    }
}

/// Trains a fresh tabular posterior; returns the model and the per-step batch losses.
pub fn train_posterior(
    q: &JointPmf,
    path: &ConditionalPath,
    cfg: &TrainConfig,
) -> Result<(TrainableTabular, Vec<f64>)> {
    let mut model = TrainableTabular::new(cfg.bins, q.dims(), q.k())?;
    let losses = continue_training(&mut model, q, path, cfg, cfg.steps)?;
    Ok((model, losses))
}

/// Runs `steps` further SGD steps. Step `n` always draws its batch from RNG stream
/// `n`, so stopping and resuming reproduces an uninterrupted run exactly.
pub fn continue_training(
    model: &mut TrainableTabular,
    q: &JointPmf,
    path: &ConditionalPath,
    cfg: &TrainConfig,
    steps: u64,
) -> Result<Vec<f64>> {
    if model.k != q.k() || model.dims != q.dims() {
        return Err(Error::SizeMismatch {
            expected: q.len(),
            found: model.k.pow(model.dims as u32),
        });
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Config("training needs lr > 0 and batch_size > 0".into()));
    }
    let q_cdf = cumulative(q.table());
    let mut losses = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let mut rng = stream_rng(cfg.seed, model.steps_done);
        let batch = (0..cfg.batch_size)
            .map(|_| draw_training_sample(&mut rng, &q_cdf, q, path, TRAIN_T_MAX))
            .collect::<Result<Vec<_>>>()?;
        let ce = model.ce_loss(&batch)?;
        model.apply_gradient(&ce.grad, cfg.lr);
        model.steps_done += 1;
        losses.push(ce.loss);
    }
    Ok(losses)
}
