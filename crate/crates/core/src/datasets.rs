//! Toy joint targets and i.i.d. sample streams.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::pmf::{decode, joint_size, JointPmf};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Generator of a toy target, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToySpec {
    /// Uniform over the states whose token sum is odd. For `K = D = 2` this is
    /// mass 1/2 on `(0, 1)` and on `(1, 0)`.
    TwoTokenChecker { k: usize, dims: usize },
    /// `⌈sparsity · K^D⌉` cells chosen uniformly, weighted by a Dirichlet(1) draw.
    RandomSparse {
        k: usize,
        dims: usize,
        #[serde(default)]
        seed: u64,
        sparsity: f64,
    },
    /// `q(x) = π(x^0) Π_j P(x^{j+1} | x^j)`. Missing `initial` or `transition`
    /// are drawn from Dirichlet(1) with the seed; `transition[a][b] = P(b | a)`.
    MarkovChain {
        k: usize,
        dims: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        initial: Option<Vec<f64>>,
        #[serde(default)]
        transition: Option<Vec<Vec<f64>>>,
    },
}

impl ToySpec {
    pub fn k(&self) -> usize {
        match self {
            Self::TwoTokenChecker { k, .. } | Self::RandomSparse { k, .. } | Self::MarkovChain { k, .. } => *k,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Self::TwoTokenChecker { dims, .. }
            | Self::RandomSparse { dims, .. }
            | Self::MarkovChain { dims, .. } => *dims,
        }
    }
}

fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn check_row(row: &[f64], k: usize) -> Result<()> {
    if row.len() != k {
        return Err(Error::SizeMismatch {
            expected: k,
            found: row.len(),
        });
    }
    if let Some((index, &value)) = row.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeWeight { index, value });
    }
    Ok(())
}

/// Builds the target described by `spec`; deterministic per seed.
pub fn make_toy(spec: &ToySpec) -> Result<JointPmf> {
    let (k, dims) = (spec.k(), spec.dims());
    let n = joint_size(k, dims)?;
    let table = match spec {
        ToySpec::TwoTokenChecker { .. } => (0..n)
            .map(|idx| {
                let s: usize = decode(idx, k, dims).iter().sum();
                if s % 2 == 1 { 1.0 } else { 0.0 }
            })
            .collect(),
        ToySpec::RandomSparse { seed, sparsity, .. } => {
            if !(*sparsity > 0.0 && *sparsity <= 1.0) {
                return Err(Error::Config(format!("sparsity = {sparsity} outside (0, 1]")));
            }
            let cells = ((sparsity * n as f64).ceil() as usize).clamp(1, n);
            let mut rng = stream_rng(*seed, 0);
            let chosen = index::sample(&mut rng, n, cells);
            let weights = dirichlet_ones(&mut rng, cells);
            let mut table = vec![0.0; n];
            for (c, w) in chosen.iter().zip(weights) {
                table[c] = w;
            }
            table
        }
        ToySpec::MarkovChain {
            seed,
            initial,
            transition,
            ..
        } => {
            let mut rng = stream_rng(*seed, 0);
            let pi = match initial {
                Some(p) => p.clone(),
                None => dirichlet_ones(&mut rng, k),
            };
            check_row(&pi, k)?;
            let p = match transition {
                Some(rows) => rows.clone(),
                None => (0..k).map(|_| dirichlet_ones(&mut rng, k)).collect(),
            };
            if p.len() != k {
                return Err(Error::SizeMismatch {
                    expected: k,
                    found: p.len(),
                });
            }
            for row in &p {
                check_row(row, k)?;
            }
            // rows are normalized so a user-supplied matrix need not be exact
            let p: Vec<Vec<f64>> = p
                .into_iter()
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    if s > 0.0 { row.iter().map(|v| v / s).collect() } else { row }
                })
                .collect();
            (0..n)
                .map(|idx| {
                    let x = decode(idx, k, dims);
                    x.windows(2).fold(pi[x[0]], |acc, w| acc * p[w[0]][w[1]])
                })
                .collect()
        }
    };
    JointPmf::from_table(k, dims, table)
}

/// `n` i.i.d. joint states from `q`.
pub fn sample_target(q: &JointPmf, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let dist = WeightedIndex::new(q.table()).expect("valid joint pmf");
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| q.state(dist.sample(&mut rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmf::{empirical_joint, Alphabet};

    #[test]
    fn checker_examples() {
        let q = make_toy(&ToySpec::TwoTokenChecker { k: 2, dims: 2 }).unwrap();
        assert_eq!(q.prob(&[0, 1]), 0.5);
        assert_eq!(q.prob(&[1, 0]), 0.5);
        assert_eq!(q.support().len(), 2);
    }

    #[test]
    fn identity_chain_is_constant() {
        let spec = ToySpec::MarkovChain {
            k: 3,
            dims: 3,
            seed: 1,
            initial: None,
            transition: Some(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]),
        };
        let q = make_toy(&spec).unwrap();
        for x in q.support() {
            assert!(x.iter().all(|&v| v == x[0]), "{x:?}");
        }
    }

    #[test]
    fn sparse_support_count_and_determinism() {
        let spec = ToySpec::RandomSparse {
            k: 4,
            dims: 2,
            seed: 9,
            sparsity: 0.25,
        };
        let a = make_toy(&spec).unwrap();
        assert_eq!(a.support().len(), 4);
        assert_eq!(a, make_toy(&spec).unwrap());
        let other = make_toy(&ToySpec::RandomSparse {
            k: 4,
            dims: 2,
            seed: 10,
            sparsity: 0.25,
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn size_guard() {
        let spec = ToySpec::TwoTokenChecker { k: 10, dims: 7 };
        assert!(matches!(make_toy(&spec), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn samples_concentrate() {
        let q = make_toy(&ToySpec::MarkovChain {
            k: 3,
            dims: 2,
            seed: 4,
            initial: None,
            transition: None,
        })
        .unwrap();
        let s = sample_target(&q, 100_000, 2);
        assert_eq!(s, sample_target(&q, 100_000, 2));
        let emp = empirical_joint(&s, 2, &Alphabet::new(3, None).unwrap()).unwrap();
        assert!(emp.tv_distance(&q).unwrap() < 0.01);
    }

    #[test]
    fn spec_parses_from_json() {
        let s: ToySpec = serde_json::from_str(r#"{"kind":"random_sparse","k":4,"dims":2,"sparsity":0.5}"#).unwrap();
        assert_eq!(
            s,
            ToySpec::RandomSparse {
                k: 4,
                dims: 2,
                seed: 0,
                sparsity: 0.5
            }
        );
    }
}
