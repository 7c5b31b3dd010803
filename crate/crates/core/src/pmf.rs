//! Alphabets, probability mass functions over tokens and over joint states, and
//! token metrics.
//!
//! A joint state `x = (x^0, ..., x^{D-1})` is flattened as `Σ_i x^i K^i`, so
//! coordinate 0 varies fastest.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest joint table the crate will materialize.
pub const MAX_JOINT_CELLS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_token: Option<usize>,
}

impl Alphabet {
    pub fn new(k: usize, mask_token: Option<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidAlphabet(format!("K = {k}, need K >= 2")));
        }
        if let Some(m) = mask_token {
            if m >= k {
                return Err(Error::InvalidAlphabet(format!(
                    "mask token {m} outside [0, {k})"
                )));
            }
        }
        Ok(Self { k, mask_token })
    }

    pub fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.k {
            return Err(Error::OutOfAlphabet { token, k: self.k });
        }
        Ok(())
    }
}

/// A normalized distribution over `K` tokens. Exact zeros are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf(Vec<f64>);

impl Pmf {
    /// Normalizes non-negative weights by their sum.
    pub fn new(weights: impl Into<Vec<f64>>) -> Result<Self> {
        normalize(weights.into()).map(Self)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn delta(k: usize, x: usize) -> Self {
        let mut w = vec![0.0; k];
        w[x] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Lowest index among the maximal entries.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(x, _)| x)
    }
}

impl std::ops::Index<usize> for Pmf {
    type Output = f64;

    fn index(&self, x: usize) -> &f64 {
        &self.0[x]
    }
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Pmf::new(v)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(p: Pmf) -> Self {
        p.0
    }
}

fn normalize(mut w: Vec<f64>) -> Result<Vec<f64>> {
    for (index, &value) in w.iter().enumerate() {
        if value < 0.0 || value.is_nan() {
            return Err(Error::NegativeWeight { index, value });
        }
        if value.is_infinite() {
            return Err(Error::Domain(format!("infinite weight at index {index}")));
        }
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZero);
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Half the L1 distance between two distributions.
pub fn tv_distance(a: &Pmf, b: &Pmf) -> Result<f64> {
    tv_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn tv_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Number of joint cells `K^D`, guarded by [`MAX_JOINT_CELLS`].
pub fn joint_size(k: usize, dims: usize) -> Result<usize> {
    let size = (k as u128).checked_pow(dims as u32).unwrap_or(u128::MAX);
    if size > MAX_JOINT_CELLS as u128 {
        return Err(Error::SizeGuard {
            what: "joint table",
            size,
            limit: MAX_JOINT_CELLS as u128,
        });
    }
    Ok(size as usize)
}

/// A distribution over `K^D` joint states.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    k: usize,
    dims: usize,
    table: Vec<f64>,
}

impl JointPmf {
    /// Builds a joint pmf from unnormalized non-negative weights.
    pub fn from_table(k: usize, dims: usize, table: Vec<f64>) -> Result<Self> {
        Alphabet::new(k, None)?;
        if dims == 0 {
            return Err(Error::Config("dims must be positive".into()));
        }
        let n = joint_size(k, dims)?;
        if table.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: table.len(),
            });
        }
        Ok(Self {
            k,
            dims,
            table: normalize(table)?,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn prob(&self, x: &[usize]) -> f64 {
        self.table[encode(x, self.k)]
    }

    pub fn index_of(&self, x: &[usize]) -> usize {
        encode(x, self.k)
    }

    pub fn state(&self, index: usize) -> Vec<usize> {
        decode(index, self.k, self.dims)
    }

    /// Indices and states of the cells with positive mass.
    pub fn support(&self) -> Vec<Vec<usize>> {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| self.state(i))
            .collect()
    }

    /// Marginal distribution of coordinate `i`.
    pub fn marginal(&self, i: usize) -> Pmf {
        let mut m = vec![0.0; self.k];
        let stride = self.k.pow(i as u32);
        for (idx, &p) in self.table.iter().enumerate() {
            m[(idx / stride) % self.k] += p;
        }
        Pmf(normalize(m).expect("marginal of a valid joint"))
    }

    /// Product distribution of per-coordinate pmfs.
    pub fn product(factors: &[Pmf]) -> Result<Self> {
        let k = factors.first().map(Pmf::len).unwrap_or(0);
        let dims = factors.len();
        let n = joint_size(k, dims)?;
        let table = (0..n)
            .map(|idx| {
                decode(idx, k, dims)
                    .iter()
                    .zip(factors)
                    .map(|(&x, f)| f[x])
                    .product()
            })
            .collect();
        Self::from_table(k, dims, table)
    }

    pub fn tv_distance(&self, other: &JointPmf) -> Result<f64> {
        tv_slices(&self.table, &other.table)
    }
}

impl Serialize for JointPmf {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.table.serialize(s)
    }
}

/// Flattened index of a joint state, coordinate 0 fastest.
pub fn encode(x: &[usize], k: usize) -> usize {
    x.iter().rev().fold(0, |acc, &xi| acc * k + xi)
}

pub fn decode(mut index: usize, k: usize, dims: usize) -> Vec<usize> {
    (0..dims)
        .map(|_| {
            let x = index % k;
            index /= k;
            x
        })
        .collect()
}

/// Normalized histogram of joint samples.
pub fn empirical_joint(samples: &[Vec<usize>], dims: usize, alphabet: &Alphabet) -> Result<JointPmf> {
    let n = joint_size(alphabet.k, dims)?;
    let mut counts = vec![0.0; n];
    for s in samples {
        if s.len() != dims {
            return Err(Error::SizeMismatch {
                expected: dims,
                found: s.len(),
            });
        }
        for &x in s {
            alphabet.check_token(x)?;
        }
        counts[encode(s, alphabet.k)] += 1.0;
    }
    JointPmf::from_table(alphabet.k, dims, counts)
}

/// Distance-like function on tokens with `d(x, y) = 0` exactly when `x = y`.
///
/// Symmetry and the triangle inequality are not required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Metric {
    k: usize,
    table: Vec<f64>,
}

impl Metric {
    pub fn from_fn(k: usize, dist: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut table = Vec::with_capacity(k * k);
        for x in 0..k {
            for y in 0..k {
                table.push(dist(x, y));
            }
        }
        Self::from_table(k, table)
    }

    pub fn from_table(k: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != k * k {
            return Err(Error::SizeMismatch {
                expected: k * k,
                found: table.len(),
            });
        }
        for x in 0..k {
            for y in 0..k {
                let d = table[x * k + y];
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(Error::InvalidMetric(format!("dist({x}, {y}) = {d}")));
                }
                if (d == 0.0) != (x == y) {
                    return Err(Error::InvalidMetric(format!(
                        "dist({x}, {y}) = {d} violates dist = 0 iff equal"
                    )));
                }
            }
        }
        Ok(Self { k, table })
    }

    /// `|x - y|` on token indices.
    pub fn abs_diff(k: usize) -> Self {
        Self::from_fn(k, |x, y| x.abs_diff(y) as f64).expect("valid metric")
    }

    /// 0/1 discrete metric.
    pub fn hamming(k: usize) -> Self {
        Self::from_fn(k, |x, y| f64::from(u8::from(x != y))).expect("valid metric")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.table[x * self.k + y]
    }

    pub fn max_dist(&self) -> f64 {
        self.table.iter().cloned().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for Metric {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        Self::from_table(k, rows.into_iter().flatten().collect())
    }
}

impl From<Metric> for Vec<Vec<f64>> {
    fn from(m: Metric) -> Self {
        m.table.chunks(m.k).map(<[f64]>::to_vec).collect()
    }
}
