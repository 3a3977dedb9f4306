//! Unit directions `v` at which the support-function inequalities are
//! checked.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|v| = 1`.
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionTag {
    PairwiseDifference,
    SignedBasis,
    Angular,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub v: Vec<f64>,
    pub tag: DirectionTag,
}

impl Direction {
    /// Normalizes `v`; fails on a zero or non-finite vector.
    pub fn new(v: Vec<f64>, tag: DirectionTag) -> Result<Self> {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid("direction", "zero or non-finite vector"));
        }
        Ok(Direction {
            v: v.into_iter().map(|a| a / norm).collect(),
            tag,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn same_as(&self, other: &[f64]) -> bool {
        self.v.iter().zip(other).all(|(a, b)| (a - b).abs() <= UNIT_TOL)
    }
}

/// How a [`DirectionSet`] was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionGenerator {
    pub n_products: usize,
    pub angular: usize,
    pub random: usize,
    pub seed: u64,
}

/// Ordered, duplicate-free list of directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    directions: Vec<Direction>,
    pub generator: Option<DirectionGenerator>,
}

fn basis(j: usize, n: usize, sign: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[j] = sign;
    v
}

fn difference(j: usize, k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[j] = std::f64::consts::FRAC_1_SQRT_2;
    v[k] = -std::f64::consts::FRAC_1_SQRT_2;
    v
}

impl DirectionSet {
    pub fn empty() -> Self {
        DirectionSet {
            directions: Vec::new(),
            generator: None,
        }
    }

    /// Adds `d` unless an equal direction is already present. Returns whether
    /// it was added.
    pub fn push(&mut self, d: Direction) -> Result<bool> {
        if let Some(first) = self.directions.first() {
            if first.dim() != d.dim() {
                return Err(Error::DimensionMismatch {
                    what: "direction",
                    expected: first.dim(),
                    actual: d.dim(),
                });
            }
        }
        if self.directions.iter().any(|e| e.same_as(&d.v)) {
            return Ok(false);
        }
        self.directions.push(d);
        Ok(true)
    }

    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let mut set = DirectionSet::empty();
        for v in vectors {
            set.push(Direction::new(v, DirectionTag::Custom)?)?;
        }
        Ok(set)
    }

    /// `±e_j` and `(e_j - e_k)/√2` for all ordered pairs.
    pub fn canonical(n_products: usize) -> Self {
        let mut set = DirectionSet::empty();
        for j in 0..n_products {
            for sign in [1.0, -1.0] {
                set.directions.push(Direction {
                    v: basis(j, n_products, sign),
                    tag: DirectionTag::SignedBasis,
                });
            }
        }
        for j in 0..n_products {
            for k in 0..n_products {
                if j != k {
                    set.directions.push(Direction {
                        v: difference(j, k, n_products),
                        tag: DirectionTag::PairwiseDifference,
                    });
                }
            }
        }
        set
    }

    /// `n` equally spaced directions on the unit circle starting at `e_1`,
    /// merged with the canonical ones (which they contain when `n` is a
    /// multiple of 8).
    pub fn angular(n: usize) -> Self {
        let mut set = DirectionSet::canonical(2);
        let step = std::f64::consts::TAU / n as f64;
        let mut out = DirectionSet::empty();
        for k in 0..n {
            let a = step * k as f64;
            let v = snap(vec![a.cos(), a.sin()]);
            let tag = set
                .directions
                .iter()
                .find(|d| d.same_as(&v))
                .map_or(DirectionTag::Angular, |d| d.tag);
            out.directions.push(Direction { v, tag });
        }
        for d in set.directions.drain(..) {
            let _ = out.push(d);
        }
        out
    }

    /// Canonical directions plus `n_random` seeded uniform draws on the sphere.
    pub fn with_random(n_products: usize, n_random: usize, seed: u64) -> Self {
        let mut set = DirectionSet::canonical(n_products);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut added = 0;
        while added < n_random {
            let v: Vec<f64> = (0..n_products).map(|_| StandardNormal.sample(&mut rng)).collect();
            if let Ok(d) = Direction::new(v, DirectionTag::Angular) {
                if set.push(d).unwrap_or(false) {
                    added += 1;
                }
            }
        }
        set
    }

    /// 64 angular directions for two products; canonical plus 32 random
    /// directions otherwise.
    pub fn default_for(n_products: usize, seed: u64) -> Self {
        let (mut set, angular, random) = if n_products == 2 {
            (DirectionSet::angular(64), 64, 0)
        } else {
            (DirectionSet::with_random(n_products, 32, seed), 0, 32)
        };
        set.generator = Some(DirectionGenerator {
            n_products,
            angular,
            random,
            seed,
        });
        set
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.directions.first().map_or(0, Direction::dim)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Direction> {
        self.directions.iter()
    }

    pub fn as_slice(&self) -> &[Direction] {
        &self.directions
    }
}

impl std::ops::Index<usize> for DirectionSet {
    type Output = Direction;
    fn index(&self, i: usize) -> &Direction {
        &self.directions[i]
    }
}

/// Round coordinates that are zero or `±1/√2` up to trigonometric error.
fn snap(v: Vec<f64>) -> Vec<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    v.into_iter()
        .map(|a| {
            for t in [0.0, 1.0, -1.0, r, -r] {
                if (a - t).abs() < 1e-14 {
                    return t;
                }
            }
            a
        })
        .collect()
}
