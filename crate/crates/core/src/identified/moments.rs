//! Conditional moment inequalities over discrete instrument cells and the
//! membership check of a parameter value.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::directions::DirectionSet;
use super::support::{direction_terms, SupportProfile};
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Assignment of markets to conditioning cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrouping {
    labels: Vec<usize>,
    n_cells: usize,
    /// Instrument values defining each cell, when built from the data.
    pub keys: Vec<Vec<f64>>,
}

impl CellGrouping {
    /// One cell per distinct instrument vector, ordered lexicographically.
    pub fn from_instruments(dataset: &Dataset) -> Self {
        let mut keys: Vec<Vec<f64>> = dataset.markets().iter().map(|m| m.instruments.clone()).collect();
        keys.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        keys.dedup();
        let index: BTreeMap<Vec<u64>, usize> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.iter().map(|v| v.to_bits()).collect(), i))
            .collect();
        let labels = dataset
            .markets()
            .iter()
            .map(|m| index[&m.instruments.iter().map(|v| v.to_bits()).collect::<Vec<_>>()])
            .collect();
        CellGrouping {
            labels,
            n_cells: keys.len(),
            keys,
        }
    }

    /// Every market in one cell (unconditional inequalities).
    pub fn single(n_markets: usize) -> Self {
        CellGrouping {
            labels: vec![0; n_markets],
            n_cells: 1,
            keys: Vec::new(),
        }
    }

    pub fn from_labels(labels: Vec<usize>) -> Self {
        let n_cells = labels.iter().max().map_or(0, |m| m + 1);
        CellGrouping {
            labels,
            n_cells,
            keys: Vec::new(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub(crate) fn check(&self, n_markets: usize) -> Result<()> {
        if self.labels.len() != n_markets {
            return Err(Error::DimensionMismatch {
                what: "cell labels",
                expected: n_markets,
                actual: self.labels.len(),
            });
        }
        Ok(())
    }
}

/// Allowance for simulation noise when checking `E[m | z] >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Slack {
    /// Accept cell means `>= -s`.
    Fixed(f64),
    /// Accept cell means `>= -kappa * sd / sqrt(n_cell)`.
    StandardErrors(f64),
}

impl Default for Slack {
    fn default() -> Self {
        Slack::StandardErrors(2.0)
    }
}

impl Slack {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Slack::Fixed(v) | Slack::StandardErrors(v) => v,
        };
        if !(v >= 0.0) {
            return Err(Error::invalid("slack", format!("{v} is negative")));
        }
        Ok(())
    }
}

/// Per `(direction, cell)` sample moments of `y = (h, x'v, v'p)` for one
/// `lambda`, where `h = sup_{s_0} v'delta(s_0)`. The support moment is
/// `w'y` with `w = (1, -beta, alpha)`.
#[derive(Clone, Debug)]
pub struct SliceMoments {
    n_dirs: usize,
    n_cells: usize,
    dim: usize,
    counts: Vec<usize>,
    infinite: Vec<bool>,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

/// The worst `(direction, cell)` pair at a parameter value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstMoment {
    pub direction: usize,
    pub cell: usize,
    /// Cell mean of the support moment.
    pub mean: f64,
    /// Mean plus slack; negative means the inequality fails.
    pub margin: f64,
}

impl SliceMoments {
    /// Sups for every market and direction, then cell statistics.
    pub fn compute(
        profiles: &[SupportProfile],
        dataset: &Dataset,
        directions: &DirectionSet,
        grouping: &CellGrouping,
    ) -> Result<Self> {
        grouping.check(dataset.len())?;
        let sups: Vec<Vec<f64>> = profiles
            .par_iter()
            .map(|p| {
                directions
                    .iter()
                    .map(|d| p.sup(&d.v).map(|r| r.value))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_sups(&sups, dataset, directions, grouping))
    }

    /// Cell statistics from precomputed `sups[market][direction]`.
    pub fn from_sups(sups: &[Vec<f64>], dataset: &Dataset, directions: &DirectionSet, grouping: &CellGrouping) -> Self {
        let (n_dirs, n_cells, dx) = (directions.len(), grouping.n_cells(), dataset.n_chars());
        let dim = 2 + dx;
        let mut counts = vec![0usize; n_cells];
        for &l in grouping.labels() {
            counts[l] += 1;
        }
        for (c, &n) in counts.iter().enumerate() {
            if n == 0 {
                warn!("conditioning cell {c} has no markets and is dropped");
            }
        }
        let slot = |d: usize, c: usize| d * n_cells + c;
        let mut infinite = vec![false; n_dirs * n_cells];
        let mut mean = vec![0.0; n_dirs * n_cells * dim];
        let mut cov = vec![0.0; n_dirs * n_cells * dim * dim];
        let mut y = vec![0.0; dim];
        let terms: Vec<Vec<(Vec<f64>, f64)>> = dataset
            .markets()
            .iter()
            .map(|m| directions.iter().map(|d| direction_terms(m, &d.v)).collect())
            .collect();
        let fill = |y: &mut [f64], h: f64, t: &(Vec<f64>, f64)| {
            y[0] = h;
            y[1..1 + t.0.len()].copy_from_slice(&t.0);
            y[dim - 1] = t.1;
        };
        for (i, &c) in grouping.labels().iter().enumerate() {
            for d in 0..n_dirs {
                let s = slot(d, c);
                let h = sups[i][d];
                if !h.is_finite() {
                    infinite[s] = true;
                    continue;
                }
                fill(&mut y, h, &terms[i][d]);
                for (acc, v) in mean[s * dim..(s + 1) * dim].iter_mut().zip(&y) {
                    *acc += v;
                }
            }
        }
        for d in 0..n_dirs {
            for c in 0..n_cells {
                let s = slot(d, c);
                if counts[c] > 0 {
                    mean[s * dim..(s + 1) * dim].iter_mut().for_each(|v| *v /= counts[c] as f64);
                }
            }
        }
        for (i, &c) in grouping.labels().iter().enumerate() {
            for d in 0..n_dirs {
                let s = slot(d, c);
                if infinite[s] {
                    continue;
                }
                fill(&mut y, sups[i][d], &terms[i][d]);
                for (a, ya) in y.iter_mut().enumerate() {
                    *ya -= mean[s * dim + a];
                }
                let block = &mut cov[s * dim * dim..(s + 1) * dim * dim];
                for a in 0..dim {
                    for b in 0..dim {
                        block[a * dim + b] += y[a] * y[b];
                    }
                }
            }
        }
        for d in 0..n_dirs {
            for c in 0..n_cells {
                let s = slot(d, c);
                if counts[c] > 0 {
                    cov[s * dim * dim..(s + 1) * dim * dim]
                        .iter_mut()
                        .for_each(|v| *v /= counts[c] as f64);
                }
            }
        }
        SliceMoments {
            n_dirs,
            n_cells,
            dim,
            counts,
            infinite,
            mean,
            cov,
        }
    }

    fn weights(&self, alpha: f64, beta: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.dim);
        w.push(1.0);
        w.extend(beta.iter().map(|b| -b));
        w.push(alpha);
        w
    }

    /// Cell mean and standard deviation of the support moment, or `None` when
    /// the cell is empty or some market contributes `+inf`.
    pub fn cell(&self, d: usize, c: usize, alpha: f64, beta: &[f64]) -> Option<(f64, f64, usize)> {
        let s = d * self.n_cells + c;
        if self.counts[c] == 0 || self.infinite[s] {
            return None;
        }
        let w = self.weights(alpha, beta);
        Some(self.eval(s, &w))
    }

    fn eval(&self, s: usize, w: &[f64]) -> (f64, f64, usize) {
        let dim = self.dim;
        let m: f64 = w.iter().zip(&self.mean[s * dim..(s + 1) * dim]).map(|(a, b)| a * b).sum();
        let block = &self.cov[s * dim * dim..(s + 1) * dim * dim];
        let mut var = 0.0;
        for a in 0..dim {
            for b in 0..dim {
                var += w[a] * block[a * dim + b] * w[b];
            }
        }
        (m, var.max(0.0).sqrt(), self.counts[s % self.n_cells])
    }

    /// Cell means for every `(direction, cell)`; `+inf` when excluded.
    pub fn means(&self, alpha: f64, beta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_dirs)
            .map(|d| {
                (0..self.n_cells)
                    .map(|c| self.cell(d, c, alpha, beta).map_or(f64::INFINITY, |r| r.0))
                    .collect()
            })
            .collect()
    }

    /// Worst slack-adjusted inequality; `None` when every pair is excluded.
    pub fn worst(&self, alpha: f64, beta: &[f64], slack: Slack) -> Option<WorstMoment> {
        let w = self.weights(alpha, beta);
        let mut worst: Option<WorstMoment> = None;
        for d in 0..self.n_dirs {
            for c in 0..self.n_cells {
                let s = d * self.n_cells + c;
                if self.counts[c] == 0 || self.infinite[s] {
                    continue;
                }
                let (m, sd, n) = self.eval(s, &w);
                let margin = match slack {
                    Slack::Fixed(v) => m + v,
                    Slack::StandardErrors(k) => m + k * sd / (n as f64).sqrt(),
                };
                if worst.is_none_or(|w| margin < w.margin) {
                    worst = Some(WorstMoment {
                        direction: d,
                        cell: c,
                        mean: m,
                        margin,
                    });
                }
            }
        }
        worst
    }
}

/// Outcome of a membership check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub worst: Option<WorstMoment>,
}

impl Membership {
    pub(crate) fn from_worst(worst: Option<WorstMoment>) -> Self {
        Membership {
            member: worst.is_none_or(|w| w.margin >= 0.0),
            worst,
        }
    }

    /// Smallest margin, `+inf` when no inequality is informative.
    pub fn margin(&self) -> f64 {
        self.worst.map_or(f64::INFINITY, |w| w.margin)
    }
}
