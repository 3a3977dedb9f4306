//! Indicator instrument functions on the unit cube after mapping each
//! instrument through the standard normal CDF.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Cells with fewer active markets than this are flagged and left out of the
/// moment system.
pub const DEFAULT_MIN_COUNT: usize = 5;

/// Which instrument functions to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstrumentSpec {
    /// Every cube `C_{a,r}` over all selected columns for `r = r0..=r_max`.
    Hypercube {
        r0: u32,
        r_max: u32,
        /// Instrument columns; all when absent.
        #[serde(default)]
        columns: Option<Vec<usize>>,
        #[serde(default = "yes")]
        standardize: bool,
        #[serde(default = "default_min_count")]
        min_count: usize,
    },
    /// Cubes at resolution `r` over listed one- and two-column groups.
    Combos {
        groups: Vec<Vec<usize>>,
        r: u32,
        #[serde(default)]
        pair_cells: PairCells,
        /// Prepend `g = 1`.
        #[serde(default)]
        constant: bool,
        #[serde(default = "yes")]
        standardize: bool,
        #[serde(default = "default_min_count")]
        min_count: usize,
    },
}

fn yes() -> bool {
    true
}

fn default_min_count() -> usize {
    DEFAULT_MIN_COUNT
}

/// Cells generated for a two-column group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCells {
    /// All `(2r)^2` squares.
    #[default]
    Full,
    /// Two functions: the union of diagonal squares (`a_1 = a_2`) and the
    /// union of the rest.
    Concordance,
}

impl InstrumentSpec {
    pub fn hypercube(r0: u32, r_max: u32) -> Self {
        InstrumentSpec::Hypercube {
            r0,
            r_max,
            columns: None,
            standardize: true,
            min_count: DEFAULT_MIN_COUNT,
        }
    }

    /// Constant, both halves of every column, and a concordance pair for
    /// each adjacent column pair: `1 + 2 d + 2 (d - 1)` functions, 39 for
    /// ten instruments.
    pub fn one_and_two_dimensional(n_columns: usize) -> Self {
        let mut groups: Vec<Vec<usize>> = (0..n_columns).map(|c| vec![c]).collect();
        groups.extend((1..n_columns).map(|c| vec![c - 1, c]));
        InstrumentSpec::Combos {
            groups,
            r: 1,
            pair_cells: PairCells::Concordance,
            constant: true,
            standardize: true,
            min_count: DEFAULT_MIN_COUNT,
        }
    }

    pub fn min_count(&self) -> usize {
        match self {
            InstrumentSpec::Hypercube { min_count, .. } | InstrumentSpec::Combos { min_count, .. } => *min_count,
        }
    }

    fn standardize(&self) -> bool {
        match self {
            InstrumentSpec::Hypercube { standardize, .. } | InstrumentSpec::Combos { standardize, .. } => *standardize,
        }
    }

    /// The functions, independent of any data.
    pub fn functions(&self, n_columns: usize) -> Result<Vec<InstrumentFunction>> {
        let check = |c: usize| {
            if c >= n_columns {
                Err(Error::invalid("instrument spec", format!("column {c} >= {n_columns}")))
            } else {
                Ok(())
            }
        };
        match self {
            InstrumentSpec::Hypercube { r0, r_max, columns, .. } => {
                if *r0 < 1 {
                    return Err(Error::invalid("instrument spec", "r0 must be at least 1"));
                }
                if r_max < r0 {
                    return Err(Error::invalid("instrument spec", format!("r_max = {r_max} < r0 = {r0}")));
                }
                let dims: Vec<usize> = columns.clone().unwrap_or_else(|| (0..n_columns).collect());
                if dims.is_empty() {
                    return Err(Error::invalid("instrument spec", "no instrument columns"));
                }
                dims.iter().try_for_each(|&c| check(c))?;
                let mut out = Vec::new();
                for r in *r0..=*r_max {
                    for a in cell_indices(dims.len(), 2 * r) {
                        out.push(InstrumentFunction::cube(Cube { dims: dims.clone(), a, r }));
                    }
                }
                Ok(out)
            }
            InstrumentSpec::Combos {
                groups,
                r,
                pair_cells,
                constant,
                ..
            } => {
                if *r < 1 {
                    return Err(Error::invalid("instrument spec", "r must be at least 1"));
                }
                let mut out = Vec::new();
                if *constant {
                    out.push(InstrumentFunction {
                        label: "1".into(),
                        cubes: vec![Cube {
                            dims: vec![],
                            a: vec![],
                            r: *r,
                        }],
                    });
                }
                for g in groups {
                    g.iter().try_for_each(|&c| check(c))?;
                    match (g.len(), pair_cells) {
                        (1, _) | (2, PairCells::Full) => {
                            for a in cell_indices(g.len(), 2 * r) {
                                out.push(InstrumentFunction::cube(Cube { dims: g.clone(), a, r: *r }));
                            }
                        }
                        (2, PairCells::Concordance) => {
                            let (diag, off): (Vec<_>, Vec<_>) = cell_indices(2, 2 * r)
                                .into_iter()
                                .map(|a| Cube { dims: g.clone(), a, r: *r })
                                .partition(|c| c.a[0] == c.a[1]);
                            let name = format!("z{}~z{}", g[0], g[1]);
                            out.push(InstrumentFunction {
                                label: format!("{name}:same"),
                                cubes: diag,
                            });
                            out.push(InstrumentFunction {
                                label: format!("{name}:cross"),
                                cubes: off,
                            });
                        }
                        (n, _) => {
                            return Err(Error::invalid(
                                "instrument spec",
                                format!("groups must have one or two columns, got {n}"),
                            ))
                        }
                    }
                }
                if out.is_empty() {
                    return Err(Error::invalid("instrument spec", "no instrument functions"));
                }
                Ok(out)
            }
        }
    }
}

/// All index vectors in `{1..=k}^d`, last coordinate fastest.
fn cell_indices(d: usize, k: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (1..=k).map(move |a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

/// `prod_u ((a_u - 1) / 2r, a_u / 2r]` over columns `dims`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub dims: Vec<usize>,
    pub a: Vec<u32>,
    pub r: u32,
}

impl Cube {
    pub fn contains(&self, z_tilde: &[f64]) -> bool {
        let k = 2.0 * self.r as f64;
        self.dims
            .iter()
            .zip(&self.a)
            .all(|(&u, &a)| z_tilde[u] > (a as f64 - 1.0) / k && z_tilde[u] <= a as f64 / k)
    }
}

/// Indicator of a union of cubes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentFunction {
    pub label: String,
    pub cubes: Vec<Cube>,
}

impl InstrumentFunction {
    fn cube(c: Cube) -> Self {
        let label = format!(
            "r{}[{}]",
            c.r,
            c.dims
                .iter()
                .zip(&c.a)
                .map(|(u, a)| format!("z{u}:{a}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        InstrumentFunction { label, cubes: vec![c] }
    }

    pub fn eval(&self, z_tilde: &[f64]) -> bool {
        self.cubes.iter().any(|c| c.contains(z_tilde))
    }
}

/// Functions realized on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentFunctionSet {
    pub spec: InstrumentSpec,
    pub functions: Vec<InstrumentFunction>,
    /// `active[f][i]`: market `i` lies in function `f`.
    pub active: Vec<Vec<bool>>,
    pub counts: Vec<usize>,
    /// Functions with fewer than `min_count` active markets.
    pub flagged: Vec<bool>,
}

impl InstrumentFunctionSet {
    /// Number of functions, flagged ones included.
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Indices of unflagged functions.
    pub fn usable(&self) -> Vec<usize> {
        (0..self.len()).filter(|&f| !self.flagged[f]).collect()
    }
}

/// `Phi` of each instrument column, optionally after centering and scaling
/// by the sample mean and standard deviation.
pub fn transform_instruments(dataset: &Dataset, standardize: bool) -> Vec<Vec<f64>> {
    let dz = dataset.n_instruments();
    let n = dataset.len() as f64;
    let mut shift = vec![0.0; dz];
    let mut scale = vec![1.0; dz];
    if standardize && dataset.len() > 1 {
        for c in 0..dz {
            let mean = dataset.markets().iter().map(|m| m.instruments[c]).sum::<f64>() / n;
            let var = dataset
                .markets()
                .iter()
                .map(|m| (m.instruments[c] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            shift[c] = mean;
            if var > 0.0 {
                scale[c] = var.sqrt();
            }
        }
    }
    let phi = Normal::standard();
    dataset
        .markets()
        .iter()
        .map(|m| {
            (0..dz)
                .map(|c| phi.cdf((m.instruments[c] - shift[c]) / scale[c]))
                .collect()
        })
        .collect()
}

pub fn build_instruments(dataset: &Dataset, spec: &InstrumentSpec) -> Result<InstrumentFunctionSet> {
    let functions = spec.functions(dataset.n_instruments())?;
    let z = transform_instruments(dataset, spec.standardize());
    let active: Vec<Vec<bool>> = functions
        .iter()
        .map(|f| z.iter().map(|zi| f.eval(zi)).collect())
        .collect();
    let counts: Vec<usize> = active.iter().map(|a| a.iter().filter(|&&b| b).count()).collect();
    let flagged: Vec<bool> = counts.iter().map(|&c| c < spec.min_count()).collect();
    if flagged.iter().all(|&f| f) {
        return Err(Error::invalid(
            "instrument functions",
            format!("every function has fewer than {} active markets", spec.min_count()),
        ));
    }
    Ok(InstrumentFunctionSet {
        spec: spec.clone(),
        functions,
        active,
        counts,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypercube_counts() {
        let count = |d: usize, r0: u32, r: u32| InstrumentSpec::hypercube(r0, r).functions(d).unwrap().len();
        assert_eq!(count(1, 1, 2), 6);
        assert_eq!(count(2, 1, 2), 4 + 16);
        assert_eq!(count(2, 2, 3), 16 + 36);
        assert_eq!(count(3, 1, 1), 8);
        assert!(InstrumentSpec::hypercube(3, 2).functions(1).is_err());
    }

    #[test]
    fn one_and_two_dimensional_preset_has_39_functions() {
        let f = InstrumentSpec::one_and_two_dimensional(10).functions(10).unwrap();
        assert_eq!(f.len(), 39);
        assert_eq!(f[0].label, "1");
    }

    #[test]
    fn boundaries_are_right_closed() {
        let c = Cube {
            dims: vec![0],
            a: vec![1],
            r: 1,
        };
        assert!(c.contains(&[0.5]));
        assert!(!c.contains(&[0.0]));
        let d = Cube { a: vec![2], ..c.clone() };
        assert!(!d.contains(&[0.5]));
        assert!(d.contains(&[1.0]));
    }

    #[test]
    fn each_resolution_partitions_the_open_cube() {
        let f = InstrumentSpec::hypercube(1, 3).functions(2).unwrap();
        for z in [[0.3, 0.9], [0.5, 0.5], [1e-9, 1.0]] {
            for r in 1..=3 {
                let hits = f.iter().filter(|g| g.cubes[0].r == r && g.eval(&z)).count();
                assert_eq!(hits, 1);
            }
        }
    }

    #[test]
    fn concordance_functions_partition() {
        let f = InstrumentSpec::one_and_two_dimensional(3).functions(3).unwrap();
        let pairs: Vec<_> = f.iter().filter(|g| g.label.starts_with("z0~z1")).collect();
        assert_eq!(pairs.len(), 2);
        for z in [[0.2, 0.3, 0.0], [0.2, 0.8, 0.0], [0.7, 0.6, 0.0]] {
            assert_eq!(pairs.iter().filter(|g| g.eval(&z)).count(), 1);
        }
        assert!(pairs[0].eval(&[0.2, 0.3, 0.0]));
    }
}
