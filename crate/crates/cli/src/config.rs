//! TOML run configuration. Every table is optional; a subcommand fails with
//! a config error when a table it needs is missing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use outshare::identified::{DirectionSet, Slack, SupportOptions};
use outshare::inference::{
    BootstrapOptions, CriticalValueMethod, InfinitePolicy, InstrumentSpec, Multiplier, SignConvention,
};
use outshare::model::{
    Axis, CenterSource, MixingSpec, OutsideShareKind, OutsideShareSet, QuadratureKind, QuadratureRule,
    RandomCoefficient, ThetaGrid, DEFAULT_CLIP,
};
use outshare::simulation::{CounterexampleMethod, DgpSpec};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub simulate: Option<toml::Value>,
    #[serde(default)]
    pub model: ModelConfig,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// The `[simulate]` table; `n_markets` and `seed` are required.
    pub fn dgp(&self, seed: Option<u64>) -> Result<DgpSpec, ConfigError> {
        let mut table = self
            .simulate
            .clone()
            .ok_or_else(|| bad("missing [simulate] table (required keys: n_markets, seed)"))?;
        if let (Some(seed), Some(t)) = (seed, table.as_table_mut()) {
            t.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        let spec: DgpSpec = table
            .try_into()
            .map_err(|e| bad(format!("[simulate]: {e} (required keys: n_markets, seed)")))?;
        spec.validate().map_err(|e| bad(format!("[simulate]: {e}")))?;
        Ok(spec)
    }

    pub fn theta_grid(&self) -> Result<ThetaGrid, ConfigError> {
        let g = self.grid.as_ref().ok_or_else(|| bad("missing [grid] table"))?;
        let beta = g.beta.iter().map(AxisConfig::axis).collect::<Result<Vec<_>, _>>()?;
        let lambda = g.lambda.iter().map(AxisConfig::axis).collect::<Result<Vec<_>, _>>()?;
        if lambda.len() != self.model.random.len() {
            return Err(bad(format!(
                "[grid] has {} lambda axes but [model] has {} random coefficients",
                lambda.len(),
                self.model.random.len()
            )));
        }
        Ok(ThetaGrid::new(g.alpha.axis()?, beta, lambda))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Random coefficients in `lambda` order: `"price"` or `"x<k>"`
    /// (0-based characteristic). Empty means plain logit.
    pub random: Vec<String>,
    pub quadrature: QuadratureKind,
    pub nodes: usize,
    pub quadrature_seed: u64,
    pub outside_share: OutsideShareChoice,
    pub half_width: Option<f64>,
    /// A number, or absent to use each market's `outside_share` column.
    pub center: Option<f64>,
    pub clip: f64,
    pub support: SupportOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            random: vec!["price".into()],
            quadrature: QuadratureKind::GaussHermite,
            nodes: 15,
            quadrature_seed: 0,
            outside_share: OutsideShareChoice::Agnostic,
            half_width: None,
            center: None,
            clip: DEFAULT_CLIP,
            support: SupportOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsideShareChoice {
    Agnostic,
    Band,
    Singleton,
}

impl ModelConfig {
    pub fn mixing(&self) -> Result<MixingSpec, ConfigError> {
        if self.random.is_empty() {
            return Ok(MixingSpec::degenerate());
        }
        let pattern = self
            .random
            .iter()
            .map(|r| match r.as_str() {
                "price" => Ok(RandomCoefficient::Price),
                other => other
                    .strip_prefix('x')
                    .and_then(|k| k.parse().ok())
                    .map(RandomCoefficient::Characteristic)
                    .ok_or_else(|| bad(format!("[model] random: unknown coefficient {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MixingSpec::gaussian(
            pattern,
            QuadratureRule {
                kind: self.quadrature,
                nodes: self.nodes,
                seed: self.quadrature_seed,
            },
        ))
    }

    pub fn s0set(&self) -> Result<OutsideShareSet, ConfigError> {
        let center = self.center.map_or(CenterSource::PerMarket, CenterSource::Fixed);
        let kind = match self.outside_share {
            OutsideShareChoice::Agnostic => OutsideShareKind::Agnostic,
            OutsideShareChoice::Band => OutsideShareKind::Band {
                center,
                half_width: self
                    .half_width
                    .ok_or_else(|| bad("[model] outside_share = \"band\" needs half_width"))?,
            },
            OutsideShareChoice::Singleton => OutsideShareKind::Singleton { center },
        };
        let set = OutsideShareSet { kind, clip: self.clip };
        set.validate().map_err(|e| bad(format!("[model]: {e}")))?;
        Ok(set)
    }
}

/// A frozen value or an inclusive stepped range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum AxisConfig {
    Value(f64),
    Stepped { lo: f64, hi: f64, step: f64 },
    Points { lo: f64, hi: f64, points: usize },
}

impl AxisConfig {
    fn axis(&self) -> Result<Axis, ConfigError> {
        match *self {
            AxisConfig::Value(v) => Ok(Axis::Frozen(v)),
            AxisConfig::Stepped { lo, hi, step } => Axis::stepped(lo, hi, step),
            AxisConfig::Points { lo, hi, points } => Axis::range(lo, hi, points),
        }
        .map_err(|e| bad(format!("[grid]: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub alpha: AxisConfig,
    pub beta: Vec<AxisConfig>,
    #[serde(default)]
    pub lambda: Vec<AxisConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectionConfig {
    /// Evenly spaced angles for two products, random unit vectors added to
    /// the basis otherwise. Absent means the library default.
    pub count: Option<usize>,
    pub seed: u64,
}

impl DirectionConfig {
    pub fn directions(&self, n_products: usize) -> DirectionSet {
        match self.count {
            None => DirectionSet::default_for(n_products, self.seed),
            Some(n) if n_products == 2 => DirectionSet::angular(n),
            Some(n) => DirectionSet::with_random(n_products, n, self.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    pub directions: DirectionConfig,
    pub slack: Slack,
    /// Condition on exact instrument values (`true`) or pool all markets.
    pub condition_on_instruments: bool,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            directions: DirectionConfig::default(),
            slack: Slack::default(),
            condition_on_instruments: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    SelfNormalized,
    Bootstrap,
    TwoStepHybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub pi: f64,
    pub method: MethodChoice,
    pub draws: usize,
    pub seed: u64,
    pub multiplier: Multiplier,
    pub instruments: InstrumentSpec,
    pub directions: DirectionConfig,
    /// Cap for `+inf` support moments; absent drops the affected moments.
    pub cap: Option<f64>,
    pub sign: SignConvention,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            pi: 0.05,
            method: MethodChoice::SelfNormalized,
            draws: 500,
            seed: 0,
            multiplier: Multiplier::Gaussian,
            instruments: InstrumentSpec::hypercube(1, 2),
            directions: DirectionConfig::default(),
            cap: Some(1e6),
            sign: SignConvention::Violation,
        }
    }
}

impl InferConfig {
    pub fn method(&self, seed: Option<u64>) -> CriticalValueMethod {
        match self.method {
            MethodChoice::SelfNormalized => CriticalValueMethod::SelfNormalized,
            MethodChoice::Bootstrap => CriticalValueMethod::MultiplierBootstrap(BootstrapOptions {
                draws: self.draws,
                seed: seed.unwrap_or(self.seed),
                multiplier: self.multiplier,
            }),
            MethodChoice::TwoStepHybrid => CriticalValueMethod::TwoStepHybrid,
        }
    }

    pub fn infinite(&self) -> InfinitePolicy {
        self.cap.map_or(InfinitePolicy::Drop, InfinitePolicy::Cap)
    }
}

/// Which market the equilibrium-object intervals are computed at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarketSelector {
    /// `"median"`: componentwise medians of shares, prices and
    /// characteristics.
    Named(String),
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub market: MarketSelector,
    pub s0_points: usize,
    /// Labels such as `E11`, `E12`, `M1`, `D12`, `S1`; all when absent.
    pub objects: Option<Vec<String>>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            market: MarketSelector::Named("median".into()),
            s0_points: 41,
            objects: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub draws: usize,
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub method: CounterexampleMethod,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        CounterexampleConfig {
            draws: 100_000,
            seed: 0,
            lo: 0.05,
            hi: 0.6,
            points: 56,
            method: CounterexampleMethod::default(),
        }
    }
}
