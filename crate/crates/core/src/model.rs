//! Domain types shared by every other module: markets, datasets, parameters,
//! mixing specifications, outside-share sets and parameter grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(inside_shares) == 1`.
pub const SHARE_SUM_TOL: f64 = 1e-12;

/// One market: conditional inside shares, characteristics, prices and
/// instruments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketObservation {
    pub market_id: String,
    /// Conditional inside shares `s_j / (1 - s_0)`.
    pub inside_shares: Vec<f64>,
    /// Row-major `J x d_x` characteristics.
    pub x: Vec<f64>,
    pub prices: Vec<f64>,
    pub instruments: Vec<f64>,
    /// Proposed outside share, used as the center of band-type outside-share
    /// sets. Not needed for agnostic sets.
    pub outside_share: Option<f64>,
}

impl MarketObservation {
    pub fn new(
        market_id: impl Into<String>,
        inside_shares: Vec<f64>,
        x: Vec<f64>,
        prices: Vec<f64>,
        instruments: Vec<f64>,
    ) -> Result<Self> {
        let market = MarketObservation {
            market_id: market_id.into(),
            inside_shares,
            x,
            prices,
            instruments,
            outside_share: None,
        };
        market.validate()?;
        Ok(market)
    }

    pub fn with_outside_share(mut self, s0: f64) -> Result<Self> {
        if !(s0 > 0.0 && s0 < 1.0) {
            return Err(Error::invalid("outside share", format!("{s0} not in (0, 1)")));
        }
        self.outside_share = Some(s0);
        Ok(self)
    }

    pub fn n_products(&self) -> usize {
        self.inside_shares.len()
    }

    pub fn n_chars(&self) -> usize {
        if self.inside_shares.is_empty() {
            0
        } else {
            self.x.len() / self.inside_shares.len()
        }
    }

    /// Characteristics of product `j`.
    pub fn x_row(&self, j: usize) -> &[f64] {
        let d = self.n_chars();
        &self.x[j * d..(j + 1) * d]
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.inside_shares.len();
        let loc = || format!("market {}", self.market_id);
        if j < 2 {
            return Err(Error::data(loc(), "at least two inside products are required"));
        }
        if self.prices.len() != j {
            return Err(Error::DimensionMismatch {
                what: "prices",
                expected: j,
                actual: self.prices.len(),
            });
        }
        if self.x.len() % j != 0 {
            return Err(Error::data(loc(), "characteristics are not a J x d_x matrix"));
        }
        for &s in &self.inside_shares {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::data(loc(), format!("inside share {s} not in (0, 1)")));
            }
        }
        let total: f64 = self.inside_shares.iter().sum();
        if (total - 1.0).abs() > SHARE_SUM_TOL {
            return Err(Error::data(loc(), format!("inside shares sum to {total}")));
        }
        if self
            .x
            .iter()
            .chain(&self.prices)
            .chain(&self.instruments)
            .any(|v| !v.is_finite())
        {
            return Err(Error::data(loc(), "non-finite characteristic, price or instrument"));
        }
        Ok(())
    }
}

/// Markets sharing `(J, d_x, d_z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    markets: Vec<MarketObservation>,
    n_products: usize,
    n_chars: usize,
    n_instruments: usize,
    /// Per-market total of the raw input shares, when they were renormalized.
    renormalization: Vec<Option<f64>>,
}

impl Dataset {
    pub fn new(markets: Vec<MarketObservation>) -> Result<Self> {
        let n = markets.len();
        Self::with_renormalization(markets, vec![None; n])
    }

    pub(crate) fn with_renormalization(
        markets: Vec<MarketObservation>,
        renormalization: Vec<Option<f64>>,
    ) -> Result<Self> {
        let first = markets
            .first()
            .ok_or_else(|| Error::data("dataset", "no markets"))?;
        let (j, dx, dz) = (first.n_products(), first.n_chars(), first.instruments.len());
        for m in &markets {
            m.validate()?;
            if m.n_products() != j || m.n_chars() != dx || m.instruments.len() != dz {
                return Err(Error::data(
                    format!("market {}", m.market_id),
                    format!(
                        "dimensions ({}, {}, {}) differ from ({j}, {dx}, {dz})",
                        m.n_products(),
                        m.n_chars(),
                        m.instruments.len()
                    ),
                ));
            }
        }
        Ok(Dataset {
            markets,
            n_products: j,
            n_chars: dx,
            n_instruments: dz,
            renormalization,
        })
    }

    pub fn markets(&self) -> &[MarketObservation] {
        &self.markets
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    pub fn n_products(&self) -> usize {
        self.n_products
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn n_instruments(&self) -> usize {
        self.n_instruments
    }

    /// Raw inside-share totals for markets whose shares were rescaled on load.
    pub fn renormalization(&self) -> &[Option<f64>] {
        &self.renormalization
    }

    /// Subset of markets by index, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let markets = indices.iter().map(|&i| self.markets[i].clone()).collect();
        let renorm = indices.iter().map(|&i| self.renormalization[i]).collect();
        Dataset::with_renormalization(markets, renorm)
    }
}

/// Structural parameter `(alpha, beta, lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTheta {
    /// Mean price distaste.
    pub alpha: f64,
    /// Mean tastes for the non-price characteristics.
    pub beta: Vec<f64>,
    /// Standard deviations of the random coefficients.
    pub lambda: Vec<f64>,
}

impl ParamTheta {
    pub fn new(alpha: f64, beta: Vec<f64>, lambda: Vec<f64>) -> Self {
        ParamTheta {
            alpha,
            beta,
            lambda,
        }
    }

    /// `beta' x_j - alpha p_j` for every product.
    pub fn linear_utility(&self, market: &MarketObservation) -> Vec<f64> {
        (0..market.n_products())
            .map(|j| dot(&self.beta, market.x_row(j)) - self.alpha * market.prices[j])
            .collect()
    }

    /// Flattened `(alpha, beta.., lambda..)`.
    pub fn coordinates(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(1 + self.beta.len() + self.lambda.len());
        c.push(self.alpha);
        c.extend_from_slice(&self.beta);
        c.extend_from_slice(&self.lambda);
        c
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingFamily {
    /// Random coefficients degenerate at zero (plain logit).
    Degenerate,
    /// Independent normal random coefficients.
    GaussianIndependent,
}

/// Which coefficient a `lambda` entry scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomCoefficient {
    /// Random taste on characteristic `k` (the `zeta_k` term).
    Characteristic(usize),
    /// Random price sensitivity (the `nu` term).
    Price,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    GaussHermite,
    /// Equally spaced nodes on `[-6, 6]` standard deviations with normal
    /// density weights; accurate for integrands with sharp transitions.
    Trapezoid,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    /// Nodes per random dimension (Gauss-Hermite, trapezoid) or total draws
    /// (Monte Carlo).
    pub nodes: usize,
    pub seed: u64,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule {
            kind: QuadratureKind::GaussHermite,
            nodes: 15,
            seed: 0,
        }
    }
}

/// Law of the random coefficients `(zeta, nu)` up to `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub family: MixingFamily,
    /// `pattern[i]` is the coefficient whose standard deviation is `lambda[i]`.
    pub pattern: Vec<RandomCoefficient>,
    pub quadrature: QuadratureRule,
}

impl MixingSpec {
    pub fn degenerate() -> Self {
        MixingSpec {
            family: MixingFamily::Degenerate,
            pattern: Vec::new(),
            quadrature: QuadratureRule::default(),
        }
    }

    /// Single normal random coefficient on price, `nu ~ N(0, lambda^2)`.
    pub fn price_only(nodes: usize) -> Self {
        MixingSpec {
            family: MixingFamily::GaussianIndependent,
            pattern: vec![RandomCoefficient::Price],
            quadrature: QuadratureRule {
                nodes,
                ..QuadratureRule::default()
            },
        }
    }

    pub fn gaussian(pattern: Vec<RandomCoefficient>, quadrature: QuadratureRule) -> Self {
        MixingSpec {
            family: MixingFamily::GaussianIndependent,
            pattern,
            quadrature,
        }
    }

    pub fn n_lambda(&self) -> usize {
        match self.family {
            MixingFamily::Degenerate => 0,
            MixingFamily::GaussianIndependent => self.pattern.len(),
        }
    }
}

/// Where the center of a band (or the singleton value) comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterSource {
    /// Each market's `outside_share` field.
    PerMarket,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutsideShareKind {
    /// `(0, 1)`.
    Agnostic,
    /// `(c - half_width, c + half_width) ∩ (0, 1)`.
    Band { center: CenterSource, half_width: f64 },
    Singleton { center: CenterSource },
}

/// The set `S_0` restricting the unobserved outside share, always clipped to
/// `[clip, 1 - clip]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutsideShareSet {
    pub kind: OutsideShareKind,
    pub clip: f64,
}

pub const DEFAULT_CLIP: f64 = 1e-4;

impl OutsideShareSet {
    pub fn agnostic() -> Self {
        OutsideShareSet {
            kind: OutsideShareKind::Agnostic,
            clip: DEFAULT_CLIP,
        }
    }

    pub fn band(half_width: f64) -> Self {
        OutsideShareSet {
            kind: OutsideShareKind::Band {
                center: CenterSource::PerMarket,
                half_width,
            },
            clip: DEFAULT_CLIP,
        }
    }

    pub fn singleton() -> Self {
        OutsideShareSet {
            kind: OutsideShareKind::Singleton {
                center: CenterSource::PerMarket,
            },
            clip: DEFAULT_CLIP,
        }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_center(mut self, center: CenterSource) -> Self {
        match &mut self.kind {
            OutsideShareKind::Agnostic => {}
            OutsideShareKind::Band { center: c, .. } | OutsideShareKind::Singleton { center: c } => {
                *c = center
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip <= 0.01) {
            return Err(Error::invalid("outside-share clip", format!("{} not in (0, 0.01]", self.clip)));
        }
        if let OutsideShareKind::Band { half_width, .. } = self.kind {
            if !(half_width > 0.0 && half_width.is_finite()) {
                return Err(Error::invalid("band half-width", format!("{half_width}")));
            }
        }
        Ok(())
    }

    pub fn is_singleton(&self) -> bool {
        matches!(self.kind, OutsideShareKind::Singleton { .. })
    }

    /// Effective closed interval `[lo, hi]` for a market; `lo == hi` for
    /// singletons.
    pub fn interval(&self, market: &MarketObservation) -> Result<(f64, f64)> {
        self.validate()?;
        let (lo_clip, hi_clip) = (self.clip, 1.0 - self.clip);
        let center = |c: CenterSource| -> Result<f64> {
            let v = match c {
                CenterSource::Fixed(v) => v,
                CenterSource::PerMarket => market.outside_share.ok_or_else(|| {
                    Error::data(
                        format!("market {}", market.market_id),
                        "outside-share set needs a per-market center but none is recorded",
                    )
                })?,
            };
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid("outside-share center", format!("{v}")));
            }
            Ok(v)
        };
        match self.kind {
            OutsideShareKind::Agnostic => Ok((lo_clip, hi_clip)),
            OutsideShareKind::Band { center: c, half_width } => {
                let c = center(c)?;
                let lo = (c - half_width).max(lo_clip);
                let hi = (c + half_width).min(hi_clip);
                if lo >= hi {
                    return Err(Error::invalid("outside-share band", format!("empty interval [{lo}, {hi}]")));
                }
                Ok((lo, hi))
            }
            OutsideShareKind::Singleton { center: c } => {
                let c = center(c)?.clamp(lo_clip, hi_clip);
                Ok((c, c))
            }
        }
    }

    /// Whether the lower (upper) end of the interval sits at the clip, i.e.
    /// the true set extends to 0 (1).
    pub fn clipped_ends(&self, lo: f64, hi: f64) -> (bool, bool) {
        let eps = 1e-15;
        (lo <= self.clip + eps, hi >= 1.0 - self.clip - eps)
    }
}

/// One coordinate of a parameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Frozen(f64),
    Range { lo: f64, hi: f64, points: usize },
}

impl Axis {
    /// Inclusive range with the given step; `hi` is reached up to rounding.
    pub fn stepped(lo: f64, hi: f64, step: f64) -> Result<Axis> {
        if !(step > 0.0 && hi > lo) {
            return Err(Error::invalid("grid axis", format!("lo={lo} hi={hi} step={step}")));
        }
        let points = ((hi - lo) / step).round() as usize + 1;
        Axis::range(lo, lo + step * (points - 1) as f64, points)
    }

    pub fn range(lo: f64, hi: f64, points: usize) -> Result<Axis> {
        if points < 2 {
            return Err(Error::invalid("grid axis", "resolution must be at least 2"));
        }
        if !(hi > lo) {
            return Err(Error::invalid("grid axis", format!("empty range [{lo}, {hi}]")));
        }
        Ok(Axis::Range { lo, hi, points })
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            Axis::Frozen(v) => vec![v],
            Axis::Range { lo, hi, points } => {
                let step = (hi - lo) / (points - 1) as f64;
                (0..points).map(|i| lo + step * i as f64).collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Axis::Frozen(_) => 1,
            Axis::Range { points, .. } => *points,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Axis::Frozen(v) => (v, v),
            Axis::Range { lo, hi, .. } => (lo, hi),
        }
    }
}

/// Box grid over `(alpha, beta.., lambda..)`.
///
/// Points are enumerated with `lambda` outermost, then `alpha`, then `beta`
/// (last `beta` coordinate fastest), so all points sharing a `lambda` are
/// contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub alpha: Axis,
    pub beta: Vec<Axis>,
    pub lambda: Vec<Axis>,
}

impl ThetaGrid {
    pub fn new(alpha: Axis, beta: Vec<Axis>, lambda: Vec<Axis>) -> Self {
        ThetaGrid { alpha, beta, lambda }
    }

    pub fn dimension(&self) -> usize {
        1 + self.beta.len() + self.lambda.len()
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
            * self.beta.iter().map(Axis::len).product::<usize>()
            * self.lambda.iter().map(Axis::len).product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> Vec<Axis> {
        let mut a = vec![self.alpha];
        a.extend(self.beta.iter().copied());
        a.extend(self.lambda.iter().copied());
        a
    }

    /// Coordinate names in `coordinates()` order.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = vec!["alpha".to_string()];
        names.extend((1..=self.beta.len()).map(|k| format!("beta_{k}")));
        names.extend((1..=self.lambda.len()).map(|k| format!("lambda_{k}")));
        names
    }

    /// Distinct `lambda` vectors in enumeration order.
    pub fn lambda_points(&self) -> Vec<Vec<f64>> {
        cartesian(&self.lambda.iter().map(Axis::values).collect::<Vec<_>>())
    }

    /// `(alpha, beta)` pairs in enumeration order within one `lambda` slice.
    pub fn linear_points(&self) -> Vec<(f64, Vec<f64>)> {
        let betas = cartesian(&self.beta.iter().map(Axis::values).collect::<Vec<_>>());
        let mut out = Vec::with_capacity(self.alpha.len() * betas.len());
        for a in self.alpha.values() {
            for b in &betas {
                out.push((a, b.clone()));
            }
        }
        out
    }

    /// All grid points in enumeration order.
    pub fn points(&self) -> Vec<ParamTheta> {
        let linear = self.linear_points();
        let mut out = Vec::with_capacity(self.len());
        for lambda in self.lambda_points() {
            for (a, b) in &linear {
                out.push(ParamTheta::new(*a, b.clone(), lambda.clone()));
            }
        }
        out
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for values in axes {
        let mut next = Vec::with_capacity(out.len() * values.len());
        for prefix in &out {
            for &v in values {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}
