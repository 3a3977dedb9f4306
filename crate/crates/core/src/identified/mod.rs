//! Sharp identified set for `theta` when the outside share is only known to
//! lie in `S_0`.
//!
//! `theta` belongs to the set iff for every unit direction `v` and almost
//! every instrument value `z`,
//! `E[ sup_{s_0 in S_0} v'(sigma^{-1}((s_0, s_tilde (1 - s_0)); lambda) - (beta'x - alpha p)) | z ] >= 0`.
//! Directions are discretized by a [`DirectionSet`] and `z` by a
//! [`CellGrouping`] of exact instrument values.

mod bounds;
mod directions;
mod moments;
mod support;

pub use bounds::{equilibrium_bounds, s0_points, shock_set, ObjectInterval, ShockSetSample};
pub use directions::{Direction, DirectionGenerator, DirectionSet, DirectionTag};
pub use moments::{CellGrouping, Membership, SliceMoments, Slack, WorstMoment};
pub use support::{
    direction_terms, residual, support_moment, Interpolation, SupportMomentResult, SupportOptions, SupportProfile,
};

use log::info;
use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{GridPoint, GridResult};
use crate::model::{Dataset, MixingSpec, OutsideShareSet, ParamTheta, ThetaGrid};

/// Everything besides the data and `theta` that defines the inequalities.
#[derive(Clone, Debug)]
pub struct Identification {
    pub mixing: MixingSpec,
    pub s0set: OutsideShareSet,
    pub directions: DirectionSet,
    pub grouping: CellGrouping,
    pub slack: Slack,
    pub support: SupportOptions,
}

impl Identification {
    /// Default directions, one cell per distinct instrument value and
    /// two-standard-error slack.
    pub fn new(dataset: &Dataset, mixing: MixingSpec, s0set: OutsideShareSet) -> Self {
        Identification {
            mixing,
            s0set,
            directions: DirectionSet::default_for(dataset.n_products(), 0),
            grouping: CellGrouping::from_instruments(dataset),
            slack: Slack::default(),
            support: SupportOptions::default(),
        }
    }

    pub fn with_directions(mut self, directions: DirectionSet) -> Self {
        self.directions = directions;
        self
    }

    pub fn with_grouping(mut self, grouping: CellGrouping) -> Self {
        self.grouping = grouping;
        self
    }

    pub fn with_slack(mut self, slack: Slack) -> Self {
        self.slack = slack;
        self
    }

    pub fn with_support(mut self, support: SupportOptions) -> Self {
        self.support = support;
        self
    }

    /// `delta(s_0)` profiles of every market at `lambda`.
    pub fn profiles(&self, dataset: &Dataset, lambda: &[f64]) -> Result<Vec<SupportProfile>> {
        self.s0set.validate()?;
        self.slack.validate()?;
        dataset
            .markets()
            .par_iter()
            .map(|m| SupportProfile::build(m, lambda, &self.mixing, &self.s0set, &self.support))
            .collect()
    }

    pub fn slice(&self, dataset: &Dataset, lambda: &[f64]) -> Result<SliceMoments> {
        let profiles = self.profiles(dataset, lambda)?;
        SliceMoments::compute(&profiles, dataset, &self.directions, &self.grouping)
    }

    /// Cell means `[direction][cell]` of the support moment; `+inf` marks
    /// pairs with a divergent market.
    pub fn moment_table(&self, dataset: &Dataset, theta: &ParamTheta) -> Result<Vec<Vec<f64>>> {
        Ok(self.slice(dataset, &theta.lambda)?.means(theta.alpha, &theta.beta))
    }

    pub fn membership(&self, dataset: &Dataset, theta: &ParamTheta) -> Result<Membership> {
        let slice = self.slice(dataset, &theta.lambda)?;
        Ok(Membership::from_worst(slice.worst(theta.alpha, &theta.beta, self.slack)))
    }

    /// Membership at every grid point. Profiles are computed once per
    /// `lambda` and reused for all `(alpha, beta)`.
    pub fn compute(&self, dataset: &Dataset, grid: &ThetaGrid) -> Result<GridResult> {
        let linear = grid.linear_points();
        let lambdas = grid.lambda_points();
        let mut points = Vec::with_capacity(grid.len());
        for (i, lambda) in lambdas.iter().enumerate() {
            let slice = self.slice(dataset, lambda)?;
            let slack = self.slack;
            let chunk: Vec<GridPoint> = linear
                .par_iter()
                .map(|(alpha, beta)| {
                    let m = Membership::from_worst(slice.worst(*alpha, beta, slack));
                    GridPoint {
                        theta: ParamTheta::new(*alpha, beta.clone(), lambda.clone()),
                        member: m.member,
                        min_moment: m.margin(),
                        statistic: None,
                        critical_value: None,
                    }
                })
                .collect();
            info!(
                "lambda slice {}/{} {:?}: {} members",
                i + 1,
                lambdas.len(),
                lambda,
                chunk.iter().filter(|p| p.member).count()
            );
            points.extend(chunk);
        }
        Ok(GridResult::new(grid.coordinate_names(), points))
    }
}

/// Cell means of the support moment, `[direction][cell]`.
pub fn conditional_moment_table(dataset: &Dataset, theta: &ParamTheta, setup: &Identification) -> Result<Vec<Vec<f64>>> {
    setup.moment_table(dataset, theta)
}

pub fn membership(theta: &ParamTheta, dataset: &Dataset, setup: &Identification) -> Result<Membership> {
    setup.membership(dataset, theta)
}

pub fn compute_identified_set(grid: &ThetaGrid, dataset: &Dataset, setup: &Identification) -> Result<GridResult> {
    setup.compute(dataset, grid)
}
