//! Strategy layers: client weighting/demand, provider pricing/allocation,
//! regulator classification and ceiling updates.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::market::{CostModel, MarketError, ProviderSpec};
use crate::scalar::{num, Scalar};
use crate::solver::{self, DemandProblem, DemandSolution};

/// A client's working view of one pricing cycle.
#[derive(Debug, Clone)]
pub struct ClientPccView<S> {
    /// Estimated fair price per provider (mean price x suitable ratio).
    pub fair_prices: Vec<S>,
    /// Weights after the per-cycle adjustment, floored at the weight floor.
    pub weights: Vec<S>,
    /// Budget left in the current cycle.
    pub remaining_budget: S,
    /// Bit-rate still required in the current cycle.
    pub remaining_requirement: S,
}

/// Regulator's reading of a provider's cycle, from load vs. crowdsourced
/// ideal demand vs. capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PccCondition {
    /// Load below ideal demand with capacity to spare: priced above fair.
    OverPriced,
    /// Load below ideal demand but the provider is sold out.
    CapacityLimited,
    /// Load covers the ideal demand: price accepted as fair.
    FairPriced,
}

impl fmt::Display for PccCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PccCondition::OverPriced => "over_priced",
            PccCondition::CapacityLimited => "capacity_limited",
            PccCondition::FairPriced => "fair_priced",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Client strategy
// ---------------------------------------------------------------------------

/// Fair-price estimate: mean announced price scaled by the client's
/// suitable ratio of prices.
pub fn estimate_fair_prices<S: Scalar>(
    mean_price: S,
    srp: &[S],
) -> Result<Vec<S>, MarketError> {
    if !(mean_price > S::zero()) {
        return Err(MarketError::InvalidParameter {
            name: "mean_price",
            message: "mean market price must be positive".into(),
        });
    }
    Ok(srp.iter().map(|&rho| mean_price * rho).collect())
}

/// Per-cycle weight adjustment: each weight moves with the relative gap
/// between the estimated fair price and the announced price,
/// `w_j = max(floor, w0_j * (1 + beta * (fair_j - p_j) / p_j))`.
pub fn adjust_weights<S: Scalar>(
    initial_weights: &[S],
    fair_prices: &[S],
    prices: &[S],
    beta: S,
    weight_floor: S,
) -> Vec<S> {
    initial_weights
        .iter()
        .zip(fair_prices)
        .zip(prices)
        .map(|((&w0, &fair), &p)| {
            let adjusted = w0 * (S::one() + beta * (fair - p) / p);
            adjusted.max(weight_floor)
        })
        .collect()
}

/// Perfect request bundle: the client's ideal demand at its estimated fair
/// prices, ignoring provider capacity. This is the crowdsourced signal.
pub fn prepare_prb<S: Scalar>(
    budget: S,
    requirement: S,
    fair_prices: &[S],
    weights: &[S],
    exponent: S,
) -> Result<DemandSolution<S>, solver::SolverError> {
    let n = fair_prices.len();
    let problem = DemandProblem::new(
        weights.to_vec(),
        exponent,
        fair_prices.to_vec(),
        budget,
        requirement,
        vec![S::infinity(); n],
    )?;
    Ok(solver::solve_demand(&problem))
}

/// Request bundle for one allocation iteration: ideal purchase at the
/// announced prices, limited by remaining budget, remaining requirement and
/// current provider availability.
pub fn prepare_request_bundle<S: Scalar>(
    view: &ClientPccView<S>,
    prices: &[S],
    available: &[S],
    exponent: S,
) -> Result<DemandSolution<S>, solver::SolverError> {
    let problem = DemandProblem::new(
        view.weights.clone(),
        exponent,
        prices.to_vec(),
        view.remaining_budget,
        view.remaining_requirement,
        available.to_vec(),
    )?;
    Ok(solver::solve_demand(&problem))
}

// ---------------------------------------------------------------------------
// Provider strategy
// ---------------------------------------------------------------------------

/// Announced price under the pricing rule: honest providers price at the
/// lower of marginal cost at capacity and the ceiling; unfair providers take
/// the ceiling.
pub fn announce_price<S: Scalar>(provider: &ProviderSpec<S>, ceiling: S, honest: bool) -> S {
    if honest {
        provider.marginal_cost_at_capacity().min(ceiling)
    } else {
        ceiling
    }
}

/// Grant requests against `available` capacity in lottery `order`.
///
/// Under-subscribed providers grant everything. Otherwise requests are
/// granted in full along the order until the next one no longer fits; that
/// one receives the residual capacity and everyone later receives zero.
/// Returns grants aligned with `requests`.
pub fn allocate<S: Scalar>(requests: &[S], available: S, order: &[usize]) -> Vec<S> {
    debug_assert_eq!(requests.len(), order.len());
    let total: S = requests.iter().fold(S::zero(), |acc, &r| acc + r);
    if total <= available {
        return requests.to_vec();
    }
    let mut grants = vec![S::zero(); requests.len()];
    let mut remaining = available;
    for &slot in order {
        if remaining <= S::zero() {
            break;
        }
        let granted = requests[slot].min(remaining);
        grants[slot] = granted;
        remaining = remaining - granted;
    }
    grants
}

/// Provider revenue for the cycle: sales minus the cost of preparing full
/// capacity (capacity cost is sunk whether or not it sells).
pub fn provider_profit<S: Scalar>(
    price: S,
    load: S,
    cost: &CostModel<S>,
    capacity: S,
) -> Result<S, MarketError> {
    if load < S::zero() || load > capacity * (S::one() + num::<S>(1e-12)) {
        return Err(MarketError::InvalidParameter {
            name: "load",
            message: "load must lie in [0, capacity]".into(),
        });
    }
    Ok(price * load - cost.total_cost(capacity)?)
}

// ---------------------------------------------------------------------------
// Regulator strategy
// ---------------------------------------------------------------------------

/// Classify a provider's cycle by comparing realized load, crowdsourced ideal
/// demand, and capacity.
pub fn classify<S: Scalar>(load: S, prb_total: S, capacity: S) -> PccCondition {
    if load >= prb_total {
        PccCondition::FairPriced
    } else if load >= capacity * (S::one() - num::<S>(1e-9)) {
        PccCondition::CapacityLimited
    } else {
        PccCondition::OverPriced
    }
}

/// Next-cycle price ceilings.
///
/// The adjustment rate is the load-to-ideal-demand ratio, clamped to
/// `[0, ratio_clamp]` (an empty ideal demand maps to the clamp). Providers
/// whose load covers the ideal demand are rewarded with an extra factor `xi`;
/// the rest are pushed down, but never below a fraction `gamma` of the
/// current price.
pub fn update_caps<S: Scalar>(
    prices: &[S],
    loads: &[S],
    prb_totals: &[S],
    xi: S,
    gamma: S,
    ratio_clamp: S,
) -> Vec<S> {
    prices
        .iter()
        .zip(loads)
        .zip(prb_totals)
        .map(|((&p, &load), &prb)| {
            let ratio = if prb > S::zero() {
                (load / prb).min(ratio_clamp)
            } else {
                ratio_clamp
            };
            if load >= prb {
                p * ratio * xi
            } else {
                p * ratio.max(gamma)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::HonestyPolicy;
    use approx::assert_relative_eq;

    #[test]
    fn fair_price_estimate() {
        let est = estimate_fair_prices(20.0, &[1.1, 0.9]).unwrap();
        assert_relative_eq!(est[0], 22.0, max_relative = 1e-12);
        assert_relative_eq!(est[1], 18.0, max_relative = 1e-12);

        let unit = estimate_fair_prices(7.5, &[1.0, 1.0, 1.0]).unwrap();
        assert!(unit.iter().all(|&p| p == 7.5));

        assert!(estimate_fair_prices(0.0, &[1.0]).is_err());
    }

    #[test]
    fn weights_fixed_point_when_estimates_match() {
        let w0 = [1.0, 2.0, 0.5];
        let p = [10.0, 20.0, 30.0];
        let w = adjust_weights(&w0, &p, &p, 2.0, 1e-6);
        assert_eq!(w, w0.to_vec());
    }

    #[test]
    fn weight_increase_and_floor() {
        let w = adjust_weights(&[1.0], &[22.0], &[20.0], 2.0, 1e-6);
        assert_relative_eq!(w[0], 1.2, max_relative = 1e-12);

        let floored = adjust_weights(&[1.0], &[10.0], &[40.0], 2.0, 1e-6);
        assert_eq!(floored[0], 1e-6);
    }

    #[test]
    fn weight_direction_under_single_deviant() {
        // One provider priced above marginal cost, the others at theirs:
        // its weight must fall and every other weight must rise.
        let mcs = [19.68, 38.68, 28.73];
        let delta = 5.0;
        let k = 1;
        let prices: Vec<f64> = mcs
            .iter()
            .enumerate()
            .map(|(j, &m)| if j == k { m + delta } else { m })
            .collect();
        let mean_price = prices.iter().sum::<f64>() / 3.0;
        let mean_mc = mcs.iter().sum::<f64>() / 3.0;
        let srp: Vec<f64> = mcs.iter().map(|&m| m / mean_mc).collect();
        let fair = estimate_fair_prices(mean_price, &srp).unwrap();
        let w0 = [1.0, 1.0, 1.0];
        let w = adjust_weights(&w0, &fair, &prices, 2.0, 1e-6);
        assert!(w[k] < w0[k]);
        for j in 0..3 {
            if j != k {
                assert!(w[j] > w0[j], "honest provider {j} should gain weight");
            }
        }
    }

    #[test]
    fn prb_examples() {
        // Symmetric: equal weights and prices, ample budget -> equal split.
        let sol = prepare_prb(1000.0, 9.0, &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 2.0).unwrap();
        for &x in &sol.bundle {
            assert_relative_eq!(x, 3.0, epsilon = 1e-9);
        }

        let skew = prepare_prb(10.0, f64::INFINITY, &[1.0, 1.0], &[4.0, 1.0], 2.0).unwrap();
        assert_relative_eq!(skew.bundle[0], 8.0, epsilon = 1e-8);
        assert_relative_eq!(skew.bundle[1], 2.0, epsilon = 1e-8);

        let broke = prepare_prb(0.0, 5.0, &[1.0, 1.0], &[1.0, 1.0], 2.0).unwrap();
        assert!(broke.bundle.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn request_bundle_examples() {
        let view = ClientPccView {
            fair_prices: vec![1.0, 1.0],
            weights: vec![4.0, 1.0],
            remaining_budget: 10.0,
            remaining_requirement: f64::INFINITY,
        };
        // Sold-out market: nothing to request.
        let sold_out = prepare_request_bundle(&view, &[1.0, 1.0], &[0.0, 0.0], 2.0).unwrap();
        assert!(sold_out.bundle.iter().all(|&x| x == 0.0));

        // Cap on the preferred provider pushes the rest of the budget over.
        let capped =
            prepare_request_bundle(&view, &[1.0, 1.0], &[3.0, f64::INFINITY], 2.0).unwrap();
        assert_relative_eq!(capped.bundle[0], 3.0, epsilon = 1e-8);
        assert_relative_eq!(capped.bundle[1], 7.0, epsilon = 1e-8);

        // With full availability this is exactly the ideal-demand problem.
        let free = prepare_request_bundle(
            &view,
            &[1.0, 1.0],
            &[f64::INFINITY, f64::INFINITY],
            2.0,
        )
        .unwrap();
        let prb = prepare_prb(10.0, f64::INFINITY, &[1.0, 1.0], &[4.0, 1.0], 2.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(free.bundle[j], prb.bundle[j], epsilon = 1e-10);
        }
    }

    fn provider(mc: f64, spectrum: f64, efficiency: f64) -> ProviderSpec<f64> {
        ProviderSpec::new(
            0,
            spectrum,
            efficiency,
            CostModel::Constant { marginal: mc },
            HonestyPolicy::AlwaysHonest,
        )
        .unwrap()
    }

    #[test]
    fn announced_price_rule() {
        let p = provider(19.68, 30.0, 8.0);
        assert_eq!(announce_price(&p, 50.0, true), 19.68);
        assert_eq!(announce_price(&p, 15.0, true), 15.0);
        assert_eq!(announce_price(&p, 41.05, false), 41.05);
    }

    #[test]
    fn allocation_under_subscribed() {
        let grants = allocate(&[2.0, 3.0], 10.0, &[0, 1]);
        assert_eq!(grants, vec![2.0, 3.0]);
    }

    #[test]
    fn allocation_lottery_walk() {
        // Order c2, c1, c3 with requests 6, 5, 4 against 10 units:
        // c2 granted in full, c1 gets the residual, c3 nothing.
        let requests = [6.0, 5.0, 4.0];
        let grants = allocate(&requests, 10.0, &[1, 0, 2]);
        assert_eq!(grants, vec![5.0, 5.0, 0.0]);
        let total: f64 = grants.iter().sum();
        assert_eq!(total, 10.0);
    }

    #[test]
    fn allocation_sold_out() {
        let grants = allocate(&[1.0, 2.0], 0.0, &[0, 1]);
        assert!(grants.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn profit_examples() {
        let cost = CostModel::Constant { marginal: 19.68 };
        let pi = provider_profit(20.0, 240.0, &cost, 240.0).unwrap();
        assert_relative_eq!(pi, 76.8, max_relative = 1e-9);

        let idle = provider_profit(20.0, 0.0, &cost, 240.0).unwrap();
        assert_relative_eq!(idle, -4723.2, max_relative = 1e-12);

        let breakeven: f64 = provider_profit(19.68, 240.0, &cost, 240.0).unwrap();
        assert!(breakeven.abs() < 1e-9);
    }

    #[test]
    fn profit_sign_at_or_above_marginal_cost() {
        let cost = CostModel::Constant { marginal: 12.0 };
        for price in [12.0, 12.5, 20.0] {
            let pi = provider_profit(price, 100.0, &cost, 100.0).unwrap();
            assert!(pi >= -1e-12);
        }
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify(100.0, 200.0, 240.0), PccCondition::OverPriced);
        assert_eq!(classify(240.0, 300.0, 240.0), PccCondition::CapacityLimited);
        assert_eq!(classify(200.0, 150.0, 240.0), PccCondition::FairPriced);
    }

    #[test]
    fn cap_update_branches() {
        let caps = update_caps(&[10.0], &[50.0], &[50.0], 1.05, 0.9, 2.0);
        assert_relative_eq!(caps[0], 10.5, max_relative = 1e-12);

        let punished = update_caps(&[10.0], &[100.0], &[200.0], 1.05, 0.9, 2.0);
        assert_relative_eq!(punished[0], 9.0, max_relative = 1e-12);

        let empty = update_caps(&[10.0], &[0.0], &[0.0], 1.05, 0.9, 2.0);
        assert_relative_eq!(empty[0], 21.0, max_relative = 1e-12);
    }

    #[test]
    fn cap_update_bounds() {
        // gamma * p <= next cap <= ratio_clamp * xi * p over a spread of inputs.
        let (xi, gamma, clamp) = (1.05, 0.9, 2.0);
        for &(load, prb) in &[
            (0.0, 100.0),
            (10.0, 100.0),
            (99.0, 100.0),
            (100.0, 100.0),
            (250.0, 100.0),
            (5.0, 0.0),
        ] {
            let next = update_caps(&[10.0], &[load], &[prb], xi, gamma, clamp)[0];
            assert!(next >= gamma * 10.0 - 1e-12, "load={load} prb={prb}");
            assert!(next <= clamp * xi * 10.0 + 1e-12, "load={load} prb={prb}");
        }
    }
}
