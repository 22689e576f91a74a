//! Domain types shared by all agents: cost models, provider and client specs.

use std::error::Error;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Errors from market-model operations and constructors.
#[derive(Debug, Clone, PartialEq)]
pub enum MarketError {
    /// A load was negative where only non-negative loads are defined.
    NegativeLoad { load: f64 },
    /// A spec field violates its invariant.
    InvalidParameter {
        name: &'static str,
        message: String,
    },
}

impl fmt::Display for MarketError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarketError::NegativeLoad { load } => {
                write!(f, "load must be non-negative, got {load}")
            }
            MarketError::InvalidParameter { name, message } => {
                write!(f, "invalid {name}: {message}")
            }
        }
    }
}

impl Error for MarketError {}

/// Provider cost structure.
///
/// `Constant` has flat marginal cost; `Quadratic` has total cost
/// `fixed + linear*l + curvature*l^2`, hence strictly increasing marginal
/// cost `linear + 2*curvature*l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostModel<S> {
    Constant { marginal: S },
    Quadratic { fixed: S, linear: S, curvature: S },
}

impl<S: Scalar> CostModel<S> {
    /// Quadratic model calibrated so that marginal cost at `capacity` equals
    /// `marginal_at_capacity` (the linear term is solved for).
    pub fn quadratic_with_capacity_marginal(
        fixed: S,
        curvature: S,
        capacity: S,
        marginal_at_capacity: S,
    ) -> Result<Self, MarketError> {
        let two = S::one() + S::one();
        let linear = marginal_at_capacity - two * curvature * capacity;
        let model = CostModel::Quadratic {
            fixed,
            linear,
            curvature,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        match *self {
            CostModel::Constant { marginal } => {
                if !(marginal > S::zero()) || !marginal.is_finite() {
                    return Err(MarketError::InvalidParameter {
                        name: "cost.marginal",
                        message: "constant marginal cost must be positive and finite".into(),
                    });
                }
            }
            CostModel::Quadratic {
                fixed,
                linear,
                curvature,
            } => {
                if !(fixed >= S::zero()) || !fixed.is_finite() {
                    return Err(MarketError::InvalidParameter {
                        name: "cost.fixed",
                        message: "fixed cost must be non-negative and finite".into(),
                    });
                }
                // linear > 0 keeps marginal cost positive on the whole range.
                if !(linear > S::zero()) || !linear.is_finite() {
                    return Err(MarketError::InvalidParameter {
                        name: "cost.linear",
                        message: "linear cost term must be positive and finite".into(),
                    });
                }
                if !(curvature > S::zero()) || !curvature.is_finite() {
                    return Err(MarketError::InvalidParameter {
                        name: "cost.curvature",
                        message: "curvature must be positive and finite".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Total cost of preparing `load` Mbps.
    pub fn total_cost(&self, load: S) -> Result<S, MarketError> {
        if load < S::zero() {
            return Err(MarketError::NegativeLoad {
                load: load.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(match *self {
            CostModel::Constant { marginal } => marginal * load,
            CostModel::Quadratic {
                fixed,
                linear,
                curvature,
            } => fixed + linear * load + curvature * load * load,
        })
    }

    /// Marginal cost at `load`: derivative of [`CostModel::total_cost`].
    pub fn marginal_cost(&self, load: S) -> Result<S, MarketError> {
        if load < S::zero() {
            return Err(MarketError::NegativeLoad {
                load: load.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(match *self {
            CostModel::Constant { marginal } => marginal,
            CostModel::Quadratic {
                linear, curvature, ..
            } => {
                let two = S::one() + S::one();
                linear + two * curvature * load
            }
        })
    }
}

/// How a provider decides to price in each pricing cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum HonestyPolicy<S> {
    /// Always prices at `min(marginal cost at capacity, ceiling)`.
    AlwaysHonest,
    /// Always prices at the ceiling.
    AlwaysUnfair,
    /// Honest with probability `sigma`, drawn independently per cycle.
    HonestWithProb { sigma: S },
    /// Honest through cycle `switch_pcc` (inclusive), then delegates.
    HonestUntilPcc {
        switch_pcc: u32,
        then: Box<HonestyPolicy<S>>,
    },
}

impl<S: Scalar> HonestyPolicy<S> {
    pub fn validate(&self) -> Result<(), MarketError> {
        match self {
            HonestyPolicy::AlwaysHonest | HonestyPolicy::AlwaysUnfair => Ok(()),
            HonestyPolicy::HonestWithProb { sigma } => {
                if *sigma >= S::zero() && *sigma <= S::one() {
                    Ok(())
                } else {
                    Err(MarketError::InvalidParameter {
                        name: "honesty.sigma",
                        message: "probability must lie in [0, 1]".into(),
                    })
                }
            }
            HonestyPolicy::HonestUntilPcc { then, .. } => then.validate(),
        }
    }

    /// Draw the honesty decision for pricing cycle `pcc` (1-based).
    pub fn is_honest<R: Rng>(&self, pcc: u32, rng: &mut R) -> bool {
        match self {
            HonestyPolicy::AlwaysHonest => true,
            HonestyPolicy::AlwaysUnfair => false,
            HonestyPolicy::HonestWithProb { sigma } => {
                rng.gen_bool(sigma.to_f64().expect("sigma convertible"))
            }
            HonestyPolicy::HonestUntilPcc { switch_pcc, then } => {
                if pcc <= *switch_pcc {
                    true
                } else {
                    then.is_honest(pcc, rng)
                }
            }
        }
    }
}

/// A wireless network provider: capacity, costs and pricing behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec<S> {
    pub id: usize,
    /// Allocated spectrum in MHz.
    pub spectrum: S,
    /// Technology efficiency in bps/Hz.
    pub efficiency: S,
    pub cost: CostModel<S>,
    pub honesty: HonestyPolicy<S>,
}

impl<S: Scalar> ProviderSpec<S> {
    pub fn new(
        id: usize,
        spectrum: S,
        efficiency: S,
        cost: CostModel<S>,
        honesty: HonestyPolicy<S>,
    ) -> Result<Self, MarketError> {
        let spec = ProviderSpec {
            id,
            spectrum,
            efficiency,
            cost,
            honesty,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.spectrum > S::zero()) || !self.spectrum.is_finite() {
            return Err(MarketError::InvalidParameter {
                name: "spectrum",
                message: "spectrum must be positive and finite".into(),
            });
        }
        if !(self.efficiency > S::zero()) || !self.efficiency.is_finite() {
            return Err(MarketError::InvalidParameter {
                name: "efficiency",
                message: "efficiency must be positive and finite".into(),
            });
        }
        self.cost.validate()?;
        self.honesty.validate()
    }

    /// Maximum bit-rate capacity in Mbps: spectrum (MHz) x efficiency (bps/Hz).
    pub fn capacity(&self) -> S {
        self.spectrum * self.efficiency
    }

    /// Marginal cost evaluated at full capacity.
    ///
    /// This is the quantity an honest provider prices at and the target the
    /// regulator is expected to discover.
    pub fn marginal_cost_at_capacity(&self) -> S {
        self.cost
            .marginal_cost(self.capacity())
            .expect("capacity is non-negative by construction")
    }
}

/// A client: per-cycle budget, bit-rate requirement, provider taste.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec<S> {
    pub id: usize,
    /// Budget per pricing cycle (currency).
    pub budget: S,
    /// Total required bit-rate per pricing cycle (Mbps).
    pub requirement: S,
    /// Initial provider weights, all positive, one per provider.
    pub initial_weights: Vec<S>,
    /// Suitable ratio of prices: the client's belief about each provider's
    /// fair price relative to the market mean price.
    pub srp: Vec<S>,
}

impl<S: Scalar> ClientSpec<S> {
    pub fn validate(&self, providers: usize) -> Result<(), MarketError> {
        if !(self.budget > S::zero()) || !self.budget.is_finite() {
            return Err(MarketError::InvalidParameter {
                name: "budget",
                message: "budget must be positive and finite".into(),
            });
        }
        if !(self.requirement > S::zero()) || !self.requirement.is_finite() {
            return Err(MarketError::InvalidParameter {
                name: "requirement",
                message: "requirement must be positive and finite".into(),
            });
        }
        if self.initial_weights.len() != providers || self.srp.len() != providers {
            return Err(MarketError::InvalidParameter {
                name: "initial_weights/srp",
                message: format!("expected one entry per provider ({providers})"),
            });
        }
        if self.initial_weights.iter().any(|w| !(*w > S::zero())) {
            return Err(MarketError::InvalidParameter {
                name: "initial_weights",
                message: "weights must be positive".into(),
            });
        }
        if self.srp.iter().any(|r| !(*r > S::zero())) {
            return Err(MarketError::InvalidParameter {
                name: "srp",
                message: "price ratios must be positive".into(),
            });
        }
        Ok(())
    }
}
