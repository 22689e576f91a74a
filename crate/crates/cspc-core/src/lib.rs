//! Deterministic market simulator for crowdsourced price-cap regulation.
//!
//! The model has three kinds of agents operating on nested time scales:
//!
//! - **Clients** hold a budget and a bit-rate requirement. Each pricing cycle
//!   they estimate what a fair price for every provider would be, adjust their
//!   provider weights accordingly, publish an ideal demand bundle (the
//!   "perfect request bundle", computed at the estimated fair prices and
//!   ignoring capacity), and then buy service over a sequence of allocation
//!   iterations by maximizing a CES utility subject to budget, requirement,
//!   and availability constraints.
//! - **Providers** sell bit-rate capacity (spectrum x technology efficiency).
//!   An honest provider prices at the lower of its marginal cost and the
//!   regulator's ceiling; an unfair one always prices at the ceiling.
//!   Oversubscribed providers admit requests by lottery.
//! - **The regulator** compares each provider's realized load against the
//!   crowdsourced ideal demand and moves that provider's price ceiling
//!   multiplicatively: rewarded when load covers the ideal request, pushed
//!   down (bounded by a penalty floor) when it does not.
//!
//! Everything is driven by a single 64-bit seed with split sub-streams per
//! client, provider, cycle, and lottery, so runs are bit-reproducible and
//! independent of worker count.
//!
//! The crate is generic over the scalar type (any [`scalar::Scalar`], i.e.
//! `f32` or `f64`); [`Real`] is the default concrete choice.

pub mod agents;
pub mod config;
pub mod engine;
pub mod market;
pub mod presets;
mod rng;
pub mod scalar;
pub mod solver;

pub use agents::PccCondition;
pub use config::{ClientsConfig, ConfigError, MechanismParams, ScenarioConfig};
pub use engine::{Engine, MarketState, PccRecord, SimTrace};
pub use market::{ClientSpec, CostModel, HonestyPolicy, MarketError, ProviderSpec};
pub use presets::Scenario;
pub use scalar::Scalar;
pub use solver::{DemandProblem, DemandSolution};

/// Default scalar type for simulations.
pub type Real = f64;
