//! Scenario configuration: providers, client population, mechanism
//! parameters, loop bounds. Loadable from JSON/TOML (handled by the CLI) and
//! fully validated with field-path error messages.

use std::error::Error;
use std::fmt;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::market::{ClientSpec, ProviderSpec};
use crate::rng::Streams;
use crate::scalar::{mean, num, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted path of the offending field, e.g. `mechanism.gamma`.
    pub path: String,
    /// The violated constraint, human-readable.
    pub constraint: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, constraint: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            constraint: constraint.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config at {}: {}", self.path, self.constraint)
    }
}

impl Error for ConfigError {}

/// Mechanism constants of the price-control loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "S: Scalar")]
pub struct MechanismParams<S> {
    /// Reward factor applied to providers whose load covers the crowdsourced
    /// ideal demand. Must exceed 1.
    pub xi: S,
    /// Penalty floor: a punished provider keeps at least this fraction of its
    /// price per cycle. In (0, 1).
    pub gamma: S,
    /// Weight-adjustment coefficient.
    pub beta: S,
    /// CES exponent; must exceed 1.
    pub ces_exponent: S,
    /// Lower bound keeping adjusted weights positive.
    pub weight_floor: S,
    /// Upper clamp on the load/ideal-demand adjustment ratio; an empty ideal
    /// demand maps to this value. Must be at least `xi`.
    pub ratio_clamp: S,
}

impl<S: Scalar> Default for MechanismParams<S> {
    fn default() -> Self {
        MechanismParams {
            xi: num(1.05),
            gamma: num(0.9),
            beta: num(2.0),
            ces_exponent: num(20.0),
            weight_floor: num(1e-6),
            ratio_clamp: num(2.0),
        }
    }
}

/// Outer/inner loop bounds: number of pricing cycles and the per-cycle limit
/// on allocation iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopBounds {
    pub pccs: u32,
    pub max_bais: u32,
}

impl Default for LoopBounds {
    fn default() -> Self {
        LoopBounds {
            pccs: 60,
            max_bais: 20,
        }
    }
}

/// Random client population parameters.
///
/// Requirements are drawn uniformly around a mean of
/// `demand_fraction * total capacity / count`, budgets as
/// `requirement * mean marginal cost * U(budget_factor_range)`, initial
/// weights i.i.d. uniform per provider, and the price-ratio belief as the
/// true marginal-cost ratio distorted by `U(-srp_tolerance, srp_tolerance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "S: Scalar")]
pub struct ClientGenerator<S> {
    pub count: usize,
    /// Aggregate mean demand as a fraction of aggregate capacity.
    pub demand_fraction: S,
    /// Relative spread of requirements around the mean requirement.
    pub requirement_range: (S, S),
    /// Budget as a multiple of the fair cost of the client's requirement.
    pub budget_factor_range: (S, S),
    /// Range of initial provider weights.
    pub weight_range: (S, S),
    /// Estimation tolerance of the price-ratio belief.
    pub srp_tolerance: S,
    /// Redraw the price-ratio distortion every cycle instead of once per
    /// client.
    pub resample_srp_each_pcc: bool,
}

impl<S: Scalar> Default for ClientGenerator<S> {
    fn default() -> Self {
        ClientGenerator {
            count: 50,
            demand_fraction: num(0.03),
            requirement_range: (num(0.5), num(1.5)),
            budget_factor_range: (num(0.45), num(0.95)),
            weight_range: (num(0.8), num(1.2)),
            srp_tolerance: num(0.1),
            resample_srp_each_pcc: true,
        }
    }
}

/// Client population: generated from distribution parameters or given
/// explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", bound = "S: Scalar")]
pub enum ClientsConfig<S> {
    Generate(ClientGenerator<S>),
    Explicit { clients: Vec<ClientSpec<S>> },
}

impl<S: Scalar> ClientsConfig<S> {
    pub fn count(&self) -> usize {
        match self {
            ClientsConfig::Generate(g) => g.count,
            ClientsConfig::Explicit { clients } => clients.len(),
        }
    }
}

/// Full configuration of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ScenarioConfig<S> {
    pub providers: Vec<ProviderSpec<S>>,
    pub clients: ClientsConfig<S>,
    #[serde(default)]
    pub mechanism: MechanismParams<S>,
    #[serde(default)]
    pub loops: LoopBounds,
    /// Initial price ceilings are drawn uniformly from this range times the
    /// mean marginal cost, per provider.
    #[serde(default = "default_initial_cap_range")]
    pub initial_cap_range: (S, S),
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for the per-client demand solves; `None` uses the
    /// global thread pool. Results are identical for any value.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_initial_cap_range<S: Scalar>() -> (S, S) {
    (num(0.3), num(0.5))
}

impl<S: Scalar> ScenarioConfig<S> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.providers.is_empty() {
            return Err(ConfigError::new("providers", "at least one provider required"));
        }
        for (j, p) in self.providers.iter().enumerate() {
            if p.id != j {
                return Err(ConfigError::new(
                    format!("providers[{j}].id"),
                    format!("must equal its position {j}"),
                ));
            }
            p.validate()
                .map_err(|e| ConfigError::new(format!("providers[{j}]"), e.to_string()))?;
        }

        let n = self.providers.len();
        match &self.clients {
            ClientsConfig::Generate(g) => {
                let path = "clients";
                if !(g.demand_fraction > S::zero()) {
                    return Err(ConfigError::new(
                        format!("{path}.demand_fraction"),
                        "must be positive",
                    ));
                }
                check_range(&g.requirement_range, &format!("{path}.requirement_range"))?;
                check_range(&g.budget_factor_range, &format!("{path}.budget_factor_range"))?;
                check_range(&g.weight_range, &format!("{path}.weight_range"))?;
                if !(g.srp_tolerance >= S::zero() && g.srp_tolerance < S::one()) {
                    return Err(ConfigError::new(
                        format!("{path}.srp_tolerance"),
                        "must lie in [0, 1)",
                    ));
                }
            }
            ClientsConfig::Explicit { clients } => {
                for (i, c) in clients.iter().enumerate() {
                    if c.id != i {
                        return Err(ConfigError::new(
                            format!("clients[{i}].id"),
                            format!("must equal its position {i}"),
                        ));
                    }
                    c.validate(n)
                        .map_err(|e| ConfigError::new(format!("clients[{i}]"), e.to_string()))?;
                }
            }
        }

        let m = &self.mechanism;
        if !(m.xi > S::one()) {
            return Err(ConfigError::new("mechanism.xi", "must be greater than 1"));
        }
        if !(m.gamma > S::zero() && m.gamma < S::one()) {
            return Err(ConfigError::new("mechanism.gamma", "must lie in (0, 1)"));
        }
        if !(m.beta > S::zero()) {
            return Err(ConfigError::new("mechanism.beta", "must be positive"));
        }
        if !(m.ces_exponent > S::one()) {
            return Err(ConfigError::new(
                "mechanism.ces_exponent",
                "must be greater than 1",
            ));
        }
        if !(m.weight_floor > S::zero()) {
            return Err(ConfigError::new("mechanism.weight_floor", "must be positive"));
        }
        if !(m.ratio_clamp >= m.xi) {
            return Err(ConfigError::new(
                "mechanism.ratio_clamp",
                "must be at least mechanism.xi",
            ));
        }

        if self.loops.pccs < 1 {
            return Err(ConfigError::new("loops.pccs", "must be at least 1"));
        }
        if self.loops.max_bais < 1 {
            return Err(ConfigError::new("loops.max_bais", "must be at least 1"));
        }

        let (lo, hi) = self.initial_cap_range;
        if !(lo > S::zero() && hi >= lo) {
            return Err(ConfigError::new(
                "initial_cap_range",
                "must satisfy 0 < lo <= hi",
            ));
        }

        if let Some(w) = self.workers {
            if w == 0 {
                return Err(ConfigError::new("workers", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Mean of the providers' marginal costs at capacity.
    pub fn mean_marginal_cost(&self) -> S {
        let mcs: Vec<S> = self
            .providers
            .iter()
            .map(|p| p.marginal_cost_at_capacity())
            .collect();
        mean(&mcs)
    }

    /// Materialize the client population (drawing from per-client seeded
    /// streams when generated).
    pub fn materialize_clients(&self) -> Vec<ClientSpec<S>> {
        match &self.clients {
            ClientsConfig::Explicit { clients } => clients.clone(),
            ClientsConfig::Generate(g) => {
                let streams = Streams::new(self.seed);
                let total_capacity = self
                    .providers
                    .iter()
                    .fold(S::zero(), |acc, p| acc + p.capacity());
                let mean_mc = self.mean_marginal_cost();
                let count = g.count.max(1);
                let mean_requirement =
                    g.demand_fraction * total_capacity / num::<S>(count as f64);
                (0..g.count)
                    .map(|i| {
                        let mut rng = streams.client_init(i);
                        let req_dist = Uniform::new_inclusive(
                            g.requirement_range.0 * mean_requirement,
                            g.requirement_range.1 * mean_requirement,
                        );
                        let budget_dist = Uniform::new_inclusive(
                            g.budget_factor_range.0,
                            g.budget_factor_range.1,
                        );
                        let weight_dist =
                            Uniform::new_inclusive(g.weight_range.0, g.weight_range.1);

                        let requirement = req_dist.sample(&mut rng);
                        let budget = requirement * mean_mc * budget_dist.sample(&mut rng);
                        let initial_weights: Vec<S> = self
                            .providers
                            .iter()
                            .map(|_| weight_dist.sample(&mut rng))
                            .collect();
                        let srp =
                            draw_srp(&self.providers, mean_mc, g.srp_tolerance, &mut rng);
                        ClientSpec {
                            id: i,
                            budget,
                            requirement,
                            initial_weights,
                            srp,
                        }
                    })
                    .collect()
            }
        }
    }
}

fn check_range<S: Scalar>(range: &(S, S), path: &str) -> Result<(), ConfigError> {
    if !(range.0 > S::zero() && range.1 >= range.0) {
        return Err(ConfigError::new(path, "must satisfy 0 < lo <= hi"));
    }
    Ok(())
}

/// Price-ratio belief: true marginal-cost ratio distorted by a uniform
/// relative error within the tolerance.
pub(crate) fn draw_srp<S: Scalar, R: rand::Rng>(
    providers: &[ProviderSpec<S>],
    mean_mc: S,
    tolerance: S,
    rng: &mut R,
) -> Vec<S> {
    let noise = Uniform::new_inclusive(-tolerance, tolerance);
    providers
        .iter()
        .map(|p| {
            let ratio = p.marginal_cost_at_capacity() / mean_mc;
            ratio * (S::one() + noise.sample(rng))
        })
        .collect()
}
