//! Built-in market settings and honesty scenarios.

use crate::config::{ClientGenerator, ClientsConfig, ScenarioConfig};
use crate::market::{CostModel, HonestyPolicy, ProviderSpec};
use crate::scalar::{num, Scalar};

/// Three providers, fifty clients.
///
/// Capacities work out to [240, 432, 360] Mbps with marginal costs
/// [19.68, 38.68, 28.73] per Mbps.
pub fn setting1<S: Scalar>() -> ScenarioConfig<S> {
    build(&[(30.0, 8.0, 19.68), (48.0, 9.0, 38.68), (60.0, 6.0, 28.73)], 50)
}

/// Six providers, one hundred clients.
///
/// Capacities [240, 432, 360, 245, 300, 189] Mbps with marginal costs
/// [19.68, 38.68, 28.73, 9.79, 14.18, 6.97] per Mbps.
pub fn setting2<S: Scalar>() -> ScenarioConfig<S> {
    build(
        &[
            (30.0, 8.0, 19.68),
            (48.0, 9.0, 38.68),
            (60.0, 6.0, 28.73),
            (49.0, 5.0, 9.79),
            (75.0, 4.0, 14.18),
            (27.0, 7.0, 6.97),
        ],
        100,
    )
}

/// Preset by name as used on the command line.
pub fn by_name<S: Scalar>(name: &str) -> Option<ScenarioConfig<S>> {
    match name {
        "setting1" => Some(setting1()),
        "setting2" => Some(setting2()),
        _ => None,
    }
}

/// Default behaviour-switch cycle for a named preset (used by the
/// behaviour-change scenario when no switch is given explicitly).
pub fn default_switch_pcc(preset: &str) -> Option<u32> {
    match preset {
        "setting1" => Some(32),
        "setting2" => Some(15),
        _ => None,
    }
}

fn build<S: Scalar>(rows: &[(f64, f64, f64)], clients: usize) -> ScenarioConfig<S> {
    let providers = rows
        .iter()
        .enumerate()
        .map(|(j, &(spectrum, efficiency, mc))| {
            ProviderSpec::new(
                j,
                num(spectrum),
                num(efficiency),
                CostModel::Constant { marginal: num(mc) },
                HonestyPolicy::AlwaysHonest,
            )
            .expect("preset providers are valid")
        })
        .collect();
    ScenarioConfig {
        providers,
        clients: ClientsConfig::Generate(ClientGenerator {
            count: clients,
            ..ClientGenerator::default()
        }),
        mechanism: Default::default(),
        loops: Default::default(),
        initial_cap_range: (num(0.3), num(0.5)),
        seed: 0,
        workers: None,
    }
}

/// Honesty-policy assignment over a provider set.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// Every provider honest.
    AllHonest,
    /// Provider 0 honest, everyone else at the ceiling.
    OneHonest,
    /// Providers 0 and 1 honest; provider 1 turns unfair after `switch_pcc`.
    BehaviorChange { switch_pcc: u32 },
    /// Provider 0 honest with probability `sigma` each cycle (or honest up to
    /// `switch_pcc` and never after, when a switch is given with sigma 0);
    /// everyone else at the ceiling.
    Probabilistic {
        sigma: f64,
        switch_pcc: Option<u32>,
    },
}

impl Scenario {
    /// Scenario by CLI name; `custom` means "leave the config alone" and maps
    /// to `None`.
    pub fn from_name(
        name: &str,
        sigma: Option<f64>,
        switch_pcc: Option<u32>,
    ) -> Result<Option<Scenario>, String> {
        match name {
            "custom" => Ok(None),
            "scenario1-all-honest" => Ok(Some(Scenario::AllHonest)),
            "scenario2-one-honest" => Ok(Some(Scenario::OneHonest)),
            "scenario3-behavior-change" => {
                let switch_pcc = switch_pcc.ok_or_else(|| {
                    "scenario3-behavior-change needs --switch-pcc (presets have defaults)"
                        .to_string()
                })?;
                Ok(Some(Scenario::BehaviorChange { switch_pcc }))
            }
            "scenario4-probabilistic" => {
                let sigma = sigma
                    .ok_or_else(|| "scenario4-probabilistic needs --sigma".to_string())?;
                if !(0.0..=1.0).contains(&sigma) {
                    return Err("sigma must lie in [0, 1]".into());
                }
                Ok(Some(Scenario::Probabilistic { sigma, switch_pcc }))
            }
            other => Err(format!(
                "unknown scenario `{other}` (expected scenario1-all-honest, \
                 scenario2-one-honest, scenario3-behavior-change, \
                 scenario4-probabilistic, or custom)"
            )),
        }
    }

    /// Overwrite the honesty policies in `config` according to the scenario.
    pub fn apply<S: Scalar>(&self, config: &mut ScenarioConfig<S>) {
        let n = config.providers.len();
        for (j, provider) in config.providers.iter_mut().enumerate() {
            provider.honesty = match self {
                Scenario::AllHonest => HonestyPolicy::AlwaysHonest,
                Scenario::OneHonest => {
                    if j == 0 {
                        HonestyPolicy::AlwaysHonest
                    } else {
                        HonestyPolicy::AlwaysUnfair
                    }
                }
                Scenario::BehaviorChange { switch_pcc } => match j {
                    0 => HonestyPolicy::AlwaysHonest,
                    1 if n > 1 => HonestyPolicy::HonestUntilPcc {
                        switch_pcc: *switch_pcc,
                        then: Box::new(HonestyPolicy::AlwaysUnfair),
                    },
                    _ => HonestyPolicy::AlwaysUnfair,
                },
                Scenario::Probabilistic { sigma, switch_pcc } => {
                    if j == 0 {
                        match (switch_pcc, *sigma == 0.0) {
                            (Some(k), true) => HonestyPolicy::HonestUntilPcc {
                                switch_pcc: *k,
                                then: Box::new(HonestyPolicy::AlwaysUnfair),
                            },
                            _ => HonestyPolicy::HonestWithProb { sigma: num(*sigma) },
                        }
                    } else {
                        HonestyPolicy::AlwaysUnfair
                    }
                }
            };
        }
    }
}
