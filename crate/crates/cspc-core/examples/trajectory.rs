//! Scratch harness: print per-cycle trajectories for a preset/scenario.
//!
//! Usage: trajectory <setting1|setting2> <scenario1|scenario2|scenario3|scenario4> [sigma] [switch] [seed]

use cspc_core::engine::run_simulation;
use cspc_core::presets::{self, Scenario};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let preset = args.get(1).map(String::as_str).unwrap_or("setting1");
    let scen = args.get(2).map(String::as_str).unwrap_or("scenario1");
    let sigma: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let switch: u32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(18);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut cfg = presets::by_name::<f64>(preset).expect("preset");
    let scenario = match scen {
        "scenario1" => Scenario::AllHonest,
        "scenario2" => Scenario::OneHonest,
        "scenario3" => Scenario::BehaviorChange { switch_pcc: switch },
        "scenario4" => Scenario::Probabilistic {
            sigma,
            switch_pcc: if sigma == 0.0 { Some(switch) } else { None },
        },
        _ => panic!("unknown scenario"),
    };
    scenario.apply(&mut cfg);
    cfg.seed = seed;

    let mcs: Vec<f64> = cfg
        .providers
        .iter()
        .map(|p| p.marginal_cost_at_capacity())
        .collect();
    let caps: Vec<f64> = cfg.providers.iter().map(|p| p.capacity()).collect();
    println!("# mc={mcs:?} capacity={caps:?}");

    let trace = run_simulation(cfg).unwrap();
    println!("# pcc | prices | caps | loads | prbs | cond | honest | sae | meanp | bais");
    for r in &trace.records {
        let cond: String = r
            .conditions
            .iter()
            .map(|c| match c {
                cspc_core::PccCondition::OverPriced => 'O',
                cspc_core::PccCondition::CapacityLimited => 'C',
                cspc_core::PccCondition::FairPriced => 'F',
            })
            .collect();
        let hon: String = r
            .honesty
            .iter()
            .map(|&h| if h { 'h' } else { 'u' })
            .collect();
        let ratios: Vec<String> = r
            .loads
            .iter()
            .zip(&r.prb_totals)
            .map(|(&l, &s)| {
                if s > 0.0 {
                    format!("{:7.4}", l / s)
                } else {
                    "   inf ".to_string()
                }
            })
            .collect();
        println!(
            "{:3} p={} c={} l={} s={} L/S=[{}] {} {} sae={:8.3} mp={:8.3} b={}",
            r.pcc,
            fmt(&r.prices),
            fmt(&r.caps),
            fmt(&r.loads),
            fmt(&r.prb_totals),
            ratios.join(","),
            cond,
            hon,
            r.sum_abs_error,
            r.mean_price,
            r.bai_count
        );
    }
}

fn fmt(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:7.2}")).collect();
    format!("[{}]", items.join(","))
}
