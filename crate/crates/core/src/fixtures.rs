//! Bundled cases: a two-bus toy, the six-bus desk case used by the acceptance suite, and a
//! 30-bus network for longer studies.

use crate::data::{
    period_labels, Branch, Bus, ErrorSampleMatrix, Generator, Microgrid, NetworkCase, ScenarioConfig, DEFAULT_DELTA_T,
};
use crate::error::Result;
use crate::experiments::synthetic_samples;

/// Quadratic energy cost of generators and microgrids, $/(MWh)².
pub const ENERGY_COST: f64 = 1.0;
/// Generator reserve cost, $/MWh.
pub const GENERATOR_RESERVE_COST: f64 = 15.0;
/// Microgrid reserve cost, $/MWh.
pub const MICROGRID_RESERVE_COST: f64 = 5.0;
pub const FLEX_RANGE: f64 = 3.0;
pub const RESERVE_SHARE: f64 = 0.5;
pub const VOLL: f64 = 1.0;

fn microgrid(id: &str, bus: usize) -> Microgrid {
    Microgrid {
        id: id.into(),
        bus,
        cost_quadratic: ENERGY_COST,
        cost_reserve: MICROGRID_RESERVE_COST,
        p_max: FLEX_RANGE,
        p_min: FLEX_RANGE,
        gamma: RESERVE_SHARE,
        voll: VOLL,
    }
}

fn generator(id: &str, bus: usize, capacity_mw: f64) -> Generator {
    Generator {
        id: id.into(),
        bus,
        cost_quadratic: ENERGY_COST,
        cost_reserve: GENERATOR_RESERVE_COST,
        capacity_mw,
    }
}

fn bus(id: u32, is_slack: bool, net_load: Vec<f64>) -> Bus {
    Bus { id, is_slack, net_load }
}

/// One generator bus feeding one microgrid over four periods.
pub fn two_bus() -> NetworkCase {
    NetworkCase {
        buses: vec![
            bus(1, true, vec![6.0, 7.0, 8.0, 7.0]),
            bus(2, false, vec![2.0, 2.5, 1.5, 2.0]),
        ],
        branches: vec![Branch {
            from: 0,
            to: 1,
            susceptance: 10.0,
            limit_mw: 20.0,
        }],
        generators: vec![generator("g1", 0, 40.0)],
        microgrids: vec![microgrid("mg1", 1)],
        reserve_req: vec![3.0; 4],
        period_labels: period_labels(4, DEFAULT_DELTA_T),
    }
}

/// Six buses in a star around the slack bus, which hosts the generator and a large
/// microgrid. The five feeder microgrids have rooftop surpluses that fill their lines
/// except in one or two periods each, so the lines shape when each can carry reserve.
pub fn desk() -> NetworkCase {
    const PEAK: f64 = 0.9;
    const TROUGH: f64 = -3.0;
    let profile =
        |peaks: &[usize]| -> Vec<f64> { (0..4).map(|t| if peaks.contains(&t) { PEAK } else { TROUGH }).collect() };
    let feeders: [&[usize]; 5] = [&[0], &[2], &[1], &[3], &[0, 1]];
    let mut buses = vec![bus(1, true, vec![18.0, 19.0, 20.0, 19.0])];
    let mut branches = Vec::new();
    for (k, peaks) in feeders.iter().enumerate() {
        buses.push(bus(k as u32 + 2, false, profile(peaks)));
        branches.push(Branch {
            from: 0,
            to: k + 1,
            susceptance: 10.0,
            limit_mw: 3.6,
        });
    }
    let mut microgrids: Vec<Microgrid> = (0..5).map(|k| microgrid(&format!("mg{}", k + 1), k + 1)).collect();
    microgrids.push(microgrid("mg6", 0));
    NetworkCase {
        buses,
        branches,
        generators: vec![generator("g1", 0, 80.0)],
        microgrids,
        reserve_req: vec![10.0; 4],
        period_labels: vec!["10:00".into(), "10:30".into(), "11:00".into(), "11:30".into()],
    }
}

/// Scenario settings matched to [`desk`]: delivery tolerance and error spread scaled to
/// a four-period horizon.
pub fn desk_config() -> ScenarioConfig {
    ScenarioConfig {
        radius: 1e-3,
        r_fup: 0.25,
        synthetic_spread: 0.4,
        ..ScenarioConfig::default()
    }
}

/// Training and test rows for [`desk`] drawn from the synthetic generator with `seed`.
pub fn desk_samples(seed: u64, cfg: &ScenarioConfig) -> Result<ErrorSampleMatrix> {
    synthetic_samples(&desk(), &ScenarioConfig { seed, ..cfg.clone() })
}

/// Branch list `(from, to, reactance, limit)` of the standard 30-bus test network.
const IEEE30_BRANCHES: [(u32, u32, f64, f64); 41] = [
    (1, 2, 0.0575, 130.0),
    (1, 3, 0.1652, 130.0),
    (2, 4, 0.1737, 65.0),
    (3, 4, 0.0379, 130.0),
    (2, 5, 0.1983, 130.0),
    (2, 6, 0.1763, 65.0),
    (4, 6, 0.0414, 90.0),
    (5, 7, 0.1160, 70.0),
    (6, 7, 0.0820, 130.0),
    (6, 8, 0.0420, 32.0),
    (6, 9, 0.2080, 65.0),
    (6, 10, 0.5560, 32.0),
    (9, 11, 0.2080, 65.0),
    (9, 10, 0.1100, 65.0),
    (4, 12, 0.2560, 65.0),
    (12, 13, 0.1400, 65.0),
    (12, 14, 0.2559, 32.0),
    (12, 15, 0.1304, 32.0),
    (12, 16, 0.1987, 32.0),
    (14, 15, 0.1997, 16.0),
    (16, 17, 0.1923, 16.0),
    (15, 18, 0.2185, 16.0),
    (18, 19, 0.1292, 16.0),
    (19, 20, 0.0680, 32.0),
    (10, 20, 0.2090, 32.0),
    (10, 17, 0.0845, 32.0),
    (10, 21, 0.0749, 32.0),
    (10, 22, 0.1499, 32.0),
    (21, 22, 0.0236, 32.0),
    (15, 23, 0.2020, 16.0),
    (22, 24, 0.1790, 16.0),
    (23, 24, 0.2700, 16.0),
    (24, 25, 0.3292, 16.0),
    (25, 26, 0.3800, 16.0),
    (25, 27, 0.2087, 16.0),
    (28, 27, 0.3960, 65.0),
    (27, 29, 0.4153, 16.0),
    (27, 30, 0.6027, 16.0),
    (29, 30, 0.4533, 16.0),
    (8, 28, 0.2000, 32.0),
    (6, 28, 0.0599, 32.0),
];

const IEEE30_GENERATORS: [(u32, f64); 6] = [(1, 80.0), (2, 80.0), (13, 40.0), (22, 50.0), (23, 30.0), (27, 55.0)];

/// 30-bus network over `n_t` half-hour periods. Each of the 24 buses without a generator
/// carries about 2 MW of net load and may host a microgrid; all 24 are listed, and
/// [`NetworkCase::with_players`] picks how many take part.
pub fn ieee30(n_t: usize) -> NetworkCase {
    let gen_buses: Vec<u32> = IEEE30_GENERATORS.iter().map(|g| g.0).collect();
    let mut buses = Vec::with_capacity(30);
    let mut microgrids = Vec::new();
    for id in 1..=30u32 {
        let idx = id as usize - 1;
        let load = if gen_buses.contains(&id) {
            vec![0.0; n_t]
        } else {
            let phase = id as f64 * 0.7;
            (0..n_t)
                .map(|t| 2.0 + 0.6 * (phase + t as f64 * std::f64::consts::PI / n_t.max(1) as f64).sin())
                .collect()
        };
        if !gen_buses.contains(&id) {
            microgrids.push(microgrid(&format!("mg{id}"), idx));
        }
        buses.push(bus(id, id == 1, load));
    }
    let branches = IEEE30_BRANCHES
        .iter()
        .map(|&(f, t, x, lim)| Branch {
            from: f as usize - 1,
            to: t as usize - 1,
            susceptance: 1.0 / x,
            limit_mw: lim,
        })
        .collect();
    let generators = IEEE30_GENERATORS
        .iter()
        .map(|&(b, cap)| generator(&format!("g{b}"), b as usize - 1, cap))
        .collect();
    let total: Vec<f64> = (0..n_t).map(|t| buses.iter().map(|b| b.net_load[t]).sum()).collect();
    NetworkCase {
        buses,
        branches,
        generators,
        microgrids,
        reserve_req: total.iter().map(|l| 0.3 * l).collect(),
        period_labels: period_labels(n_t, DEFAULT_DELTA_T),
    }
}

/// Looks a bundled case up by name.
pub fn by_name(name: &str) -> Option<NetworkCase> {
    match name {
        "two-bus" | "two_bus" => Some(two_bus()),
        "desk" => Some(desk()),
        "ieee30" => Some(ieee30(12)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_validate() {
        for c in [two_bus(), desk(), ieee30(12), ieee30(4)] {
            c.validate().unwrap();
        }
        assert_eq!(desk().microgrids.len(), 6);
        assert_eq!(ieee30(12).microgrids.len(), 24);
        assert_eq!(ieee30(12).branches.len(), 41);
    }

    #[test]
    fn desk_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        crate::data::write_network_case(&desk(), dir.path()).unwrap();
        assert_eq!(crate::data::load_network_case(dir.path()).unwrap(), desk());
    }

    #[test]
    fn ieee30_loads_average_two_megawatts() {
        let c = ieee30(12);
        let per_mg: f64 = (0..c.microgrids.len())
            .map(|i| (0..12).map(|t| c.microgrid_load(i, t)).sum::<f64>() / 12.0)
            .sum::<f64>()
            / c.microgrids.len() as f64;
        assert!((per_mg - 2.0).abs() < 0.2, "{per_mg}");
    }
}
