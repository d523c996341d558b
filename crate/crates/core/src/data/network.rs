use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of total net load used as reserve requirement when `profiles.csv` has no `reserve_req`.
pub const DEFAULT_RESERVE_SHARE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub is_slack: bool,
    /// Net load per period in MW.
    pub net_load: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    /// Index into [`NetworkCase::buses`].
    pub from: usize,
    pub to: usize,
    /// Series susceptance in p.u. (reciprocal of reactance).
    pub susceptance: f64,
    pub limit_mw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    /// $/(MWh)²
    pub cost_quadratic: f64,
    /// $/MWh
    pub cost_reserve: f64,
    pub capacity_mw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Microgrid {
    pub id: String,
    pub bus: usize,
    pub cost_quadratic: f64,
    pub cost_reserve: f64,
    /// Upper end of the flexible range in MW.
    pub p_max: f64,
    /// Magnitude of the lower end: the range is `[-p_min, p_max]`.
    pub p_min: f64,
    /// Reserve bid cap as a fraction of flexible output.
    pub gamma: f64,
    /// Value of lost load in $/MWh.
    pub voll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCase {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub microgrids: Vec<Microgrid>,
    pub reserve_req: Vec<f64>,
    pub period_labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct BusRow {
    id: u32,
    is_slack: u8,
}

#[derive(Serialize, Deserialize)]
struct BranchRow {
    from: u32,
    to: u32,
    susceptance: f64,
    limit_mw: f64,
}

#[derive(Serialize, Deserialize)]
struct GeneratorRow {
    id: String,
    bus: u32,
    cost_quadratic: f64,
    cost_reserve: f64,
    capacity_mw: f64,
}

#[derive(Serialize, Deserialize)]
struct MicrogridRow {
    id: String,
    bus: u32,
    cost_quadratic: f64,
    cost_reserve: f64,
    p_max: f64,
    p_min: f64,
    gamma: f64,
    voll: f64,
}

impl NetworkCase {
    pub fn n_periods(&self) -> usize {
        self.reserve_req.len()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.is_slack)
            .expect("validated case has a slack bus")
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn microgrid_at(&self, bus: usize) -> Option<usize> {
        self.microgrids.iter().position(|m| m.bus == bus)
    }

    /// Net load of microgrid `i` (the load at its bus).
    pub fn microgrid_load(&self, i: usize, t: usize) -> f64 {
        self.buses[self.microgrids[i].bus].net_load[t]
    }

    /// Load at `bus` not represented by a microgrid player.
    pub fn passive_load(&self, bus: usize, t: usize) -> f64 {
        if self.microgrid_at(bus).is_some() {
            0.0
        } else {
            self.buses[bus].net_load[t]
        }
    }

    pub fn total_passive_load(&self, t: usize) -> f64 {
        (0..self.buses.len()).map(|b| self.passive_load(b, t)).sum()
    }

    /// Copy in which only the first `k` microgrids act as players; the rest become passive loads.
    pub fn with_players(&self, k: usize) -> Result<NetworkCase> {
        if k == 0 || k > self.microgrids.len() {
            return Err(Error::Case(format!(
                "cannot activate {k} of {} microgrids",
                self.microgrids.len()
            )));
        }
        let mut c = self.clone();
        c.microgrids.truncate(k);
        Ok(c)
    }

    /// Checks every structural invariant, naming the offending entity.
    pub fn validate(&self) -> Result<()> {
        let nb = self.buses.len();
        let nt = self.reserve_req.len();
        if nb == 0 {
            return Err(Error::Case("case has no buses".into()));
        }
        if nt == 0 {
            return Err(Error::Case("case has no periods".into()));
        }
        let slacks: Vec<u32> = self.buses.iter().filter(|b| b.is_slack).map(|b| b.id).collect();
        match slacks.len() {
            1 => {}
            0 => return Err(Error::Case("no slack bus".into())),
            _ => return Err(Error::Case(format!("duplicate slack buses {slacks:?}"))),
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(Error::Case(format!("bus {} declared twice", b.id)));
            }
            if b.net_load.len() != nt || b.net_load.iter().any(|v| !v.is_finite()) {
                return Err(Error::Case(format!(
                    "bus {}: net-load profile must have {nt} finite values",
                    b.id
                )));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= nb || br.to >= nb || br.from == br.to {
                return Err(Error::Case(format!("branch {k}: invalid endpoints")));
            }
            if br.susceptance == 0.0 || !br.susceptance.is_finite() {
                return Err(Error::Case(format!("branch {k}: susceptance must be nonzero")));
            }
            if !(br.limit_mw > 0.0) {
                return Err(Error::Case(format!("branch {k}: limit must be positive")));
            }
        }
        for g in &self.generators {
            if g.bus >= nb {
                return Err(Error::Case(format!("generator {}: dangling bus", g.id)));
            }
            if !(g.capacity_mw > 0.0) || g.cost_quadratic < 0.0 || g.cost_reserve < 0.0 {
                return Err(Error::Case(format!(
                    "generator {}: capacity must be positive and costs nonnegative",
                    g.id
                )));
            }
        }
        let mut mg_buses = BTreeSet::new();
        for m in &self.microgrids {
            if m.bus >= nb {
                return Err(Error::Case(format!("microgrid {}: dangling bus", m.id)));
            }
            if !mg_buses.insert(m.bus) {
                return Err(Error::Case(format!(
                    "microgrid {}: bus {} already hosts a microgrid",
                    m.id, self.buses[m.bus].id
                )));
            }
            if !(m.p_max > 0.0) || m.p_min < 0.0 {
                return Err(Error::Case(format!(
                    "microgrid {}: p_max must be positive and p_min nonnegative",
                    m.id
                )));
            }
            if !(0.0..=1.0).contains(&m.gamma) {
                return Err(Error::Case(format!(
                    "microgrid {}: gamma {} outside [0, 1]",
                    m.id, m.gamma
                )));
            }
            if !(m.voll >= 0.0) || m.cost_quadratic < 0.0 || m.cost_reserve < 0.0 {
                return Err(Error::Case(format!(
                    "microgrid {}: voll and costs must be nonnegative",
                    m.id
                )));
            }
        }
        if self.reserve_req.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Case("reserve requirement must be finite and nonnegative".into()));
        }
        if self.period_labels.len() != nt {
            return Err(Error::Case("period labels do not match the horizon".into()));
        }
        Ok(())
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::parse(path, format!("cannot open: {e}")),
            _ => Error::parse(path, e.to_string()),
        })?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a case directory holding `buses.csv`, `branches.csv`, `generators.csv`,
/// `microgrids.csv` and `profiles.csv`.
pub fn load_network_case(dir: impl AsRef<Path>) -> Result<NetworkCase> {
    let dir = dir.as_ref();
    let bus_rows: Vec<BusRow> = read_rows(&dir.join("buses.csv"))?;
    let branch_rows: Vec<BranchRow> = read_rows(&dir.join("branches.csv"))?;
    let gen_rows: Vec<GeneratorRow> = read_rows(&dir.join("generators.csv"))?;
    let mg_rows: Vec<MicrogridRow> = read_rows(&dir.join("microgrids.csv"))?;

    let index: BTreeMap<u32, usize> = bus_rows.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let lookup = |id: u32, what: &str| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Case(format!("{what} references unknown bus {id}")))
    };

    let profiles = dir.join("profiles.csv");
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&profiles)
        .map_err(|e| Error::parse(&profiles, e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(&profiles, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let period_col = col("period").ok_or_else(|| Error::MissingColumn {
        path: profiles.clone(),
        column: "period".into(),
    })?;
    let load_cols: Vec<usize> = bus_rows
        .iter()
        .map(|b| {
            col(&format!("load_{}", b.id)).ok_or_else(|| Error::MissingColumn {
                path: profiles.clone(),
                column: format!("load_{}", b.id),
            })
        })
        .collect::<Result<_>>()?;
    let req_col = col("reserve_req");
    let mut labels = Vec::new();
    let mut loads: Vec<Vec<f64>> = vec![Vec::new(); bus_rows.len()];
    let mut req = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&profiles, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::parse(&profiles, format!("line {}, column {}: not a number", r + 2, c + 1)))
        };
        labels.push(rec.get(period_col).unwrap_or("").to_string());
        for (b, &c) in load_cols.iter().enumerate() {
            loads[b].push(num(c)?);
        }
        if let Some(c) = req_col {
            req.push(num(c)?);
        }
    }
    if req_col.is_none() {
        req = (0..labels.len())
            .map(|t| DEFAULT_RESERVE_SHARE * loads.iter().map(|l| l[t]).sum::<f64>())
            .collect();
    }

    let buses = bus_rows
        .iter()
        .zip(loads)
        .map(|(b, net_load)| Bus {
            id: b.id,
            is_slack: b.is_slack != 0,
            net_load,
        })
        .collect();
    let branches = branch_rows
        .iter()
        .enumerate()
        .map(|(k, b)| {
            Ok(Branch {
                from: lookup(b.from, &format!("branch {k}"))?,
                to: lookup(b.to, &format!("branch {k}"))?,
                susceptance: b.susceptance,
                limit_mw: b.limit_mw,
            })
        })
        .collect::<Result<_>>()?;
    let generators = gen_rows
        .into_iter()
        .map(|g| {
            Ok(Generator {
                bus: lookup(g.bus, &format!("generator {}", g.id))?,
                id: g.id,
                cost_quadratic: g.cost_quadratic,
                cost_reserve: g.cost_reserve,
                capacity_mw: g.capacity_mw,
            })
        })
        .collect::<Result<_>>()?;
    let microgrids = mg_rows
        .into_iter()
        .map(|m| {
            Ok(Microgrid {
                bus: lookup(m.bus, &format!("microgrid {}", m.id))?,
                id: m.id,
                cost_quadratic: m.cost_quadratic,
                cost_reserve: m.cost_reserve,
                p_max: m.p_max,
                p_min: m.p_min,
                gamma: m.gamma,
                voll: m.voll,
            })
        })
        .collect::<Result<_>>()?;
    let case = NetworkCase {
        buses,
        branches,
        generators,
        microgrids,
        reserve_req: req,
        period_labels: labels,
    };
    case.validate()?;
    Ok(case)
}

/// Writes a case directory readable by [`load_network_case`]. Column order is fixed.
pub fn write_network_case(case: &NetworkCase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = |b: usize| case.buses[b].id;
    let buses: Vec<BusRow> = case
        .buses
        .iter()
        .map(|b| BusRow {
            id: b.id,
            is_slack: u8::from(b.is_slack),
        })
        .collect();
    write_rows(&dir.join("buses.csv"), &buses, &["id", "is_slack"])?;
    let branches: Vec<BranchRow> = case
        .branches
        .iter()
        .map(|b| BranchRow {
            from: id(b.from),
            to: id(b.to),
            susceptance: b.susceptance,
            limit_mw: b.limit_mw,
        })
        .collect();
    write_rows(
        &dir.join("branches.csv"),
        &branches,
        &["from", "to", "susceptance", "limit_mw"],
    )?;
    let gens: Vec<GeneratorRow> = case
        .generators
        .iter()
        .map(|g| GeneratorRow {
            id: g.id.clone(),
            bus: id(g.bus),
            cost_quadratic: g.cost_quadratic,
            cost_reserve: g.cost_reserve,
            capacity_mw: g.capacity_mw,
        })
        .collect();
    write_rows(
        &dir.join("generators.csv"),
        &gens,
        &["id", "bus", "cost_quadratic", "cost_reserve", "capacity_mw"],
    )?;
    let mgs: Vec<MicrogridRow> = case
        .microgrids
        .iter()
        .map(|m| MicrogridRow {
            id: m.id.clone(),
            bus: id(m.bus),
            cost_quadratic: m.cost_quadratic,
            cost_reserve: m.cost_reserve,
            p_max: m.p_max,
            p_min: m.p_min,
            gamma: m.gamma,
            voll: m.voll,
        })
        .collect();
    write_rows(
        &dir.join("microgrids.csv"),
        &mgs,
        &[
            "id",
            "bus",
            "cost_quadratic",
            "cost_reserve",
            "p_max",
            "p_min",
            "gamma",
            "voll",
        ],
    )?;

    let path = dir.join("profiles.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e.to_string()))?;
    let mut header = vec!["period".to_string()];
    header.extend(case.buses.iter().map(|b| format!("load_{}", b.id)));
    header.push("reserve_req".into());
    w.write_record(&header)
        .map_err(|e| Error::parse(&path, e.to_string()))?;
    for t in 0..case.n_periods() {
        let mut rec = vec![case.period_labels[t].clone()];
        rec.extend(case.buses.iter().map(|b| format!("{:?}", b.net_load[t])));
        rec.push(format!("{:?}", case.reserve_req[t]));
        w.write_record(&rec).map_err(|e| Error::parse(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
