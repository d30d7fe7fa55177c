//! Grid case ingestion and the network operators every formulation consumes:
//! the signed incidence matrix `A`, the susceptance-weighted branch matrix
//! `K`, and the big-M vector used to deactivate open-line flow equations.
//!
//! Cases are read from a JSON document (see `CaseDocument`) with all
//! quantities in physical units (MW, rad); everything is converted to
//! per-unit on `base_mva` at parse time. A small importer for the MATPOWER
//! bus/branch/gen table subset is provided as well.

use crate::linalg::{DMat, Lu};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("malformed case document: {0}")]
    MalformedDocument(String),
    #[error("line {index} references missing bus {bus}")]
    DanglingLineEndpoint { index: usize, bus: usize },
    #[error("infeasible bounds on {what}: lower {lower} > upper {upper}")]
    InfeasibleBounds { what: String, lower: f64, upper: f64 },
    #[error("base graph with all lines closed is disconnected")]
    DisconnectedBaseGraph,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// Angle bounds, rad.
    pub theta_min: f64,
    pub theta_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Susceptance, per-unit.
    pub susceptance: f64,
    /// Flow bound, per-unit (lower is the negation).
    pub flow_max: f64,
    pub switchable: bool,
    /// Optional per-line override of the angle spread used for big-M.
    pub delta_theta_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Generator {
    pub bus: usize,
    /// Dispatch bounds, per-unit.
    pub g_min: f64,
    pub g_max: f64,
    /// Reserve bounds, per-unit (r_min <= 0 <= r_max).
    pub r_min: f64,
    pub r_max: f64,
    /// Linear cost, $/MWh.
    pub cost: f64,
    /// Recourse adjustment cost, $/MWh.
    pub recourse_cost: f64,
}

/// Validated grid case. Immutable after construction; all quantities per-unit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridCase {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    /// Load per bus (aligned with `buses`), per-unit.
    pub loads: Vec<f64>,
    pub slack_bus: usize,
    pub base_mva: f64,
}

// ---------------------------------------------------------------------------
// JSON document schema (physical units)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BusDoc {
    id: usize,
    #[serde(default = "default_theta_min")]
    theta_min: f64,
    #[serde(default = "default_theta_max")]
    theta_max: f64,
}

fn default_theta_min() -> f64 {
    -0.6
}
fn default_theta_max() -> f64 {
    0.6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineDoc {
    from: usize,
    to: usize,
    /// Susceptance, per-unit.
    susceptance: f64,
    /// Flow limit, MW.
    flow_max_mw: f64,
    #[serde(default = "default_true")]
    switchable: bool,
    #[serde(default)]
    delta_theta_max: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneratorDoc {
    bus: usize,
    g_min_mw: f64,
    g_max_mw: f64,
    #[serde(default)]
    r_min_mw: Option<f64>,
    #[serde(default)]
    r_max_mw: Option<f64>,
    /// $/MWh linear cost.
    cost: f64,
    #[serde(default)]
    recourse_cost: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseDocument {
    buses: Vec<BusDoc>,
    lines: Vec<LineDoc>,
    generators: Vec<GeneratorDoc>,
    /// bus id -> MW
    loads: BTreeMap<String, f64>,
    slack_bus: usize,
    base_mva: f64,
}

/// Parse and validate the toolkit's JSON case format.
pub fn parse_case(document: &str) -> Result<GridCase, CaseError> {
    let doc: CaseDocument = serde_json::from_str(document)
        .map_err(|e| CaseError::MalformedDocument(e.to_string()))?;
    case_from_document(doc)
}

fn case_from_document(doc: CaseDocument) -> Result<GridCase, CaseError> {
    if doc.base_mva <= 0.0 {
        return Err(CaseError::MalformedDocument("base_mva must be positive".into()));
    }
    let base = doc.base_mva;
    let mut bus_index: HashMap<usize, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(doc.buses.len());
    for b in &doc.buses {
        if bus_index.insert(b.id, buses.len()).is_some() {
            return Err(CaseError::MalformedDocument(format!("duplicate bus id {}", b.id)));
        }
        if b.theta_min >= b.theta_max {
            return Err(CaseError::InfeasibleBounds {
                what: format!("bus {} angle", b.id),
                lower: b.theta_min,
                upper: b.theta_max,
            });
        }
        buses.push(Bus { id: b.id, theta_min: b.theta_min, theta_max: b.theta_max });
    }
    if buses.is_empty() {
        return Err(CaseError::MalformedDocument("no buses".into()));
    }
    if !bus_index.contains_key(&doc.slack_bus) {
        return Err(CaseError::MalformedDocument(format!(
            "slack bus {} not in bus list",
            doc.slack_bus
        )));
    }

    let mut lines = Vec::with_capacity(doc.lines.len());
    for (idx, l) in doc.lines.iter().enumerate() {
        for bus in [l.from, l.to] {
            if !bus_index.contains_key(&bus) {
                return Err(CaseError::DanglingLineEndpoint { index: idx, bus });
            }
        }
        if l.from == l.to {
            return Err(CaseError::Invalid(format!("line {idx} is a self-loop")));
        }
        if l.susceptance <= 0.0 {
            return Err(CaseError::Invalid(format!(
                "line {idx} susceptance must be positive, got {}",
                l.susceptance
            )));
        }
        if l.flow_max_mw <= 0.0 {
            return Err(CaseError::InfeasibleBounds {
                what: format!("line {idx} flow"),
                lower: -l.flow_max_mw,
                upper: l.flow_max_mw,
            });
        }
        lines.push(Line {
            from: l.from,
            to: l.to,
            susceptance: l.susceptance,
            flow_max: l.flow_max_mw / base,
            switchable: l.switchable,
            delta_theta_max: l.delta_theta_max,
        });
    }

    let mut generators = Vec::with_capacity(doc.generators.len());
    for (idx, g) in doc.generators.iter().enumerate() {
        if !bus_index.contains_key(&g.bus) {
            return Err(CaseError::DanglingLineEndpoint { index: idx, bus: g.bus });
        }
        if g.g_min_mw > g.g_max_mw {
            return Err(CaseError::InfeasibleBounds {
                what: format!("generator {idx} dispatch"),
                lower: g.g_min_mw,
                upper: g.g_max_mw,
            });
        }
        let headroom = g.g_max_mw - g.g_min_mw;
        let r_min = g.r_min_mw.unwrap_or(-headroom);
        let r_max = g.r_max_mw.unwrap_or(headroom);
        if r_min > 0.0 || r_max < 0.0 {
            return Err(CaseError::InfeasibleBounds {
                what: format!("generator {idx} reserve"),
                lower: r_min,
                upper: r_max,
            });
        }
        generators.push(Generator {
            bus: g.bus,
            g_min: g.g_min_mw / base,
            g_max: g.g_max_mw / base,
            r_min: r_min / base,
            r_max: r_max / base,
            cost: g.cost,
            recourse_cost: g.recourse_cost.unwrap_or(g.cost),
        });
    }

    let mut loads = vec![0.0; buses.len()];
    for (bus_str, mw) in &doc.loads {
        let bus: usize = bus_str
            .parse()
            .map_err(|_| CaseError::MalformedDocument(format!("load key `{bus_str}`")))?;
        let &i = bus_index
            .get(&bus)
            .ok_or(CaseError::DanglingLineEndpoint { index: 0, bus })?;
        loads[i] += mw / base;
    }

    let case = GridCase { buses, lines, generators, loads, slack_bus: doc.slack_bus, base_mva: base };
    if !case.closed_graph_connected(&vec![true; case.lines.len()]) {
        return Err(CaseError::DisconnectedBaseGraph);
    }
    Ok(case)
}

/// Serialize a validated case back into the JSON document format.
/// `parse_case(serialize_case(c))` round-trips all fields.
pub fn serialize_case(case: &GridCase) -> String {
    let base = case.base_mva;
    let doc = CaseDocument {
        buses: case
            .buses
            .iter()
            .map(|b| BusDoc { id: b.id, theta_min: b.theta_min, theta_max: b.theta_max })
            .collect(),
        lines: case
            .lines
            .iter()
            .map(|l| LineDoc {
                from: l.from,
                to: l.to,
                susceptance: l.susceptance,
                flow_max_mw: l.flow_max * base,
                switchable: l.switchable,
                delta_theta_max: l.delta_theta_max,
            })
            .collect(),
        generators: case
            .generators
            .iter()
            .map(|g| GeneratorDoc {
                bus: g.bus,
                g_min_mw: g.g_min * base,
                g_max_mw: g.g_max * base,
                r_min_mw: Some(g.r_min * base),
                r_max_mw: Some(g.r_max * base),
                cost: g.cost,
                recourse_cost: Some(g.recourse_cost),
            })
            .collect(),
        loads: case
            .buses
            .iter()
            .zip(&case.loads)
            .filter(|(_, &d)| d != 0.0)
            .map(|(b, &d)| (b.id.to_string(), d * base))
            .collect(),
        slack_bus: case.slack_bus,
        base_mva: base,
    };
    serde_json::to_string_pretty(&doc).expect("case serialization")
}

impl GridCase {
    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_position(&self) -> usize {
        self.bus_position(self.slack_bus).expect("validated slack bus")
    }

    /// Per-bus aggregate dispatch bounds, reserve bounds and costs
    /// (zero capacity at non-generator buses).
    pub fn bus_aggregates(&self) -> BusAggregates {
        let n = self.num_buses();
        let mut agg = BusAggregates {
            g_min: vec![0.0; n],
            g_max: vec![0.0; n],
            r_min: vec![0.0; n],
            r_max: vec![0.0; n],
            cost: vec![0.0; n],
            recourse_cost: vec![0.0; n],
            is_gen_bus: vec![false; n],
        };
        for g in &self.generators {
            let i = self.bus_position(g.bus).expect("validated generator bus");
            agg.g_min[i] += g.g_min;
            agg.g_max[i] += g.g_max;
            agg.r_min[i] += g.r_min;
            agg.r_max[i] += g.r_max;
            // aggregate cost: capacity-weighted mean keeps a single $/MWh per bus
            let w_old = agg.is_gen_bus[i] as usize as f64;
            if agg.is_gen_bus[i] {
                agg.cost[i] = (agg.cost[i] * w_old + g.cost) / (w_old + 1.0);
                agg.recourse_cost[i] = (agg.recourse_cost[i] * w_old + g.recourse_cost) / (w_old + 1.0);
            } else {
                agg.cost[i] = g.cost;
                agg.recourse_cost[i] = g.recourse_cost;
            }
            agg.is_gen_bus[i] = true;
        }
        agg
    }

    /// Connectivity of the subgraph of closed lines (`closed[l]`).
    pub fn closed_graph_connected(&self, closed: &[bool]) -> bool {
        let n = self.num_buses();
        if n == 0 {
            return true;
        }
        let mut adj: Vec<Vec<usize>> = vec![vec![]; n];
        for (l, line) in self.lines.iter().enumerate() {
            if closed[l] {
                let i = self.bus_position(line.from).unwrap();
                let j = self.bus_position(line.to).unwrap();
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Scale all line flow limits uniformly (congestion knob).
    pub fn scale_flow_limits(&mut self, scale: f64) {
        for l in &mut self.lines {
            l.flow_max *= scale;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BusAggregates {
    pub g_min: Vec<f64>,
    pub g_max: Vec<f64>,
    pub r_min: Vec<f64>,
    pub r_max: Vec<f64>,
    pub cost: Vec<f64>,
    pub recourse_cost: Vec<f64>,
    pub is_gen_bus: Vec<bool>,
}

/// Network operators: incidence matrix A (N x L), branch matrix K (L x N)
/// and the big-M vector (length L). Immutable after construction.
#[derive(Debug, Clone)]
pub struct NetworkOperators {
    pub incidence: DMat,
    pub branch: DMat,
    pub big_m: Vec<f64>,
}

/// Build A, K and M for a validated case.
///
/// `delta_theta_max` overrides the per-line angle spread used for
/// `M_l = b_l * delta_theta_max_l`; by default the spread is the widest
/// consistent with the endpoint angle bounds, with any per-line override
/// from the case applied first.
pub fn build_operators(case: &GridCase, delta_theta_max: Option<f64>) -> NetworkOperators {
    let n = case.num_buses();
    let l = case.num_lines();
    let mut incidence = DMat::zeros(n, l);
    let mut branch = DMat::zeros(l, n);
    let mut big_m = Vec::with_capacity(l);
    for (idx, line) in case.lines.iter().enumerate() {
        let i = case.bus_position(line.from).expect("validated");
        let j = case.bus_position(line.to).expect("validated");
        incidence[(i, idx)] = 1.0;
        incidence[(j, idx)] = -1.0;
        branch[(idx, i)] = line.susceptance;
        branch[(idx, j)] = -line.susceptance;
        let spread = delta_theta_max
            .or(line.delta_theta_max)
            .unwrap_or_else(|| {
                let a = case.buses[i].theta_max - case.buses[j].theta_min;
                let b = case.buses[j].theta_max - case.buses[i].theta_min;
                a.max(b)
            });
        assert!(spread > 0.0, "angle spread must be positive");
        big_m.push(line.susceptance * spread);
    }
    NetworkOperators { incidence, branch, big_m }
}

impl NetworkOperators {
    /// Reduced susceptance matrix A_z K_z with the slack row/column removed,
    /// for a topology given by `closed`. Rows for open lines are zeroed.
    pub fn reduced_susceptance(&self, case: &GridCase, closed: &[bool]) -> DMat {
        let n = case.num_buses();
        let slack = case.slack_position();
        let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let mut b = DMat::zeros(n - 1, n - 1);
        for (l, &c) in closed.iter().enumerate() {
            if !c {
                continue;
            }
            for (ri, &i) in keep.iter().enumerate() {
                let a_il = self.incidence[(i, l)];
                if a_il == 0.0 {
                    continue;
                }
                for (rj, &j) in keep.iter().enumerate() {
                    let k_lj = self.branch[(l, j)];
                    if k_lj != 0.0 {
                        b[(ri, rj)] += a_il * k_lj;
                    }
                }
            }
        }
        b
    }

    /// Numerical invertibility check of the reduced system for a topology.
    pub fn reduced_system_well_conditioned(&self, case: &GridCase, closed: &[bool]) -> bool {
        let b = self.reduced_susceptance(case, closed);
        match Lu::factorize(&b) {
            Ok(lu) => lu.rcond_estimate() > 1e-12,
            Err(_) => false,
        }
    }
}

/// Import the MATPOWER case subset (mpc.baseMVA, mpc.bus, mpc.gen,
/// mpc.branch, mpc.gencost) from a `.m` file body.
///
/// Reserve limits default to the dispatch headroom and the recourse cost to
/// the linear cost coefficient, since the MATPOWER tables carry neither.
/// Branches with rateA = 0 (unlimited) receive `default_flow_limit_mw`.
pub fn import_matpower(text: &str, default_flow_limit_mw: f64) -> Result<GridCase, CaseError> {
    let base_mva = matpower_scalar(text, "baseMVA")
        .ok_or_else(|| CaseError::MalformedDocument("missing mpc.baseMVA".into()))?;
    let bus_tbl = matpower_table(text, "bus")
        .ok_or_else(|| CaseError::MalformedDocument("missing mpc.bus".into()))?;
    let gen_tbl = matpower_table(text, "gen")
        .ok_or_else(|| CaseError::MalformedDocument("missing mpc.gen".into()))?;
    let branch_tbl = matpower_table(text, "branch")
        .ok_or_else(|| CaseError::MalformedDocument("missing mpc.branch".into()))?;
    let gencost_tbl = matpower_table(text, "gencost");

    let mut doc = CaseDocument {
        buses: vec![],
        lines: vec![],
        generators: vec![],
        loads: BTreeMap::new(),
        slack_bus: 0,
        base_mva,
    };
    let mut seen_slack = None;
    for row in &bus_tbl {
        if row.len() < 3 {
            return Err(CaseError::MalformedDocument("short bus row".into()));
        }
        let id = row[0] as usize;
        doc.buses.push(BusDoc { id, theta_min: -0.6, theta_max: 0.6 });
        if row[1] as usize == 3 {
            seen_slack = Some(id);
        }
        let pd = row[2];
        if pd != 0.0 {
            doc.loads.insert(id.to_string(), pd);
        }
    }
    doc.slack_bus =
        seen_slack.ok_or_else(|| CaseError::MalformedDocument("no slack (type 3) bus".into()))?;

    for (i, row) in gen_tbl.iter().enumerate() {
        if row.len() < 10 {
            return Err(CaseError::MalformedDocument("short gen row".into()));
        }
        let cost = gencost_tbl
            .as_ref()
            .and_then(|t| t.get(i))
            .and_then(|r| linear_cost_from_gencost(r))
            .unwrap_or(1.0);
        doc.generators.push(GeneratorDoc {
            bus: row[0] as usize,
            g_min_mw: row[9],
            g_max_mw: row[8],
            r_min_mw: None,
            r_max_mw: None,
            cost,
            recourse_cost: None,
        });
    }

    for row in &branch_tbl {
        if row.len() < 6 {
            return Err(CaseError::MalformedDocument("short branch row".into()));
        }
        let x = row[3];
        if x == 0.0 {
            return Err(CaseError::Invalid("branch with zero reactance".into()));
        }
        let rate_a = row[5];
        doc.lines.push(LineDoc {
            from: row[0] as usize,
            to: row[1] as usize,
            susceptance: 1.0 / x,
            flow_max_mw: if rate_a > 0.0 { rate_a } else { default_flow_limit_mw },
            switchable: true,
            delta_theta_max: None,
        });
    }
    case_from_document(doc)
}

fn linear_cost_from_gencost(row: &[f64]) -> Option<f64> {
    // polynomial model: [2, startup, shutdown, ncost, c_{n-1} ... c_0]
    if row.len() >= 5 && row[0] as usize == 2 {
        let ncost = row[3] as usize;
        if ncost >= 2 && row.len() >= 4 + ncost {
            // linear coefficient is second from the end
            return Some(row[4 + ncost - 2]);
        }
    }
    None
}

fn matpower_scalar(text: &str, field: &str) -> Option<f64> {
    let key = format!("mpc.{field}");
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix(&key) {
            let rest = rest.trim_start().strip_prefix('=')?;
            let value = rest.trim().trim_end_matches(';').trim();
            return value.parse().ok();
        }
    }
    None
}

fn matpower_table(text: &str, field: &str) -> Option<Vec<Vec<f64>>> {
    let key = format!("mpc.{field}");
    let start = text
        .lines()
        .position(|l| l.trim().starts_with(&key) && l.contains('['))?;
    let mut rows = vec![];
    for line in text.lines().skip(start) {
        let mut body = line;
        if let Some(idx) = line.find('[') {
            body = &line[idx + 1..];
        }
        if let Some(idx) = body.find('%') {
            body = &body[..idx];
        }
        let done = body.contains(']');
        let body = body.split(']').next().unwrap_or("");
        for stmt in body.split(';') {
            let nums: Result<Vec<f64>, _> =
                stmt.split_whitespace().map(|t| t.parse::<f64>()).collect();
            match nums {
                Ok(v) if !v.is_empty() => rows.push(v),
                _ => {}
            }
        }
        if done {
            break;
        }
    }
    Some(rows)
}

/// Set of buses with at least one generator (dispatchable buses).
pub fn generator_buses(case: &GridCase) -> HashSet<usize> {
    case.generators.iter().map(|g| g.bus).collect()
}
