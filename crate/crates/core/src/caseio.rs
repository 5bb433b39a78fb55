//! Power-system case parsing and run-report serialization.
//!
//! Reads the MATPOWER case subset needed to load the standard IEEE test
//! systems: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and
//! `mpc.gencost` matrix assignments. Comments, the function wrapper line and
//! unrelated assignments are tolerated and skipped. Costs are restricted to
//! the polynomial model (MODEL = 2) with at most three coefficients;
//! piecewise-linear rows are rejected. Out-of-service rows (status 0) are
//! dropped during parsing.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bus role in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    /// Reference (slack) bus; exactly one per case.
    Ref,
    /// Generator bus.
    Pv,
    /// Load bus.
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub bus_type: BusType,
    /// Active power demand, MW.
    pub p_demand: f64,
    /// Reactive power demand, MVAr.
    pub q_demand: f64,
    /// Voltage limits, p.u.
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series reactance, p.u.
    pub reactance: f64,
    /// Susceptance, p.u.
    pub susceptance: f64,
    /// MVA rating, 0 = unlimited.
    pub rating: f64,
}

/// Polynomial generation cost c2*P^2 + c1*P + c0 in $/MW^2 h, $/MWh, $/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPolynomial {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Bus id this unit is attached to.
    pub bus: usize,
    /// Active power limits, MW.
    pub p_min: f64,
    pub p_max: f64,
    /// Reactive power limits, MVAr.
    pub q_min: f64,
    pub q_max: f64,
    pub cost: CostPolynomial,
}

/// A parsed power-system case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl CaseData {
    /// Check every structural invariant, returning a semantic error on the
    /// first violation.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Semantic(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        let refs = self
            .buses
            .iter()
            .filter(|b| b.bus_type == BusType::Ref)
            .count();
        if refs != 1 {
            return Err(Error::Semantic(format!(
                "expected exactly one reference bus, found {refs}"
            )));
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(Error::Semantic(format!("duplicate bus id {}", b.id)));
            }
            if b.v_min > b.v_max {
                return Err(Error::Semantic(format!(
                    "bus {} has v_min {} > v_max {}",
                    b.id, b.v_min, b.v_max
                )));
            }
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !ids.contains(&end) {
                    return Err(Error::Semantic(format!(
                        "branch {}-{} references unknown bus {end}",
                        br.from, br.to
                    )));
                }
            }
            if br.reactance == 0.0 {
                return Err(Error::Semantic(format!(
                    "branch {}-{} has zero reactance",
                    br.from, br.to
                )));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            if !ids.contains(&g.bus) {
                return Err(Error::Semantic(format!(
                    "generator {i} references unknown bus {}",
                    g.bus
                )));
            }
            if g.p_min > g.p_max {
                return Err(Error::Semantic(format!(
                    "generator {i} has p_min {} > p_max {}",
                    g.p_min, g.p_max
                )));
            }
            if g.q_min > g.q_max {
                return Err(Error::Semantic(format!(
                    "generator {i} has q_min {} > q_max {}",
                    g.q_min, g.q_max
                )));
            }
        }
        Ok(())
    }

    /// Index of the reference bus in `buses`.
    pub fn reference_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Ref)
            .expect("validated case has a reference bus")
    }

    /// Map bus id -> position in `buses`.
    pub fn bus_index(&self) -> BTreeMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }
}

struct MatrixBlock {
    rows: Vec<Vec<f64>>,
    line: usize,
}

/// Parse a MATPOWER-subset case script.
pub fn parse_matpower(text: &str) -> Result<CaseData> {
    parse_matpower_named(text, "case")
}

/// As `parse_matpower`, attaching a case name to the result.
pub fn parse_matpower_named(text: &str, name: &str) -> Result<CaseData> {
    let mut base_mva: Option<f64> = None;
    let mut blocks: BTreeMap<String, MatrixBlock> = BTreeMap::new();

    let mut lines = text.lines().enumerate().peekable();
    while let Some((lineno, raw)) = lines.next() {
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("function") {
            continue;
        }
        let Some(eq) = trimmed.find('=') else {
            return Err(Error::Syntax {
                line: lineno + 1,
                column: 1,
                message: format!("expected an assignment, got `{trimmed}`"),
            });
        };
        let lhs = trimmed[..eq].trim();
        let rhs = trimmed[eq + 1..].trim();
        let field = lhs.strip_prefix("mpc.").unwrap_or(lhs);
        match field {
            "baseMVA" => {
                let v = rhs.trim_end_matches(';').trim();
                base_mva = Some(v.parse::<f64>().map_err(|_| Error::Syntax {
                    line: lineno + 1,
                    column: eq + 2,
                    message: format!("invalid baseMVA value `{v}`"),
                })?);
            }
            "bus" | "gen" | "branch" | "gencost" => {
                if !rhs.starts_with('[') {
                    return Err(Error::Syntax {
                        line: lineno + 1,
                        column: eq + 2,
                        message: format!("expected `[` to open mpc.{field}"),
                    });
                }
                let mut rows = Vec::new();
                let mut body = rhs[1..].to_string();
                let start_line = lineno + 1;
                loop {
                    if let Some(end) = body.find(']') {
                        let head = &body[..end];
                        collect_rows(head, start_line, &mut rows)?;
                        break;
                    }
                    collect_rows(&body, start_line, &mut rows)?;
                    match lines.next() {
                        Some((_, next_raw)) => {
                            body = strip_comment(next_raw).trim().to_string();
                        }
                        None => {
                            return Err(Error::Syntax {
                                line: start_line,
                                column: 1,
                                message: format!("unterminated matrix mpc.{field}"),
                            });
                        }
                    }
                }
                blocks.insert(
                    field.to_string(),
                    MatrixBlock {
                        rows,
                        line: start_line,
                    },
                );
            }
            _ => {
                // Unknown assignment (version string, bus_name cell array...):
                // skip scalars to the terminating `;`, and bracketed blocks to
                // their closing `]` / `}`, possibly across lines.
                let closer = if rhs.starts_with('{') {
                    Some('}')
                } else if rhs.starts_with('[') {
                    Some(']')
                } else {
                    None
                };
                let done = |s: &str| match closer {
                    Some(c) => s.contains(c),
                    None => s.trim_end().ends_with(';'),
                };
                let mut cur = rhs.to_string();
                while !done(&cur) {
                    match lines.next() {
                        Some((_, next_raw)) => cur = strip_comment(next_raw).trim().to_string(),
                        None => break,
                    }
                }
            }
        }
    }

    let base_mva = base_mva.ok_or_else(|| Error::Semantic("missing mpc.baseMVA".into()))?;
    let bus_block = blocks
        .remove("bus")
        .ok_or_else(|| Error::Semantic("missing mpc.bus".into()))?;
    let gen_block = blocks
        .remove("gen")
        .ok_or_else(|| Error::Semantic("missing mpc.gen".into()))?;
    let branch_block = blocks
        .remove("branch")
        .ok_or_else(|| Error::Semantic("missing mpc.branch".into()))?;
    let gencost_block = blocks
        .remove("gencost")
        .ok_or_else(|| Error::Semantic("missing mpc.gencost".into()))?;

    // bus = [bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin]
    let mut buses = Vec::with_capacity(bus_block.rows.len());
    for row in &bus_block.rows {
        expect_cols(row, 13, "bus", bus_block.line)?;
        let bus_type = match row[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Ref,
            other => {
                return Err(Error::Semantic(format!(
                    "bus {} has unsupported type {other}",
                    row[0]
                )))
            }
        };
        buses.push(Bus {
            id: row[0] as usize,
            bus_type,
            p_demand: row[2],
            q_demand: row[3],
            v_max: row[11],
            v_min: row[12],
        });
    }

    // gen = [bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin ...]
    if gen_block.rows.len() != gencost_block.rows.len() {
        return Err(Error::Semantic(format!(
            "gencost has {} rows for {} generators",
            gencost_block.rows.len(),
            gen_block.rows.len()
        )));
    }
    let mut generators = Vec::with_capacity(gen_block.rows.len());
    for (row, cost_row) in gen_block.rows.iter().zip(&gencost_block.rows) {
        expect_cols(row, 10, "gen", gen_block.line)?;
        if row.len() >= 8 && row[7] == 0.0 {
            continue; // out of service
        }
        // gencost = [model startup shutdown n c(n-1) ... c0]
        expect_cols(cost_row, 4, "gencost", gencost_block.line)?;
        if cost_row[0] as i64 != 2 {
            return Err(Error::Semantic(format!(
                "gencost model {} unsupported (only polynomial model 2)",
                cost_row[0]
            )));
        }
        let n = cost_row[3] as usize;
        if n == 0 || n > 3 {
            return Err(Error::Semantic(format!(
                "gencost polynomial with {n} coefficients unsupported (need 1..=3)"
            )));
        }
        expect_cols(cost_row, 4 + n, "gencost", gencost_block.line)?;
        let mut c = [0.0f64; 3]; // c2, c1, c0
        for (k, &v) in cost_row[4..4 + n].iter().enumerate() {
            c[3 - n + k] = v;
        }
        generators.push(Generator {
            bus: row[0] as usize,
            p_max: row[8],
            p_min: row[9],
            q_max: row[3],
            q_min: row[4],
            cost: CostPolynomial {
                c2: c[0],
                c1: c[1],
                c0: c[2],
            },
        });
    }

    // branch = [fbus tbus r x b rateA rateB rateC ratio angle status ...]
    let mut branches = Vec::with_capacity(branch_block.rows.len());
    for row in &branch_block.rows {
        expect_cols(row, 6, "branch", branch_block.line)?;
        if row.len() >= 11 && row[10] == 0.0 {
            continue; // out of service
        }
        branches.push(Branch {
            from: row[0] as usize,
            to: row[1] as usize,
            reactance: row[3],
            susceptance: row[4],
            rating: row[5],
        });
    }

    let case = CaseData {
        name: name.to_string(),
        base_mva,
        buses,
        branches,
        generators,
    };
    case.validate()?;
    Ok(case)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn collect_rows(chunk: &str, line: usize, rows: &mut Vec<Vec<f64>>) -> Result<()> {
    for part in chunk.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in part.split_whitespace() {
            let v = tok.parse::<f64>().map_err(|_| Error::Syntax {
                line,
                column: 1 + chunk.find(tok).unwrap_or(0),
                message: format!("invalid number `{tok}`"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(())
}

fn expect_cols(row: &[f64], want: usize, what: &str, line: usize) -> Result<()> {
    if row.len() < want {
        return Err(Error::Syntax {
            line,
            column: 1,
            message: format!(
                "{what} row has {} columns, need at least {want}",
                row.len()
            ),
        });
    }
    Ok(())
}

/// Render a case back into the MATPOWER subset accepted by `parse_matpower`.
pub fn to_matpower_string(case: &CaseData) -> String {
    let mut s = String::new();
    s.push_str(&format!("function mpc = {}\n", case.name));
    s.push_str("mpc.version = '2';\n");
    s.push_str(&format!("mpc.baseMVA = {};\n", case.base_mva));
    s.push_str("mpc.bus = [\n");
    for b in &case.buses {
        let t = match b.bus_type {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Ref => 3,
        };
        s.push_str(&format!(
            "\t{}\t{}\t{}\t{}\t0\t0\t1\t1\t0\t230\t1\t{}\t{};\n",
            b.id, t, b.p_demand, b.q_demand, b.v_max, b.v_min
        ));
    }
    s.push_str("];\nmpc.gen = [\n");
    for g in &case.generators {
        s.push_str(&format!(
            "\t{}\t0\t0\t{}\t{}\t1\t100\t1\t{}\t{};\n",
            g.bus, g.q_max, g.q_min, g.p_max, g.p_min
        ));
    }
    s.push_str("];\nmpc.branch = [\n");
    for br in &case.branches {
        s.push_str(&format!(
            "\t{}\t{}\t0\t{}\t{}\t{}\t0\t0\t0\t0\t1\t-360\t360;\n",
            br.from, br.to, br.reactance, br.susceptance, br.rating
        ));
    }
    s.push_str("];\nmpc.gencost = [\n");
    for g in &case.generators {
        s.push_str(&format!(
            "\t2\t0\t0\t3\t{}\t{}\t{};\n",
            g.cost.c2, g.cost.c1, g.cost.c0
        ));
    }
    s.push_str("];\n");
    s
}

const CASE3: &str = include_str!("../cases/case3.m");
const CASE5: &str = include_str!("../cases/case5.m");
const CASE118: &str = include_str!("../cases/case118.m");
const CASE300: &str = include_str!("../cases/case300.m");

/// Names accepted by `builtin_case`.
pub const BUILTIN_CASES: [&str; 4] = ["case3", "case5", "case118", "case300"];

/// Load a bundled case. Deterministic: repeated calls parse the same
/// embedded text.
pub fn builtin_case(name: &str) -> Result<CaseData> {
    let text = match name {
        "case3" => CASE3,
        "case5" => CASE5,
        "case118" => CASE118,
        "case300" => CASE300,
        other => return Err(Error::UnknownCase(other.to_string())),
    };
    parse_matpower_named(text, name)
}

/// Inner-solver statistics for one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerStats {
    pub iters: usize,
    pub final_cost: f64,
}

/// One outer-iteration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub objective: f64,
    pub mu: f64,
    pub kappa: f64,
    pub inner: InnerStats,
}

/// Full trace of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub case: String,
    pub formulation: String,
    pub backend: String,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    /// Wall-clock seconds per phase. Zeroed in reports written by the CLI by
    /// default so identical invocations produce byte-identical files.
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(case: &str, formulation: &str, backend: &str, seed: u64) -> Self {
        Self {
            case: case.to_string(),
            formulation: formulation.to_string(),
            backend: backend.to_string(),
            seed,
            iterations: Vec::new(),
            timing: BTreeMap::new(),
        }
    }

    pub fn zero_timing(&mut self) {
        for v in self.timing.values_mut() {
            *v = 0.0;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,objective,mu,kappa,inner_iters,inner_cost\n");
        for it in &self.iterations {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                it.k, it.objective, it.mu, it.kappa, it.inner.iters, it.inner.final_cost
            ));
        }
        s
    }
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Write a report to a file sink.
pub fn write_report(report: &RunReport, format: ReportFormat, sink: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    let mut f = std::fs::File::create(sink)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}
