//! Power-network model: case-file parsing and serialization, bus admittance
//! matrix construction, and topology queries (connectivity, degrees, bridges).
//!
//! # Case-file format
//!
//! Plain text with three whitespace/comma-separated tables, each introduced by a
//! header line (`bus`, `gen`, `branch`) and terminated by a line containing `;`.
//! An optional `base_mva <value>` line sets the MVA base (default 100). `#`
//! starts a comment that runs to the end of the line.
//!
//! - bus row: `id type Pd Qd Vm Va` — type code 3 = slack, 2 = PV, 1 = PQ;
//!   `Pd`/`Qd` are load in MW/MVAr; `Vm` per-unit; `Va` in degrees.
//! - gen row: `bus Pg Qg` — injection in MW/MVAr, folded into the bus's net
//!   injection on load.
//! - branch row: `from to r x b tap shift status` — series impedance `r + jx`
//!   and total line-charging susceptance `b` in per-unit; `tap` is the off-nominal
//!   turns ratio at the `from` end (0 means unity); `shift` is the phase-shift
//!   angle in degrees; `status` 1 = in service.
//!
//! Angles are converted to radians and powers to per-unit (divided by the MVA
//! base) on load; bus order is preserved from the file.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::jacobian::OperatingPoint;

/// Role of a bus in the solved power-flow case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    /// Slack (reference) bus: fixed voltage angle, balances the network.
    Slack,
    /// Generator bus with controlled voltage magnitude.
    Pv,
    /// Load bus.
    Pq,
}

/// A network bus at its solved operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus number from the case file (unique, ≥ 1).
    pub id: u32,
    pub kind: BusKind,
    /// Voltage magnitude, per-unit (> 0).
    pub voltage_mag: f64,
    /// Voltage angle, radians in [−π, π].
    pub voltage_ang: f64,
    /// Net active-power injection (generation minus load), per-unit.
    pub p_inject: f64,
    /// Net reactive-power injection, per-unit.
    pub q_inject: f64,
}

/// A transmission line or transformer between two buses.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series resistance, per-unit (≥ 0).
    pub resistance: f64,
    /// Series reactance, per-unit; (resistance, reactance) ≠ (0, 0).
    pub reactance: f64,
    /// Total line-charging susceptance, per-unit (≥ 0); half is shunted at each end.
    pub line_charging: f64,
    /// Off-nominal tap ratio at the `from` end; 0 means unity.
    pub tap_ratio: f64,
    /// Transformer phase-shift angle, radians.
    pub phase_shift: f64,
    pub in_service: bool,
}

/// A parsed power network: the graph of buses and branches plus the MVA base.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Buses in case-file order.
    pub buses: Vec<Bus>,
    /// Branches in case-file order; branch indices used elsewhere refer to this list.
    pub branches: Vec<Branch>,
    /// Bus id of the slack (angle-reference) bus.
    pub reference: u32,
    /// System MVA base used for per-unit conversion (> 0).
    pub base_mva: f64,
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Position of bus `id` in the bus list.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Position of the slack bus in the bus list.
    pub fn reference_index(&self) -> usize {
        self.index_of(self.reference)
            .expect("network invariant: reference bus exists")
    }

    /// The solved operating point shipped in the case file.
    pub fn base_point(&self) -> OperatingPoint {
        OperatingPoint {
            theta: self.buses.iter().map(|b| b.voltage_ang).collect(),
            vmag: self.buses.iter().map(|b| b.voltage_mag).collect(),
        }
    }

    /// Indices of in-service branches, in branch-list order.
    pub fn in_service_indices(&self) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, br)| br.in_service)
            .map(|(i, _)| i)
            .collect()
    }

    /// In-service adjacency list over bus positions: `adj[u]` holds
    /// `(neighbor position, branch index)` pairs in branch-list order.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (bi, br) in self.branches.iter().enumerate() {
            if !br.in_service {
                continue;
            }
            let f = self.index_of(br.from).expect("endpoint exists");
            let t = self.index_of(br.to).expect("endpoint exists");
            adj[f].push((t, bi));
            adj[t].push((f, bi));
        }
        adj
    }
}

/// Complex bus admittance matrix in the network's bus order.
///
/// Entry (m, n) in polar form supplies the magnitude `Y_mn` and angle `α_mn`
/// used by the power-flow equations. The matrix is symmetric when no
/// phase-shifting transformers are present, and off-diagonal (m, n) is nonzero
/// exactly when an in-service branch joins buses m and n.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    /// N×N complex entries.
    pub matrix: DMatrix<Complex64>,
    /// Bus id for each row/column position.
    pub bus_ids: Vec<u32>,
}

impl AdmittanceMatrix {
    pub fn dimension(&self) -> usize {
        self.bus_ids.len()
    }

    /// Magnitude of entry (m, n), ≥ 0.
    pub fn magnitude(&self, m: usize, n: usize) -> f64 {
        self.matrix[(m, n)].norm()
    }

    /// Angle of entry (m, n) in (−π, π].
    pub fn angle(&self, m: usize, n: usize) -> f64 {
        let a = self.matrix[(m, n)].arg();
        // atan2 can return exactly −π for a negative real part with a
        // negative-zero imaginary part; fold that onto +π.
        if a == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            a
        }
    }
}

/// Errors from parsing or validating a case file.
#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: invalid value: {msg}")]
    InvalidValue { line: usize, msg: String },
    #[error("line {line}: duplicate bus id {id}")]
    DuplicateBus { line: usize, id: u32 },
    #[error("line {line}: branch endpoint references unknown bus {id}")]
    DanglingEndpoint { line: usize, id: u32 },
    #[error("line {line}: generator references unknown bus {id}")]
    DanglingGenerator { line: usize, id: u32 },
    #[error("no slack bus (type 3) declared")]
    NoSlack,
    #[error("multiple slack buses declared: {0} and {1}")]
    MultipleSlack(u32, u32),
}

/// Errors from topology edits.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("branch index {0} out of range")]
    UnknownLine(usize),
    #[error("branch index {0} is already out of service")]
    LineOutOfService(usize),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Bus,
    Gen,
    Branch,
}

/// Parse a case file into a validated [`Network`].
///
/// Bus order is preserved from the file, generator injections are folded into
/// the buses' net injections, angles are converted to radians, and powers to
/// per-unit. Connectivity of the in-service subgraph is *not* enforced here
/// (line-removal experiments legitimately produce disconnected variants); use
/// [`is_connected`] to check it.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    // Raw rows per section, with their 1-based line numbers.
    let mut bus_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut gen_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut branch_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut base_mva = 100.0_f64;
    let mut section = Section::None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let mut line = line.trim();
        if line.is_empty() {
            continue;
        }
        // `;` terminates the current table; allow it on its own line or
        // trailing the final row.
        let mut terminate = false;
        if let Some(stripped) = line.strip_suffix(';') {
            terminate = true;
            line = stripped.trim();
        }
        if !line.is_empty() {
            let tokens: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            match tokens[0] {
                "bus" => {
                    section = Section::Bus;
                    expect_bare_header(&tokens, lineno)?;
                }
                "gen" => {
                    section = Section::Gen;
                    expect_bare_header(&tokens, lineno)?;
                }
                "branch" => {
                    section = Section::Branch;
                    expect_bare_header(&tokens, lineno)?;
                }
                "base_mva" => {
                    if tokens.len() != 2 {
                        return Err(CaseError::Syntax {
                            line: lineno,
                            msg: "expected `base_mva <value>`".into(),
                        });
                    }
                    base_mva = parse_number(tokens[1], lineno)?;
                    if !(base_mva > 0.0) {
                        return Err(CaseError::InvalidValue {
                            line: lineno,
                            msg: format!("base_mva must be positive, got {base_mva}"),
                        });
                    }
                }
                _ => {
                    let row = tokens
                        .iter()
                        .map(|t| parse_number(t, lineno))
                        .collect::<Result<Vec<f64>, CaseError>>()?;
                    match section {
                        Section::Bus => bus_rows.push((lineno, row)),
                        Section::Gen => gen_rows.push((lineno, row)),
                        Section::Branch => branch_rows.push((lineno, row)),
                        Section::None => {
                            return Err(CaseError::Syntax {
                                line: lineno,
                                msg: "data row before any section header".into(),
                            });
                        }
                    }
                }
            }
        }
        if terminate {
            section = Section::None;
        }
    }

    if bus_rows.is_empty() {
        return Err(CaseError::Syntax {
            line: text.lines().count().max(1),
            msg: "no bus table found".into(),
        });
    }

    // Bus table.
    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut loads = Vec::with_capacity(bus_rows.len());
    for (line, row) in &bus_rows {
        let line = *line;
        if row.len() != 6 {
            return Err(CaseError::Syntax {
                line,
                msg: format!("bus row needs 6 fields (id type Pd Qd Vm Va), got {}", row.len()),
            });
        }
        let id = parse_id(row[0], line, "bus id")?;
        if buses.iter().any(|b: &Bus| b.id == id) {
            return Err(CaseError::DuplicateBus { line, id });
        }
        let kind = match parse_id(row[1], line, "bus type code")? {
            3 => BusKind::Slack,
            2 => BusKind::Pv,
            1 => BusKind::Pq,
            other => {
                return Err(CaseError::InvalidValue {
                    line,
                    msg: format!("bus type code must be 1, 2, or 3, got {other}"),
                });
            }
        };
        let voltage_mag = row[4];
        if !(voltage_mag > 0.0) {
            return Err(CaseError::InvalidValue {
                line,
                msg: format!("voltage magnitude must be positive, got {voltage_mag}"),
            });
        }
        let va_deg = row[5];
        if !(-180.0..=180.0).contains(&va_deg) {
            return Err(CaseError::InvalidValue {
                line,
                msg: format!("voltage angle must lie in [-180, 180] degrees, got {va_deg}"),
            });
        }
        buses.push(Bus {
            id,
            kind,
            voltage_mag,
            voltage_ang: va_deg.to_radians(),
            p_inject: 0.0,
            q_inject: 0.0,
        });
        loads.push((row[2], row[3]));
    }

    // Fold generator injections, then convert to per-unit net injections.
    let mut pg = vec![0.0_f64; buses.len()];
    let mut qg = vec![0.0_f64; buses.len()];
    for (line, row) in &gen_rows {
        let line = *line;
        if row.len() != 3 {
            return Err(CaseError::Syntax {
                line,
                msg: format!("gen row needs 3 fields (bus Pg Qg), got {}", row.len()),
            });
        }
        let id = parse_id(row[0], line, "generator bus id")?;
        let idx = buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(CaseError::DanglingGenerator { line, id })?;
        pg[idx] += row[1];
        qg[idx] += row[2];
    }
    for (i, bus) in buses.iter_mut().enumerate() {
        bus.p_inject = (pg[i] - loads[i].0) / base_mva;
        bus.q_inject = (qg[i] - loads[i].1) / base_mva;
    }

    // Slack uniqueness.
    let mut reference = None;
    for bus in &buses {
        if bus.kind == BusKind::Slack {
            match reference {
                None => reference = Some(bus.id),
                Some(first) => return Err(CaseError::MultipleSlack(first, bus.id)),
            }
        }
    }
    let reference = reference.ok_or(CaseError::NoSlack)?;

    // Branch table.
    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, row) in &branch_rows {
        let line = *line;
        if row.len() != 8 {
            return Err(CaseError::Syntax {
                line,
                msg: format!(
                    "branch row needs 8 fields (from to r x b tap shift status), got {}",
                    row.len()
                ),
            });
        }
        let from = parse_id(row[0], line, "branch from-bus")?;
        let to = parse_id(row[1], line, "branch to-bus")?;
        if from == to {
            return Err(CaseError::InvalidValue {
                line,
                msg: format!("branch endpoints must differ, got {from}-{to}"),
            });
        }
        for id in [from, to] {
            if !buses.iter().any(|b| b.id == id) {
                return Err(CaseError::DanglingEndpoint { line, id });
            }
        }
        let (r, x, b) = (row[2], row[3], row[4]);
        if r == 0.0 && x == 0.0 {
            return Err(CaseError::InvalidValue {
                line,
                msg: "branch series impedance must be nonzero".into(),
            });
        }
        if r < 0.0 {
            return Err(CaseError::InvalidValue {
                line,
                msg: format!("branch resistance must be nonnegative, got {r}"),
            });
        }
        if b < 0.0 {
            return Err(CaseError::InvalidValue {
                line,
                msg: format!("line charging must be nonnegative, got {b}"),
            });
        }
        let tap = row[5];
        if tap < 0.0 {
            return Err(CaseError::InvalidValue {
                line,
                msg: format!("tap ratio must be nonnegative (0 means unity), got {tap}"),
            });
        }
        let status = match row[7] {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            other => {
                return Err(CaseError::InvalidValue {
                    line,
                    msg: format!("branch status must be 0 or 1, got {other}"),
                });
            }
        };
        branches.push(Branch {
            from,
            to,
            resistance: r,
            reactance: x,
            line_charging: b,
            tap_ratio: tap,
            phase_shift: row[6].to_radians(),
            in_service: status,
        });
    }

    Ok(Network {
        buses,
        branches,
        reference,
        base_mva,
    })
}

fn expect_bare_header(tokens: &[&str], line: usize) -> Result<(), CaseError> {
    if tokens.len() != 1 {
        return Err(CaseError::Syntax {
            line,
            msg: format!("unexpected tokens after section header `{}`", tokens[0]),
        });
    }
    Ok(())
}

fn parse_number(token: &str, line: usize) -> Result<f64, CaseError> {
    let v: f64 = token.parse().map_err(|_| CaseError::Syntax {
        line,
        msg: format!("expected a number, got `{token}`"),
    })?;
    if !v.is_finite() {
        return Err(CaseError::InvalidValue {
            line,
            msg: format!("non-finite number `{token}`"),
        });
    }
    Ok(v)
}

fn parse_id(value: f64, line: usize, what: &str) -> Result<u32, CaseError> {
    if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
        return Err(CaseError::InvalidValue {
            line,
            msg: format!("{what} must be a positive integer, got {value}"),
        });
    }
    Ok(value as u32)
}

/// Serialize a network back into the case-file format.
///
/// The output parses back to a `Network` equal to the input field-for-field:
/// stored radians and per-unit values are written as the degree/MW figures
/// whose forward conversion reproduces the stored floats exactly (searching a
/// few ulps around the naive inverse). Generator injections were folded on
/// parse, so net injections are emitted as (possibly negative) bus loads and
/// no `gen` table is written.
pub fn serialize_case(net: &Network) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "# generated case file; net injections folded into bus loads").unwrap();
    writeln!(out, "base_mva {}", fmt_f64(net.base_mva)).unwrap();
    writeln!(out, "bus").unwrap();
    for b in &net.buses {
        let kind = match b.kind {
            BusKind::Slack => 3,
            BusKind::Pv => 2,
            BusKind::Pq => 1,
        };
        let pd = -inverse_scaled(b.p_inject, net.base_mva);
        let qd = -inverse_scaled(b.q_inject, net.base_mva);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            b.id,
            kind,
            fmt_f64(pd),
            fmt_f64(qd),
            fmt_f64(b.voltage_mag),
            fmt_f64(inverse_degrees(b.voltage_ang)),
        )
        .unwrap();
    }
    writeln!(out, ";").unwrap();
    writeln!(out, "branch").unwrap();
    for br in &net.branches {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            br.from,
            br.to,
            fmt_f64(br.resistance),
            fmt_f64(br.reactance),
            fmt_f64(br.line_charging),
            fmt_f64(br.tap_ratio),
            fmt_f64(inverse_degrees(br.phase_shift)),
            u8::from(br.in_service),
        )
        .unwrap();
    }
    writeln!(out, ";").unwrap();
    out
}

fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        // Debug formatting prints the shortest decimal that parses back to the
        // same f64 bits.
        format!("{v:?}")
    }
}

/// Find a value whose forward map equals `target` exactly, searching a few
/// ulps around `seed`. Falls back to `seed` when no exact preimage exists
/// (possible only for floats that did not come from the forward map).
fn inverse_repr(target: f64, seed: f64, forward: impl Fn(f64) -> f64) -> f64 {
    if forward(seed) == target {
        return seed;
    }
    let mut up = seed;
    let mut down = seed;
    for _ in 0..8 {
        up = up.next_up();
        if forward(up) == target {
            return up;
        }
        down = down.next_down();
        if forward(down) == target {
            return down;
        }
    }
    seed
}

/// Degrees value whose `to_radians()` equals `rad` exactly (when one exists).
fn inverse_degrees(rad: f64) -> f64 {
    if rad == 0.0 {
        return 0.0;
    }
    inverse_repr(rad, rad.to_degrees(), f64::to_radians)
}

/// MW value `y` with `y / base == per_unit` exactly (when one exists).
fn inverse_scaled(per_unit: f64, base: f64) -> f64 {
    if per_unit == 0.0 {
        return 0.0;
    }
    inverse_repr(per_unit, per_unit * base, |y| y / base)
}

/// Build the complex bus admittance matrix of the in-service subgraph.
///
/// Each in-service branch with series admittance `y = 1/(r + jx)`, total
/// charging `b`, and complex tap `t = τ e^{jφ}` (τ = 1 when the stored ratio
/// is 0) stamps the standard two-port:
///
/// ```text
/// Y[f,f] += (y + jb/2) / τ²     Y[f,t] += −y / conj(t)
/// Y[t,f] += −y / t              Y[t,t] +=  y + jb/2
/// ```
///
/// Parallel branches sum. Out-of-service branches contribute nothing.
pub fn build_ybus(net: &Network) -> AdmittanceMatrix {
    let n = net.n_buses();
    let mut matrix = DMatrix::<Complex64>::zeros(n, n);
    for br in &net.branches {
        if !br.in_service {
            continue;
        }
        let f = net.index_of(br.from).expect("endpoint exists");
        let t = net.index_of(br.to).expect("endpoint exists");
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.resistance, br.reactance);
        let shunt = Complex64::new(0.0, br.line_charging / 2.0);
        let tau = if br.tap_ratio == 0.0 { 1.0 } else { br.tap_ratio };
        let tap = Complex64::from_polar(tau, br.phase_shift);
        matrix[(f, f)] += (y + shunt) / (tau * tau);
        matrix[(f, t)] += -y / tap.conj();
        matrix[(t, f)] += -y / tap;
        matrix[(t, t)] += y + shunt;
    }
    AdmittanceMatrix {
        matrix,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
    }
}

/// Return a copy of the network with branch `line_index` switched out of service.
///
/// The original network is unchanged. Errors when the index is out of range or
/// the branch is already out of service.
pub fn remove_line(net: &Network, line_index: usize) -> Result<Network, NetError> {
    let branch = net
        .branches
        .get(line_index)
        .ok_or(NetError::UnknownLine(line_index))?;
    if !branch.in_service {
        return Err(NetError::LineOutOfService(line_index));
    }
    let mut out = net.clone();
    out.branches[line_index].in_service = false;
    Ok(out)
}

/// True when the in-service subgraph forms a single connected component.
pub fn is_connected(net: &Network) -> bool {
    let n = net.n_buses();
    if n == 0 {
        return true;
    }
    let adj = net.adjacency();
    let mut seen = vec![false; n];
    let mut stack = vec![0_usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

/// Per-bus degree: the number of distinct in-service neighbors (parallel
/// branches count once). Returned in bus-list order as `(bus id, degree)`.
pub fn bus_degrees(net: &Network) -> Vec<(u32, usize)> {
    let adj = net.adjacency();
    net.buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut neighbors: Vec<usize> = adj[i].iter().map(|&(v, _)| v).collect();
            neighbors.sort_unstable();
            neighbors.dedup();
            (b.id, neighbors.len())
        })
        .collect()
}

/// Branch indices of the in-service bridges: the lines whose removal would
/// disconnect (island) part of the network.
///
/// Uses a lowpoint depth-first search tracking branch indices, so a pair of
/// parallel branches is correctly classified as non-bridging. Out-of-service
/// branches are never reported.
pub fn bridge_lines(net: &Network) -> Vec<usize> {
    let n = net.n_buses();
    let adj = net.adjacency();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0_usize; n];
    let mut timer = 0_usize;
    let mut bridges = Vec::new();

    // Iterative lowpoint DFS; frame = (node, branch used to enter it, child cursor).
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(frame) = stack.last_mut() {
            let (u, in_branch) = (frame.0, frame.1);
            if frame.2 < adj[u].len() {
                let (v, branch) = adj[u][frame.2];
                frame.2 += 1;
                if branch == in_branch {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, branch, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(parent_frame) = stack.last() {
                    let parent = parent_frame.0;
                    low[parent] = low[parent].min(low[u]);
                    if low[u] > disc[parent] {
                        bridges.push(in_branch);
                    }
                }
            }
        }
    }
    bridges.sort_unstable();
    bridges
}

/// Human-readable label for a branch: `"from-to"`.
pub fn branch_label(net: &Network, line_index: usize) -> String {
    let br = &net.branches[line_index];
    format!("{}-{}", br.from, br.to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_bus_case(line_charging: f64) -> String {
        format!(
            "base_mva 100\nbus\n1 3 0 0 1.0 0\n2 1 10 0 1.0 0\n;\nbranch\n1 2 0 0.1 {line_charging} 0 0 1\n;\n"
        )
    }

    pub(crate) fn case39() -> Network {
        parse_case(include_str!("../../../cases/case39.case")).expect("bundled case parses")
    }

    #[test]
    fn parses_minimal_two_bus_network() {
        let net = parse_case(&two_bus_case(0.0)).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_branches(), 1);
        assert_eq!(net.reference, 1);
        assert_eq!(net.buses[1].p_inject, -0.1); // 10 MW load on a 100 MVA base
        assert!(is_connected(&net));
    }

    #[test]
    fn parses_bundled_39_bus_case() {
        let net = case39();
        assert_eq!(net.n_buses(), 39);
        assert_eq!(net.n_branches(), 46);
        assert_eq!(net.reference, 31);
        assert!(is_connected(&net));
        // Spot-check injection folding: bus 39 hosts a 1000 MW generator and a
        // 1104 MW load on a 100 MVA base.
        let b39 = &net.buses[net.index_of(39).unwrap()];
        assert_eq!(b39.p_inject, (1000.0 - 1104.0) / 100.0);
    }

    #[test]
    fn rejects_dangling_branch_endpoint() {
        let text = "bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n;\nbranch\n1 99 0 0.1 0 0 0 1\n;\n";
        match parse_case(text) {
            Err(CaseError::DanglingEndpoint { id: 99, line }) => assert_eq!(line, 6),
            other => panic!("expected dangling-endpoint error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_bus_id() {
        let text = "bus\n1 3 0 0 1.0 0\n1 1 0 0 1.0 0\n;\nbranch\n;\n";
        assert!(matches!(
            parse_case(text),
            Err(CaseError::DuplicateBus { id: 1, line: 3 })
        ));
    }

    #[test]
    fn rejects_zero_and_multiple_slack() {
        let none = "bus\n1 1 0 0 1.0 0\n2 1 0 0 1.0 0\n;\nbranch\n1 2 0 0.1 0 0 0 1\n;\n";
        assert!(matches!(parse_case(none), Err(CaseError::NoSlack)));
        let two = "bus\n1 3 0 0 1.0 0\n2 3 0 0 1.0 0\n;\nbranch\n1 2 0 0.1 0 0 0 1\n;\n";
        assert!(matches!(parse_case(two), Err(CaseError::MultipleSlack(1, 2))));
    }

    #[test]
    fn syntax_error_reports_line_number() {
        let text = "bus\n1 3 0 0 1.0 0\nnot-a-number 1 0 0 1.0 0\n;\n";
        match parse_case(text) {
            Err(CaseError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_case("").is_err());
        assert!(parse_case("# only a comment\n").is_err());
    }

    #[test]
    fn ybus_single_series_element() {
        // One branch, x = 0.1: series admittance −j10, so the off-diagonals are
        // +j10 (magnitude 10, angle π/2) and the diagonals −j10.
        let net = parse_case(&two_bus_case(0.0)).unwrap();
        let y = build_ybus(&net);
        assert!((y.matrix[(0, 1)] - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.matrix[(1, 0)] - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.matrix[(0, 0)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y.matrix[(1, 1)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y.magnitude(0, 1) - 10.0).abs() < 1e-12);
        assert!((y.angle(0, 1) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn ybus_half_charging_on_each_end() {
        let net = parse_case(&two_bus_case(0.2)).unwrap();
        let y = build_ybus(&net);
        assert!((y.matrix[(0, 0)] - Complex64::new(0.0, -9.9)).norm() < 1e-12);
        assert!((y.matrix[(1, 1)] - Complex64::new(0.0, -9.9)).norm() < 1e-12);
    }

    /// Independent textbook assembly used as the oracle for `build_ybus`:
    /// forms each branch's 2×2 admittance from first principles (series
    /// impedance inverted by hand, explicit polar tap) and accumulates.
    fn ybus_oracle(net: &Network) -> DMatrix<Complex64> {
        let n = net.n_buses();
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        for br in net.branches.iter().filter(|b| b.in_service) {
            let f = net.index_of(br.from).unwrap();
            let t = net.index_of(br.to).unwrap();
            let denom = br.resistance * br.resistance + br.reactance * br.reactance;
            let ys = Complex64::new(br.resistance / denom, -br.reactance / denom);
            let bc = Complex64::new(0.0, br.line_charging / 2.0);
            let tau = if br.tap_ratio == 0.0 { 1.0 } else { br.tap_ratio };
            let shift = Complex64::new(br.phase_shift.cos(), br.phase_shift.sin());
            let tap = shift.scale(tau);
            y[(f, f)] += (ys + bc).unscale(tau * tau);
            y[(f, t)] -= ys / tap.conj();
            y[(t, f)] -= ys / tap;
            y[(t, t)] += ys + bc;
        }
        y
    }

    #[test]
    fn ybus_39_bus_matches_independent_construction() {
        let net = case39();
        let y = build_ybus(&net);
        let oracle = ybus_oracle(&net);
        for m in 0..39 {
            for n in 0..39 {
                let delta = (y.matrix[(m, n)] - oracle[(m, n)]).norm();
                assert!(
                    delta < 1e-9,
                    "entry ({m},{n}) differs from oracle by {delta:e}"
                );
            }
        }
    }

    #[test]
    fn ybus_zero_structure_matches_adjacency() {
        let net = case39();
        let y = build_ybus(&net);
        for m in 0..39 {
            for n in 0..39 {
                if m == n {
                    continue;
                }
                let joined = net.branches.iter().any(|br| {
                    br.in_service
                        && ((net.index_of(br.from).unwrap() == m
                            && net.index_of(br.to).unwrap() == n)
                            || (net.index_of(br.from).unwrap() == n
                                && net.index_of(br.to).unwrap() == m))
                });
                assert_eq!(y.matrix[(m, n)] != Complex64::new(0.0, 0.0), joined);
            }
        }
    }

    fn triangle() -> Network {
        parse_case(
            "bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n3 1 0 0 1.0 0\n;\n\
             branch\n1 2 0 0.1 0 0 0 1\n2 3 0 0.1 0 0 0 1\n1 3 0 0.1 0 0 0 1\n;\n",
        )
        .unwrap()
    }

    fn path3() -> Network {
        parse_case(
            "bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n3 1 0 0 1.0 0\n;\n\
             branch\n1 2 0 0.1 0 0 0 1\n2 3 0 0.1 0 0 0 1\n;\n",
        )
        .unwrap()
    }

    #[test]
    fn remove_line_keeps_cycle_connected() {
        let net = triangle();
        for i in 0..3 {
            let cut = remove_line(&net, i).unwrap();
            assert!(is_connected(&cut));
            assert_eq!(cut.branches.iter().filter(|b| b.in_service).count(), 2);
            // Original untouched.
            assert!(net.branches[i].in_service);
        }
    }

    #[test]
    fn remove_middle_of_path_disconnects() {
        let net = path3();
        let cut = remove_line(&net, 0).unwrap();
        assert!(!is_connected(&cut));
    }

    #[test]
    fn remove_line_rejects_bad_indices() {
        let net = path3();
        assert!(matches!(remove_line(&net, 7), Err(NetError::UnknownLine(7))));
        let cut = remove_line(&net, 0).unwrap();
        assert!(matches!(
            remove_line(&cut, 0),
            Err(NetError::LineOutOfService(0))
        ));
    }

    #[test]
    fn degrees_star_and_triangle() {
        let star = parse_case(
            "bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n3 1 0 0 1.0 0\n4 1 0 0 1.0 0\n5 1 0 0 1.0 0\n6 1 0 0 1.0 0\n;\n\
             branch\n1 2 0 0.1 0 0 0 1\n1 3 0 0.1 0 0 0 1\n1 4 0 0.1 0 0 0 1\n1 5 0 0.1 0 0 0 1\n1 6 0 0.1 0 0 0 1\n;\n",
        )
        .unwrap();
        let deg = bus_degrees(&star);
        assert_eq!(deg[0], (1, 5));
        assert!(deg[1..].iter().all(|&(_, d)| d == 1));
        assert!(bus_degrees(&triangle()).iter().all(|&(_, d)| d == 2));
    }

    #[test]
    fn parallel_branches_count_once_for_degree_and_are_not_bridges() {
        let net = parse_case(
            "bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n;\n\
             branch\n1 2 0 0.1 0 0 0 1\n1 2 0 0.2 0 0 0 1\n;\n",
        )
        .unwrap();
        assert_eq!(bus_degrees(&net), vec![(1, 1), (2, 1)]);
        assert!(bridge_lines(&net).is_empty());
        // Cutting one of the pair keeps the network connected.
        assert!(is_connected(&remove_line(&net, 0).unwrap()));
    }

    #[test]
    fn bridges_on_path_and_triangle() {
        assert_eq!(bridge_lines(&path3()), vec![0, 1]);
        assert!(bridge_lines(&triangle()).is_empty());
    }

    #[test]
    fn degree_ranking_39_bus_top20() {
        let net = case39();
        let mut ranked = bus_degrees(&net);
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut top20: Vec<u32> = ranked.iter().take(20).map(|&(id, _)| id).collect();
        top20.sort_unstable();
        let expected: Vec<u32> = (1..=8)
            .chain([10, 11, 13, 14, 16, 17, 19, 22, 23, 25, 26, 29])
            .collect();
        assert_eq!(top20, expected);
    }

    #[test]
    fn out_of_service_branches_are_excluded_everywhere() {
        let mut net = triangle();
        net.branches[2].in_service = false;
        let y = build_ybus(&net);
        assert_eq!(y.matrix[(0, 2)], Complex64::new(0.0, 0.0));
        assert_eq!(bus_degrees(&net), vec![(1, 1), (2, 2), (3, 1)]);
        assert_eq!(bridge_lines(&net), vec![0, 1]);
    }

    #[test]
    fn serialize_round_trips_bundled_cases() {
        for text in [
            include_str!("../../../cases/case9.case"),
            include_str!("../../../cases/case14.case"),
            include_str!("../../../cases/case39.case"),
        ] {
            let a = parse_case(text).unwrap();
            let b = parse_case(&serialize_case(&a)).unwrap();
            assert_eq!(a, b);
        }
    }

    // ---- randomized properties ----

    /// Strategy producing a random connected network as case-file text, so the
    /// parsed result is always in the image of `parse_case`.
    fn random_case_text(max_buses: usize, with_shifts: bool) -> impl Strategy<Value = String> {
        let bus_count = 2..=max_buses;
        bus_count.prop_flat_map(move |n| {
            let buses = proptest::collection::vec(
                (
                    0.9..1.1_f64,                 // Vm
                    -30.0..30.0_f64,              // Va degrees
                    -500.0..500.0_f64,            // Pd
                    -200.0..200.0_f64,            // Qd
                ),
                n,
            );
            // Spanning tree plus up to n extra edges keeps the graph connected.
            let extra = proptest::collection::vec((0..n, 0..n), 0..=n);
            let tree_parents: Vec<BoxedStrategy<usize>> =
                (1..n).map(|i| (0..i).boxed()).collect();
            let params = proptest::collection::vec(
                (
                    0.0..0.05_f64,   // r
                    0.01..0.3_f64,   // x
                    0.0..0.4_f64,    // b
                    prop_oneof![Just(0.0), 0.9..1.1_f64], // tap
                    if with_shifts {
                        (-10.0..10.0_f64).boxed()
                    } else {
                        Just(0.0).boxed()
                    },
                ),
                2 * n,
            );
            (buses, tree_parents, extra, params).prop_map(move |(buses, parents, extra, params)| {
                let mut text = String::from("base_mva 100\nbus\n");
                for (i, (vm, va, pd, qd)) in buses.iter().enumerate() {
                    let kind = if i == 0 { 3 } else { 1 };
                    text.push_str(&format!("{} {kind} {pd:?} {qd:?} {vm:?} {va:?}\n", i + 1));
                }
                text.push_str(";\nbranch\n");
                let mut edges: Vec<(usize, usize)> =
                    parents.iter().enumerate().map(|(i, &p)| (p, i + 1)).collect();
                for &(a, b) in &extra {
                    if a != b {
                        edges.push((a, b));
                    }
                }
                for (k, &(a, b)) in edges.iter().enumerate() {
                    let (r, x, bc, tap, shift) = params[k % params.len()];
                    text.push_str(&format!(
                        "{} {} {r:?} {x:?} {bc:?} {tap:?} {shift:?} 1\n",
                        a + 1,
                        b + 1
                    ));
                }
                text.push_str(";\n");
                text
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_round_trip_identical(text in random_case_text(12, true)) {
            let a = parse_case(&text).unwrap();
            let b = parse_case(&serialize_case(&a)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prop_ybus_symmetric_without_shifters(text in random_case_text(10, false)) {
            let net = parse_case(&text).unwrap();
            let y = build_ybus(&net);
            let n = net.n_buses();
            for m in 0..n {
                for k in (m + 1)..n {
                    prop_assert_eq!(y.matrix[(m, k)], y.matrix[(k, m)]);
                }
            }
        }

        #[test]
        fn prop_ybus_zero_structure(text in random_case_text(10, true)) {
            let net = parse_case(&text).unwrap();
            let y = build_ybus(&net);
            let n = net.n_buses();
            for m in 0..n {
                for k in 0..n {
                    if m == k { continue; }
                    let joined = net.branches.iter().any(|br| {
                        br.in_service
                            && ((net.index_of(br.from).unwrap() == m && net.index_of(br.to).unwrap() == k)
                                || (net.index_of(br.from).unwrap() == k && net.index_of(br.to).unwrap() == m))
                    });
                    prop_assert_eq!(y.matrix[(m, k)] != Complex64::new(0.0, 0.0), joined);
                }
            }
        }

        #[test]
        fn prop_bridges_match_removal_oracle(text in random_case_text(20, true)) {
            let net = parse_case(&text).unwrap();
            prop_assume!(is_connected(&net));
            let bridges = bridge_lines(&net);
            for idx in net.in_service_indices() {
                let islands = !is_connected(&remove_line(&net, idx).unwrap());
                prop_assert_eq!(
                    bridges.contains(&idx),
                    islands,
                    "branch {} misclassified", idx
                );
            }
        }
    }
}
