//! Case-file ingestion: IEEE Common Data Format plus a simplified
//! line-oriented text format for hand-written cases.
//!
//! The simplified format is one record per line, whitespace-separated:
//!
//! ```text
//! mvabase 100.0
//! bus <id> <slack|pv|pq> [load_p load_q gen_p vset shunt_g shunt_b]
//! branch <from> <to> <r> <x> [b_charging] [tap]
//! ```
//!
//! Bus ids in files are 1-based; trailing fields default to zero
//! (`vset` to 1.0, `tap` to 1.0). Lines starting with `#` are comments.

use super::{Branch, Bus, BusKind, GridError, NetworkModel};

/// Bundled IEEE 30-bus test case.
pub fn ieee30() -> NetworkModel {
    load_case(include_str!("../../assets/ieee30.cdf")).expect("bundled ieee30 case is valid")
}

/// Parses either IEEE CDF (detected by the `BUS DATA FOLLOWS` section
/// header) or the simplified format.
pub fn load_case(text: &str) -> Result<NetworkModel, GridError> {
    if text.contains("BUS DATA FOLLOWS") {
        parse_cdf(text)
    } else {
        parse_simple(text)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> GridError {
    GridError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, GridError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize, GridError> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

// ---------------------------------------------------------------------------
// IEEE Common Data Format
// ---------------------------------------------------------------------------

#[derive(PartialEq)]
enum Section {
    Preamble,
    Bus,
    Branch,
    Other,
}

fn parse_cdf(text: &str) -> Result<NetworkModel, GridError> {
    let mut mva_base = 100.0;
    let mut section = Section::Preamble;
    let mut raw_buses: Vec<(usize, Bus)> = Vec::new();
    let mut raw_branches: Vec<(usize, usize, Branch)> = Vec::new();
    let mut first_line = true;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if first_line {
            // Title card: the first floating-point token is the MVA base.
            if let Some(base) = trimmed
                .split_whitespace()
                .find_map(|t| t.parse::<f64>().ok().filter(|v| *v > 0.0 && t.contains('.')))
            {
                mva_base = base;
            }
            first_line = false;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with("BUS DATA FOLLOWS") {
            section = Section::Bus;
            continue;
        }
        if trimmed.starts_with("BRANCH DATA FOLLOWS") {
            section = Section::Branch;
            continue;
        }
        if trimmed.contains("FOLLOWS") {
            section = Section::Other;
            continue;
        }
        if trimmed.starts_with("-9") || trimmed.starts_with("END OF DATA") {
            section = Section::Preamble;
            continue;
        }
        match section {
            Section::Bus => raw_buses.push(parse_cdf_bus(line, lineno, mva_base)?),
            Section::Branch => raw_branches.push(parse_cdf_branch(line, lineno)?),
            _ => {}
        }
    }

    if raw_buses.is_empty() {
        return Err(parse_err(0, "no bus records found"));
    }
    finish(raw_buses, raw_branches, mva_base)
}

fn parse_cdf_bus(line: &str, lineno: usize, mva_base: f64) -> Result<(usize, Bus), GridError> {
    // Columns 1-4 hold the bus number and 6-17 the free-text name; the
    // remaining fields are whitespace-separated from column 19 on.
    if line.len() < 19 {
        return Err(parse_err(lineno, "bus record too short"));
    }
    let number = parse_usize(line[..4].trim(), lineno, "bus number")?;
    let rest: Vec<&str> = line[18..].split_whitespace().collect();
    if rest.len() < 15 {
        return Err(parse_err(
            lineno,
            format!("bus record has {} fields, expected 15", rest.len()),
        ));
    }
    let kind = match rest[2] {
        "3" => BusKind::Slack,
        "2" => BusKind::Pv,
        "0" | "1" => BusKind::Pq,
        other => return Err(parse_err(lineno, format!("unknown bus type `{other}`"))),
    };
    let load_p = parse_f64(rest[5], lineno, "load MW")? / mva_base;
    let load_q = parse_f64(rest[6], lineno, "load MVAR")? / mva_base;
    let gen_p = parse_f64(rest[7], lineno, "generation MW")? / mva_base;
    let desired_v = parse_f64(rest[10], lineno, "desired voltage")?;
    let final_v = parse_f64(rest[3], lineno, "final voltage")?;
    let vset = if desired_v > 0.0 { desired_v } else { final_v };
    let shunt_g = parse_f64(rest[13], lineno, "shunt G")?;
    let shunt_b = parse_f64(rest[14], lineno, "shunt B")?;
    Ok((
        number,
        Bus {
            id: 0, // assigned once ordering is known
            kind,
            base_load_p: load_p,
            base_load_q: load_q,
            gen_p,
            voltage_setpoint: if vset > 0.0 { vset } else { 1.0 },
            shunt_g,
            shunt_b,
        },
    ))
}

fn parse_cdf_branch(line: &str, lineno: usize) -> Result<(usize, usize, Branch), GridError> {
    let tok: Vec<&str> = line.split_whitespace().collect();
    if tok.len() < 9 {
        return Err(parse_err(
            lineno,
            format!("branch record has {} fields, expected at least 9", tok.len()),
        ));
    }
    let from = parse_usize(tok[0], lineno, "from bus")?;
    let to = parse_usize(tok[1], lineno, "to bus")?;
    let r = parse_f64(tok[6], lineno, "resistance")?;
    let x = parse_f64(tok[7], lineno, "reactance")?;
    let b = parse_f64(tok[8], lineno, "line charging")?;
    let tap = match tok.get(14) {
        Some(t) => {
            let v = parse_f64(t, lineno, "turns ratio")?;
            if v > 0.0 {
                v
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    Ok((
        from,
        to,
        Branch {
            from: 0,
            to: 0,
            r,
            x,
            b_charging: b,
            tap_ratio: tap,
        },
    ))
}

// ---------------------------------------------------------------------------
// Simplified format
// ---------------------------------------------------------------------------

fn parse_simple(text: &str) -> Result<NetworkModel, GridError> {
    let mut mva_base = 100.0;
    let mut raw_buses: Vec<(usize, Bus)> = Vec::new();
    let mut raw_branches: Vec<(usize, usize, Branch)> = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        match tok[0] {
            "mvabase" => {
                let val = tok
                    .get(1)
                    .ok_or_else(|| parse_err(lineno, "mvabase needs a value"))?;
                mva_base = parse_f64(val, lineno, "mva base")?;
            }
            "bus" => {
                if tok.len() < 3 {
                    return Err(parse_err(lineno, "bus needs at least an id and a kind"));
                }
                let number = parse_usize(tok[1], lineno, "bus id")?;
                let kind = match tok[2] {
                    "slack" => BusKind::Slack,
                    "pv" => BusKind::Pv,
                    "pq" => BusKind::Pq,
                    other => {
                        return Err(parse_err(lineno, format!("unknown bus kind `{other}`")))
                    }
                };
                let field = |i: usize, default: f64| -> Result<f64, GridError> {
                    match tok.get(i) {
                        Some(t) => parse_f64(t, lineno, "bus field"),
                        None => Ok(default),
                    }
                };
                raw_buses.push((
                    number,
                    Bus {
                        id: 0,
                        kind,
                        base_load_p: field(3, 0.0)?,
                        base_load_q: field(4, 0.0)?,
                        gen_p: field(5, 0.0)?,
                        voltage_setpoint: field(6, 1.0)?,
                        shunt_g: field(7, 0.0)?,
                        shunt_b: field(8, 0.0)?,
                    },
                ));
            }
            "branch" => {
                if tok.len() < 5 {
                    return Err(parse_err(lineno, "branch needs from, to, r, x"));
                }
                let from = parse_usize(tok[1], lineno, "from bus")?;
                let to = parse_usize(tok[2], lineno, "to bus")?;
                let r = parse_f64(tok[3], lineno, "resistance")?;
                let x = parse_f64(tok[4], lineno, "reactance")?;
                let b = match tok.get(5) {
                    Some(t) => parse_f64(t, lineno, "line charging")?,
                    None => 0.0,
                };
                let tap = match tok.get(6) {
                    Some(t) => parse_f64(t, lineno, "tap ratio")?,
                    None => 1.0,
                };
                raw_branches.push((
                    from,
                    to,
                    Branch {
                        from: 0,
                        to: 0,
                        r,
                        x,
                        b_charging: b,
                        tap_ratio: tap,
                    },
                ));
            }
            other => return Err(parse_err(lineno, format!("unknown record `{other}`"))),
        }
    }
    if raw_buses.is_empty() {
        return Err(parse_err(0, "no bus records found"));
    }
    finish(raw_buses, raw_branches, mva_base)
}

/// Renumbers file bus ids to dense 0-based indices and builds the model.
fn finish(
    raw_buses: Vec<(usize, Bus)>,
    raw_branches: Vec<(usize, usize, Branch)>,
    mva_base: f64,
) -> Result<NetworkModel, GridError> {
    let mut buses = Vec::with_capacity(raw_buses.len());
    let mut index_of = std::collections::HashMap::new();
    for (pos, (number, mut bus)) in raw_buses.into_iter().enumerate() {
        if index_of.insert(number, pos).is_some() {
            return Err(GridError::Validation(format!("duplicate bus number {number}")));
        }
        bus.id = pos;
        buses.push(bus);
    }
    let mut branches = Vec::with_capacity(raw_branches.len());
    for (from, to, mut br) in raw_branches {
        br.from = *index_of
            .get(&from)
            .ok_or_else(|| GridError::Validation(format!("branch references unknown bus {from}")))?;
        br.to = *index_of
            .get(&to)
            .ok_or_else(|| GridError::Validation(format!("branch references unknown bus {to}")))?;
        branches.push(br);
    }
    NetworkModel::new(buses, branches, mva_base)
}
