//! Case ingestion: MATPOWER-subset `.m` text and the native JSON grid schema.

use crate::grid::{Branch, Bus, BusKind, Gen, Grid};
use crate::{FdiaError, Result};
use serde::Serialize;
use serde_json::Value;
use std::collections::HashMap;

/// Parse a MATPOWER case. Only `mpc.baseMVA`, `mpc.bus`, `mpc.branch`, and
/// `mpc.gen` are read; MW/MVAr become per-unit on baseMVA, degrees become
/// radians, external bus numbers are remapped to dense ordinals.
pub fn parse_matpower_case(text: &str) -> Result<Grid> {
    let base_mva = parse_scalar_assignment(text, "mpc.baseMVA")?;
    if base_mva <= 0.0 {
        return Err(FdiaError::Validation("baseMVA must be positive".into()));
    }
    let bus_rows = parse_matrix_assignment(text, "mpc.bus")?;
    let branch_rows = parse_matrix_assignment(text, "mpc.branch")?;
    let gen_rows = parse_matrix_assignment(text, "mpc.gen")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut bus_map: HashMap<i64, usize> = HashMap::new();
    let mut slack_index = None;
    for (i, row) in bus_rows.iter().enumerate() {
        if row.len() < 9 {
            return Err(FdiaError::Validation(format!(
                "bus row {} has {} columns, need at least 9",
                i + 1,
                row.len()
            )));
        }
        let ext = row[0] as i64;
        if bus_map.insert(ext, i).is_some() {
            return Err(FdiaError::Validation(format!("duplicate bus number {ext}")));
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => {
                if slack_index.replace(i).is_some() {
                    return Err(FdiaError::Validation(
                        "more than one slack bus in case".into(),
                    ));
                }
                BusKind::Slack
            }
            other => {
                return Err(FdiaError::Validation(format!(
                    "bus {ext} has unsupported type {other}"
                )))
            }
        };
        buses.push(Bus {
            ordinal: i,
            kind,
            p_load: row[2] / base_mva,
            q_load: row[3] / base_mva,
            g_shunt: row[4] / base_mva,
            b_shunt: row[5] / base_mva,
            v_init: row[7],
            theta_init: row[8].to_radians(),
        });
    }
    let slack_index = slack_index
        .ok_or_else(|| FdiaError::Validation("no slack bus (type 3) in case".into()))?;

    let lookup = |ext: f64, ctx: &str| -> Result<usize> {
        bus_map.get(&(ext as i64)).copied().ok_or_else(|| {
            FdiaError::Validation(format!("{ctx} references unknown bus {}", ext as i64))
        })
    };

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (i, row) in branch_rows.iter().enumerate() {
        if row.len() < 11 {
            return Err(FdiaError::Validation(format!(
                "branch row {} has {} columns, need at least 11",
                i + 1,
                row.len()
            )));
        }
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        branches.push(Branch {
            from: lookup(row[0], &format!("branch row {}", i + 1))?,
            to: lookup(row[1], &format!("branch row {}", i + 1))?,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap,
            shift: row[9].to_radians(),
            in_service: row[10] != 0.0,
        });
    }

    let mut gens = Vec::with_capacity(gen_rows.len());
    for (i, row) in gen_rows.iter().enumerate() {
        if row.len() < 8 {
            return Err(FdiaError::Validation(format!(
                "gen row {} has {} columns, need at least 8",
                i + 1,
                row.len()
            )));
        }
        gens.push(Gen {
            bus: lookup(row[0], &format!("gen row {}", i + 1))?,
            p_gen: row[1] / base_mva,
            q_gen: row[2] / base_mva,
            v_set: row[5],
            in_service: row[7] != 0.0,
        });
    }

    let grid = Grid {
        base_mva,
        buses,
        branches,
        gens,
        slack_index,
    };
    grid.validate()?;
    Ok(grid)
}

fn parse_scalar_assignment(text: &str, name: &str) -> Result<f64> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if let Some(rest) = line.trim().strip_prefix(name) {
            let rest = rest.trim_start();
            if let Some(expr) = rest.strip_prefix('=') {
                let expr = expr.trim().trim_end_matches(';').trim();
                return expr.parse::<f64>().map_err(|_| FdiaError::Parse {
                    line: lineno + 1,
                    msg: format!("cannot parse {name} value {expr:?}"),
                });
            }
        }
    }
    Err(FdiaError::Parse {
        line: 0,
        msg: format!("missing assignment {name}"),
    })
}

/// Extract the numeric rows of `name = [ ... ];`. Rows are separated by `;`
/// or newlines, `%` starts a comment.
fn parse_matrix_assignment(text: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    let mut in_matrix = false;
    let mut start_line = 0;
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let mut line = strip_comment(raw).trim().to_string();
        if !in_matrix {
            if let Some(rest) = line.strip_prefix(name) {
                let rest = rest.trim_start();
                if let Some(after_eq) = rest.strip_prefix('=') {
                    if let Some(after_bracket) = after_eq.trim_start().strip_prefix('[') {
                        in_matrix = true;
                        start_line = lineno + 1;
                        line = after_bracket.to_string();
                    } else {
                        return Err(FdiaError::Parse {
                            line: lineno + 1,
                            msg: format!("{name} assignment is not a matrix literal"),
                        });
                    }
                }
            }
            if !in_matrix {
                continue;
            }
        }
        let (body, done) = match line.find(']') {
            Some(pos) => (&line[..pos], true),
            None => (line.as_str(), false),
        };
        let pieces: Vec<&str> = body.split(';').collect();
        for (pi, piece) in pieces.iter().enumerate() {
            for tok in piece.split_whitespace().flat_map(|t| t.split(',')) {
                if tok.is_empty() {
                    continue;
                }
                let v = tok.parse::<f64>().map_err(|_| FdiaError::Parse {
                    line: lineno + 1,
                    msg: format!("cannot parse number {tok:?} in {name}"),
                })?;
                current.push(v);
            }
            // each `;` terminates a row; a newline does too
            let row_ends = pi + 1 < pieces.len() || done || !piece.trim().is_empty();
            if row_ends && !current.is_empty() {
                rows.push(std::mem::take(&mut current));
            }
        }
        if done {
            return Ok(rows);
        }
    }
    if in_matrix {
        Err(FdiaError::Parse {
            line: start_line,
            msg: format!("{name} matrix is not terminated with ]"),
        })
    } else {
        Err(FdiaError::Parse {
            line: 0,
            msg: format!("missing matrix {name}"),
        })
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

// --- native JSON schema ---

#[derive(Serialize)]
struct BusJson<'a> {
    id: String,
    kind: &'a str,
    p_load: f64,
    q_load: f64,
    g_shunt: f64,
    b_shunt: f64,
    v_init: f64,
    theta_init: f64,
}

#[derive(Serialize)]
struct BranchJson {
    from: String,
    to: String,
    r: f64,
    x: f64,
    b: f64,
    tap: f64,
    shift: f64,
    in_service: bool,
}

#[derive(Serialize)]
struct GenJson {
    bus: String,
    p: f64,
    q: f64,
    v_set: f64,
    in_service: bool,
}

#[derive(Serialize)]
struct GridJson<'a> {
    base_mva: f64,
    buses: Vec<BusJson<'a>>,
    branches: Vec<BranchJson>,
    gens: Vec<GenJson>,
}

/// Serialize a grid to the native JSON schema. Bus ids are the ordinals as
/// strings; output is deterministic for a given grid.
pub fn write_grid_json(grid: &Grid) -> String {
    let doc = GridJson {
        base_mva: grid.base_mva,
        buses: grid
            .buses
            .iter()
            .map(|b| BusJson {
                id: b.ordinal.to_string(),
                kind: match b.kind {
                    BusKind::Slack => "slack",
                    BusKind::Pv => "pv",
                    BusKind::Pq => "pq",
                },
                p_load: b.p_load,
                q_load: b.q_load,
                g_shunt: b.g_shunt,
                b_shunt: b.b_shunt,
                v_init: b.v_init,
                theta_init: b.theta_init,
            })
            .collect(),
        branches: grid
            .branches
            .iter()
            .map(|br| BranchJson {
                from: br.from.to_string(),
                to: br.to.to_string(),
                r: br.r,
                x: br.x,
                b: br.b_charging,
                tap: br.tap,
                shift: br.shift,
                in_service: br.in_service,
            })
            .collect(),
        gens: grid
            .gens
            .iter()
            .map(|g| GenJson {
                bus: g.bus.to_string(),
                p: g.p_gen,
                q: g.q_gen,
                v_set: g.v_set,
                in_service: g.in_service,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("grid serialization cannot fail") + "\n"
}

/// Parse the native JSON schema. Errors carry the JSON path of the offending
/// element. Ids are arbitrary labels mapped to ordinals in listed order.
pub fn parse_grid_json(text: &str) -> Result<Grid> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| schema_err("$", "expected an object"))?;
    let base_mva = get_f64(obj.get("base_mva"), "$.base_mva")?;

    let buses_json = obj
        .get("buses")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("$.buses", "missing or not an array"))?;
    let branches_json = obj
        .get("branches")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("$.branches", "missing or not an array"))?;
    let gens_json = obj
        .get("gens")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("$.gens", "missing or not an array"))?;

    let mut id_map: HashMap<String, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(buses_json.len());
    let mut slack_index = None;
    for (i, b) in buses_json.iter().enumerate() {
        let path = format!("$.buses[{i}]");
        let b = b
            .as_object()
            .ok_or_else(|| schema_err(&path, "expected an object"))?;
        let id = get_label(b.get("id"), &format!("{path}.id"))?;
        if id_map.insert(id.clone(), i).is_some() {
            return Err(schema_err(&format!("{path}.id"), "duplicate bus id"));
        }
        let kind = match b.get("kind").and_then(Value::as_str) {
            Some("slack") => {
                slack_index = Some(i);
                BusKind::Slack
            }
            Some("pv") => BusKind::Pv,
            Some("pq") => BusKind::Pq,
            _ => {
                return Err(schema_err(
                    &format!("{path}.kind"),
                    "expected \"slack\", \"pv\", or \"pq\"",
                ))
            }
        };
        buses.push(Bus {
            ordinal: i,
            kind,
            p_load: get_f64(b.get("p_load"), &format!("{path}.p_load"))?,
            q_load: get_f64(b.get("q_load"), &format!("{path}.q_load"))?,
            g_shunt: get_f64(b.get("g_shunt"), &format!("{path}.g_shunt"))?,
            b_shunt: get_f64(b.get("b_shunt"), &format!("{path}.b_shunt"))?,
            v_init: get_f64(b.get("v_init"), &format!("{path}.v_init"))?,
            theta_init: get_f64(b.get("theta_init"), &format!("{path}.theta_init"))?,
        });
    }
    let slack_index =
        slack_index.ok_or_else(|| schema_err("$.buses", "no bus with kind \"slack\""))?;

    let resolve = |v: Option<&Value>, path: &str, id_map: &HashMap<String, usize>| -> Result<usize> {
        let label = get_label(v, path)?;
        id_map
            .get(&label)
            .copied()
            .ok_or_else(|| schema_err(path, &format!("unknown bus id {label:?}")))
    };

    let mut branches = Vec::with_capacity(branches_json.len());
    for (i, br) in branches_json.iter().enumerate() {
        let path = format!("$.branches[{i}]");
        let br = br
            .as_object()
            .ok_or_else(|| schema_err(&path, "expected an object"))?;
        branches.push(Branch {
            from: resolve(br.get("from"), &format!("{path}.from"), &id_map)?,
            to: resolve(br.get("to"), &format!("{path}.to"), &id_map)?,
            r: get_f64(br.get("r"), &format!("{path}.r"))?,
            x: get_f64(br.get("x"), &format!("{path}.x"))?,
            b_charging: get_f64(br.get("b"), &format!("{path}.b"))?,
            tap: get_f64(br.get("tap"), &format!("{path}.tap"))?,
            shift: get_f64(br.get("shift"), &format!("{path}.shift"))?,
            in_service: br
                .get("in_service")
                .and_then(Value::as_bool)
                .ok_or_else(|| schema_err(&format!("{path}.in_service"), "expected a bool"))?,
        });
    }

    let mut gens = Vec::with_capacity(gens_json.len());
    for (i, g) in gens_json.iter().enumerate() {
        let path = format!("$.gens[{i}]");
        let g = g
            .as_object()
            .ok_or_else(|| schema_err(&path, "expected an object"))?;
        gens.push(Gen {
            bus: resolve(g.get("bus"), &format!("{path}.bus"), &id_map)?,
            p_gen: get_f64(g.get("p"), &format!("{path}.p"))?,
            q_gen: get_f64(g.get("q"), &format!("{path}.q"))?,
            v_set: get_f64(g.get("v_set"), &format!("{path}.v_set"))?,
            in_service: g
                .get("in_service")
                .and_then(Value::as_bool)
                .ok_or_else(|| schema_err(&format!("{path}.in_service"), "expected a bool"))?,
        });
    }

    let grid = Grid {
        base_mva,
        buses,
        branches,
        gens,
        slack_index,
    };
    grid.validate()?;
    Ok(grid)
}

fn schema_err(path: &str, msg: &str) -> FdiaError {
    FdiaError::Format(format!("schema violation at {path}: {msg}"))
}

fn get_f64(v: Option<&Value>, path: &str) -> Result<f64> {
    v.and_then(Value::as_f64)
        .ok_or_else(|| schema_err(path, "expected a number"))
}

/// Ids may be JSON strings or integers; both become string labels.
fn get_label(v: Option<&Value>, path: &str) -> Result<String> {
    match v {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(schema_err(path, "expected a string or integer id")),
    }
}
