//! Network description and the `gridfile v1` text format.
//!
//! ```text
//! gridfile v1
//! [bus]
//! # id  u_min  u_max  [slack]
//! 1     0.95   1.05   slack
//! 2     0.95   1.05
//! [line]
//! # from  to  r_pu  x_pu  s_max_mva
//! 1       2   0.01  0.05  50
//! [trafo]
//! # from  to  r_pu  x_pu  s_max_mva      (tap ratio is always 1.0)
//! [load]
//! # bus  p_mw  q_mvar
//! 2      10    2
//! [gen]
//! # bus  p_max_mw  agent
//! 2      20        0
//! ```
//!
//! Impedances are per-unit on [`BASE_MVA`]; powers are MW / MVAr. `#` starts
//! a comment. Each agent id `0..n` must own exactly one generator.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// System base for all per-unit quantities.
pub const BASE_MVA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: i64,
    pub u_min: f64,
    pub u_max: f64,
    pub slack: bool,
}

/// A series branch. Lines and trafos share this representation; trafos are
/// kept in their own list so their loading is reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub s_max_mva: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_max_mw: f64,
    pub agent: usize,
}

/// Immutable power network. Generators are stored in agent order, so
/// `generators[a]` belongs to agent `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub buses: Vec<Bus>,
    pub lines: Vec<Branch>,
    pub trafos: Vec<Branch>,
    pub loads: Vec<Load>,
    pub generators: Vec<Generator>,
    slack: usize,
}

impl Grid {
    /// Builds a grid and checks every structural invariant.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Branch>,
        trafos: Vec<Branch>,
        loads: Vec<Load>,
        mut generators: Vec<Generator>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::GridInvalid(msg));

        if buses.is_empty() {
            return invalid("no buses".into());
        }
        let slacks: Vec<usize> = (0..buses.len()).filter(|&i| buses[i].slack).collect();
        let slack = match slacks.len() {
            0 => return invalid("no slack bus".into()),
            1 => slacks[0],
            n => return invalid(format!("{n} slack buses, expected exactly one")),
        };
        for b in &buses {
            if !(b.u_min.is_finite() && b.u_max.is_finite() && b.u_min < b.u_max) {
                return invalid(format!("bus {}: u_min must be below u_max", b.id));
            }
        }
        for (kind, list) in [("line", &lines), ("trafo", &trafos)] {
            for (i, br) in list.iter().enumerate() {
                if br.from >= buses.len() || br.to >= buses.len() {
                    return invalid(format!("{kind} {i}: bus index out of range"));
                }
                if br.from == br.to {
                    return invalid(format!("{kind} {i}: both ends on the same bus"));
                }
                if !(br.s_max_mva > 0.0) {
                    return invalid(format!("{kind} {i}: rating must be positive"));
                }
                if !(br.r >= 0.0 && br.x.is_finite()) || (br.r == 0.0 && br.x == 0.0) {
                    return invalid(format!("{kind} {i}: impedance must be non-zero"));
                }
            }
        }
        for (i, l) in loads.iter().enumerate() {
            if l.bus >= buses.len() {
                return invalid(format!("load {i}: bus index out of range"));
            }
            if !(l.p_mw.is_finite() && l.q_mvar.is_finite()) {
                return invalid(format!("load {i}: non-finite power"));
            }
        }
        generators.sort_by_key(|g| g.agent);
        for (i, g) in generators.iter().enumerate() {
            if g.bus >= buses.len() {
                return invalid(format!("generator {i}: bus index out of range"));
            }
            if !(g.p_max_mw > 0.0) {
                return invalid(format!(
                    "generator of agent {}: capacity must be positive",
                    g.agent
                ));
            }
            if g.agent != i {
                return if i > 0 && generators[i - 1].agent == g.agent {
                    invalid(format!("agent {} owns two generators", g.agent))
                } else {
                    invalid(format!(
                        "agent ids must be 0..{} without gaps",
                        generators.len()
                    ))
                };
            }
        }

        let grid = Grid {
            buses,
            lines,
            trafos,
            loads,
            generators,
            slack,
        };
        if !grid.is_connected() {
            return invalid("network is not connected".into());
        }
        Ok(grid)
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    pub fn n_agents(&self) -> usize {
        self.generators.len()
    }

    /// Lines followed by trafos.
    pub fn branches(&self) -> impl Iterator<Item = &Branch> {
        self.lines.iter().chain(self.trafos.iter())
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.p_max_mw).collect()
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max_mw).sum()
    }

    /// Places `n_agents` generators of `p_total / n_agents` MW each on the
    /// generator locations of this grid, cycling through them in agent order.
    pub fn with_agents(&self, n_agents: usize, p_total: f64) -> Result<Grid> {
        if n_agents == 0 {
            return Err(Error::GridInvalid("at least one agent required".into()));
        }
        if self.generators.is_empty() {
            return Err(Error::GridInvalid("grid has no generator locations".into()));
        }
        if !(p_total > 0.0) {
            return Err(Error::GridInvalid("total capacity must be positive".into()));
        }
        let cap = p_total / n_agents as f64;
        let generators = (0..n_agents)
            .map(|a| Generator {
                bus: self.generators[a % self.generators.len()].bus,
                p_max_mw: cap,
                agent: a,
            })
            .collect();
        Grid::new(
            self.buses.clone(),
            self.lines.clone(),
            self.trafos.clone(),
            self.loads.clone(),
            generators,
        )
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches() {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Grid files shipped with the crate, by name.
pub const BUNDLED_GRIDS: [(&str, &str); 3] = [
    ("case2", include_str!("../grids/case2.grid")),
    ("case3", include_str!("../grids/case3.grid")),
    ("case6", include_str!("../grids/case6.grid")),
];

pub fn bundled_grid(name: &str) -> Result<Grid> {
    match BUNDLED_GRIDS.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => parse_grid(text),
        None => Err(Error::UnknownName {
            kind: "grid",
            name: name.to_string(),
            valid: BUNDLED_GRIDS
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", "),
        }),
    }
}

/// Reads and validates a grid file from disk.
pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    Bus,
    Line,
    Trafo,
    Load,
    Gen,
}

/// Parses the `gridfile v1` format.
pub fn parse_grid(text: &str) -> Result<Grid> {
    let mut section = None;
    let mut header_seen = false;
    let mut raw_buses: Vec<(usize, Bus)> = Vec::new();
    let mut raw_branches: Vec<(usize, Section, [String; 2], [f64; 3])> = Vec::new();
    let mut raw_loads: Vec<(usize, String, f64, f64)> = Vec::new();
    let mut raw_gens: Vec<(usize, String, f64, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::GridParse {
            line: lineno,
            message,
        };
        if !header_seen {
            if line.split_whitespace().collect::<Vec<_>>() != ["gridfile", "v1"] {
                return Err(err(format!(
                    "expected header `gridfile v1`, found `{line}`"
                )));
            }
            header_seen = true;
            continue;
        }
        if line.starts_with('[') {
            section = Some(match line {
                "[bus]" => Section::Bus,
                "[line]" => Section::Line,
                "[trafo]" => Section::Trafo,
                "[load]" => Section::Load,
                "[gen]" => Section::Gen,
                other => return Err(err(format!("unknown section {other}"))),
            });
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize, name: &str| -> Result<f64> {
            let s = fields
                .get(i)
                .ok_or_else(|| err(format!("missing field `{name}` (column {})", i + 1)))?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("field `{name}`: `{s}` is not a number")))
        };
        let expect_len = |min: usize, max: usize| -> Result<()> {
            if fields.len() < min || fields.len() > max {
                Err(err(format!(
                    "expected {min}{} fields, found {}",
                    if max > min {
                        format!("-{max}")
                    } else {
                        String::new()
                    },
                    fields.len()
                )))
            } else {
                Ok(())
            }
        };
        match section {
            None => return Err(err("record outside of any section".into())),
            Some(Section::Bus) => {
                expect_len(3, 4)?;
                let id = fields[0]
                    .parse::<i64>()
                    .map_err(|_| err(format!("field `id`: `{}` is not an integer", fields[0])))?;
                let slack = match fields.get(3) {
                    None => false,
                    Some(&"slack") => true,
                    Some(other) => {
                        return Err(err(format!(
                            "field `slack`: expected `slack`, found `{other}`"
                        )))
                    }
                };
                raw_buses.push((
                    lineno,
                    Bus {
                        id,
                        u_min: num(1, "u_min")?,
                        u_max: num(2, "u_max")?,
                        slack,
                    },
                ));
            }
            Some(s @ (Section::Line | Section::Trafo)) => {
                expect_len(5, 5)?;
                raw_branches.push((
                    lineno,
                    s,
                    [fields[0].to_string(), fields[1].to_string()],
                    [num(2, "r")?, num(3, "x")?, num(4, "s_max")?],
                ));
            }
            Some(Section::Load) => {
                expect_len(3, 3)?;
                raw_loads.push((
                    lineno,
                    fields[0].to_string(),
                    num(1, "p_mw")?,
                    num(2, "q_mvar")?,
                ));
            }
            Some(Section::Gen) => {
                expect_len(3, 3)?;
                let agent = fields[2].parse::<usize>().map_err(|_| {
                    err(format!(
                        "field `agent`: `{}` is not a non-negative integer",
                        fields[2]
                    ))
                })?;
                raw_gens.push((lineno, fields[0].to_string(), num(1, "p_max_mw")?, agent));
            }
        }
    }
    if !header_seen {
        return Err(Error::GridParse {
            line: 1,
            message: "empty file, expected header `gridfile v1`".into(),
        });
    }

    let mut index = HashMap::new();
    for (i, (lineno, b)) in raw_buses.iter().enumerate() {
        if index.insert(b.id.to_string(), i).is_some() {
            return Err(Error::GridParse {
                line: *lineno,
                message: format!("duplicate bus id {}", b.id),
            });
        }
    }
    let lookup = |lineno: usize, id: &str| -> Result<usize> {
        index.get(id).copied().ok_or_else(|| Error::GridParse {
            line: lineno,
            message: format!("unknown bus id {id}"),
        })
    };

    let mut lines = Vec::new();
    let mut trafos = Vec::new();
    for (lineno, s, ends, [r, x, s_max]) in &raw_branches {
        let br = Branch {
            from: lookup(*lineno, &ends[0])?,
            to: lookup(*lineno, &ends[1])?,
            r: *r,
            x: *x,
            s_max_mva: *s_max,
        };
        if *s == Section::Line {
            lines.push(br);
        } else {
            trafos.push(br);
        }
    }
    let loads = raw_loads
        .iter()
        .map(|(lineno, bus, p, q)| {
            Ok(Load {
                bus: lookup(*lineno, bus)?,
                p_mw: *p,
                q_mvar: *q,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let generators = raw_gens
        .iter()
        .map(|(lineno, bus, p_max, agent)| {
            Ok(Generator {
                bus: lookup(*lineno, bus)?,
                p_max_mw: *p_max,
                agent: *agent,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Grid::new(
        raw_buses.into_iter().map(|(_, b)| b).collect(),
        lines,
        trafos,
        loads,
        generators,
    )
}

/// Serializes a grid back into the text format; `parse_grid` of the output
/// reproduces an identical grid.
pub fn write_grid(grid: &Grid) -> String {
    use std::fmt::Write;
    let mut out = String::from("gridfile v1\n[bus]\n");
    for b in &grid.buses {
        let _ = writeln!(
            out,
            "{} {:?} {:?}{}",
            b.id,
            b.u_min,
            b.u_max,
            if b.slack { " slack" } else { "" }
        );
    }
    for (name, list) in [("line", &grid.lines), ("trafo", &grid.trafos)] {
        let _ = writeln!(out, "[{name}]");
        for br in list.iter() {
            let _ = writeln!(
                out,
                "{} {} {:?} {:?} {:?}",
                grid.buses[br.from].id, grid.buses[br.to].id, br.r, br.x, br.s_max_mva
            );
        }
    }
    out.push_str("[load]\n");
    for l in &grid.loads {
        let _ = writeln!(out, "{} {:?} {:?}", grid.buses[l.bus].id, l.p_mw, l.q_mvar);
    }
    out.push_str("[gen]\n");
    for g in &grid.generators {
        let _ = writeln!(out, "{} {:?} {}", grid.buses[g.bus].id, g.p_max_mw, g.agent);
    }
    out
}
