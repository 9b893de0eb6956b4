//! Discrete-time world stepping, the vertex/following conflict rules, and
//! whole-solution validation.
//!
//! A move is legal only if its destination was empty at the previous
//! timestep. A cell being vacated in the same step is therefore not
//! enterable, so swaps and rotations along cycles are rejected as well.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridGraph, Vertex};
use crate::instance::Instance;

/// Agents are numbered targets first, then obstructing agents.
pub type AgentId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Move {
    pub agent: AgentId,
    pub from: Vertex,
    pub to: Vertex,
}

impl Move {
    pub fn new(agent: AgentId, from: Vertex, to: Vertex) -> Self {
        Move { agent, from, to }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("vertex conflict at {vertex}: agents {first} and {second}")]
    VertexConflict {
        vertex: Vertex,
        first: AgentId,
        second: AgentId,
    },
    #[error("following conflict: agent {agent} entered {vertex} held by agent {occupant}")]
    FollowingConflict {
        vertex: Vertex,
        agent: AgentId,
        occupant: AgentId,
    },
    #[error("agent {agent}: {to} is off-grid or a static obstacle")]
    Blocked { agent: AgentId, to: Vertex },
    #[error("agent {agent}: {from} -> {to} is not a remain or adjacent move")]
    NotAdjacent {
        agent: AgentId,
        from: Vertex,
        to: Vertex,
    },
    #[error("agent {agent} is at {actual}, not {claimed}")]
    WrongOrigin {
        agent: AgentId,
        claimed: Vertex,
        actual: Vertex,
    },
    #[error("agent {0} moved twice in one step")]
    DuplicateMove(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agents {0} and {1} start on the same vertex")]
    OverlappingStart(AgentId, AgentId),
}

/// Occupancy snapshot at timestep `time`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    occupancy: Vec<Option<AgentId>>,
    positions: Vec<Vertex>,
    time: usize,
}

impl WorldState {
    pub fn new(grid: &GridGraph, positions: Vec<Vertex>) -> Result<Self, StepError> {
        let mut occupancy = vec![None; grid.num_cells()];
        for (agent, &v) in positions.iter().enumerate() {
            if !grid.is_free(v) {
                return Err(StepError::Blocked { agent, to: v });
            }
            let slot = &mut occupancy[grid.index(v)];
            if let Some(other) = *slot {
                return Err(StepError::OverlappingStart(other, agent));
            }
            *slot = Some(agent);
        }
        Ok(WorldState {
            occupancy,
            positions,
            time: 0,
        })
    }

    pub fn from_instance(inst: &Instance) -> Self {
        Self::new(inst.grid(), inst.starts()).expect("instance starts are valid")
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn positions(&self) -> &[Vertex] {
        &self.positions
    }

    pub fn position(&self, agent: AgentId) -> Vertex {
        self.positions[agent]
    }

    pub fn occupant(&self, grid: &GridGraph, v: Vertex) -> Option<AgentId> {
        self.occupancy[grid.index(v)]
    }

    pub fn occupant_at(&self, cell: usize) -> Option<AgentId> {
        self.occupancy[cell]
    }

    pub fn is_empty_cell(&self, cell: usize) -> bool {
        self.occupancy[cell].is_none()
    }

    /// Apply a simultaneous move set. Agents not listed remain in place. The
    /// step is all-or-nothing: on error `self` is untouched.
    pub fn apply_step(&self, grid: &GridGraph, moves: &[Move]) -> Result<WorldState, StepError> {
        let n = self.positions.len();
        let mut moved = vec![false; n];
        let mut claimed: Vec<(usize, AgentId)> = Vec::with_capacity(moves.len());
        for m in moves {
            if m.agent >= n {
                return Err(StepError::UnknownAgent(m.agent));
            }
            if std::mem::replace(&mut moved[m.agent], true) {
                return Err(StepError::DuplicateMove(m.agent));
            }
            let actual = self.positions[m.agent];
            if actual != m.from {
                return Err(StepError::WrongOrigin {
                    agent: m.agent,
                    claimed: m.from,
                    actual,
                });
            }
            if m.to == m.from {
                continue;
            }
            if !grid.is_free(m.to) {
                return Err(StepError::Blocked {
                    agent: m.agent,
                    to: m.to,
                });
            }
            if !grid.adjacent(m.from, m.to) {
                return Err(StepError::NotAdjacent {
                    agent: m.agent,
                    from: m.from,
                    to: m.to,
                });
            }
            let cell = grid.index(m.to);
            if let Some(occupant) = self.occupancy[cell] {
                return Err(StepError::FollowingConflict {
                    vertex: m.to,
                    agent: m.agent,
                    occupant,
                });
            }
            if let Some(&(_, first)) = claimed.iter().find(|(c, _)| *c == cell) {
                return Err(StepError::VertexConflict {
                    vertex: m.to,
                    first,
                    second: m.agent,
                });
            }
            claimed.push((cell, m.agent));
        }

        let mut next = self.clone();
        for m in moves.iter().filter(|m| m.to != m.from) {
            next.occupancy[grid.index(m.from)] = None;
        }
        for m in moves.iter().filter(|m| m.to != m.from) {
            next.occupancy[grid.index(m.to)] = Some(m.agent);
            next.positions[m.agent] = m.to;
        }
        next.time += 1;
        Ok(next)
    }
}

/// Per-agent paths of common length `makespan + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub makespan: usize,
    pub paths: Vec<Vec<Vertex>>,
}

impl Solution {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("solution serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    PathCountMismatch,
    PathLengthMismatch,
    WrongStart,
    InvalidVertex,
    IllegalStep,
    VertexConflict,
    FollowingConflict,
    TargetNotAtGoal,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::PathCountMismatch => "path_count_mismatch",
            Rule::PathLengthMismatch => "path_length_mismatch",
            Rule::WrongStart => "wrong_start",
            Rule::InvalidVertex => "invalid_vertex",
            Rule::IllegalStep => "illegal_step",
            Rule::VertexConflict => "vertex_conflict",
            Rule::FollowingConflict => "following_conflict",
            Rule::TargetNotAtGoal => "target_not_at_goal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub t: usize,
    pub rule: Rule,
    pub agents: Vec<AgentId>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.agents.iter().map(|a| a.to_string()).collect();
        write!(f, "t={} rule={} agents={}", self.t, self.rule.name(), ids.join(","))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, rule: Rule) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check a solution against every rule and report all violations.
pub fn validate_solution(inst: &Instance, sol: &Solution) -> ValidationReport {
    let grid = inst.grid();
    let m = inst.num_targets();
    let n_agents = inst.num_agents();
    let horizon = sol.makespan + 1;
    let mut out = Vec::new();

    if sol.paths.len() != n_agents {
        out.push(Violation {
            t: 0,
            rule: Rule::PathCountMismatch,
            agents: Vec::new(),
        });
    }
    let agents = n_agents.min(sol.paths.len());
    for (i, p) in sol.paths.iter().enumerate().take(agents) {
        if p.len() != horizon {
            out.push(Violation {
                t: sol.makespan,
                rule: Rule::PathLengthMismatch,
                agents: vec![i],
            });
        }
    }
    let starts = inst.starts();
    for i in 0..agents {
        if sol.paths[i].first() != Some(&starts[i]) {
            out.push(Violation {
                t: 0,
                rule: Rule::WrongStart,
                agents: vec![i],
            });
        }
    }

    let steps = sol.paths[..agents].iter().map(Vec::len).max().unwrap_or(0);
    let at = |i: usize, t: usize| sol.paths[i].get(t).copied();
    let mut occupied: Vec<Option<AgentId>> = vec![None; grid.num_cells()];
    let mut touched: Vec<usize> = Vec::new();
    let mut prev: Vec<Option<AgentId>> = vec![None; grid.num_cells()];
    let mut prev_touched: Vec<usize> = Vec::new();

    for t in 0..steps {
        for &c in &touched {
            occupied[c] = None;
        }
        touched.clear();
        for i in 0..agents {
            let Some(v) = at(i, t) else { continue };
            if !grid.is_free(v) {
                out.push(Violation {
                    t,
                    rule: Rule::InvalidVertex,
                    agents: vec![i],
                });
                continue;
            }
            if t > 0 {
                if let Some(u) = at(i, t - 1) {
                    if u != v && !grid.adjacent(u, v) {
                        out.push(Violation {
                            t,
                            rule: Rule::IllegalStep,
                            agents: vec![i],
                        });
                    }
                    if u != v {
                        if let Some(j) = prev[grid.index(v)] {
                            if j != i {
                                out.push(Violation {
                                    t,
                                    rule: Rule::FollowingConflict,
                                    agents: vec![i, j],
                                });
                            }
                        }
                    }
                }
            }
            let c = grid.index(v);
            match occupied[c] {
                Some(j) => out.push(Violation {
                    t,
                    rule: Rule::VertexConflict,
                    agents: vec![j, i],
                }),
                None => {
                    occupied[c] = Some(i);
                    touched.push(c);
                }
            }
        }
        std::mem::swap(&mut occupied, &mut prev);
        std::mem::swap(&mut touched, &mut prev_touched);
    }

    for (i, target) in inst.targets().iter().enumerate().take(agents.min(m)) {
        if sol.paths[i].get(sol.makespan) != Some(&target.goal) {
            out.push(Violation {
                t: sol.makespan,
                rule: Rule::TargetNotAtGoal,
                agents: vec![i],
            });
        }
    }

    out.sort_by(|a, b| (a.t, a.rule, &a.agents).cmp(&(b.t, b.rule, &b.agents)));
    ValidationReport { violations: out }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MakespanError {
    #[error("target {0} never settles on its goal")]
    NeverArrives(AgentId),
    #[error("expected {expected} paths, got {actual}")]
    PathCount { expected: usize, actual: usize },
}

/// Smallest `t` from which every target sits on its goal for the rest of its
/// recorded path.
pub fn makespan_of(inst: &Instance, paths: &[Vec<Vertex>]) -> Result<usize, MakespanError> {
    if paths.len() != inst.num_agents() {
        return Err(MakespanError::PathCount {
            expected: inst.num_agents(),
            actual: paths.len(),
        });
    }
    let mut makespan = 0;
    for (i, target) in inst.targets().iter().enumerate() {
        let p = &paths[i];
        if p.last() != Some(&target.goal) {
            return Err(MakespanError::NeverArrives(i));
        }
        let settled = p
            .iter()
            .rposition(|&v| v != target.goal)
            .map_or(0, |k| k + 1);
        makespan = makespan.max(settled);
    }
    Ok(makespan)
}

/// Cut (or pad by waiting) every path to `makespan_of + 1` entries.
pub fn truncate_to_makespan(
    inst: &Instance,
    mut paths: Vec<Vec<Vertex>>,
) -> Result<Solution, MakespanError> {
    let makespan = makespan_of(inst, &paths)?;
    for p in &mut paths {
        let last = *p.last().expect("non-empty path");
        p.resize(makespan + 1, last);
    }
    Ok(Solution { makespan, paths })
}
