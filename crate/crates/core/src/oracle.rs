//! Exact minimum makespan for tiny instances by breadth-first search over
//! joint configurations.
//!
//! Obstructing agents have no goals, so by default they are tracked as an
//! unordered set of cells. The labeled variant keeps their identities and
//! exists to cross-check that reduction.

use std::collections::HashSet;

use thiserror::Error;

use crate::grid::{GridGraph, Vertex};
use crate::instance::{Instance, ObstructingAgent, TargetAgent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleOutcome {
    Optimal(usize),
    Unsolvable,
    CapExceeded,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("state space too large: about {estimated:.0} configurations (budget {budget})")]
    BudgetExceeded { estimated: f64, budget: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Deepest makespan explored; `None` uses `4 * size_x * size_y`.
    pub cap: Option<usize>,
    /// Upper bound on the estimated number of joint configurations.
    pub budget: u64,
    /// Track obstructing agents individually instead of as a set.
    pub labeled: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cap: None,
            budget: 2_000_000,
            labeled: false,
        }
    }
}

/// Estimated reachable configuration count: ordered target placements times
/// obstructor placements (sets or sequences).
pub fn estimate_states(inst: &Instance, labeled: bool) -> f64 {
    let free = inst.grid().num_free() as f64;
    let m = inst.num_targets();
    let n = inst.obstructors().len();
    let mut est = 1.0;
    let mut left = free;
    for _ in 0..m {
        est *= left;
        left -= 1.0;
    }
    for k in 0..n {
        est *= left - k as f64;
        if !labeled {
            est /= (k + 1) as f64;
        }
    }
    est
}

pub fn optimal_makespan(inst: &Instance, cap: Option<usize>) -> Result<OracleOutcome, OracleError> {
    search(
        inst,
        OracleConfig {
            cap,
            ..OracleConfig::default()
        },
    )
}

pub fn search(inst: &Instance, cfg: OracleConfig) -> Result<OracleOutcome, OracleError> {
    let estimated = estimate_states(inst, cfg.labeled);
    if estimated > cfg.budget as f64 {
        return Err(OracleError::BudgetExceeded {
            estimated,
            budget: cfg.budget,
        });
    }
    let grid = inst.grid();
    let cap = cfg
        .cap
        .unwrap_or(4 * grid.size_x() as usize * grid.size_y() as usize);
    let m = inst.num_targets();
    let goals: Vec<u16> = inst
        .targets()
        .iter()
        .map(|t| grid.index(t.goal) as u16)
        .collect();
    let nbrs: Vec<Vec<u16>> = (0..grid.num_cells())
        .map(|c| grid.neighbor_indices(c).map(|w| w as u16).collect())
        .collect();

    let labeled = cfg.labeled;
    let canon = move |mut c: Vec<u16>| {
        if !labeled {
            c[m..].sort_unstable();
        }
        c
    };

    let start: Vec<u16> = canon(
        inst.starts()
            .iter()
            .map(|&v| grid.index(v) as u16)
            .collect(),
    );
    let is_goal = |c: &[u16]| c[..m] == goals[..];

    let mut seen: HashSet<Vec<u16>> = HashSet::from([start.clone()]);
    let mut frontier = vec![start];
    let mut depth = 0;
    let mut occupied = vec![false; grid.num_cells()];
    let mut claimed = vec![false; grid.num_cells()];
    loop {
        if frontier.iter().any(|c| is_goal(c)) {
            return Ok(OracleOutcome::Optimal(depth));
        }
        if frontier.is_empty() {
            return Ok(OracleOutcome::Unsolvable);
        }
        if depth >= cap {
            return Ok(OracleOutcome::CapExceeded);
        }
        let mut next = Vec::new();
        for cfg_now in &frontier {
            for &c in cfg_now {
                occupied[c as usize] = true;
            }
            let mut cur = cfg_now.clone();
            expand(0, cfg_now, &mut cur, &nbrs, &occupied, &mut claimed, &mut |succ| {
                let succ = canon(succ.to_vec());
                if !seen.contains(&succ) {
                    seen.insert(succ.clone());
                    next.push(succ);
                }
            });
            for &c in cfg_now {
                occupied[c as usize] = false;
            }
        }
        frontier = next;
        depth += 1;
    }
}

/// Every conflict-free simultaneous move set: each agent stays or steps into
/// a cell that was empty at `t` and is not yet claimed by an earlier agent.
fn expand(
    agent: usize,
    now: &[u16],
    cur: &mut Vec<u16>,
    nbrs: &[Vec<u16>],
    occupied: &[bool],
    claimed: &mut [bool],
    emit: &mut dyn FnMut(&[u16]),
) {
    if agent == now.len() {
        emit(cur);
        return;
    }
    expand(agent + 1, now, cur, nbrs, occupied, claimed, emit);
    for &w in &nbrs[now[agent] as usize] {
        let wi = w as usize;
        if occupied[wi] || claimed[wi] {
            continue;
        }
        claimed[wi] = true;
        cur[agent] = w;
        expand(agent + 1, now, cur, nbrs, occupied, claimed, emit);
        cur[agent] = now[agent];
        claimed[wi] = false;
    }
}

/// All obstacle-free instances with `1..=max_x` by `1..=max_y` cells, `1..=max_m`
/// targets and `0..=max_n` obstructing agents, in a fixed order. Target
/// goals differ from each other and from the target's own start.
pub fn enumerate_small_instances(max_x: u32, max_y: u32, max_m: usize, max_n: usize) -> Vec<Instance> {
    let mut out = Vec::new();
    for sx in 1..=max_x {
        for sy in 1..=max_y {
            let grid = GridGraph::open(sx, sy).expect("positive dimensions");
            let cells: Vec<Vertex> = grid.free_vertices().collect();
            for m in 1..=max_m {
                for n in 0..=max_n {
                    if m + n >= cells.len() {
                        continue;
                    }
                    enumerate_into(&grid, &cells, m, n, &mut out);
                }
            }
        }
    }
    out
}

fn enumerate_into(grid: &GridGraph, cells: &[Vertex], m: usize, n: usize, out: &mut Vec<Instance>) {
    let k = cells.len();
    for starts in permutations(k, m) {
        for goals in permutations(k, m) {
            if starts.iter().zip(&goals).any(|(s, g)| s == g) {
                continue;
            }
            let free: Vec<usize> = (0..k).filter(|c| !starts.contains(c)).collect();
            for obs in combinations(free.len(), n) {
                let targets = starts
                    .iter()
                    .zip(&goals)
                    .map(|(&s, &g)| TargetAgent {
                        start: cells[s],
                        goal: cells[g],
                    })
                    .collect();
                let obstructors = obs
                    .iter()
                    .map(|&i| ObstructingAgent {
                        start: cells[free[i]],
                    })
                    .collect();
                out.push(
                    Instance::new(grid.clone(), targets, obstructors)
                        .expect("enumerated instance is valid"),
                );
            }
        }
    }
}

fn permutations(k: usize, r: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !cur.contains(&i) {
                cur.push(i);
                go(k, r, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(k, r, &mut Vec::new(), &mut out);
    out
}

fn combinations(k: usize, r: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, r: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in from..k {
            cur.push(i);
            go(k, r, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(k, r, 0, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(sx: u32, sy: u32, t: &[((u32, u32), (u32, u32))], o: &[(u32, u32)]) -> Instance {
        Instance::on_open_grid(sx, sy, t, o).unwrap()
    }

    #[test]
    fn free_corridor_takes_its_length() {
        let inst = open(3, 1, &[((0, 0), (2, 0))], &[]);
        assert_eq!(optimal_makespan(&inst, None), Ok(OracleOutcome::Optimal(2)));
    }

    #[test]
    fn sidestep_costs_one_extra_step() {
        // obstructor at (1,0) slides down to (1,1), then the target passes
        let inst = open(3, 2, &[((0, 0), (2, 0))], &[(1, 0), (0, 1), (2, 1)]);
        assert_eq!(optimal_makespan(&inst, None), Ok(OracleOutcome::Optimal(3)));
    }

    #[test]
    fn sealed_corridor_is_unsolvable() {
        let inst = open(3, 1, &[((0, 0), (2, 0))], &[(1, 0)]);
        assert_eq!(optimal_makespan(&inst, None), Ok(OracleOutcome::Unsolvable));
    }

    #[test]
    fn targets_cannot_pass_in_a_corridor() {
        let inst = open(3, 1, &[((0, 0), (1, 0)), ((1, 0), (0, 0))], &[]);
        assert_eq!(optimal_makespan(&inst, None), Ok(OracleOutcome::Unsolvable));
    }

    #[test]
    fn rotation_proceeds_one_hole_at_a_time() {
        // three targets shift one cell around a 2x2 block with a single hole
        let inst = open(
            2,
            2,
            &[((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (0, 1))],
            &[],
        );
        assert_eq!(optimal_makespan(&inst, None), Ok(OracleOutcome::Optimal(3)));
    }

    #[test]
    fn cap_is_reported() {
        let inst = open(3, 1, &[((0, 0), (2, 0))], &[]);
        assert_eq!(optimal_makespan(&inst, Some(1)), Ok(OracleOutcome::CapExceeded));
    }

    #[test]
    fn budget_is_enforced() {
        let inst = open(3, 3, &[((0, 0), (2, 2))], &[(1, 1), (2, 0)]);
        let cfg = OracleConfig {
            budget: 10,
            ..OracleConfig::default()
        };
        assert!(matches!(search(&inst, cfg), Err(OracleError::BudgetExceeded { .. })));
    }

    #[test]
    fn state_estimate_counts_sets() {
        let inst = open(3, 3, &[((0, 0), (2, 2))], &[(1, 1), (2, 0)]);
        assert_eq!(estimate_states(&inst, false), 9.0 * 28.0);
        assert_eq!(estimate_states(&inst, true), 9.0 * 56.0);
    }

    #[test]
    fn tiny_enumeration_counts() {
        assert_eq!(enumerate_small_instances(2, 1, 1, 0).len(), 2);
        // 1x1 and 1x2/2x1 only; no room for an obstructor beside a target
        assert_eq!(enumerate_small_instances(2, 1, 1, 1).len(), 2);
        // 3x1: 3 starts * 2 goals * (1 + 2 obstructor spots)
        let row3 = enumerate_small_instances(3, 1, 1, 1);
        assert_eq!(row3.iter().filter(|i| i.grid().size_x() == 3).count(), 18);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let a = enumerate_small_instances(2, 2, 1, 2);
        let b = enumerate_small_instances(2, 2, 1, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn anonymous_and_labeled_agree_on_a_sample() {
        for inst in enumerate_small_instances(3, 2, 1, 3).iter().step_by(7) {
            let anon = search(inst, OracleConfig::default()).unwrap();
            let lab = search(
                inst,
                OracleConfig {
                    labeled: true,
                    ..OracleConfig::default()
                },
            )
            .unwrap();
            assert_eq!(anon, lab);
        }
    }
}
