//! Two-stage null-agent swapping solver.
//!
//! Stage one plans a route for every target with the evacuation-aware A*
//! in [`crate::planner`]. Stage two executes those routes. Obstructing agents
//! sitting on a remaining route ("blockers") are each paired with a nearby
//! empty cell (a "null agent"), and the hole is walked toward the blocker one
//! swap per timestep until the blocker steps aside. Targets move whenever the
//! next cell of their route is empty.

use std::collections::VecDeque;
use std::fmt;
use std::hash::BuildHasher;
use std::time::{Duration, Instant};

use rustc_hash::{FxBuildHasher, FxHashMap};
use serde::Serialize;

use crate::grid::{manhattan, GridGraph, Vertex};
use crate::instance::{Instance, TargetAgent};
use crate::planner::{
    plan_target_path_with, plan_timed_path, EvacuationMap, OccupancySnapshot, PlanError,
    PlanOptions, Reservations, TimedPath,
};
use crate::sim::{truncate_to_makespan, AgentId, Move, Solution, StepError, WorldState};

/// Tie-break weight for stepping on another target's goal during planning.
const GOAL_PENALTY: u32 = 1000;

/// Steps a target waits behind another idle target before one of them is
/// rerouted.
const TARGET_PATIENCE: usize = 2;

/// Times one joint configuration may recur before the run is declared
/// deadlocked (cycling without progress).
const LIVELOCK_REPEATS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverLimits {
    /// `None` means `20 * (size_x + size_y) * (targets + 1)`.
    pub max_timesteps: Option<usize>,
    pub max_wall_time: Duration,
    /// Timesteps without any target progress before a stuck target's route
    /// is replanned.
    pub stall_window: usize,
    /// Replan routes of targets held up by other targets. Off reproduces
    /// the bare algorithm, which can only give up on such deadlocks.
    pub replan: bool,
}

impl Default for SolverLimits {
    fn default() -> Self {
        SolverLimits {
            max_timesteps: None,
            max_wall_time: Duration::from_secs(180),
            stall_window: 10,
            replan: true,
        }
    }
}

impl SolverLimits {
    pub fn paper_mode() -> Self {
        SolverLimits {
            replan: false,
            ..SolverLimits::default()
        }
    }

    fn timestep_cap(&self, inst: &Instance) -> usize {
        self.max_timesteps.unwrap_or_else(|| {
            let g = inst.grid();
            20 * (g.size_x() + g.size_y()) as usize * (inst.num_targets() + 1)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Deadlock,
    TimestepLimit,
    WallTimeLimit,
    UnreachableGoal,
    /// A computed move set was rejected by the simulator. Always a bug.
    InternalError,
}

impl FailureReason {
    pub fn name(self) -> &'static str {
        match self {
            FailureReason::Deadlock => "deadlock",
            FailureReason::TimestepLimit => "timestep_limit",
            FailureReason::WallTimeLimit => "wall_time_limit",
            FailureReason::UnreachableGoal => "unreachable_goal",
            FailureReason::InternalError => "internal_error",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub reason: FailureReason,
    /// Timestep reached when the solver gave up.
    pub t: usize,
}

impl Failure {
    /// `{"status":"failed","reason":...,"t":...}`
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "status": "failed",
            "reason": self.reason.name(),
            "t": self.t,
        })
        .to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "failed at t={}: {}", self.t, self.reason)
    }
}

/// One obstructing agent on a remaining target route, plus its evacuation
/// assignment once made.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockerEntry {
    pub agent: AgentId,
    pub pos: Vertex,
    /// Target whose route gives the largest `dst`.
    pub target: usize,
    /// Edges from `pos` to that target's goal along its route.
    pub dst: usize,
    /// Assigned empty cell, if any.
    pub goal: Option<Vertex>,
    /// Hole path from the assigned empty cell to `pos`, both ends included.
    pub path: Option<Vec<Vertex>>,
    /// The hole path crosses the blocked target, which steps back along it.
    pub through_target: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseRecord {
    pub start_t: usize,
    pub end_t: usize,
    /// Position of the first assigned blocker, if any was assigned.
    pub v_star: Option<Vertex>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub phases: Vec<PhaseRecord>,
    /// `states[t][agent]` for every executed timestep.
    pub states: Vec<Vec<Vertex>>,
    pub replans: usize,
}

#[derive(Debug, Clone)]
pub struct SolveRun {
    pub outcome: Result<Solution, Failure>,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
struct TargetRun {
    path: Vec<Vertex>,
    cursor: usize,
    /// Planned entry time per route cell.
    planned: Vec<u32>,
    /// Earliest allowed entry time per route cell.
    not_before: Vec<u32>,
}

impl TargetRun {
    fn untimed(path: Vec<Vertex>) -> Self {
        let n = path.len();
        TargetRun {
            path,
            cursor: 0,
            planned: vec![0; n],
            not_before: vec![0; n],
        }
    }

    fn timed(route: TimedPath) -> Self {
        let not_before = route
            .entry
            .iter()
            .zip(&route.held_back)
            .map(|(&e, &h)| if h { e } else { 0 })
            .collect();
        TargetRun {
            path: route.cells,
            cursor: 0,
            planned: route.entry,
            not_before,
        }
    }

    fn remaining(&self) -> &[Vertex] {
        &self.path[self.cursor..]
    }

    fn arrived(&self) -> bool {
        self.cursor + 1 == self.path.len()
    }

    fn next(&self) -> Option<Vertex> {
        self.path.get(self.cursor + 1).copied()
    }
}

/// Targets ordered by start-to-goal Manhattan distance, farthest first. Equal
/// distances keep input order.
pub fn sort_targets(targets: &[TargetAgent]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(manhattan(targets[i].start, targets[i].goal)));
    order
}

/// Execution state of one solve.
#[derive(Debug, Clone)]
pub struct PhansState<'a> {
    inst: &'a Instance,
    world: WorldState,
    targets: Vec<TargetRun>,
    priority: Vec<usize>,
    history: Vec<Vec<Vertex>>,
    /// Consecutive timesteps each target has waited behind another target.
    held: Vec<usize>,
    /// Every target has so far moved exactly as its timed route planned.
    /// While this holds, the timed routes are mutually conflict-free and are
    /// followed verbatim.
    on_schedule: bool,
}

impl<'a> PhansState<'a> {
    /// Plans every target route against the initial occupancy.
    pub fn new(inst: &'a Instance) -> Result<Self, PlanError> {
        let grid = inst.grid();
        let world = WorldState::from_instance(inst);
        let priority = sort_targets(inst.targets());
        let starts: Vec<Vertex> = inst.targets().iter().map(|t| t.start).collect();
        let obs: Vec<Vertex> = inst.obstructors().iter().map(|o| o.start).collect();
        let snapshot = OccupancySnapshot::new(grid, &starts, &obs);
        let evac = EvacuationMap::new(grid, &snapshot)?;

        let lower_bound = inst
            .targets()
            .iter()
            .filter_map(|t| grid.grid_distance(t.start, t.goal))
            .max()
            .unwrap_or(0);
        let mut best: Option<PlanRound> = None;
        let mut hot = vec![0u32; grid.num_cells()];
        let reversed: Vec<usize> = priority.iter().rev().copied().collect();
        for (avoid_goals, reverse) in PLAN_ROUNDS {
            let order = if reverse { &reversed } else { &priority };
            let round = plan_round(inst, &evac, order, avoid_goals, &hot)?;
            let done = round.on_schedule && round.makespan <= lower_bound;
            for run in &round.runs {
                for (k, &v) in run.path.iter().enumerate() {
                    if run.not_before[k] > 0 || !round.on_schedule {
                        hot[grid.index(v)] += HOT_PENALTY;
                    }
                }
            }
            if best.as_ref().is_none_or(|b| round.score() < b.score()) {
                best = Some(round);
            }
            if done {
                break;
            }
        }
        let PlanRound {
            runs: targets,
            on_schedule,
            ..
        } = best.expect("at least one round");
        Ok(PhansState {
            inst,
            history: vec![world.positions().to_vec()],
            world,
            targets,
            held: vec![0; inst.num_targets()],
            priority,
            on_schedule,
        })
    }

    pub fn instance(&self) -> &Instance {
        self.inst
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn time(&self) -> usize {
        self.world.time()
    }

    pub fn priority(&self) -> &[usize] {
        &self.priority
    }

    /// Unvisited part of target `i`'s route, starting at its current cell.
    pub fn remaining_path(&self, i: usize) -> &[Vertex] {
        self.targets[i].remaining()
    }

    pub fn all_arrived(&self) -> bool {
        self.targets.iter().all(TargetRun::arrived)
    }

    pub fn history(&self) -> &[Vec<Vertex>] {
        &self.history
    }

    fn grid(&self) -> &GridGraph {
        self.inst.grid()
    }

    fn is_target(&self, agent: AgentId) -> bool {
        agent < self.targets.len()
    }

    /// Replan target `i` from its current cell with every other target's
    /// cell treated as a wall. Keeps the old route if none exists.
    fn replan(&mut self, i: usize) -> bool {
        let grid = self.inst.grid();
        let m = self.targets.len();
        let pos = self.world.positions();
        let snapshot = OccupancySnapshot::new(grid, &pos[..m], &pos[m..]);
        let Ok(evac) = EvacuationMap::new(grid, &snapshot) else {
            return false;
        };
        let mut walls = vec![false; grid.num_cells()];
        let mut penalty = vec![0u32; grid.num_cells()];
        for (j, t) in self.inst.targets().iter().enumerate() {
            if j != i {
                walls[grid.index(pos[j])] = true;
                penalty[grid.index(t.goal)] += GOAL_PENALTY;
            }
        }
        let goal = self.inst.targets()[i].goal;
        match plan_target_path_with(
            grid,
            &evac,
            pos[i],
            goal,
            PlanOptions {
                impassable: Some(&walls),
                penalty: Some(&penalty),
            },
        ) {
            Ok(path) if path != self.targets[i].remaining() => {
                self.targets[i] = TargetRun::untimed(path);
                self.on_schedule = false;
                true
            }
            _ => false,
        }
    }

    /// When a target has waited `patience` steps behind another idle
    /// target, replan one of the pair: the waiting one if the other has
    /// arrived, otherwise the lower-priority one (or the other if that finds
    /// nothing new). Returns the number of replans.
    fn resolve_target_blocks(&mut self, patience: usize) -> usize {
        let grid = self.inst.grid();
        let mut rank = vec![0; self.targets.len()];
        for (r, &i) in self.priority.iter().enumerate() {
            rank[i] = r;
        }
        let mut replans = 0;
        for r in 0..self.priority.len() {
            let i = self.priority[r];
            if self.held[i] < patience {
                continue;
            }
            let Some(j) = self.targets[i]
                .next()
                .and_then(|n| self.world.occupant(grid, n))
                .filter(|&a| self.is_target(a))
            else {
                continue;
            };
            let order = if self.targets[j].arrived() {
                vec![i]
            } else if rank[i] > rank[j] {
                vec![i, j]
            } else {
                vec![j, i]
            };
            for k in order {
                if !self.targets[k].arrived() && self.replan(k) {
                    replans += 1;
                    break;
                }
            }
            self.held[i] = 0;
            self.held[j] = 0;
        }
        replans
    }

    /// Targets whose next cell is held by another target, or whose route
    /// crosses a target already parked on its goal. Lowest priority first.
    fn target_blocked(&self) -> Vec<usize> {
        let grid = self.grid();
        let parked = |v: Vertex| {
            self.world
                .occupant(grid, v)
                .is_some_and(|a| self.is_target(a) && self.targets[a].arrived())
        };
        self.priority
            .iter()
            .rev()
            .copied()
            .filter(|&i| {
                let run = &self.targets[i];
                let next_is_target = run.next().is_some_and(|n| {
                    self.world
                        .occupant(grid, n)
                        .is_some_and(|a| self.is_target(a))
                });
                next_is_target || run.remaining().iter().skip(1).any(|&v| parked(v))
            })
            .collect()
    }
}

/// Planning passes tried before execution, as (avoid other targets' goals,
/// fix routes lowest priority first). Every pass after the first also
/// steers around cells where an earlier pass had a target wait.
const PLAN_ROUNDS: [(bool, bool); 6] = [
    (true, false),
    (true, false),
    (false, false),
    (false, false),
    (true, true),
    (false, true),
];

/// Tie-break weight for a cell where an earlier pass had a target wait.
const HOT_PENALTY: u32 = 10;

struct PlanRound {
    runs: Vec<TargetRun>,
    on_schedule: bool,
    makespan: u32,
    waits: u32,
}

impl PlanRound {
    fn score(&self) -> (bool, u32, u32) {
        (!self.on_schedule, self.makespan, self.waits)
    }
}

/// Timed routes for all targets, fixed one at a time in `order`, each
/// avoiding the routes already fixed.
fn plan_round(
    inst: &Instance,
    evac: &EvacuationMap,
    order: &[usize],
    avoid_goals: bool,
    hot: &[u32],
) -> Result<PlanRound, PlanError> {
    let grid = inst.grid();
    let mut goal_pen = vec![0u32; grid.num_cells()];
    if avoid_goals {
        for t in inst.targets() {
            goal_pen[grid.index(t.goal)] += GOAL_PENALTY;
        }
    }
    let mut runs: Vec<Option<TargetRun>> = vec![None; inst.num_targets()];
    let mut used = vec![0u32; grid.num_cells()];
    let mut reserved = Reservations::new();
    for t in inst.targets() {
        reserved.hold(grid.index(t.start), 0);
    }
    let mut on_schedule = true;
    let mut makespan = 0;
    let mut waits = 0;
    for &i in order {
        let t = inst.targets()[i];
        let mut penalty = goal_pen.clone();
        if avoid_goals {
            penalty[grid.index(t.goal)] -= GOAL_PENALTY;
        }
        for (p, u) in penalty.iter_mut().zip(&used) {
            *p += u;
        }
        for (p, h) in penalty.iter_mut().zip(hot) {
            *p += h;
        }
        let opts = PlanOptions {
            impassable: None,
            penalty: Some(&penalty),
        };
        let run = match plan_timed_path(grid, evac, t.start, t.goal, &reserved, opts) {
            Ok(route) => {
                reserved.reserve(grid, &route);
                let end = *route.entry.last().expect("non-empty route");
                makespan = makespan.max(end);
                waits += end - (route.cells.len() as u32 - 1);
                TargetRun::timed(route)
            }
            Err(PlanError::Unreachable { .. }) => {
                // no way around the earlier routes in time; fall back to an
                // untimed route and coordinate on the fly
                on_schedule = false;
                TargetRun::untimed(plan_target_path_with(grid, evac, t.start, t.goal, opts)?)
            }
            Err(e) => return Err(e),
        };
        for &v in &run.path {
            used[grid.index(v)] += 1;
        }
        runs[i] = Some(run);
    }
    Ok(PlanRound {
        runs: runs.into_iter().map(|r| r.expect("every target planned")).collect(),
        on_schedule,
        makespan,
        waits,
    })
}

/// Obstructing agents on any remaining target route (the target's own cell
/// excluded), each with its largest distance-to-goal along such a route.
/// Sorted by that distance, farthest first, ties by agent id.
pub fn collect_blockers(state: &PhansState<'_>) -> Vec<BlockerEntry> {
    let grid = state.grid();
    let mut best: Vec<Option<(usize, usize)>> = vec![None; state.inst.num_agents()];
    for (i, run) in state.targets.iter().enumerate() {
        let rem = run.remaining();
        for (k, &v) in rem.iter().enumerate().skip(1) {
            let Some(a) = state.world.occupant(grid, v) else {
                continue;
            };
            if state.is_target(a) {
                continue;
            }
            let dst = rem.len() - 1 - k;
            if best[a].is_none_or(|(d, _)| dst > d) {
                best[a] = Some((dst, i));
            }
        }
    }
    let mut out: Vec<BlockerEntry> = best
        .iter()
        .enumerate()
        .filter_map(|(agent, b)| {
            b.map(|(dst, target)| BlockerEntry {
                agent,
                pos: state.world.position(agent),
                target,
                dst,
                goal: None,
                path: None,
                through_target: false,
            })
        })
        .collect();
    out.sort_by(|a, b| b.dst.cmp(&a.dst).then(a.agent.cmp(&b.agent)));
    out
}

/// Pair blockers, in order, with the nearest still-unassigned empty cell.
/// Distance is measured through cells not held by targets. Empty cells on
/// the blocked target's remaining route are skipped while any other hole is
/// reachable, and the cells between the target and the blocker always are,
/// since the target is about to use them. Among equally near cells
/// one off every target route wins, then the smallest `(x, y)`. Stops when
/// the empty cells run out. Returns the number of assignments.
pub fn assign_null_agents(state: &PhansState<'_>, blockers: &mut [BlockerEntry]) -> usize {
    let grid = state.grid();
    let n = grid.num_cells();
    let mut available: Vec<bool> = (0..n)
        .map(|c| grid.is_free_index(c) && state.world.is_empty_cell(c))
        .collect();
    let mut left = available.iter().filter(|&&a| a).count();
    let mut on_route = vec![false; n];
    for run in &state.targets {
        for &v in run.remaining() {
            on_route[grid.index(v)] = true;
        }
    }
    let mut in_chain = vec![false; n];
    let mut search = HoleSearch::new(n);
    let mut assigned = 0;
    for b in blockers.iter_mut() {
        if left == 0 {
            break;
        }
        let rem = state.targets[b.target].remaining();
        let k = rem.iter().position(|&v| v == b.pos).unwrap_or(0);
        for (idx, &v) in rem.iter().enumerate().skip(1) {
            if v != b.pos {
                search.reserved[grid.index(v)] = if idx < k { Reserve::Ahead } else { Reserve::Behind };
            }
        }
        let query = Query {
            from: b.pos,
            available: &available,
            on_route: &on_route,
            blocked_target: b.target,
        };
        // Preferred first: a hole off the blocked route reached clear of
        // earlier chains. For a blocker walled in by targets, the blocked
        // target steps back to make room. Last, a hole behind the blocker on
        // the route. A retry runs only if the failed searches ran into
        // whatever it relaxes.
        let mut hit = Hit::default();
        let mut found = search.run(state, &query, true, Some(&in_chain), false, &mut hit);
        type Retry = (bool, bool, fn(&Hit) -> bool);
        let options: [Retry; 4] = [
            (true, false, |h| h.avoid),
            (true, true, |h| h.through),
            (false, false, |h| h.reserved),
            (false, true, |h| h.reserved && h.through),
        ];
        for (strict, through, worth) in options {
            if found.is_some() {
                break;
            }
            if worth(&hit) {
                found = search.run(state, &query, strict, None, through, &mut hit);
            }
        }
        for &v in &rem[1..] {
            search.reserved[grid.index(v)] = Reserve::No;
        }
        let Some((path, through)) = found else {
            continue;
        };
        for &v in &path {
            in_chain[grid.index(v)] = true;
        }
        let hole = path[0];
        available[grid.index(hole)] = false;
        left -= 1;
        b.goal = Some(hole);
        b.path = Some(path);
        b.through_target = through;
        assigned += 1;
    }
    assigned
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reserve {
    No,
    /// On the blocked route past the blocker.
    Behind,
    /// On the blocked route between the target and the blocker.
    Ahead,
}

struct Query<'q> {
    from: Vertex,
    available: &'q [bool],
    on_route: &'q [bool],
    blocked_target: usize,
}

/// What failed searches ran into. A retry that relaxes none of it would
/// explore the same cells and fail again.
#[derive(Debug, Default)]
struct Hit {
    avoid: bool,
    through: bool,
    reserved: bool,
}

/// Breadth-first search buffers shared by the searches of one pass.
struct HoleSearch {
    stamp: Vec<u32>,
    round: u32,
    dist: Vec<u32>,
    parent: Vec<usize>,
    queue: VecDeque<usize>,
    reserved: Vec<Reserve>,
}

impl HoleSearch {
    fn new(n: usize) -> Self {
        HoleSearch {
            stamp: vec![0; n],
            round: 0,
            dist: vec![0; n],
            parent: vec![0; n],
            queue: VecDeque::new(),
            reserved: vec![Reserve::No; n],
        }
    }

    /// Nearest selectable empty cell from `q.from`, never passing through a
    /// target (other than the blocked one when `through`) or a cell marked
    /// in `avoid`. `strict` also skips holes behind the blocker. Returns the
    /// path from that cell back to `q.from`.
    fn run(
        &mut self,
        state: &PhansState<'_>,
        q: &Query<'_>,
        strict: bool,
        avoid: Option<&[bool]>,
        through: bool,
        hit: &mut Hit,
    ) -> Option<(Vec<Vertex>, bool)> {
        let grid = state.grid();
        self.round += 1;
        let round = self.round;
        let src = grid.index(q.from);
        self.stamp[src] = round;
        self.dist[src] = 0;
        self.queue.clear();
        self.queue.push_back(src);
        let mut found: Option<u32> = None;
        let mut best: Option<usize> = None;
        let rank = |c: usize| {
            let v = grid.vertex(c);
            (q.on_route[c], v.x, v.y)
        };
        while let Some(c) = self.queue.pop_front() {
            if found.is_some_and(|d| self.dist[c] > d) {
                break;
            }
            if q.available[c] {
                let skip = match self.reserved[c] {
                    Reserve::No => false,
                    Reserve::Behind => strict,
                    Reserve::Ahead => true,
                };
                if !skip {
                    found = Some(self.dist[c]);
                    if best.is_none_or(|b| rank(c) < rank(b)) {
                        best = Some(c);
                    }
                    continue;
                }
                hit.reserved |= self.reserved[c] == Reserve::Behind;
            }
            if found.is_some() {
                continue;
            }
            for w in grid.neighbor_indices(c) {
                if self.stamp[w] == round {
                    continue;
                }
                if avoid.is_some_and(|a| a[w]) {
                    hit.avoid = true;
                    continue;
                }
                if let Some(a) = state.world.occupant_at(w).filter(|&a| state.is_target(a)) {
                    let is_blocked = a == q.blocked_target;
                    hit.through |= is_blocked;
                    if !(through && is_blocked) {
                        continue;
                    }
                }
                self.stamp[w] = round;
                self.dist[w] = self.dist[c] + 1;
                self.parent[w] = c;
                self.queue.push_back(w);
            }
        }
        let hole = best?;
        let mut path = vec![grid.vertex(hole)];
        let mut c = hole;
        while c != src {
            c = self.parent[c];
            path.push(grid.vertex(c));
        }
        Some((path, through))
    }
}

fn choose_moves(state: &PhansState<'_>, blockers: &[BlockerEntry]) -> (Vec<Move>, bool) {
    let grid = state.grid();
    let world = &state.world;
    let mut claimed = vec![false; grid.num_cells()];
    let mut moved = vec![false; state.inst.num_agents()];
    let mut moves = Vec::new();
    let mut upcoming: Vec<Vertex> = Vec::new();

    // highest-priority unfinished route through each cell, as (route, index)
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; grid.num_cells()];
    for &i in &state.priority {
        let run = &state.targets[i];
        // a target making room for an obstructor holds back until it is out
        let making_room = blockers.iter().any(|b| {
            b.through_target
                && b.target == i
                && b.path.as_ref().is_some_and(|p| world.occupant(grid, p[p.len() - 1]) == Some(b.agent))
        });
        let goes_now = run.next().filter(|_| !making_room).and_then(|next| {
            let c = grid.index(next);
            if !world.is_empty_cell(c) || claimed[c] {
                return None;
            }
            let k = run.cursor + 1;
            let t_next = world.time() as u32 + 1;
            if state.on_schedule {
                return (run.planned[k] <= t_next).then_some(next);
            }
            if run.not_before[k] > t_next || upcoming.contains(&next) {
                return None;
            }
            // yield to a higher-priority route unless already standing on it
            let here = run.path[run.cursor];
            let yields = owner[c].is_some_and(|(j, k)| {
                let theirs = state.targets[j].remaining();
                if theirs.contains(&here) {
                    return false;
                }
                match run.path.get(run.cursor + 2) {
                    // head-on along it
                    Some(&after) => k > 0 && theirs[k - 1] == after,
                    // parking on it
                    None => true,
                }
            });
            if yields {
                return None;
            }
            Some(next)
        });
        if let Some(next) = goes_now {
            claimed[grid.index(next)] = true;
            moved[i] = true;
            moves.push(Move::new(i, run.path[run.cursor], next));
            if let Some(&after) = run.path.get(run.cursor + 2) {
                upcoming.push(after);
            }
        }
        if !run.arrived() {
            for (k, &v) in run.remaining().iter().enumerate().skip(1) {
                let slot = &mut owner[grid.index(v)];
                if slot.is_none() {
                    *slot = Some((i, k));
                }
            }
        }
    }
    let target_moved = !moves.is_empty();

    for b in blockers {
        let Some(path) = &b.path else {
            continue;
        };
        let k = path.len() - 1;
        if world.occupant(grid, path[k]) != Some(b.agent) {
            continue;
        }
        let Some(i) = (0..k).rev().find(|&i| world.is_empty_cell(grid.index(path[i]))) else {
            continue;
        };
        let Some(agent) = world.occupant(grid, path[i + 1]) else {
            continue;
        };
        let to = grid.index(path[i]);
        let may_move = !state.is_target(agent) || (b.through_target && agent == b.target);
        if !may_move || moved[agent] || claimed[to] {
            continue;
        }
        claimed[to] = true;
        moved[agent] = true;
        moves.push(Move::new(agent, path[i + 1], path[i]));
    }
    (moves, target_moved)
}

/// Execute one timestep against the current assignments: targets first in
/// priority order, then one hole shift per blocker chain. Returns the moves
/// executed.
pub fn advance_timestep(
    state: &mut PhansState<'_>,
    blockers: &[BlockerEntry],
) -> Result<Vec<Move>, StepError> {
    let (moves, _) = choose_moves(state, blockers);
    apply(state, &moves)?;
    Ok(moves)
}

fn apply(state: &mut PhansState<'_>, moves: &[Move]) -> Result<(), StepError> {
    state.world = state.world.apply_step(state.inst.grid(), moves)?;
    let m = state.targets.len();
    let mut moved = vec![false; m];
    for mv in moves {
        if mv.agent < m {
            let run = &mut state.targets[mv.agent];
            if run.next() == Some(mv.to) {
                run.cursor += 1;
            } else {
                // stepped back to let an obstructor out; retrace the step
                let mut path = vec![mv.to];
                path.extend_from_slice(run.remaining());
                *run = TargetRun::untimed(path);
                state.on_schedule = false;
            }
            moved[mv.agent] = true;
        }
    }
    let grid = state.inst.grid();
    for i in 0..m {
        let behind_target = !moved[i]
            && state.targets[i]
                .next()
                .and_then(|n| state.world.occupant(grid, n))
                .is_some_and(|a| a < m);
        state.held[i] = if behind_target { state.held[i] + 1 } else { 0 };
    }
    if state.on_schedule {
        let t = state.world.time() as u32;
        state.on_schedule = state.targets.iter().all(|r| {
            let due = r.planned.iter().filter(|&&e| e <= t).count() - 1;
            r.cursor == due
        });
    }
    state.history.push(state.world.positions().to_vec());
    Ok(())
}

/// Grid distance from `v` to the nearest currently empty cell.
pub fn d_null(grid: &GridGraph, positions: &[Vertex], v: Vertex) -> Option<u32> {
    let mut occupied = vec![false; grid.num_cells()];
    for &p in positions {
        occupied[grid.index(p)] = true;
    }
    let dist = grid.distances_from(v);
    (0..grid.num_cells())
        .filter(|&c| grid.is_free_index(c) && !occupied[c])
        .filter_map(|c| dist[c])
        .min()
}

pub fn solve(inst: &Instance, limits: &SolverLimits) -> Result<Solution, Failure> {
    solve_traced(inst, limits).outcome
}

pub fn solve_traced(inst: &Instance, limits: &SolverLimits) -> SolveRun {
    let started = Instant::now();
    let mut trace = Trace::default();
    let mut state = match PhansState::new(inst) {
        Ok(s) => s,
        Err(_) => {
            return SolveRun {
                outcome: Err(Failure {
                    reason: FailureReason::UnreachableGoal,
                    t: 0,
                }),
                trace,
            }
        }
    };
    let cap = limits.timestep_cap(inst);
    let outcome = run(&mut state, limits, cap, started, &mut trace);
    trace.states = std::mem::take(&mut state.history);
    let outcome = outcome.map(|()| {
        truncate_to_makespan(inst, transpose(&trace.states)).expect("every target arrived")
    });
    SolveRun { outcome, trace }
}

fn transpose(states: &[Vec<Vertex>]) -> Vec<Vec<Vertex>> {
    let agents = states.first().map_or(0, Vec::len);
    (0..agents)
        .map(|a| states.iter().map(|s| s[a]).collect())
        .collect()
}

fn run(
    state: &mut PhansState<'_>,
    limits: &SolverLimits,
    cap: usize,
    started: Instant,
    trace: &mut Trace,
) -> Result<(), Failure> {
    let fail = |reason, t| Err(Failure { reason, t });
    let mut since_progress = 0usize;
    let mut replanned_since_progress = false;
    let mut visits: FxHashMap<u64, usize> = FxHashMap::default();

    while !state.all_arrived() {
        let mut blockers = collect_blockers(state);
        assign_null_agents(state, &mut blockers);
        let chain_len = blockers
            .iter()
            .filter_map(|b| b.path.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);
        let phase_start = state.time();
        let v_star = blockers.iter().find(|b| b.path.is_some()).map(|b| b.pos);
        let mut steps = 0;

        loop {
            if state.time() >= cap {
                return fail(FailureReason::TimestepLimit, state.time());
            }
            if started.elapsed() > limits.max_wall_time {
                return fail(FailureReason::WallTimeLimit, state.time());
            }
            let (moves, target_moved) = choose_moves(state, &blockers);
            if moves.is_empty() {
                break;
            }
            if apply(state, &moves).is_err() {
                return fail(FailureReason::InternalError, state.time());
            }
            steps += 1;
            let seen = visits
                .entry(FxBuildHasher.hash_one(state.world.positions()))
                .or_insert(0);
            *seen += 1;
            if *seen > LIVELOCK_REPEATS {
                return fail(FailureReason::Deadlock, state.time());
            }
            if limits.replan {
                let n = state.resolve_target_blocks(TARGET_PATIENCE);
                trace.replans += n;
                if n > 0 {
                    if target_moved {
                        since_progress = 0;
                        replanned_since_progress = false;
                    }
                    break;
                }
            }
            if target_moved {
                since_progress = 0;
                replanned_since_progress = false;
                break;
            }
            since_progress += 1;
            if since_progress >= limits.stall_window || steps >= chain_len {
                break;
            }
        }
        if steps > 0 {
            trace.phases.push(PhaseRecord {
                start_t: phase_start,
                end_t: state.time(),
                v_star,
            });
        }

        let frozen = steps == 0;
        let stalled = since_progress >= limits.stall_window;
        if frozen || stalled {
            let mut changed = false;
            if limits.replan && !(frozen && replanned_since_progress) {
                let stuck = state.target_blocked();
                let stuck = if stuck.is_empty() && frozen {
                    state.priority.iter().rev().copied().collect()
                } else {
                    stuck
                };
                for i in stuck {
                    if !state.targets[i].arrived() && state.replan(i) {
                        changed = true;
                        trace.replans += 1;
                    }
                }
                replanned_since_progress |= changed;
                since_progress = 0;
            }
            if frozen && !changed {
                return fail(FailureReason::Deadlock, state.time());
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseDiagnostic {
    pub phase: usize,
    pub v_star: Option<Vertex>,
    /// `d_null(v*)` at each timestep of the phase until it reaches zero.
    pub d_null: Vec<u32>,
    pub monotone: bool,
}

/// Per phase, check that the distance from `v*` to the nearest empty cell
/// shrinks by at least one every timestep until `v*` is empty.
pub fn progress_diagnostic(inst: &Instance, trace: &Trace) -> Vec<PhaseDiagnostic> {
    let grid = inst.grid();
    trace
        .phases
        .iter()
        .enumerate()
        .map(|(phase, rec)| {
            let mut seq = Vec::new();
            let mut monotone = true;
            if let Some(v) = rec.v_star {
                for t in rec.start_t..=rec.end_t.min(trace.states.len() - 1) {
                    let d = d_null(grid, &trace.states[t], v).unwrap_or(u32::MAX);
                    if seq.last().is_some_and(|&prev| d >= prev) {
                        monotone = false;
                    }
                    seq.push(d);
                    if d == 0 {
                        break;
                    }
                }
            }
            PhaseDiagnostic {
                phase,
                v_star: rec.v_star,
                d_null: seq,
                monotone,
            }
        })
        .collect()
}
