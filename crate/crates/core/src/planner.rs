//! Single-target route planning with an evacuation-wait term.
//!
//! Routes may pass through cells held by obstructing agents. Each such cell
//! carries an estimate of how long its occupant needs to clear out (the
//! Manhattan distance to the nearest empty cell at planning time), and the
//! search charges the target for any wait that estimate implies:
//!
//! ```text
//! f     = g + h + h_add
//! h_add = max(0, 1 + h_evac - g)
//! ```
//!
//! `g` is the arrival time at a cell, `h` the Manhattan distance to the goal.
//! Waits accumulate into the arrival time of later cells, so `f` at the goal
//! is the estimated arrival time of the whole route.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rustc_hash::{FxHashMap, FxHashSet};

use thiserror::Error;

use crate::grid::{manhattan, GridGraph, Vertex};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no route from {start} to {goal} around static obstacles")]
    Unreachable { start: Vertex, goal: Vertex },
    #[error("invalid argument: {0} is out of bounds or a static obstacle")]
    InvalidEndpoint(Vertex),
    #[error("no empty vertex to evacuate into")]
    NoEmptyVertex,
}

/// What sits on a cell when planning starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellUse {
    Empty,
    Target,
    Obstructor,
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancySnapshot {
    cells: Vec<CellUse>,
}

impl OccupancySnapshot {
    pub fn new(grid: &GridGraph, targets: &[Vertex], obstructors: &[Vertex]) -> Self {
        let mut cells: Vec<CellUse> = (0..grid.num_cells())
            .map(|i| {
                if grid.is_free_index(i) {
                    CellUse::Empty
                } else {
                    CellUse::Static
                }
            })
            .collect();
        for &v in targets {
            cells[grid.index(v)] = CellUse::Target;
        }
        for &v in obstructors {
            cells[grid.index(v)] = CellUse::Obstructor;
        }
        OccupancySnapshot { cells }
    }

    pub fn get(&self, cell: usize) -> CellUse {
        self.cells[cell]
    }
}

/// Evacuation cost for one vertex, computed by direct minimisation over the
/// empty cells of the snapshot.
pub fn h_evac(
    grid: &GridGraph,
    snapshot: &OccupancySnapshot,
    v: Vertex,
) -> Result<u32, PlanError> {
    match snapshot.get(grid.index(v)) {
        CellUse::Empty | CellUse::Target => Ok(0),
        _ => (0..grid.num_cells())
            .filter(|&c| snapshot.get(c) == CellUse::Empty)
            .map(|c| manhattan(v, grid.vertex(c)))
            .min()
            .ok_or(PlanError::NoEmptyVertex),
    }
}

/// Extra wait charged when arriving at time `g` at a cell that needs
/// `h_evac` steps to clear.
pub fn h_add(g: u32, h_evac: u32) -> u32 {
    (1 + h_evac).saturating_sub(g)
}

/// `h_evac` for every cell at once. Manhattan distance ignores obstacles, so
/// a multi-source breadth-first sweep over the full rectangle yields the
/// nearest-empty distance for all cells in one pass.
#[derive(Debug, Clone)]
pub struct EvacuationMap {
    cost: Vec<u32>,
}

impl EvacuationMap {
    pub fn new(grid: &GridGraph, snapshot: &OccupancySnapshot) -> Result<Self, PlanError> {
        let n = grid.num_cells();
        let mut dist = vec![u32::MAX; n];
        let mut queue = VecDeque::new();
        for (c, d) in dist.iter_mut().enumerate() {
            if snapshot.get(c) == CellUse::Empty {
                *d = 0;
                queue.push_back(c);
            }
        }
        if queue.is_empty() {
            return Err(PlanError::NoEmptyVertex);
        }
        let sx = grid.size_x() as usize;
        let sy = grid.size_y() as usize;
        while let Some(c) = queue.pop_front() {
            let (x, y) = (c % sx, c / sx);
            let d = dist[c] + 1;
            let around = [
                (x + 1 < sx).then(|| c + 1),
                (x > 0).then(|| c - 1),
                (y + 1 < sy).then(|| c + sx),
                (y > 0).then(|| c - sx),
            ];
            for w in around.into_iter().flatten() {
                if dist[w] == u32::MAX {
                    dist[w] = d;
                    queue.push_back(w);
                }
            }
        }
        let cost = dist
            .into_iter()
            .enumerate()
            .map(|(c, d)| match snapshot.get(c) {
                CellUse::Obstructor => d,
                _ => 0,
            })
            .collect();
        Ok(EvacuationMap { cost })
    }

    pub fn at(&self, cell: usize) -> u32 {
        self.cost[cell]
    }
}

/// Extra knobs used by the multi-target solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlanOptions<'a> {
    /// Cells that may not be entered at all.
    pub impassable: Option<&'a [bool]>,
    /// Secondary cost per cell entered, compared only between routes of equal
    /// `f`.
    pub penalty: Option<&'a [u32]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Open {
    f: u32,
    penalty: u32,
    h: u32,
    seq: u64,
    cell: usize,
    entry: u32,
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (f, penalty, h, seq)
        (other.f, other.penalty, other.h, other.seq).cmp(&(self.f, self.penalty, self.h, self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Route for one target through static-obstacle-free cells, minimising the
/// estimated arrival time.
pub fn plan_target_path(
    grid: &GridGraph,
    snapshot: &OccupancySnapshot,
    start: Vertex,
    goal: Vertex,
) -> Result<Vec<Vertex>, PlanError> {
    let evac = EvacuationMap::new(grid, snapshot)?;
    plan_target_path_with(grid, &evac, start, goal, PlanOptions::default())
}

pub fn plan_target_path_with(
    grid: &GridGraph,
    evac: &EvacuationMap,
    start: Vertex,
    goal: Vertex,
    opts: PlanOptions<'_>,
) -> Result<Vec<Vertex>, PlanError> {
    for v in [start, goal] {
        if !grid.is_free(v) {
            return Err(PlanError::InvalidEndpoint(v));
        }
    }
    let n = grid.num_cells();
    let s = grid.index(start);
    let gl = grid.index(goal);
    let blocked = |c: usize| opts.impassable.is_some_and(|b| b[c]) && c != s;
    if blocked(gl) {
        return Err(PlanError::Unreachable { start, goal });
    }
    let extra = |c: usize| opts.penalty.map_or(0, |p| p[c]);

    // best (entry time, penalty) label per cell
    let mut best: Vec<(u32, u32)> = vec![(u32::MAX, u32::MAX); n];
    let mut parent: Vec<usize> = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    // the target already stands on its start, so no wait is charged there
    best[s] = (0, 0);
    heap.push(Open {
        f: manhattan(start, goal),
        penalty: 0,
        h: manhattan(start, goal),
        seq,
        cell: s,
        entry: 0,
    });

    while let Some(node) = heap.pop() {
        if (node.entry, node.penalty) != best[node.cell] {
            continue;
        }
        if node.cell == gl {
            let mut path = vec![goal];
            let mut c = gl;
            while c != s {
                c = parent[c];
                path.push(grid.vertex(c));
            }
            path.reverse();
            return Ok(path);
        }
        for w in grid.neighbor_indices(node.cell) {
            if blocked(w) {
                continue;
            }
            let g = node.entry + 1;
            let wait = h_add(g, evac.at(w));
            let entry = g + wait;
            let penalty = node.penalty + extra(w);
            if (entry, penalty) < best[w] {
                best[w] = (entry, penalty);
                parent[w] = node.cell;
                let h = manhattan(grid.vertex(w), goal);
                seq += 1;
                heap.push(Open {
                    f: entry + h,
                    penalty,
                    h,
                    seq,
                    cell: w,
                    entry,
                });
            }
        }
    }
    Err(PlanError::Unreachable { start, goal })
}

/// Cells held over time by targets whose timed routes were fixed earlier.
#[derive(Debug, Clone, Default)]
pub struct Reservations {
    held: FxHashSet<(usize, u32)>,
    /// Timestep from which a target stays on the cell for good.
    parked: FxHashMap<usize, u32>,
    /// Last timestep each cell is held, parking aside.
    last: FxHashMap<usize, u32>,
    horizon: u32,
}

impl Reservations {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mark a single (cell, time) slot as taken.
    pub fn hold(&mut self, cell: usize, t: u32) {
        self.held.insert((cell, t));
    }

    pub fn is_held(&self, cell: usize, t: u32) -> bool {
        self.held.contains(&(cell, t)) || self.parked.get(&cell).is_some_and(|&p| t >= p)
    }

    /// The route holds `cells[k]` from `entry[k]` until the next entry, and
    /// its last cell forever after.
    pub fn reserve(&mut self, grid: &GridGraph, route: &TimedPath) {
        let k_last = route.cells.len() - 1;
        for k in 0..k_last {
            let c = grid.index(route.cells[k]);
            for t in route.entry[k]..route.entry[k + 1] {
                self.held.insert((c, t));
            }
            let l = self.last.entry(c).or_insert(0);
            *l = (*l).max(route.entry[k + 1] - 1);
        }
        let end = route.entry[k_last];
        self.parked.insert(grid.index(route.cells[k_last]), end);
        self.horizon = self.horizon.max(end);
    }

    /// Nothing is held on `cell` at `t` or later.
    fn free_from(&self, cell: usize, t: u32) -> bool {
        !self.parked.contains_key(&cell) && self.last.get(&cell).is_none_or(|&l| l < t)
    }

    /// Standing on `cell` at `t` neither collides with a holder nor blocks
    /// one arriving at `t + 1`.
    fn can_stay(&self, cell: usize, t: u32) -> bool {
        !self.is_held(cell, t) && !self.is_held(cell, t + 1)
    }
}

/// A route with the planned entry time of every cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedPath {
    pub cells: Vec<Vertex>,
    pub entry: Vec<u32>,
    /// The route deliberately waits before entering `cells[k]`, so the
    /// entry must not happen earlier than planned.
    pub held_back: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct TimedNode {
    cell: usize,
    t: u32,
    parent: usize,
    waited: bool,
}

/// Like [`plan_target_path_with`], but searching over (cell, time) and
/// steering clear of `reserved`. Waiting in place is allowed when it helps.
pub fn plan_timed_path(
    grid: &GridGraph,
    evac: &EvacuationMap,
    start: Vertex,
    goal: Vertex,
    reserved: &Reservations,
    opts: PlanOptions<'_>,
) -> Result<TimedPath, PlanError> {
    for v in [start, goal] {
        if !grid.is_free(v) {
            return Err(PlanError::InvalidEndpoint(v));
        }
    }
    if grid.grid_distance(start, goal).is_none() {
        return Err(PlanError::Unreachable { start, goal });
    }
    let s = grid.index(start);
    let gl = grid.index(goal);
    let blocked = |c: usize| opts.impassable.is_some_and(|b| b[c]) && c != s;
    let extra = |c: usize| opts.penalty.map_or(0, |p| p[c]);
    let horizon = reserved.horizon + 4 * grid.num_cells() as u32;

    let mut nodes = vec![TimedNode {
        cell: s,
        t: 0,
        parent: usize::MAX,
        waited: false,
    }];
    let mut best: FxHashMap<(usize, u32), u32> = FxHashMap::default();
    best.insert((s, 0), 0);
    let mut done: FxHashSet<(usize, u32)> = FxHashSet::default();
    let mut heap = BinaryHeap::new();
    let h0 = manhattan(start, goal);
    heap.push(Open {
        f: h0,
        penalty: 0,
        h: h0,
        seq: 0,
        cell: 0,
        entry: 0,
    });

    while let Some(open) = heap.pop() {
        // `Open::cell` carries the node index here
        let node = nodes[open.cell];
        if !done.insert((node.cell, node.t)) {
            continue;
        }
        if node.cell == gl && reserved.free_from(gl, node.t) {
            return Ok(unwind(grid, &nodes, open.cell));
        }
        if node.t >= horizon {
            continue;
        }
        let mut push = |cell: usize, t: u32, penalty: u32, waited: bool, heap: &mut BinaryHeap<Open>| {
            if best.get(&(cell, t)).is_some_and(|&p| p <= penalty) {
                return;
            }
            best.insert((cell, t), penalty);
            nodes.push(TimedNode {
                cell,
                t,
                parent: open.cell,
                waited,
            });
            let h = manhattan(grid.vertex(cell), goal);
            heap.push(Open {
                f: t + h,
                penalty,
                h,
                seq: nodes.len() as u64,
                cell: nodes.len() - 1,
                entry: t,
            });
        };
        if reserved.can_stay(node.cell, node.t + 1) {
            push(node.cell, node.t + 1, open.penalty, true, &mut heap);
        }
        for w in grid.neighbor_indices(node.cell) {
            if blocked(w) {
                continue;
            }
            let g = node.t + 1;
            let e = g + h_add(g, evac.at(w));
            let ok = (g..e).all(|u| reserved.can_stay(node.cell, u))
                && !reserved.is_held(w, e - 1)
                && reserved.can_stay(w, e);
            if ok {
                push(w, e, open.penalty + extra(w), false, &mut heap);
            }
        }
    }
    Err(PlanError::Unreachable { start, goal })
}

fn unwind(grid: &GridGraph, nodes: &[TimedNode], last: usize) -> TimedPath {
    let mut chain = Vec::new();
    let mut i = last;
    while i != usize::MAX {
        chain.push(nodes[i]);
        i = nodes[i].parent;
    }
    chain.reverse();
    let mut out = TimedPath {
        cells: vec![grid.vertex(chain[0].cell)],
        entry: vec![0],
        held_back: vec![false],
    };
    let mut waited = false;
    for n in &chain[1..] {
        if n.waited {
            waited = true;
        } else {
            out.cells.push(grid.vertex(n.cell));
            out.entry.push(n.t);
            out.held_back.push(waited);
            waited = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: u32, y: u32) -> Vertex {
        Vertex::new(x, y)
    }

    #[test]
    fn h_add_examples() {
        assert_eq!(h_add(3, 2), 0);
        assert_eq!(h_add(0, 0), 1);
        assert_eq!(h_add(1, 3), 3);
    }

    #[test]
    fn h_evac_examples() {
        let g = GridGraph::open(3, 2).unwrap();
        let snap = OccupancySnapshot::new(&g, &[v(0, 0)], &[v(1, 0)]);
        assert_eq!(h_evac(&g, &snap, v(1, 0)), Ok(1));
        assert_eq!(h_evac(&g, &snap, v(2, 0)), Ok(0));
        assert_eq!(h_evac(&g, &snap, v(0, 0)), Ok(0));

        // packed row, single empty cell five away
        let g = GridGraph::open(7, 1).unwrap();
        let obs: Vec<Vertex> = (0..6).map(|x| v(x, 0)).collect();
        let snap = OccupancySnapshot::new(&g, &[], &obs);
        assert_eq!(h_evac(&g, &snap, v(1, 0)), Ok(5));

        let g = GridGraph::open(2, 1).unwrap();
        let snap = OccupancySnapshot::new(&g, &[], &[v(0, 0), v(1, 0)]);
        assert_eq!(h_evac(&g, &snap, v(0, 0)), Err(PlanError::NoEmptyVertex));
    }

    #[test]
    fn open_grid_is_plain_shortest_path() {
        let g = GridGraph::open(5, 5).unwrap();
        let snap = OccupancySnapshot::new(&g, &[v(0, 0)], &[]);
        let p = plan_target_path(&g, &snap, v(0, 0), v(0, 4)).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p, (0..5).map(|y| v(0, y)).collect::<Vec<_>>());
    }

    #[test]
    fn unreachable_and_bad_endpoints() {
        let g = GridGraph::new(3, 1, [v(1, 0)]).unwrap();
        let snap = OccupancySnapshot::new(&g, &[v(0, 0)], &[]);
        assert_eq!(
            plan_target_path(&g, &snap, v(0, 0), v(2, 0)),
            Err(PlanError::Unreachable {
                start: v(0, 0),
                goal: v(2, 0)
            })
        );
        assert_eq!(
            plan_target_path(&g, &snap, v(0, 0), v(1, 0)),
            Err(PlanError::InvalidEndpoint(v(1, 0)))
        );
    }

    #[test]
    fn impassable_cells_force_a_detour() {
        let g = GridGraph::open(3, 2).unwrap();
        let snap = OccupancySnapshot::new(&g, &[v(0, 0)], &[]);
        let evac = EvacuationMap::new(&g, &snap).unwrap();
        let mut wall = vec![false; g.num_cells()];
        wall[g.index(v(1, 0))] = true;
        let opts = PlanOptions {
            impassable: Some(&wall),
            penalty: None,
        };
        let p = plan_target_path_with(&g, &evac, v(0, 0), v(2, 0), opts).unwrap();
        assert_eq!(p, vec![v(0, 0), v(0, 1), v(1, 1), v(2, 1), v(2, 0)]);
    }

    #[test]
    fn penalty_breaks_ties_between_equal_routes() {
        let g = GridGraph::open(2, 2).unwrap();
        let snap = OccupancySnapshot::new(&g, &[v(0, 0)], &[]);
        let evac = EvacuationMap::new(&g, &snap).unwrap();
        let plain = plan_target_path_with(&g, &evac, v(0, 0), v(1, 1), PlanOptions::default()).unwrap();
        assert_eq!(plain[1], v(1, 0));
        let mut pen = vec![0; g.num_cells()];
        pen[g.index(v(1, 0))] = 1;
        let opts = PlanOptions {
            impassable: None,
            penalty: Some(&pen),
        };
        let p = plan_target_path_with(&g, &evac, v(0, 0), v(1, 1), opts).unwrap();
        assert_eq!(p, vec![v(0, 0), v(0, 1), v(1, 1)]);
    }

    // --- enumeration oracle -------------------------------------------------

    /// Estimated arrival time of a route, evaluated step by step from the
    /// wait model with brute-force `h_evac`.
    fn route_cost(g: &GridGraph, snap: &OccupancySnapshot, path: &[Vertex]) -> u32 {
        let mut t = 0;
        for &w in &path[1..] {
            let e = match snap.get(g.index(w)) {
                CellUse::Obstructor => g
                    .free_vertices()
                    .filter(|&c| snap.get(g.index(c)) == CellUse::Empty)
                    .map(|c| w.x.abs_diff(c.x) + w.y.abs_diff(c.y))
                    .min()
                    .unwrap(),
                _ => 0,
            };
            t = (t + 1).max(1 + e);
        }
        t
    }

    fn simple_paths(g: &GridGraph, from: Vertex, to: Vertex) -> Vec<Vec<Vertex>> {
        fn go(g: &GridGraph, cur: &mut Vec<Vertex>, to: Vertex, out: &mut Vec<Vec<Vertex>>) {
            let last = *cur.last().unwrap();
            if last == to {
                out.push(cur.clone());
                return;
            }
            for n in g.neighbors(last).unwrap() {
                if !cur.contains(&n) {
                    cur.push(n);
                    go(g, cur, to, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(g, &mut vec![from], to, &mut out);
        out
    }

    #[test]
    fn direct_route_through_single_obstructor() {
        let g = GridGraph::open(3, 2).unwrap();
        let snap = OccupancySnapshot::new(&g, &[v(0, 0)], &[v(1, 0)]);
        let all = simple_paths(&g, v(0, 0), v(2, 0));
        let best = all.iter().map(|p| route_cost(&g, &snap, p)).min().unwrap();
        let direct = vec![v(0, 0), v(1, 0), v(2, 0)];
        assert_eq!(best, 3);
        assert_eq!(route_cost(&g, &snap, &direct), 3);
        assert_eq!(route_cost(&g, &snap, &[v(0, 0), v(0, 1), v(1, 1), v(2, 1), v(2, 0)]), 4);
        assert_eq!(plan_target_path(&g, &snap, v(0, 0), v(2, 0)).unwrap(), direct);
    }

    #[test]
    fn detour_wins_when_evacuation_is_slow() {
        // row 1 is held by other targets, rows 0 and 2 are packed, only
        // (0,2) and (2,2) are empty
        let g = GridGraph::open(3, 3).unwrap();
        let snap = OccupancySnapshot::new(
            &g,
            &[v(0, 0), v(0, 1), v(1, 1), v(2, 1)],
            &[v(1, 0), v(2, 0), v(1, 2)],
        );
        let all = simple_paths(&g, v(0, 0), v(2, 0));
        let costs: Vec<u32> = all.iter().map(|p| route_cost(&g, &snap, p)).collect();
        let best = *costs.iter().min().unwrap();
        assert_eq!(best, 4);
        assert_eq!(costs.iter().filter(|&&c| c == best).count(), 1);
        assert_eq!(route_cost(&g, &snap, &[v(0, 0), v(1, 0), v(2, 0)]), 5);
        let p = plan_target_path(&g, &snap, v(0, 0), v(2, 0)).unwrap();
        assert_eq!(p, vec![v(0, 0), v(0, 1), v(1, 1), v(2, 1), v(2, 0)]);
    }

    fn random_layout() -> impl Strategy<Value = (GridGraph, OccupancySnapshot, Vertex, Vertex)> {
        (2u32..5, 1u32..4, any::<u64>()).prop_filter_map("needs a free start, goal and hole", |(sx, sy, bits)| {
            let n = sx * sy;
            let cls = |i: u32| (bits >> ((2 * i) % 64)) & 3;
            let obstacles: Vec<Vertex> = (0..n).filter(|&i| cls(i) == 3).map(|i| v(i % sx, i / sx)).collect();
            let obs: Vec<Vertex> = (0..n).filter(|&i| cls(i) == 1 || cls(i) == 2).map(|i| v(i % sx, i / sx)).collect();
            let empties: Vec<Vertex> = (0..n).filter(|&i| cls(i) == 0).map(|i| v(i % sx, i / sx)).collect();
            if empties.len() < 2 {
                return None;
            }
            let g = GridGraph::new(sx, sy, obstacles).ok()?;
            let start = empties[0];
            let goal = *empties.last().unwrap();
            g.grid_distance(start, goal)?;
            let snap = OccupancySnapshot::new(&g, &[start], &obs);
            if empties.len() < 2 { return None; }
            Some((g, snap, start, goal))
        })
    }

    proptest! {
        #[test]
        fn h_add_properties(g in 0u32..50, e in 0u32..50) {
            prop_assert_eq!(h_add(g, e), (1 + e as i64 - g as i64).max(0) as u32);
            prop_assert!(h_add(g + 1, e) <= h_add(g, e));
            if g > e {
                prop_assert_eq!(h_add(g, e), 0);
            }
        }

        #[test]
        fn map_agrees_with_direct_minimum((g, snap, _s, _t) in random_layout()) {
            let map = EvacuationMap::new(&g, &snap).unwrap();
            for u in g.free_vertices() {
                prop_assert_eq!(map.at(g.index(u)), h_evac(&g, &snap, u).unwrap());
            }
        }

        #[test]
        fn planner_matches_enumeration_oracle((g, snap, s, t) in random_layout()) {
            let p = plan_target_path(&g, &snap, s, t).unwrap();
            prop_assert_eq!(p[0], s);
            prop_assert_eq!(*p.last().unwrap(), t);
            for w in p.windows(2) {
                prop_assert!(g.adjacent(w[0], w[1]));
                prop_assert!(g.is_free(w[1]));
            }
            let best = simple_paths(&g, s, t).iter().map(|q| route_cost(&g, &snap, q)).min().unwrap();
            prop_assert_eq!(route_cost(&g, &snap, &p), best);
            prop_assert_eq!(plan_target_path(&g, &snap, s, t).unwrap(), p);
        }
    }
}
